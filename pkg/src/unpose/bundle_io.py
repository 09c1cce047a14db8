"""Single-file binary persistence for trained model bundles.

Layout: 8-byte magic, little-endian u32 format version, u64 header length,
a canonical JSON header (sorted keys), the numeric payload as concatenated
float64 little-endian arrays in header-declared order, and a sha256 of the
payload.  The JSON header carries every structural field, so a bundle is
self-describing; the feature-config fingerprint is recomputed from content on
load and compared against the stored value to catch semantic edits, while the
payload checksum catches bit rot in the weight arrays.

Saving is atomic (temp file plus rename), and save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autoencoder import AutoencoderParams
from .clustering import PoseKMeans
from .errors import BundleVersionError, CorruptBundleError, FingerprintMismatchError
from .features import FeatureConfig
from .ranking import RankModel

MAGIC = b"UNPOSEB\n"
BUNDLE_VERSION = 1
_CHECKSUM_BYTES = 32


@dataclass
class TrainingSummary:
    n_products: int
    n_images: int
    k: int
    objective: float
    trained_at: int

    def to_dict(self) -> dict:
        return {
            "n_products": self.n_products,
            "n_images": self.n_images,
            "k": self.k,
            "objective": self.objective,
            "trained_at": self.trained_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSummary":
        return cls(
            n_products=int(d["n_products"]),
            n_images=int(d["n_images"]),
            k=int(d["k"]),
            objective=float(d["objective"]),
            trained_at=int(d["trained_at"]),
        )


@dataclass
class ModelBundle:
    """Everything inference needs: feature layout, models, provenance."""

    feature_config: FeatureConfig
    centroid_model: PoseKMeans
    rank_model: RankModel
    autoencoder: Optional[AutoencoderParams] = None
    training_summary: Optional[TrainingSummary] = None
    version: int = BUNDLE_VERSION


def _autoencoder_array_names(params: AutoencoderParams) -> list[tuple[str, np.ndarray]]:
    named = []
    for i, w in enumerate(params.enc_w):
        named.append((f"ae_enc_w_{i}", w))
    for i, b in enumerate(params.enc_b):
        named.append((f"ae_enc_b_{i}", b))
    for i, w in enumerate(params.dec_w):
        named.append((f"ae_dec_w_{i}", w))
    for i, b in enumerate(params.dec_b):
        named.append((f"ae_dec_b_{i}", b))
    if params.input_mean is not None:
        named.append(("ae_input_mean", params.input_mean))
        named.append(("ae_input_scale", params.input_scale))
    return named


def _collect_arrays(bundle: ModelBundle) -> list[tuple[str, np.ndarray]]:
    arrays = [("centroids", bundle.centroid_model.cluster_centers_)]
    if bundle.autoencoder is not None:
        arrays.extend(_autoencoder_array_names(bundle.autoencoder))
    return arrays


def _header_dict(bundle: ModelBundle, arrays: list[tuple[str, np.ndarray]]) -> dict:
    summary = bundle.training_summary or TrainingSummary(0, 0, bundle.centroid_model.n_clusters, 0.0, 0)
    header = {
        "version": bundle.version,
        "feature_config": bundle.feature_config.to_dict(),
        "centroid_model": bundle.centroid_model.to_state(),
        "rank_model": bundle.rank_model.to_state(),
        "training_summary": summary.to_dict(),
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    if bundle.autoencoder is not None:
        header["autoencoder"] = {
            "input_dim": bundle.autoencoder.input_dim,
            "layer_dims_encoder": bundle.autoencoder.layer_dims_encoder,
            "layer_dims_decoder": bundle.autoencoder.layer_dims_decoder,
        }
    else:
        header["autoencoder"] = None
    return header


def save_bundle(bundle: ModelBundle, path: str) -> None:
    """Serialize atomically; the on-disk bytes are a pure function of the bundle."""
    arrays = _collect_arrays(bundle)
    header = _header_dict(bundle, arrays)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    checksum = hashlib.sha256(payload).digest()

    blob = b"".join(
        [
            MAGIC,
            struct.pack("<I", bundle.version),
            struct.pack("<Q", len(header_bytes)),
            header_bytes,
            payload,
            checksum,
        ]
    )
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".bundle-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _read_exact(data: bytes, offset: int, size: int, what: str) -> tuple[bytes, int]:
    if offset + size > len(data):
        raise CorruptBundleError(f"truncated bundle: {what} ends past the file")
    return data[offset : offset + size], offset + size


def load_bundle(path: str) -> ModelBundle:
    """Parse and validate a saved bundle.

    Raises :class:`CorruptBundleError` for structural damage,
    :class:`BundleVersionError` for unknown format versions, and
    :class:`FingerprintMismatchError` when the stored feature-config
    fingerprint disagrees with one recomputed from the config content.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    magic, offset = _read_exact(data, 0, len(MAGIC), "magic")
    if magic != MAGIC:
        raise CorruptBundleError("not a model bundle: bad magic bytes")
    raw, offset = _read_exact(data, offset, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != BUNDLE_VERSION:
        raise BundleVersionError(f"unsupported bundle version {version}; this build reads {BUNDLE_VERSION}")
    raw, offset = _read_exact(data, offset, 8, "header length")
    header_len = struct.unpack("<Q", raw)[0]
    header_bytes, offset = _read_exact(data, offset, header_len, "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBundleError(f"unreadable bundle header: {exc}") from exc

    try:
        declared = [(a["name"], tuple(int(s) for s in a["shape"])) for a in header["arrays"]]
    except (KeyError, TypeError) as exc:
        raise CorruptBundleError(f"malformed array declarations: {exc}") from exc
    payload_len = sum(int(np.prod(shape)) * 8 for _, shape in declared)
    payload, offset = _read_exact(data, offset, payload_len, "array payload")
    stored_checksum, offset = _read_exact(data, offset, _CHECKSUM_BYTES, "checksum")
    if offset != len(data):
        raise CorruptBundleError(f"{len(data) - offset} unexpected trailing byte(s)")
    if hashlib.sha256(payload).digest() != stored_checksum:
        raise CorruptBundleError("payload checksum mismatch")

    arrays: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in declared:
        size = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(payload[pos : pos + size], dtype="<f8").reshape(shape).copy()
        pos += size

    try:
        config_dict = header["feature_config"]
        stored_fingerprint = config_dict["fingerprint"]
        feature_config = FeatureConfig.from_dict(config_dict)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptBundleError(f"malformed feature config: {exc}") from exc
    if feature_config.fingerprint != stored_fingerprint:
        raise FingerprintMismatchError(
            "feature config fingerprint mismatch: stored "
            f"{stored_fingerprint[:12]}..., recomputed {feature_config.fingerprint[:12]}..."
        )

    try:
        centroid_model = PoseKMeans.from_state(header["centroid_model"], arrays["centroids"])
        rank_model = RankModel.from_state(header["rank_model"])
        summary = TrainingSummary.from_dict(header["training_summary"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptBundleError(f"malformed bundle header: {exc}") from exc

    autoencoder = None
    ae_header = header.get("autoencoder")
    if ae_header is not None:
        try:
            enc_dims = [int(d) for d in ae_header["layer_dims_encoder"]]
            dec_dims = [int(d) for d in ae_header["layer_dims_decoder"]]
            autoencoder = AutoencoderParams(
                input_dim=int(ae_header["input_dim"]),
                enc_w=[arrays[f"ae_enc_w_{i}"] for i in range(len(enc_dims) - 1)],
                enc_b=[arrays[f"ae_enc_b_{i}"] for i in range(len(enc_dims) - 1)],
                dec_w=[arrays[f"ae_dec_w_{i}"] for i in range(len(dec_dims) - 1)],
                dec_b=[arrays[f"ae_dec_b_{i}"] for i in range(len(dec_dims) - 1)],
                input_mean=arrays.get("ae_input_mean"),
                input_scale=arrays.get("ae_input_scale"),
            )
        except KeyError as exc:
            raise CorruptBundleError(f"autoencoder arrays missing from payload: {exc}") from exc
        for w, (fan_in, fan_out) in zip(autoencoder.enc_w, zip(enc_dims[:-1], enc_dims[1:])):
            if w.shape != (fan_in, fan_out):
                raise CorruptBundleError(
                    f"encoder weight shape {w.shape} disagrees with declared dims {enc_dims}"
                )

    if centroid_model.cluster_centers_.shape[1] != _expected_width(feature_config, autoencoder):
        raise CorruptBundleError(
            f"centroid width {centroid_model.cluster_centers_.shape[1]} inconsistent "
            "with feature config and autoencoder dims"
        )

    return ModelBundle(
        feature_config=feature_config,
        centroid_model=centroid_model,
        rank_model=rank_model,
        autoencoder=autoencoder,
        training_summary=summary,
        version=version,
    )


def _expected_width(config: FeatureConfig, autoencoder: Optional[AutoencoderParams]) -> int:
    if autoencoder is None:
        return config.dimension
    return autoencoder.bottleneck_dim
