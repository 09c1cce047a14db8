"""Landmark topologies, record file parsing, validation, and normalization.

The landmark record file is the contract with the upstream pose extractor:
UTF-8, one JSON object per line, fields exactly ``image_id``, ``product_id``,
``topology``, ``width``, ``height``, ``detected``, ``keypoints``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Union

from .errors import StreamError

POSE3D33 = "POSE3D33"
POSE2D17 = "POSE2D17"


@dataclass(frozen=True)
class Topology:
    """A fixed ordered set of keypoints emitted by one detector family."""

    name: str
    keypoint_names: tuple[str, ...]
    has_z: bool
    # (left_index, right_index) anatomical pairs; order is frozen because the
    # embedding layout consumes a prefix of this list.
    symmetric_pairs: tuple[tuple[int, int], ...]

    @property
    def keypoint_count(self) -> int:
        return len(self.keypoint_names)

    def index(self, keypoint_name: str) -> int:
        return self.keypoint_names.index(keypoint_name)

    def __post_init__(self):
        seen: set[int] = set()
        for left, right in self.symmetric_pairs:
            if left == right:
                raise ValueError(f"{self.name}: pair ({left}, {right}) is degenerate")
            for idx in (left, right):
                if not 0 <= idx < self.keypoint_count:
                    raise ValueError(f"{self.name}: pair index {idx} out of range")
                if idx in seen:
                    raise ValueError(f"{self.name}: index {idx} appears in two pairs")
                seen.add(idx)


_POSE2D17_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

_POSE3D33_NAMES = (
    "nose",
    "left_eye_inner",
    "left_eye",
    "left_eye_outer",
    "right_eye_inner",
    "right_eye",
    "right_eye_outer",
    "left_ear",
    "right_ear",
    "mouth_left",
    "mouth_right",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_pinky",
    "right_pinky",
    "left_index",
    "right_index",
    "left_thumb",
    "right_thumb",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "left_heel",
    "right_heel",
    "left_foot_index",
    "right_foot_index",
)

TOPOLOGIES: dict[str, Topology] = {
    POSE2D17: Topology(
        name=POSE2D17,
        keypoint_names=_POSE2D17_NAMES,
        has_z=False,
        symmetric_pairs=(
            (1, 2),  # eyes
            (3, 4),  # ears
            (5, 6),  # shoulders
            (7, 8),  # elbows
            (9, 10),  # wrists
            (11, 12),  # hips
            (13, 14),  # knees
            (15, 16),  # ankles
        ),
    ),
    POSE3D33: Topology(
        name=POSE3D33,
        keypoint_names=_POSE3D33_NAMES,
        has_z=True,
        # First eight pairs feed the ratio features; the remaining four only
        # document the anatomy.
        symmetric_pairs=(
            (2, 5),  # eyes
            (7, 8),  # ears
            (11, 12),  # shoulders
            (13, 14),  # elbows
            (15, 16),  # wrists
            (23, 24),  # hips
            (25, 26),  # knees
            (27, 28),  # ankles
            (9, 10),  # mouth corners
            (29, 30),  # heels
            (31, 32),  # foot tips
            (17, 18),  # pinkies
        ),
    ),
}


@dataclass(frozen=True)
class Keypoint:
    """One detected point, in pixels for raw records or [0,1] once normalized."""

    x: float
    y: float
    z: float | None = None
    visibility: float = 1.0


@dataclass(frozen=True)
class LandmarkRecord:
    """One image's detected pose keypoints in a declared topology."""

    image_id: str
    product_id: str
    topology: str
    width: int
    height: int
    detected: bool
    keypoints: tuple[Keypoint, ...] = ()


@dataclass(frozen=True)
class NormalizedLandmarkSet:
    """A record whose coordinates have been divided by the image dimensions."""

    image_id: str
    product_id: str
    topology: str
    detected: bool
    coords: tuple[Keypoint, ...] = ()


@dataclass(frozen=True)
class Diagnostic:
    """A structured parse/validation finding; ``error`` rejects the record."""

    severity: str  # "error" | "warning"
    message: str
    line: int | None = None
    image_id: str | None = None

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "record"
        who = f" [{self.image_id}]" if self.image_id else ""
        return f"{self.severity} at {where}{who}: {self.message}"


@dataclass
class ParseResult:
    records: list[LandmarkRecord] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    @property
    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "warning"]


def _reject_constant(value: str):
    raise ValueError(f"non-finite constant {value!r} not allowed")


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


_RECORD_FIELDS = {"image_id", "product_id", "topology", "width", "height", "detected", "keypoints"}
_KEYPOINT_FIELDS = {"x", "y", "z", "visibility"}


def _keypoint_from_obj(obj, topology: Topology) -> Keypoint:
    """Build a Keypoint from a parsed JSON object, raising ValueError on violations."""
    if not isinstance(obj, dict):
        raise ValueError("keypoint is not an object")
    unknown = set(obj) - _KEYPOINT_FIELDS
    if unknown:
        raise ValueError(f"unknown keypoint field(s) {sorted(unknown)}")
    for name in ("x", "y"):
        if name not in obj:
            raise ValueError(f"keypoint missing '{name}'")
        if not _is_number(obj[name]) or not math.isfinite(obj[name]):
            raise ValueError(f"keypoint '{name}' must be a finite number")
    if topology.has_z:
        if "z" not in obj:
            raise ValueError(f"z required for {topology.name}")
        if not _is_number(obj["z"]) or not math.isfinite(obj["z"]):
            raise ValueError("keypoint 'z' must be a finite number")
        z = float(obj["z"])
    else:
        if "z" in obj:
            raise ValueError(f"z not allowed for 2D topology {topology.name}")
        z = None
    visibility = obj.get("visibility", 1.0)
    if not _is_number(visibility) or not 0.0 <= visibility <= 1.0:
        raise ValueError("keypoint 'visibility' must be in [0, 1]")
    return Keypoint(x=float(obj["x"]), y=float(obj["y"]), z=z, visibility=float(visibility))


def _record_from_obj(obj) -> LandmarkRecord:
    """Build an unclamped LandmarkRecord from a parsed JSON object."""
    if not isinstance(obj, dict):
        raise ValueError("line is not an object")
    unknown = set(obj) - _RECORD_FIELDS
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)}")
    missing = _RECORD_FIELDS - set(obj)
    if missing:
        raise ValueError(f"missing field(s) {sorted(missing)}")
    if not isinstance(obj["image_id"], str) or not isinstance(obj["product_id"], str):
        raise ValueError("image_id and product_id must be strings")
    topology_name = obj["topology"]
    if topology_name not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology_name!r}")
    topology = TOPOLOGIES[topology_name]
    for name in ("width", "height"):
        value = obj[name]
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            raise ValueError(f"'{name}' must be a positive integer")
    if not isinstance(obj["detected"], bool):
        raise ValueError("'detected' must be a boolean")
    if not isinstance(obj["keypoints"], list):
        raise ValueError("'keypoints' must be an array")
    detected = obj["detected"]
    raw_keypoints = obj["keypoints"]
    if detected and len(raw_keypoints) != topology.keypoint_count:
        raise ValueError(
            f"keypoint count mismatch: {topology_name} expects "
            f"{topology.keypoint_count}, got {len(raw_keypoints)}"
        )
    if not detected and raw_keypoints:
        raise ValueError("detected=false records must carry no keypoints")
    keypoints = tuple(_keypoint_from_obj(kp, topology) for kp in raw_keypoints)
    return LandmarkRecord(
        image_id=obj["image_id"],
        product_id=obj["product_id"],
        topology=topology_name,
        width=obj["width"],
        height=obj["height"],
        detected=detected,
        keypoints=keypoints,
    )


def validate_topology(
    record: LandmarkRecord, line: int | None = None
) -> tuple[LandmarkRecord | None, list[Diagnostic]]:
    """Check a record against its declared topology, clamping out-of-frame points.

    Returns the (possibly clamped) record plus diagnostics.  The record is
    ``None`` when an error-severity diagnostic was raised; clamping only emits
    warnings and keeps the record usable.
    """
    diags: list[Diagnostic] = []

    def error(message: str):
        diags.append(Diagnostic("error", message, line=line, image_id=record.image_id))

    if record.topology not in TOPOLOGIES:
        error(f"unknown topology {record.topology!r}")
        return None, diags
    topology = TOPOLOGIES[record.topology]
    if record.width <= 0 or record.height <= 0:
        error("image dimensions must be positive")
        return None, diags
    if record.detected and len(record.keypoints) != topology.keypoint_count:
        error(
            f"keypoint count mismatch: {topology.name} expects "
            f"{topology.keypoint_count}, got {len(record.keypoints)}"
        )
        return None, diags
    if not record.detected and record.keypoints:
        error("detected=false records must carry no keypoints")
        return None, diags

    clamped: list[Keypoint] = []
    n_clamped = 0
    for kp in record.keypoints:
        if topology.has_z and kp.z is None:
            error(f"z required for {topology.name}")
            return None, diags
        if not topology.has_z and kp.z is not None:
            error(f"z not allowed for 2D topology {topology.name}")
            return None, diags
        if not (math.isfinite(kp.x) and math.isfinite(kp.y)):
            error("keypoint coordinates must be finite")
            return None, diags
        if not 0.0 <= kp.visibility <= 1.0:
            error("keypoint visibility must be in [0, 1]")
            return None, diags
        x = min(max(kp.x, 0.0), float(record.width))
        y = min(max(kp.y, 0.0), float(record.height))
        if x != kp.x or y != kp.y:
            n_clamped += 1
            kp = replace(kp, x=x, y=y)
        clamped.append(kp)
    if n_clamped:
        diags.append(
            Diagnostic(
                "warning",
                f"{n_clamped} keypoint(s) outside the frame were clamped to it",
                line=line,
                image_id=record.image_id,
            )
        )
        record = replace(record, keypoints=tuple(clamped))
    return record, diags


def parse_landmark_records(stream: Union[str, bytes, IO]) -> ParseResult:
    """Parse a landmark record file.

    Accepts a str/bytes payload or a file-like object.  Malformed lines are
    reported with their 1-based line number and skipped; well-formed records
    are returned in input order.  An unreadable stream raises ``StreamError``.
    """
    try:
        lines = _read_lines(stream)
    except (OSError, UnicodeDecodeError) as exc:
        raise StreamError(f"cannot read landmark stream: {exc}") from exc

    result = ParseResult()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped, parse_constant=_reject_constant)
            record = _record_from_obj(obj)
        except ValueError as exc:
            result.diagnostics.append(Diagnostic("error", str(exc), line=lineno))
            continue
        record, diags = validate_topology(record, line=lineno)
        result.diagnostics.extend(diags)
        if record is not None:
            result.records.append(record)
    return result


def _read_lines(stream: Union[str, bytes, IO]) -> Iterable[str]:
    if isinstance(stream, bytes):
        return stream.decode("utf-8").splitlines()
    if isinstance(stream, str):
        return stream.splitlines()
    data = stream.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines()


def serialize_landmark_record(record: LandmarkRecord) -> str:
    """Render a record as one canonical JSON line (fixed field order)."""
    topology = TOPOLOGIES[record.topology]
    keypoints = []
    for kp in record.keypoints:
        entry: dict = {"x": kp.x, "y": kp.y}
        if topology.has_z:
            entry["z"] = kp.z
        entry["visibility"] = kp.visibility
        keypoints.append(entry)
    obj = {
        "image_id": record.image_id,
        "product_id": record.product_id,
        "topology": record.topology,
        "width": record.width,
        "height": record.height,
        "detected": record.detected,
        "keypoints": keypoints,
    }
    return json.dumps(obj, separators=(",", ":"))


def serialize_landmark_records(records: Iterable[LandmarkRecord]) -> str:
    return "".join(serialize_landmark_record(r) + "\n" for r in records)


def normalize(record: LandmarkRecord) -> NormalizedLandmarkSet:
    """Divide pixel coordinates by the image dimensions; z passes through.

    The z convention is whatever the upstream detector emitted; it is already
    unitless and is not rescaled here.
    """
    if record.width <= 0 or record.height <= 0:
        raise ValueError(
            f"record {record.image_id!r} has non-positive dimensions "
            f"{record.width}x{record.height}"
        )
    coords = tuple(
        Keypoint(
            x=kp.x / record.width,
            y=kp.y / record.height,
            z=kp.z,
            visibility=kp.visibility,
        )
        for kp in record.keypoints
    )
    return NormalizedLandmarkSet(
        image_id=record.image_id,
        product_id=record.product_id,
        topology=record.topology,
        detected=record.detected,
        coords=coords,
    )
