"""Compressed pose representations from a small fully connected autoencoder.

Four encoder layers taper to an 8-unit bottleneck; a two-layer decoder
reconstructs the input.  Training minimizes reconstruction error plus a
batchwise contrastive term over bottleneck codes (positives are jittered
copies of each row, negatives the other rows), optimized with AdamW under a
cosine learning-rate schedule.  Everything runs in float64 numpy with
analytic gradients, so training is bit-reproducible per seed and gradients
can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import TrainingDivergedError, UnposeError
from .features import EmbeddingMatrix, PoseEmbedding

BOTTLENECK_DIM = 8
_NORM_EPS = 1e-9  # codes at or below this norm are left out of the contrastive term


@dataclass(frozen=True)
class TrainingHyperparams:
    """Knobs for one training run; defaults follow the reference setup.

    Note on the learning rate: the 0.1-to-0.001 cosine schedule is kept as
    the documented default, but AdamW moves every weight by roughly the
    learning rate per step, so 0.1 can flatten the rectifier units on small
    corpora within a handful of steps.  The pipeline passes a gentler
    schedule by default; callers training directly at desk scale should too.
    """

    batch_size: int = 2048
    learning_rate: float = 0.1
    min_learning_rate: float = 0.001
    weight_decay: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 50
    temperature: float = 0.5
    contrastive_weight: float = 1.0
    jitter_sigma: float = 0.01
    standardize_inputs: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.min_learning_rate <= self.learning_rate:
            raise ValueError("min_learning_rate must be in (0, learning_rate]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.contrastive_weight < 0:
            raise ValueError("contrastive_weight must be >= 0")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")


@dataclass
class AutoencoderParams:
    """Weight matrices and biases; encoder layers first, then decoder.

    ``input_mean``/``input_scale``, when set by training, standardize inputs
    before the first encoder layer; they are part of the model, so encoding
    is a pure function of the raw embedding.
    """

    input_dim: int
    enc_w: list[np.ndarray]
    enc_b: list[np.ndarray]
    dec_w: list[np.ndarray]
    dec_b: list[np.ndarray]
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    @property
    def bottleneck_dim(self) -> int:
        return self.enc_w[-1].shape[1]

    @property
    def layer_dims_encoder(self) -> list[int]:
        return [self.enc_w[0].shape[0]] + [w.shape[1] for w in self.enc_w]

    @property
    def layer_dims_decoder(self) -> list[int]:
        return [self.dec_w[0].shape[0]] + [w.shape[1] for w in self.dec_w]

    def arrays(self) -> list[np.ndarray]:
        return self.enc_w + self.enc_b + self.dec_w + self.dec_b

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            input_dim=self.input_dim,
            enc_w=[w.copy() for w in self.enc_w],
            enc_b=[b.copy() for b in self.enc_b],
            dec_w=[w.copy() for w in self.dec_w],
            dec_b=[b.copy() for b in self.dec_b],
            input_mean=None if self.input_mean is None else self.input_mean.copy(),
            input_scale=None if self.input_scale is None else self.input_scale.copy(),
        )

    def zeros_like(self) -> "AutoencoderParams":
        return AutoencoderParams(
            input_dim=self.input_dim,
            enc_w=[np.zeros_like(w) for w in self.enc_w],
            enc_b=[np.zeros_like(b) for b in self.enc_b],
            dec_w=[np.zeros_like(w) for w in self.dec_w],
            dec_b=[np.zeros_like(b) for b in self.dec_b],
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class ReducedEmbedding:
    """A pose embedding compressed to the bottleneck width."""

    image_id: str
    product_id: str
    vector: np.ndarray
    is_no_pose: bool


def init_autoencoder(
    input_dim: int,
    seed: int,
    encoder_widths: tuple[int, ...] = (64, 32, 16),
    bottleneck_dim: int = BOTTLENECK_DIM,
    decoder_widths: tuple[int, ...] = (32,),
) -> AutoencoderParams:
    """Scaled uniform fan-in initialization, deterministic per (input_dim, seed)."""
    if input_dim <= bottleneck_dim:
        raise ValueError(
            f"input_dim must exceed the bottleneck width {bottleneck_dim}, got {input_dim}"
        )
    rng = np.random.default_rng(seed)
    enc_dims = [input_dim, *encoder_widths, bottleneck_dim]
    dec_dims = [bottleneck_dim, *decoder_widths, input_dim]

    def make_layers(dims):
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out, dtype=np.float64))
        return weights, biases

    enc_w, enc_b = make_layers(enc_dims)
    dec_w, dec_b = make_layers(dec_dims)
    return AutoencoderParams(input_dim=input_dim, enc_w=enc_w, enc_b=enc_b, dec_w=dec_w, dec_b=dec_b)


def _forward(weights, biases, X):
    """Linear stack with relu on hidden layers, identity on the last one."""
    acts = [X]
    pres = []
    h = X
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        pre = h @ w + b
        pres.append(pre)
        h = np.maximum(pre, 0.0) if i < last else pre
        acts.append(h)
    return h, (acts, pres)


def _backward(weights, cache, grad_out, grad_w, grad_b):
    """Accumulate weight/bias grads for one stack; returns grad wrt its input."""
    acts, pres = cache
    last = len(weights) - 1
    g = grad_out
    for i in range(last, -1, -1):
        dpre = g if i == last else g * (pres[i] > 0)
        grad_w[i] += acts[i].T @ dpre
        grad_b[i] += dpre.sum(axis=0)
        g = dpre @ weights[i].T
    return g


def _normalize_rows(Z):
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    safe = np.maximum(norms, _NORM_EPS)
    return Z / safe[:, None], norms, safe


def _normalize_rows_backward(Zh, safe, active, G):
    dot = np.einsum("ij,ij->i", Zh, G)
    grad = (G - dot[:, None] * Zh) / safe[:, None]
    grad_small = G / safe[:, None]
    return np.where(active[:, None], grad, grad_small)


def _jitter_noise(shape, sigma: float, seed: int, step: int) -> np.ndarray:
    rng = np.random.default_rng([abs(int(seed)), abs(int(step)), 0xA17])
    return sigma * rng.standard_normal(shape)


def _name_offending_layer(enc_cache, dec_cache) -> str:
    for name, cache in (("encoder", enc_cache), ("decoder", dec_cache)):
        if cache is None:
            continue
        for i, pre in enumerate(cache[1]):
            if not np.all(np.isfinite(pre)):
                return f"{name} layer {i}"
    return "loss"


def loss_and_gradients(
    params: AutoencoderParams,
    batch: np.ndarray,
    hyper: TrainingHyperparams,
    step: int = 0,
) -> tuple[float, AutoencoderParams]:
    """Exact loss and gradients for one batch.

    Loss = mean over rows of the squared reconstruction error, plus
    ``contrastive_weight`` times a normalized-temperature cross-entropy over
    cosine similarities of bottleneck codes.  Each row's positive is the code
    of its jittered copy (noise deterministic per seed+step); negatives are
    the other rows' clean codes.  Rows whose code norm is ~0 carry no cosine
    direction and are excluded from the contrastive term.
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("batch must be a 2-D array with at least 2 rows")
    if X.shape[1] != params.input_dim:
        raise ValueError(f"batch dim {X.shape[1]} != model input_dim {params.input_dim}")

    n = X.shape[0]
    grads = params.zeros_like()

    Z, enc_cache = _forward(params.enc_w, params.enc_b, X)
    Xhat, dec_cache = _forward(params.dec_w, params.dec_b, Z)

    resid = Xhat - X
    loss = float(np.einsum("ij,ij->", resid, resid)) / n
    dXhat = (2.0 / n) * resid
    dZ = _backward(params.dec_w, dec_cache, dXhat, grads.dec_w, grads.dec_b)

    lam = hyper.contrastive_weight
    if lam != 0.0:
        noise = _jitter_noise(X.shape, hyper.jitter_sigma, hyper.seed, step)
        Zj, enc_cache_j = _forward(params.enc_w, params.enc_b, X + noise)

        Zh, z_norms, z_safe = _normalize_rows(Z)
        Zjh, zj_norms, zj_safe = _normalize_rows(Zj)
        active = (z_norms > _NORM_EPS) & (zj_norms > _NORM_EPS)
        idx = np.flatnonzero(active)
        m = idx.size
        if m >= 2:
            tau = hyper.temperature
            A = Zh[idx]
            B = Zjh[idx]
            logits = (A @ A.T) / tau
            np.fill_diagonal(logits, np.einsum("ij,ij->i", A, B) / tau)
            shifted = logits - logits.max(axis=1, keepdims=True)
            expl = np.exp(shifted)
            P = expl / expl.sum(axis=1, keepdims=True)
            contrastive = float(-np.log(np.diag(P)).mean())
            loss += lam * contrastive

            dM = (P - np.eye(m)) / m
            diag = np.diag(dM).copy()
            off = dM.copy()
            np.fill_diagonal(off, 0.0)
            gA = ((off + off.T) @ A + diag[:, None] * B) / tau
            gB = (diag[:, None] * A) / tau

            G_Zh = np.zeros_like(Zh)
            G_Zjh = np.zeros_like(Zjh)
            G_Zh[idx] = gA
            G_Zjh[idx] = gB
            dZ = dZ + lam * _normalize_rows_backward(Zh, z_safe, z_norms > _NORM_EPS, G_Zh)
            dZj = lam * _normalize_rows_backward(Zjh, zj_safe, zj_norms > _NORM_EPS, G_Zjh)
            _backward(params.enc_w, enc_cache_j, dZj, grads.enc_w, grads.enc_b)

    _backward(params.enc_w, enc_cache, dZ, grads.enc_w, grads.enc_b)

    if not np.isfinite(loss):
        raise UnposeError(
            f"non-finite loss; first bad activations at {_name_offending_layer(enc_cache, dec_cache)}"
        )
    return loss, grads


class AdamWOptimizer:
    """Decoupled weight decay Adam; decay multiplies weight matrices only."""

    def __init__(self, params: AutoencoderParams, hyper: TrainingHyperparams):
        self.hyper = hyper
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0
        ne, nd = len(params.enc_w), len(params.dec_w)
        self._is_weight = [True] * ne + [False] * ne + [True] * nd + [False] * nd

    def step(self, params: AutoencoderParams, grads: AutoencoderParams, lr: float):
        h = self.hyper
        self.t += 1
        bias1 = 1.0 - h.beta1**self.t
        bias2 = 1.0 - h.beta2**self.t
        decay = 1.0 - lr * h.weight_decay
        for w, g, m, v, is_weight in zip(
            params.arrays(), grads.arrays(), self.m.arrays(), self.v.arrays(), self._is_weight
        ):
            m *= h.beta1
            m += (1.0 - h.beta1) * g
            v *= h.beta2
            v += (1.0 - h.beta2) * g * g
            if is_weight:
                w *= decay
            w -= lr * (m / bias1) / (np.sqrt(v / bias2) + h.adam_epsilon)


def _cosine_lr(hyper: TrainingHyperparams, epoch: int) -> float:
    if hyper.epochs <= 1:
        return hyper.learning_rate
    span = hyper.learning_rate - hyper.min_learning_rate
    frac = epoch / (hyper.epochs - 1)
    return hyper.min_learning_rate + 0.5 * span * (1.0 + np.cos(np.pi * frac))


def train_autoencoder(
    params: AutoencoderParams,
    corpus: Union[np.ndarray, EmbeddingMatrix],
    hyper: TrainingHyperparams,
) -> tuple[AutoencoderParams, list[float]]:
    """Run AdamW over seeded shuffled batches; returns (model, per-epoch loss trace).

    Deterministic per (params, corpus, hyper) in single-threaded mode.  A
    non-finite loss aborts with the last finished epoch in the exception.
    """
    X = corpus.matrix if isinstance(corpus, EmbeddingMatrix) else np.asarray(corpus, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("corpus must have at least 2 rows")
    if X.shape[1] != params.input_dim:
        raise ValueError(f"corpus dim {X.shape[1]} != model input_dim {params.input_dim}")

    params = params.copy()
    if hyper.standardize_inputs:
        params.input_mean = X.mean(axis=0)
        params.input_scale = np.maximum(X.std(axis=0), 1e-8)
    if params.input_mean is not None:
        X = (X - params.input_mean) / params.input_scale
    optimizer = AdamWOptimizer(params, hyper)
    shuffle_rng = np.random.default_rng([abs(int(hyper.seed)), 0x5F])
    batch_size = min(hyper.batch_size, n)
    trace: list[float] = []
    step = 0
    for epoch in range(hyper.epochs):
        lr = _cosine_lr(hyper, epoch)
        perm = shuffle_rng.permutation(n)
        starts = list(range(0, n, batch_size))
        # fold a trailing single row into the previous batch
        bounds = [(s, min(s + batch_size, n)) for s in starts]
        if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
            bounds[-2] = (bounds[-2][0], bounds[-1][1])
            bounds.pop()
        epoch_loss = 0.0
        for lo, hi in bounds:
            batch = X[perm[lo:hi]]
            try:
                loss, grads = loss_and_gradients(params, batch, hyper, step=step)
            except UnposeError as exc:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}: {exc}",
                    last_good_epoch=epoch - 1,
                    loss_trace=trace,
                ) from exc
            optimizer.step(params, grads, lr)
            epoch_loss += loss * (hi - lo)
            step += 1
        epoch_loss /= n
        if not np.isfinite(epoch_loss) or not params.all_finite():
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch}",
                last_good_epoch=epoch - 1,
                loss_trace=trace,
            )
        trace.append(epoch_loss)
    return params, trace


def encode_array(params: AutoencoderParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != params.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != model input_dim {params.input_dim}")
    if params.input_mean is not None:
        X = (X - params.input_mean) / params.input_scale
    Z, _ = _forward(params.enc_w, params.enc_b, X)
    return Z[0] if single else Z


def encode(params: AutoencoderParams, embedding: PoseEmbedding) -> ReducedEmbedding:
    """Forward pass through the encoder only; the no-pose flag is carried through."""
    vector = encode_array(params, embedding.vector)
    return ReducedEmbedding(
        image_id=embedding.image_id,
        product_id=embedding.product_id,
        vector=vector,
        is_no_pose=embedding.is_no_pose,
    )


def encode_matrix(params: AutoencoderParams, matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Encode a whole embedding matrix, preserving ids, flags, and fingerprint."""
    return EmbeddingMatrix(
        image_ids=list(matrix.image_ids),
        product_ids=list(matrix.product_ids),
        matrix=encode_array(params, matrix.matrix),
        is_no_pose=matrix.is_no_pose.copy(),
        fingerprint=matrix.fingerprint,
    )


class ContrastiveAutoencoder(BaseEstimator, TransformerMixin):
    """Sklearn-style wrapper: ``fit`` trains the network, ``transform`` encodes.

    Parameters mirror :class:`TrainingHyperparams` plus the layer widths; the
    bottleneck width is the output dimensionality of ``transform``.
    """

    def __init__(
        self,
        encoder_widths=(64, 32, 16),
        bottleneck_dim=BOTTLENECK_DIM,
        decoder_widths=(32,),
        epochs=50,
        batch_size=2048,
        learning_rate=0.1,
        min_learning_rate=0.001,
        weight_decay=0.001,
        temperature=0.5,
        contrastive_weight=1.0,
        jitter_sigma=0.01,
        standardize_inputs=True,
        random_state=0,
    ):
        self.encoder_widths = encoder_widths
        self.bottleneck_dim = bottleneck_dim
        self.decoder_widths = decoder_widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.min_learning_rate = min_learning_rate
        self.weight_decay = weight_decay
        self.temperature = temperature
        self.contrastive_weight = contrastive_weight
        self.jitter_sigma = jitter_sigma
        self.standardize_inputs = standardize_inputs
        self.random_state = random_state

    def _hyper(self) -> TrainingHyperparams:
        return TrainingHyperparams(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            min_learning_rate=self.min_learning_rate,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            temperature=self.temperature,
            contrastive_weight=self.contrastive_weight,
            jitter_sigma=self.jitter_sigma,
            standardize_inputs=self.standardize_inputs,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        hyper = self._hyper()
        params = init_autoencoder(
            X.shape[1],
            self.random_state,
            encoder_widths=tuple(self.encoder_widths),
            bottleneck_dim=self.bottleneck_dim,
            decoder_widths=tuple(self.decoder_widths),
        )
        self.params_, self.loss_trace_ = train_autoencoder(params, X, hyper)
        self.input_dim_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return encode_array(self.params_, X)
