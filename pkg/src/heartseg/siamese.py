"""Siamese 1D-CNN for inter-onset event similarity.

Both branches share one parameter set: valid convolution -> ReLU ->
non-overlapping max pooling -> dense -> ReLU -> L2 normalization. Because the
final activation is non-negative, the embedding dot product lands in [0, 1]
and is trained directly against pair targets with binary cross-entropy.
All gradients are computed here by hand; no autodiff framework is involved.
"""

import struct
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .signal_io import PcgSignal

_NORM_EPS = 1e-12
_SIM_CLAMP = 1e-7

_MODEL_MAGIC = b"HSSM"
_PAIRS_MAGIC = b"HSPD"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SiameseHyper:
    """Shapes of the base network; event_len is in samples at the pipeline's
    canonical rate (512 = 128 ms at 4000 Hz)."""

    event_len: int = 512
    n_filters: int = 8
    kernel_len: int = 16
    pool_len: int = 4
    embed_dim: int = 32

    @property
    def conv_out(self) -> int:
        return self.event_len - self.kernel_len + 1

    @property
    def n_pool(self) -> int:
        return self.conv_out // self.pool_len

    @property
    def flattened_len(self) -> int:
        return self.n_filters * self.n_pool

    def __post_init__(self):
        if min(self.event_len, self.n_filters, self.kernel_len, self.pool_len, self.embed_dim) < 1:
            raise ValueError("all hyperparameters must be >= 1")
        if self.conv_out < self.pool_len:
            raise ValueError("event_len too short for kernel_len and pool_len")


@dataclass(frozen=True)
class EventImage:
    """Fixed-length, per-event standardized slice of signal between onsets."""

    values: np.ndarray
    source: tuple[str, int, int] = ("", 0, 0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("event values must be a finite 1-D sequence")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class PairSample:
    a: EventImage
    b: EventImage
    target: int  # 1 same-class (positive), 0 cross-class (negative)


@dataclass
class SiameseModel:
    conv_kernels: np.ndarray  # (n_filters, kernel_len)
    conv_bias: np.ndarray  # (n_filters,)
    dense_weights: np.ndarray  # (embed_dim, flattened_len)
    dense_bias: np.ndarray  # (embed_dim,)
    hyper: SiameseHyper

    def __post_init__(self):
        h = self.hyper
        expected = {
            "conv_kernels": (h.n_filters, h.kernel_len),
            "conv_bias": (h.n_filters,),
            "dense_weights": (h.embed_dim, h.flattened_len),
            "dense_bias": (h.embed_dim,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    def parameters(self) -> list[np.ndarray]:
        return [self.conv_kernels, self.conv_bias, self.dense_weights, self.dense_bias]


@dataclass
class SiameseGradients:
    conv_kernels: np.ndarray
    conv_bias: np.ndarray
    dense_weights: np.ndarray
    dense_bias: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.conv_kernels, self.conv_bias, self.dense_weights, self.dense_bias]


@dataclass
class TrainResult:
    model: SiameseModel
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)


def extract_event(
    signal: PcgSignal,
    t_start: int,
    t_end: int,
    event_len: int = 512,
    recording_id: str = "",
) -> EventImage:
    """Slice [t_start, t_end), linearly resample to event_len points, and
    standardize to zero mean / unit variance (variance floored at 1e-8)."""
    if not 0 <= t_start < t_end <= len(signal):
        raise ValueError("need 0 <= t_start < t_end <= signal length")
    slice_ = signal.samples[t_start:t_end]
    if slice_.size < 2:
        raise ValueError("event slice must contain at least 2 samples")
    pos = np.linspace(0.0, slice_.size - 1.0, event_len)
    values = np.interp(pos, np.arange(slice_.size), slice_)
    std = np.sqrt(max(float(values.var()), 1e-8))
    values = (values - values.mean()) / std
    return EventImage(values=values, source=(recording_id, int(t_start), int(t_end)))


def make_pairs(class1: list[EventImage], class2: list[EventImage]) -> list[PairSample]:
    """All positive pairs within class1 plus all class1 x class2 negatives."""
    if len(class1) < 2:
        raise ValueError("need at least 2 primary-class events")
    pairs = [PairSample(a, b, 1) for a, b in combinations(class1, 2)]
    pairs.extend(PairSample(a, b, 0) for a in class1 for b in class2)
    return pairs


def init_model(hyper: SiameseHyper = SiameseHyper(), seed: int = 0) -> SiameseModel:
    """Glorot-uniform weights, zero biases, fully determined by the seed."""
    rng = np.random.default_rng(seed)
    return _init_from_rng(hyper, rng)


def _init_from_rng(hyper: SiameseHyper, rng: np.random.Generator) -> SiameseModel:
    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    return SiameseModel(
        conv_kernels=glorot(
            (hyper.n_filters, hyper.kernel_len),
            hyper.kernel_len,
            hyper.n_filters * hyper.kernel_len,
        ),
        conv_bias=np.zeros(hyper.n_filters),
        dense_weights=glorot(
            (hyper.embed_dim, hyper.flattened_len), hyper.flattened_len, hyper.embed_dim
        ),
        dense_bias=np.zeros(hyper.embed_dim),
        hyper=hyper,
    )


class _ForwardCache(NamedTuple):
    windows: np.ndarray  # (B, conv_out, kernel_len)
    z1: np.ndarray  # (B, n_filters, conv_out)
    pool_arg: np.ndarray  # (B, n_filters, n_pool)
    flat: np.ndarray  # (B, flattened_len)
    z2: np.ndarray  # (B, embed_dim)
    a2: np.ndarray  # (B, embed_dim)
    nrm: np.ndarray  # (B,)
    raw_norm: np.ndarray  # (B,)


def _forward_batch(model: SiameseModel, x: np.ndarray) -> tuple[np.ndarray, _ForwardCache]:
    h = model.hyper
    if x.ndim != 2 or x.shape[1] != h.event_len:
        raise ValueError(f"expected inputs of shape (batch, {h.event_len})")
    windows = np.lib.stride_tricks.sliding_window_view(x, h.kernel_len, axis=1)
    z1 = np.einsum("btk,fk->bft", windows, model.conv_kernels) + model.conv_bias[None, :, None]
    a1 = np.maximum(z1, 0.0)
    trimmed = a1[:, :, : h.n_pool * h.pool_len].reshape(-1, h.n_filters, h.n_pool, h.pool_len)
    pool_arg = trimmed.argmax(axis=3)
    pooled = np.take_along_axis(trimmed, pool_arg[..., None], axis=3)[..., 0]
    flat = pooled.reshape(-1, h.flattened_len)
    z2 = flat @ model.dense_weights.T + model.dense_bias
    a2 = np.maximum(z2, 0.0)
    raw_norm = np.sqrt(np.sum(a2 * a2, axis=1))
    nrm = raw_norm + _NORM_EPS
    emb = a2 / nrm[:, None]
    return emb, _ForwardCache(windows, z1, pool_arg, flat, z2, a2, nrm, raw_norm)

def _backward_batch(
    model: SiameseModel, cache: _ForwardCache, d_emb: np.ndarray, grads: SiameseGradients
) -> None:
    h = model.hyper
    a2, nrm = cache.a2, cache.nrm
    safe_raw = np.where(cache.raw_norm > 0.0, cache.raw_norm, 1.0)
    dot = np.sum(d_emb * a2, axis=1)
    d_a2 = d_emb / nrm[:, None] - a2 * (dot / (nrm * nrm * safe_raw))[:, None]
    d_z2 = d_a2 * (cache.z2 > 0.0)

    grads.dense_weights += d_z2.T @ cache.flat
    grads.dense_bias += d_z2.sum(axis=0)

    d_flat = d_z2 @ model.dense_weights
    d_pool = d_flat.reshape(-1, h.n_filters, h.n_pool)
    d_trim = np.zeros((d_pool.shape[0], h.n_filters, h.n_pool, h.pool_len))
    np.put_along_axis(d_trim, cache.pool_arg[..., None], d_pool[..., None], axis=3)
    d_a1 = np.zeros_like(cache.z1)
    d_a1[:, :, : h.n_pool * h.pool_len] = d_trim.reshape(-1, h.n_filters, h.n_pool * h.pool_len)
    d_z1 = d_a1 * (cache.z1 > 0.0)

    grads.conv_kernels += np.einsum("bft,btk->fk", d_z1, cache.windows)
    grads.conv_bias += d_z1.sum(axis=(0, 2))


def embed(model: SiameseModel, event: EventImage) -> np.ndarray:
    """Unit-norm embedding of one event."""
    emb, _ = _forward_batch(model, event.values[None, :])
    return emb[0]


def similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    """Dot product of unit embeddings, clamped into [0, 1] against rounding."""
    return float(np.clip(np.dot(e1, e2), 0.0, 1.0))


def zero_gradients(hyper: SiameseHyper) -> SiameseGradients:
    return SiameseGradients(
        conv_kernels=np.zeros((hyper.n_filters, hyper.kernel_len)),
        conv_bias=np.zeros(hyper.n_filters),
        dense_weights=np.zeros((hyper.embed_dim, hyper.flattened_len)),
        dense_bias=np.zeros(hyper.embed_dim),
    )


def _loss_and_grad_arrays(
    model: SiameseModel,
    a: np.ndarray,
    b: np.ndarray,
    targets: np.ndarray,
    want_grad: bool = True,
) -> tuple[float, np.ndarray, SiameseGradients | None]:
    emb_a, cache_a = _forward_batch(model, a)
    emb_b, cache_b = _forward_batch(model, b)
    sim = np.sum(emb_a * emb_b, axis=1)
    clamped = np.clip(sim, _SIM_CLAMP, 1.0 - _SIM_CLAMP)
    losses = -(targets * np.log(clamped) + (1.0 - targets) * np.log(1.0 - clamped))
    loss = float(losses.mean())
    if not want_grad:
        return loss, sim, None

    inside = (sim > _SIM_CLAMP) & (sim < 1.0 - _SIM_CLAMP)
    d_sim = np.where(inside, -targets / clamped + (1.0 - targets) / (1.0 - clamped), 0.0)
    d_sim /= targets.size
    grads = zero_gradients(model.hyper)
    _backward_batch(model, cache_a, d_sim[:, None] * emb_b, grads)
    _backward_batch(model, cache_b, d_sim[:, None] * emb_a, grads)
    return loss, sim, grads


def _stack_pairs(pairs: list[PairSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.stack([p.a.values for p in pairs])
    b = np.stack([p.b.values for p in pairs])
    targets = np.array([float(p.target) for p in pairs])
    return a, b, targets


def loss(model: SiameseModel, pair: PairSample) -> float:
    """Binary cross-entropy between the pair's similarity and its target."""
    a, b, targets = _stack_pairs([pair])
    value, _, _ = _loss_and_grad_arrays(model, a, b, targets, want_grad=False)
    return value


def loss_gradient(
    model: SiameseModel, batch: list[PairSample]
) -> tuple[float, SiameseGradients]:
    """Mean loss over the batch and its gradient, backpropagated through both
    shared-weight branches into the single parameter set."""
    a, b, targets = _stack_pairs(batch)
    value, _, grads = _loss_and_grad_arrays(model, a, b, targets)
    return value, grads


def train(
    pairs: list[PairSample],
    hyper: SiameseHyper = SiameseHyper(),
    learning_rate: float = 0.5,
    epochs: int = 30,
    batch_size: int = 64,
    seed: int = 0,
) -> TrainResult:
    """Mini-batch gradient descent with a fixed learning rate.

    All randomness (init and per-epoch shuffling) flows from the seed, so the
    final parameters are bit-reproducible. The per-epoch trace records mean
    loss and pair accuracy (similarity > 0.5 matching the target) over the
    full set. Raises on a non-finite loss.
    """
    if not pairs:
        raise ValueError("training needs at least one pair")
    rng = np.random.default_rng(seed)
    model = _init_from_rng(hyper, rng)
    a, b, targets = _stack_pairs(pairs)
    n = targets.size
    result = TrainResult(model=model)

    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            batch_loss, _, grads = _loss_and_grad_arrays(model, a[sel], b[sel], targets[sel])
            if not np.isfinite(batch_loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: loss={batch_loss}"
                )
            for param, grad in zip(model.parameters(), grads.arrays()):
                param -= learning_rate * grad

        epoch_loss, sims = _evaluate(model, a, b, targets)
        result.losses.append(epoch_loss)
        result.accuracies.append(float(np.mean((sims > 0.5) == (targets > 0.5))))
    return result


def _evaluate(
    model: SiameseModel, a: np.ndarray, b: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    total = 0.0
    sims = np.empty(targets.size)
    for start in range(0, targets.size, 256):
        stop = min(start + 256, targets.size)
        chunk_loss, chunk_sims, _ = _loss_and_grad_arrays(
            model, a[start:stop], b[start:stop], targets[start:stop], want_grad=False
        )
        total += chunk_loss * (stop - start)
        sims[start:stop] = chunk_sims
    return total / targets.size, sims


def pair_accuracy(model: SiameseModel, pairs: list[PairSample]) -> float:
    a, b, targets = _stack_pairs(pairs)
    _, sims = _evaluate(model, a, b, targets)
    return float(np.mean((sims > 0.5) == (targets > 0.5)))


def classify_event(
    model: SiameseModel,
    event: EventImage,
    s1_exemplars: list[EventImage],
    threshold: float = 0.5,
) -> str:
    """One-class decision: "S1" when the mean similarity against the S1
    exemplars exceeds the threshold, else "not-S1"."""
    if not s1_exemplars:
        raise ValueError("need at least one S1 exemplar")
    e = embed(model, event)
    exemplar_emb, _ = _forward_batch(model, np.stack([x.values for x in s1_exemplars]))
    mean_sim = float(np.clip(exemplar_emb @ e, 0.0, 1.0).mean())
    return S1_LABEL if mean_sim > threshold else NOT_S1_LABEL


S1_LABEL = "S1"
NOT_S1_LABEL = "not-S1"


def _write_array(out: list[bytes], arr: np.ndarray) -> None:
    out.append(struct.pack("<I", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(arr.astype("<f8").tobytes())


def _read_array(buf: bytes, pos: int) -> tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
    return arr, pos + 8 * count


def save_model(path, model: SiameseModel) -> None:
    """Single-file model format: magic, version, hyperparameter block, then
    each array as an explicit shape table plus little-endian float64 data."""
    h = model.hyper
    out = [
        _MODEL_MAGIC,
        struct.pack("<I", _FORMAT_VERSION),
        struct.pack("<5I", h.event_len, h.n_filters, h.kernel_len, h.pool_len, h.embed_dim),
    ]
    for arr in model.parameters():
        _write_array(out, arr)
    Path(path).write_bytes(b"".join(out))


def load_model(path) -> SiameseModel:
    buf = Path(path).read_bytes()
    if buf[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    hyper = SiameseHyper(*struct.unpack_from("<5I", buf, 8))
    pos = 8 + 20
    arrays = []
    for _ in range(4):
        arr, pos = _read_array(buf, pos)
        arrays.append(arr)
    return SiameseModel(*arrays, hyper=hyper)  # shape check happens in __post_init__


def save_pair_dataset(path, class1: list[EventImage], class2: list[EventImage]) -> None:
    """Persist the two event classes; pairs are regenerated on load (storing
    every pair would square the file size for no information gain)."""
    if not class1:
        raise ValueError("class1 must be non-empty")
    event_len = class1[0].values.size
    out = [
        _PAIRS_MAGIC,
        struct.pack("<I", _FORMAT_VERSION),
        struct.pack("<3I", event_len, len(class1), len(class2)),
    ]
    for events in (class1, class2):
        for ev in events:
            if ev.values.size != event_len:
                raise ValueError("all events must share one length")
            out.append(ev.values.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_pair_dataset(path) -> tuple[list[EventImage], list[EventImage]]:
    buf = Path(path).read_bytes()
    if buf[:4] != _PAIRS_MAGIC:
        raise ValueError(f"{path}: not a pair dataset file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported pair dataset version {version}")
    event_len, n1, n2 = struct.unpack_from("<3I", buf, 8)
    pos = 20
    classes: list[list[EventImage]] = []
    for name, count in (("class1", n1), ("class2", n2)):
        events = []
        for i in range(count):
            values = np.frombuffer(buf, dtype="<f8", count=event_len, offset=pos).copy()
            pos += 8 * event_len
            events.append(EventImage(values=values, source=(name, i, 0)))
        classes.append(events)
    return classes[0], classes[1]
