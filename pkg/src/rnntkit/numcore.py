"""Minimal dense numerical stack shared by every other module.

Everything is float64 and pure: layers are immutable parameter containers,
operations return fresh arrays. Analytic gradients elsewhere in the repo are
validated against ``finite_diff_gradient`` from this module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataFormatError, NumericError, ShapeError

__all__ = [
    "DenseLayer",
    "RecurrentLayer",
    "dense_forward",
    "softmax",
    "log_softmax",
    "log_sum_exp",
    "recurrent_forward",
    "bce_loss",
    "cross_entropy_loss",
    "finite_diff_gradient",
    "sgd_step",
    "save_matrix",
    "load_matrix",
    "derive_seed",
    "make_rng",
    "PROB_EPS",
]

# Clamp applied to probabilities before taking logs.
PROB_EPS = 1e-7

MATRIX_MAGIC = b"TDM1"


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class DenseLayer:
    """Affine map y = weight @ x + bias, weight is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", as_f64(self.weight))
        object.__setattr__(self, "bias", as_f64(self.bias))
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("DenseLayer expects 2-d weight and 1-d bias")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weight rows {self.weight.shape[0]} != bias dim {self.bias.shape[0]}"
            )

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class RecurrentLayer:
    """Elman cell h_t = tanh(w_in @ x_t + w_rec @ h_{t-1} + bias)."""

    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_in", as_f64(self.w_in))
        object.__setattr__(self, "w_rec", as_f64(self.w_rec))
        object.__setattr__(self, "bias", as_f64(self.bias))
        if self.w_in.ndim != 2 or self.w_rec.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("RecurrentLayer expects 2-d weights and 1-d bias")
        h = self.w_in.shape[0]
        if self.w_rec.shape != (h, h):
            raise ShapeError(f"recurrent weight must be square {h}x{h}, got {self.w_rec.shape}")
        if self.bias.shape != (h,):
            raise ShapeError(f"bias dim {self.bias.shape[0]} != hidden dim {h}")

    @property
    def hidden_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_in.shape[1]


def dense_forward(x, layer: DenseLayer) -> np.ndarray:
    x = as_f64(x)
    if x.shape != (layer.in_dim,):
        raise ShapeError(f"input dim {x.shape} does not match layer input {layer.in_dim}")
    return layer.weight @ x + layer.bias


def softmax(logits) -> np.ndarray:
    """Stable softmax over the last axis; raises NumericError on non-finite input."""
    z = as_f64(logits)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input must be finite")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = as_f64(logits)
    if not np.all(np.isfinite(z)):
        raise NumericError("log_softmax input must be finite")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def log_sum_exp(values) -> float:
    """log(sum(exp(values))), stable for large magnitudes. -inf entries are allowed."""
    v = as_f64(values).ravel()
    if v.size == 0:
        raise ContractError("log_sum_exp of empty input")
    m = np.max(v)
    if not np.isfinite(m):
        # All -inf (empty sum) or an explicit +inf/nan dominates.
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def recurrent_forward(seq, layer: RecurrentLayer, h0=None) -> np.ndarray:
    """Run the cell over a sequence of frames; returns the (T, hidden) state stack."""
    frames = as_f64(seq)
    if frames.size == 0:
        return np.zeros((0, layer.hidden_dim))
    if frames.ndim == 1:
        frames = frames[None, :]
    if frames.shape[1] != layer.in_dim:
        raise ShapeError(f"frame dim {frames.shape[1]} != layer input dim {layer.in_dim}")
    h = np.zeros(layer.hidden_dim) if h0 is None else as_f64(h0)
    if h.shape != (layer.hidden_dim,):
        raise ShapeError("h0 dim does not match hidden dim")
    out = np.empty((frames.shape[0], layer.hidden_dim))
    for t in range(frames.shape[0]):
        h = np.tanh(layer.w_in @ frames[t] + layer.w_rec @ h + layer.bias)
        out[t] = h
    return out


def clamp_prob(p) -> np.ndarray:
    return np.clip(as_f64(p), PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(p: float, c) -> float:
    """Binary cross entropy -[c ln p + (1-c) ln(1-p)] with p clamped away from {0,1}."""
    if c not in (0, 1):
        raise ContractError(f"binary label must be 0 or 1, got {c!r}")
    q = float(clamp_prob(p))
    return float(-(c * np.log(q) + (1 - c) * np.log1p(-q)))


def cross_entropy_loss(probs, target: int) -> float:
    """-ln probs[target] with the same clamping as bce_loss."""
    p = as_f64(probs)
    if not 0 <= target < p.shape[-1]:
        raise ContractError(f"target {target} out of range for {p.shape[-1]} classes")
    return float(-np.log(clamp_prob(p[target])))


def finite_diff_gradient(f, params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function over an array of parameters.

    The oracle against which all analytic gradients in the repo are checked.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    theta = as_f64(params).copy()
    grad = np.zeros_like(theta)
    flat = theta.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(theta)
        flat[i] = orig - eps
        lo = f(theta)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("function returned non-finite value during differencing")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def sgd_step(params, grads, lr: float, frozen=frozenset()):
    """One plain gradient step theta <- theta - lr * grad.

    ``params``/``grads`` are either single arrays or dicts of arrays keyed by
    parameter name. Names in ``frozen`` (exact or dotted-prefix match) are
    returned as the same array object, bit-identical.
    """
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    if isinstance(params, dict):
        if set(params) != set(grads):
            raise ShapeError("params and grads have different keys")
        out = {}
        for name, theta in params.items():
            if _is_frozen(name, frozen):
                out[name] = theta
                continue
            g = as_f64(grads[name])
            if g.shape != theta.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {theta.shape} for {name}")
            out[name] = theta - lr * g
        return out
    theta = as_f64(params)
    g = as_f64(grads)
    if g.shape != theta.shape:
        raise ShapeError(f"gradient shape {g.shape} != param shape {theta.shape}")
    return theta - lr * g


def _is_frozen(name: str, frozen) -> bool:
    for f in frozen:
        if name == f or name.startswith(f + "."):
            return True
    return False


# ---------------------------------------------------------------------------
# Matrix binary format, used for every checkpoint file in the repo:
# magic "TDM1", u32-le rows, u32-le cols, then rows*cols little-endian f64,
# row-major.
# ---------------------------------------------------------------------------


def save_matrix(path, m) -> None:
    a = np.ascontiguousarray(as_f64(m))
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"matrix must be 1-d or 2-d, got ndim={a.ndim}")
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(a.astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MATRIX_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise DataFormatError(f"{path}: truncated header")
        rows, cols = struct.unpack("<II", header)
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise DataFormatError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------------------
# Seeding. One master seed per run; sub-streams are derived by splitmix-style
# 64-bit mixing of (master, purpose, index, ...) so parallel workers can build
# independent generators without sharing state.
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit sub-seed from a master seed and labels (ints or strings)."""
    state = _mix64(master & _MASK64)
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
            for off in range(0, len(data), 8):
                chunk = int.from_bytes(data[off : off + 8], "little")
                state = _mix64(state ^ chunk)
            state = _mix64(state ^ len(data))
        elif isinstance(part, (int, np.integer)):
            state = _mix64(state ^ (int(part) & _MASK64))
        else:
            raise ContractError(f"seed parts must be int or str, got {type(part).__name__}")
    return state


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & _MASK64)
