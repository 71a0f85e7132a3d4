"""Dense rank-4 tensors, matrices, and the primitive numeric operations.

Everything downstream (attention blocks, the network, training) is built
from the operations defined here.  Values are 64-bit floats throughout,
axis order is channel-last (batch, height, width, channels), and tensors
are immutable and guaranteed finite after every public operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAX_ELEMENTS = 2**63 - 1


class T4BError(ValueError):
    """Raised when a .t4b file cannot be read or is malformed."""


@dataclass(frozen=True)
class Shape4:
    """Extents of a rank-4 tensor: batch, height, width, channels."""

    n: int
    h: int
    w: int
    k: int

    def __post_init__(self):
        for name in ("n", "h", "w", "k"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"extent {name}={v!r} must be a positive integer")
        if self.count > _MAX_ELEMENTS:
            raise ValueError(f"element count {self.count} exceeds addressable size")

    @property
    def count(self) -> int:
        return self.n * self.h * self.w * self.k

    def dims(self) -> tuple[int, int, int, int]:
        return (self.n, self.h, self.w, self.k)


def _freeze(data, ndim: int, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, order="C")
    if arr.ndim != ndim:
        raise ValueError(f"{what} requires a rank-{ndim} array, got rank {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"{what} extents must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable rank-4 value, row-major in (n, h, w, k) order."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = _freeze(data, 4, "Tensor")

    @property
    def shape(self) -> Shape4:
        n, h, w, k = self.data.shape
        return Shape4(n, h, w, k)

    def __repr__(self):
        return f"Tensor{self.data.shape}"


class Matrix:
    """Immutable rank-2 value, row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = _freeze(data, 2, "Matrix")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"Matrix{self.data.shape}"


# ---------------------------------------------------------------------------
# Array-level kernels.  These carry the actual math and are shared with the
# autodiff tape so forward values are computed exactly once, one way.
# ---------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax_lastaxis(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with mandatory max subtraction."""
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm_raw(x, gamma, beta, eps):
    """Normalize the trailing axis to zero mean / unit variance, then affine.

    Returns (output, normalized, inverse_std); the extras feed the backward
    pass.
    """
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = centered * inv_std
    return gamma * normalized + beta, normalized, inv_std


def same_pad_3x3(h: int, w: int, stride: int):
    """SAME padding amounts for a 3x3 kernel: ((top, bottom), (left, right))."""
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    pad_h = max((out_h - 1) * stride + 3 - h, 0)
    pad_w = max((out_w - 1) * stride + 3 - w, 0)
    return (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)


def conv3x3_raw(x, weight, bias, stride):
    """3x3 cross-correlation with SAME zero padding, as one im2col matmul.

    x: (n, h, w, c_in), weight: (3, 3, c_in, c_out), bias: (c_out,).
    Returns (output, cols) where cols is the (n*out_h*out_w, c_in*9)
    unrolled-window matrix reused by the backward pass.
    """
    (pt, pb), (pl, pr) = same_pad_3x3(x.shape[1], x.shape[2], stride)
    padded = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    n, out_h, out_w, c_in = windows.shape[:4]
    cols = windows.reshape(n * out_h * out_w, c_in * 9)
    w_mat = weight.transpose(2, 0, 1, 3).reshape(c_in * 9, -1)
    out = (cols @ w_mat).reshape(n, out_h, out_w, -1) + bias
    return out, cols


def conv3x3_grads(grad_out, cols, weight, in_shape, stride):
    """Gradients of conv3x3_raw w.r.t. its input, weight, and bias."""
    n, h, w, c_in = in_shape
    c_out = weight.shape[3]
    out_h, out_w = grad_out.shape[1], grad_out.shape[2]
    g_mat = grad_out.reshape(-1, c_out)
    w_mat = weight.transpose(2, 0, 1, 3).reshape(c_in * 9, c_out)
    grad_w = (cols.T @ g_mat).reshape(c_in, 3, 3, c_out).transpose(1, 2, 0, 3)
    grad_win = (g_mat @ w_mat.T).reshape(n, out_h, out_w, c_in, 3, 3)
    (pt, pb), (pl, pr) = same_pad_3x3(h, w, stride)
    grad_pad = np.zeros((n, h + pt + pb, w + pl + pr, c_in))
    for di in range(3):
        for dj in range(3):
            grad_pad[:, di:di + stride * out_h:stride,
                     dj:dj + stride * out_w:stride, :] += grad_win[:, :, :, :, di, dj]
    return grad_pad[:, pt:pt + h, pl:pl + w, :], grad_w, g_mat.sum(axis=0)


def pool2x2_blocks(x: np.ndarray) -> np.ndarray:
    """Unroll non-overlapping 2x2 windows: (n,h,w,k) -> (n,h/2,w/2,4,k).

    Window entries appear in row-major scan order, which fixes the
    tie-breaking order used by the pooling backward pass.
    """
    n, h, w, k = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, k).transpose(0, 1, 3, 2, 4, 5)
    return blocks.reshape(n, h // 2, w // 2, 4, k)


# ---------------------------------------------------------------------------
# Public operations on Tensor / Matrix values.
# ---------------------------------------------------------------------------

def reshape(x: Tensor | Matrix, target) -> Tensor | Matrix:
    """Reinterpret the value sequence under new dims (no value changes).

    `target` is either a Shape4 (yielding a Tensor) or a (rows, cols) pair
    (yielding a Matrix).  Element counts must agree.
    """
    src = x.data
    if isinstance(target, Shape4):
        if src.size != target.count:
            raise ValueError(f"cannot reshape {src.size} elements into {target}")
        return Tensor(src.reshape(target.dims()))
    rows, cols = target
    if src.size != rows * cols:
        raise ValueError(f"cannot reshape {src.size} elements into {rows}x{cols}")
    return Matrix(src.reshape(rows, cols))


def transpose(m: Matrix) -> Matrix:
    return Matrix(m.data.T)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ValueError(f"matmul inner dims differ: {a.cols} vs {b.rows}")
    return Matrix(a.data @ b.data)


def softmax_rows(m: Matrix) -> Matrix:
    """Each row becomes a probability vector (sums to 1)."""
    return Matrix(softmax_lastaxis(m.data))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data * b.data)


def weighted_sum3(a: Tensor, b: Tensor, c: Tensor,
                  w1: float, w2: float, w3: float) -> Tensor:
    if not (a.data.shape == b.data.shape == c.data.shape):
        raise ValueError("weighted_sum3 requires identical shapes")
    return Tensor(w1 * a.data + w2 * b.data + w3 * c.data)


def global_max_pool(t: Tensor) -> Tensor:
    """Per (batch, channel) maximum over all spatial positions -> [n,1,1,k]."""
    return Tensor(t.data.max(axis=(1, 2), keepdims=True))


def global_avg_pool(t: Tensor) -> Tensor:
    """Per (batch, channel) mean over all spatial positions -> [n,1,1,k]."""
    return Tensor(t.data.mean(axis=(1, 2), keepdims=True))


def conv1x1(t: Tensor, weight: Matrix, bias: np.ndarray) -> Tensor:
    """Per-position channel mix: out vector = weight.T @ in vector + bias."""
    if t.data.shape[3] != weight.rows:
        raise ValueError(f"conv1x1 expects {weight.rows} input channels, got {t.data.shape[3]}")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (weight.cols,):
        raise ValueError(f"bias must have shape ({weight.cols},), got {bias.shape}")
    return Tensor(np.tensordot(t.data, weight.data, axes=([3], [0])) + bias)


def conv3x3(t: Tensor, weight: np.ndarray, bias: np.ndarray, stride: int = 1) -> Tensor:
    """3x3 SAME convolution; stride 1 preserves spatial dims, stride 2 halves
    them (ceil)."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[:2] != (3, 3):
        raise ValueError(f"weight must have shape (3,3,c_in,c_out), got {weight.shape}")
    if t.data.shape[3] != weight.shape[2]:
        raise ValueError(f"conv3x3 expects {weight.shape[2]} input channels, got {t.data.shape[3]}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    out, _ = conv3x3_raw(t.data, weight, bias, stride)
    return Tensor(out)


def maxpool2x2(t: Tensor) -> Tensor:
    n, h, w, k = t.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
    return Tensor(pool2x2_blocks(t.data).max(axis=3))


def layer_norm(t: Tensor, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Normalize each position's channel vector, then scale/shift by gamma/beta."""
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    k = t.data.shape[3]
    if gamma.shape != (k,) or beta.shape != (k,):
        raise ValueError(f"gamma/beta must have shape ({k},)")
    out, _, _ = layer_norm_raw(t.data, gamma, beta, eps)
    return Tensor(out)


def swish(t: Tensor) -> Tensor:
    """x * sigmoid(x), elementwise."""
    return Tensor(t.data * sigmoid(t.data))


# ---------------------------------------------------------------------------
# .t4b binary format: magic "T4B1", four little-endian u32 extents
# (n, h, w, k), then n*h*w*k little-endian float64 values, row-major.
# ---------------------------------------------------------------------------

T4B_MAGIC = b"T4B1"


def write_t4b(path, t: Tensor) -> None:
    dims = np.array(t.data.shape, dtype="<u4")
    payload = T4B_MAGIC + dims.tobytes() + t.data.astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def read_t4b(path) -> Tensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise T4BError(f"{path}: cannot read ({exc})") from exc
    if len(raw) < 20:
        raise T4BError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != T4B_MAGIC:
        raise T4BError(f"{path}: bad magic {raw[:4]!r}, expected {T4B_MAGIC!r}")
    dims = tuple(int(d) for d in np.frombuffer(raw[4:20], dtype="<u4"))
    count = dims[0] * dims[1] * dims[2] * dims[3]
    expected = 20 + 8 * count
    if len(raw) < expected:
        raise T4BError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise T4BError(f"{path}: {len(raw) - expected} trailing bytes")
    values = np.frombuffer(raw[20:], dtype="<f8").reshape(dims)
    try:
        return Tensor(values)
    except ValueError as exc:
        raise T4BError(f"{path}: {exc}") from exc
