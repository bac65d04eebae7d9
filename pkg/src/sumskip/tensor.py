"""Dense numeric kernels over a shape-checked tensor type.

All summations that feed comparisons elsewhere in the package accumulate in a
fixed ascending-index order (via sequential ``cumsum`` or explicit loops), so
that a partially evaluated sum is bit-exactly a prefix of the full sum.  No
BLAS-backed reductions are used on these paths.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Immutable dense array: positive extents, row-major float32/float64 data."""

    __slots__ = ("_a",)

    def __init__(self, values, dtype=None):
        a = np.array(values, dtype=dtype, order="C")
        if a.dtype not in _ALLOWED_DTYPES:
            a = a.astype(np.float64)
        if a.ndim == 0:
            a = a.reshape(1)
        if any(e < 1 for e in a.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {a.shape}")
        a.flags.writeable = False
        self._a = a

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def dtype(self) -> np.dtype:
        return self._a.dtype

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the underlying buffer."""
        return self._a

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the buffer."""
        return self._a.reshape(-1)

    @property
    def size(self) -> int:
        return self._a.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self._a, dtype=dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and np.array_equal(self._a, other._a)
        )

    def __hash__(self):
        return hash((self.shape, self.dtype.str, self._a.tobytes()))


def _as_array(t) -> np.ndarray:
    return t.array if isinstance(t, Tensor) else np.asarray(t)


def sequential_sum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum along ``axis`` in strictly ascending index order.

    ``np.cumsum`` materializes every prefix, which forces the sequential
    left-to-right accumulation this package's bit-exactness contracts need
    (plain ``np.sum`` may use pairwise blocking).
    """
    return np.cumsum(a, axis=axis).take(-1, axis=axis)


def matmul(w, x) -> Tensor:
    """Matrix-vector product out[i] = sum_j W[i,j]*x[j], ascending-j accumulation."""
    W, v = _as_array(w), _as_array(x)
    if W.ndim != 2 or v.ndim != 1:
        raise ShapeError(f"matmul expects a matrix and a vector, got {W.shape} and {v.shape}")
    if W.shape[1] != v.shape[0]:
        raise ShapeError(f"inner extents disagree: {W.shape} vs {v.shape}")
    return Tensor(sequential_sum(W * v[None, :], axis=1))


def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"convolution geometry yields empty output "
            f"(extent={extent}, kernel={kernel}, stride={stride}, padding={padding})"
        )
    return out


def _validate_conv(A: np.ndarray, K: np.ndarray, stride: int, padding: int):
    if A.ndim != 3 or K.ndim != 4:
        raise ShapeError(f"conv2d expects input [C,H,W] and kernel [O,C,kh,kw], got {A.shape}, {K.shape}")
    if A.shape[0] != K.shape[1]:
        raise ShapeError(f"input channels {A.shape[0]} != kernel input channels {K.shape[1]}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride/padding ({stride}, {padding})")
    ho = conv_output_extent(A.shape[1], K.shape[2], stride, padding)
    wo = conv_output_extent(A.shape[2], K.shape[3], stride, padding)
    return ho, wo


def channel_contribution(
    padded_channel: np.ndarray, kernels: np.ndarray, stride: int, out_hw: tuple[int, int]
) -> np.ndarray:
    """Contribution of one input channel to every output channel and location.

    ``padded_channel`` is the already-padded [Hp, Wp] plane (leading batch axes
    allowed); ``kernels`` is [O, kh, kw].  Accumulates kernel taps in ascending
    (kh, kw) order so callers can rely on bit-exact agreement with scalar loops.
    """
    kh, kw = kernels.shape[-2], kernels.shape[-1]
    ho, wo = out_hw
    lead = padded_channel.shape[:-2]
    out = np.zeros(lead + (kernels.shape[0], ho, wo), dtype=padded_channel.dtype)
    for i in range(kh):
        for j in range(kw):
            win = padded_channel[..., i : i + (ho - 1) * stride + 1 : stride,
                                 j : j + (wo - 1) * stride + 1 : stride]
            out += kernels[:, i, j].reshape((1,) * len(lead) + (-1, 1, 1)) * win[..., None, :, :]
    return out


def conv2d_channel(a, k, channel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Channel ``channel``'s contribution to conv2d(a, k) (cross-correlation)."""
    A, K = _as_array(a), _as_array(k)
    ho, wo = _validate_conv(A, K, stride, padding)
    if not 0 <= channel < A.shape[0]:
        raise ShapeError(f"channel {channel} out of range for {A.shape[0]} input channels")
    plane = np.pad(A[channel], padding) if padding else A[channel]
    return Tensor(channel_contribution(plane, K[:, channel], stride, (ho, wo)))


def conv2d(a, k, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation, input channels accumulated in ascending order.

    Defined as the sequential sum of ``conv2d_channel`` contributions, which
    makes ``conv2d(A, K) == sum_i conv2d_channel(A, K, i)`` bit-exact.
    """
    A, K = _as_array(a), _as_array(k)
    ho, wo = _validate_conv(A, K, stride, padding)
    Ap = np.pad(A, ((0, 0), (padding, padding), (padding, padding))) if padding else A
    out = np.zeros((K.shape[0], ho, wo), dtype=A.dtype)
    for c in range(A.shape[0]):
        out += channel_contribution(Ap[c], K[:, c], stride, (ho, wo))
    return Tensor(out)


def avg_pool_global(b) -> Tensor:
    """Channel-wise global average pooling: [C,H,W] -> [C]."""
    B = _as_array(b)
    if B.ndim != 3:
        raise ShapeError(f"avg_pool_global expects [C,H,W], got {B.shape}")
    flat = B.reshape(B.shape[0], -1)
    return Tensor(sequential_sum(flat, axis=1) / flat.shape[1])


def pooled_batch(x: np.ndarray) -> np.ndarray:
    """Batched global average pooling [..., C, H, W] -> [..., C], same op order."""
    flat = x.reshape(x.shape[:-2] + (-1,))
    return sequential_sum(flat, axis=-1) / flat.shape[-1]


def relu(x: float, w: float = 1.0, b: float = 0.0) -> float:
    """max(0, w*x + b)."""
    return max(0.0, w * x + b)


def softmax_columns(m: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max-shift stabilization."""
    shifted = m - m.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def attention_forward(x, k, q, v, w) -> Tensor:
    """Single-head attention followed by a projection.

    Computes W @ V @ X @ softmax_cols((QX)^T (KX)) for X [d1,L], K/Q/V [d2,d1],
    W [d3,d2].  Used by the parameter-symmetry checks, not the pruning engine.
    """
    X, K, Q, V, W = (_as_array(t) for t in (x, k, q, v, w))
    if X.ndim != 2 or K.ndim != 2 or Q.ndim != 2 or V.ndim != 2 or W.ndim != 2:
        raise ShapeError("attention_forward expects five matrices")
    d1, _L = X.shape
    if K.shape != Q.shape or K.shape != V.shape or K.shape[1] != d1:
        raise ShapeError(f"K/Q/V must be [d2,{d1}] alike, got {K.shape}, {Q.shape}, {V.shape}")
    if W.shape[1] != V.shape[0]:
        raise ShapeError(f"projection expects d2={V.shape[0]} columns, got {W.shape}")
    scores = (Q @ X).T @ (K @ X)
    att = softmax_columns(scores)
    return Tensor(W @ (V @ (X @ att)))
