"""Dense float64 tensor kernels with a reproducible accumulation order.

A tensor here is a C-contiguous float64 numpy array: ``.shape`` plus the
row-major flat buffer. The public kernels in this module accumulate in a
fixed left-to-right order, so their results are bit-identical to a naive
scalar loop and bit-identical across runs. BLAS is deliberately avoided:
its reductions reassociate and are not reproducible against an
independent oracle.

``contract``/``contract_tn`` are the fast paths used inside network
layers. They run through einsum (single-threaded, fixed iteration
order), which is deterministic run-to-run but may differ from the
naive loop in final ulps; layer gradients are verified against finite
differences instead.
"""

import numpy as np

__all__ = [
    "ShapeError",
    "tensor",
    "assert_finite",
    "matmul",
    "conv2d",
    "conv2d_output_size",
    "elementwise",
    "reduce",
    "contract",
    "contract_tn",
    "im2col",
    "col2im",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not compose."""


def tensor(data, shape=None):
    """Coerce ``data`` to a C-contiguous float64 array, reshaping if asked."""
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return np.ascontiguousarray(arr)


def assert_finite(a, context=""):
    """Raise if ``a`` contains NaN or Inf; returns ``a`` unchanged."""
    if not np.all(np.isfinite(a)):
        where = f" in {context}" if context else ""
        raise FloatingPointError(f"non-finite values{where}")
    return a


def matmul(a, b):
    """Matrix product with fixed, left-to-right accumulation over k.

    Bit-identical to the naive triple loop with the inner dimension
    innermost, at any size. The python-level loop runs over k only, so
    this is fast when the inner dimension is feature-sized.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def contract(a, b):
    """``a @ b`` through einsum: deterministic, no BLAS, ulp-level reassociation allowed."""
    return np.einsum("ik,kj->ij", a, b)


def contract_tn(a, b):
    """``a.T @ b`` through einsum; the contracted axis may be batch-sized."""
    return np.einsum("ki,kj->ij", a, b)


def conv2d_output_size(h, w, kh, kw, stride, padding):
    """Output (h', w') of a stride/padding convolution; raises if non-integral."""
    for name, size, k in (("height", h, kh), ("width", w, kw)):
        span = size + 2 * padding - k
        if span < 0 or span % stride != 0:
            raise ShapeError(
                f"conv2d: {name} {size} with kernel {k}, stride {stride}, "
                f"padding {padding} gives a non-integral output size"
            )
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def im2col(x, kh, kw, stride, padding):
    """Extract convolution patches from a batch of images.

    ``x`` is (batch, c, h, w); returns (patches, oh, ow) where patches is
    (batch*oh*ow, c*kh*kw) with patch entries in row-major (c, kh, kw)
    order, matching the accumulation order of a naive convolution loop.
    """
    b, c, h, w = x.shape
    oh, ow = conv2d_output_size(h, w, kh, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, oh, ow, c, kh, kw))
    for i in range(kh):
        for j in range(kw):
            window = x[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride]
            cols[:, :, :, :, i, j] = window.transpose(0, 2, 3, 1)
    return cols.reshape(b * oh * ow, c * kh * kw), oh, ow


def col2im(cols, x_shape, kh, kw, stride, padding):
    """Scatter-add patch gradients back to image shape; inverse layout of im2col."""
    b, c, h, w = x_shape
    oh, ow = conv2d_output_size(h, w, kh, kw, stride, padding)
    cols = cols.reshape(b, oh, ow, c, kh, kw)
    padded = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        padded = padded[:, :, padding:-padding, padding:-padding]
    return padded


def conv2d(x, kernels, stride=1, padding=0):
    """Cross-correlate one image (c_in, h, w) with kernels (c_out, c_in, kh, kw).

    Zero padding, no kernel flip. Accumulates over (c_in, kh, kw) in
    row-major order, bit-identical to the naive six-loop implementation.
    """
    x = tensor(x)
    kernels = tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(
            f"conv2d expects (c,h,w) input and (co,ci,kh,kw) kernels, "
            f"got {x.shape} and {kernels.shape}"
        )
    if kernels.shape[1] != x.shape[0]:
        raise ShapeError(
            f"conv2d: input channels {x.shape[0]} do not match kernel channels "
            f"{kernels.shape[1]}"
        )
    co, _, kh, kw = kernels.shape
    cols, oh, ow = im2col(x[None], kh, kw, stride, padding)
    out = matmul(cols, kernels.reshape(co, -1).T)
    return np.ascontiguousarray(out.reshape(oh, ow, co).transpose(2, 0, 1))


_BINARY_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}
_UNARY_OPS = {"exp": np.exp, "neg": np.negative}


def elementwise(op, a, b=None):
    """Apply a named op entrywise. Binary ops require equal shapes; ``scale`` takes a scalar."""
    a = np.asarray(a, dtype=np.float64)
    if op in _UNARY_OPS:
        if b is not None:
            raise ShapeError(f"elementwise {op} takes no second operand")
        return _UNARY_OPS[op](a)
    if op == "scale":
        if b is None or np.ndim(b) != 0:
            raise ShapeError("elementwise scale needs a scalar second operand")
        return a * float(b)
    if op in _BINARY_OPS:
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"elementwise {op}: shapes {a.shape} and {b.shape} differ")
        return _BINARY_OPS[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def reduce(op, a, axis=None):
    """Reduce with sum/max/mean/argmax; argmax breaks ties at the lowest index."""
    a = np.asarray(a, dtype=np.float64)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"reduce: axis {axis} invalid for shape {a.shape}")
    if a.size == 0 or (axis is not None and a.shape[axis] == 0):
        raise ShapeError("reduce over an empty axis")
    if op == "sum":
        return np.sum(a, axis=axis)
    if op == "max":
        return np.max(a, axis=axis)
    if op == "mean":
        return np.mean(a, axis=axis)
    if op == "argmax":
        # np.argmax returns the first occurrence, i.e. the lowest index on ties
        return np.argmax(a, axis=axis)
    raise ValueError(f"unknown reduce op {op!r}")
