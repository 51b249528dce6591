"""Dense float64 arrays with exact-shape arithmetic.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank 1-4,
laid out row-major with rank-4 data ordered (batch, channel, height, width).
The helpers below refuse broadcasting so that shape bugs surface early.
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when tensor shapes do not line up."""


def new_tensor(shape, fill=0.0):
    """Build a tensor of ``shape`` from a scalar fill or a flat value list."""
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= 4 or any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}")
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=DTYPE)
    values = np.asarray(fill, dtype=DTYPE).ravel()
    if values.size != int(np.prod(shape)):
        raise ShapeError(f"{values.size} values given for shape {shape}")
    return values.reshape(shape).copy()


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _check_same(a, b)
    return a + b


def sub(a, b):
    _check_same(a, b)
    return a - b


def scale(a, c):
    return a * float(c)


def max_abs_diff(a, b):
    _check_same(a, b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))
