"""Dense 2-D matrix primitives used by every other module.

Matrices are numpy float64 arrays in row-major order. Feature files on
disk hold float32; everything in memory is widened to 64-bit before any
arithmetic. All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

# Keep sigmoid outputs strictly inside (0, 1) so downstream logs stay finite.
SIGMOID_MARGIN = 1e-15

Matrix = np.ndarray


def as_matrix(data) -> Matrix:
    """Coerce array-like input to a 2-D float64 matrix."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b with explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    return a @ b


def softmax_vector(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector (max subtraction)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"softmax_vector needs a 1-D vector, got ndim={v.ndim}")
    if v.size == 0:
        raise ShapeError("softmax_vector of an empty vector")
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def scaled_softmax_vector(v: np.ndarray, scale: float) -> np.ndarray:
    """scale * softmax(v), computed as (scale * exp) / sum(exp).

    Multiplying before the division keeps the uniform-input case exact:
    identical entries yield exactly scale / len(v) * len(v) ... = x / x = 1
    per entry when scale == len(v).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"scaled_softmax_vector needs a 1-D vector, got ndim={v.ndim}")
    if v.size == 0:
        raise ShapeError("scaled_softmax_vector of an empty vector")
    e = np.exp(v - np.max(v))
    return (scale * e) / np.sum(e)


def sigmoid(x: float) -> float:
    """Logistic function clamped to [1e-15, 1 - 1e-15].

    The clamp keeps saturated outputs strictly away from 0 and 1 so that
    log(d) and log(1 - d) stay finite for any finite input.
    """
    x = float(x)
    if x >= 0.0:
        s = 1.0 / (1.0 + np.exp(-x))
    else:
        e = np.exp(x)
        s = e / (1.0 + e)
    return float(min(max(s, SIGMOID_MARGIN), 1.0 - SIGMOID_MARGIN))


def column_sum(m: Matrix) -> np.ndarray:
    """Sum over rows; entry j is the sum of column j."""
    if m.ndim != 2:
        raise ShapeError(f"column_sum needs a 2-D matrix, got ndim={m.ndim}")
    if m.size == 0:
        raise ShapeError("column_sum of an empty matrix")
    return np.sum(m, axis=0)


def row_scale(m: Matrix, weights: np.ndarray) -> Matrix:
    """Multiply row t of m by weights[t]."""
    weights = np.asarray(weights, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"row_scale needs a 2-D matrix, got ndim={m.ndim}")
    if weights.ndim != 1 or weights.shape[0] != m.shape[0]:
        raise ShapeError(
            f"row_scale weight length {weights.shape} does not match rows {m.shape[0]}"
        )
    return m * weights[:, None]
