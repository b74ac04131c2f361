"""Dense linear algebra primitives and a self-contained Adam optimizer.

Everything here operates on plain ``numpy`` arrays in float64; tensors only
drop to float32 at the serialization boundary.  All functions are pure, and
any randomness must come from an explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError

Matrix = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Single source of randomness: one seeded generator per run."""
    return np.random.default_rng(seed)


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce to a 2-D float64 array, checking shape and finiteness."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax(v: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax (max-subtraction) over a 1-D vector."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("softmax input contains non-finite entries")
    z = (v - v.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clipped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def unit_rows(m: Matrix) -> Matrix:
    """Normalize each row to unit length; zero-norm rows are an error."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.argmin(norms))
        raise ValueError(f"row {bad} has zero norm")
    return m / norms


@dataclass(frozen=True)
class AdamState:
    """Optimizer state for one parameter tensor (consumed and returned)."""

    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, param: np.ndarray, lr: float = 0.01, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(step=0, m=np.zeros_like(param, dtype=np.float64),
                   v=np.zeros_like(param, dtype=np.float64),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param: np.ndarray, grad: np.ndarray,
              state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One Adam update with bias correction.

    Returns the updated parameter and a fresh state; the inputs are not
    mutated.  A zero gradient leaves the parameter bit-identical.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}")
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient passed to adam_step")

    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param - update, replace(state, step=t, m=m, v=v)
