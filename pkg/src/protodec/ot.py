"""Entropic optimal transport between prompt features and class prototypes.

The cost of moving mass from feature ``p`` to prototype ``q`` is one minus
their cosine similarity.  Marginals are uniform on both sides: every prompt
feature carries mass ``1/P`` and every prototype receives ``1/Q``.  Plans are
solved with alternating row/column scaling; the default path works in the log
domain because the production regularizer (0.1) pushes the kernel
``exp(-cost/reg)`` close to underflow territory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import NumericError
from .numerics import unit_rows

PlanKind = Literal["sinkhorn", "uniform", "cosine"]

# Converged plans must hit the marginal contract (1e-6 L1) with headroom, so
# the solver polishes past the scaling-change threshold down to this level.
_MARGINAL_TOL = 1e-7


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs: entropic regularizer, stopping rule, iteration cap."""

    reg: float = 0.1
    threshold: float = 0.01
    max_iters: int = 1000
    log_domain: bool = True

    def __post_init__(self):
        if self.reg <= 0:
            raise ValueError("reg must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class TransportPlan:
    """A nonnegative P*Q matching with fixed row/column mass targets."""

    matrix: np.ndarray
    row_target: np.ndarray
    col_target: np.ndarray
    converged: bool = True
    iterations: int = 0
    degenerate_fallback: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def marginal_errors(self) -> tuple[float, float]:
        """L1 distance of realized row/column sums from their targets."""
        row = float(np.abs(self.matrix.sum(axis=1) - self.row_target).sum())
        col = float(np.abs(self.matrix.sum(axis=0) - self.col_target).sum())
        return row, col


def cosine_matrix(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between feature rows and prototype rows."""
    f = unit_rows(features)
    g = unit_rows(prototypes)
    return np.clip(f @ g.T, -1.0, 1.0)


def cost_from_sim(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Transport cost matrix: one minus pairwise cosine similarity."""
    return 1.0 - cosine_matrix(features, prototypes)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _solve_log(cost: np.ndarray, cfg: SinkhornConfig):
    P, Q = cost.shape
    log_k = -cost / cfg.reg
    log_k_t = np.ascontiguousarray(log_k.T)
    log_u_tgt = -np.log(P)
    log_v_tgt = -np.log(Q)
    u_tgt = 1.0 / P
    log_u = np.zeros(P)
    log_v = np.zeros(Q)  # scaling vector v starts at all-ones
    v_prev = np.ones(Q)
    for t in range(1, cfg.max_iters + 1):
        log_u = log_u_tgt - _logsumexp_rows(log_k + log_v)
        log_v = log_v_tgt - _logsumexp_rows(log_k_t + log_u)
        with np.errstate(over="ignore"):
            v_now = np.exp(log_v)
        delta_v = float(np.abs(v_now - v_prev).mean())
        v_prev = v_now
        if delta_v < cfg.threshold:
            plan = np.exp(log_u[:, None] + log_k + log_v[None, :])
            # the scaling-change rule alone can stop with row sums off by
            # ~1e-2; keep sweeping until the marginal contract has headroom
            if np.abs(plan.sum(axis=1) - u_tgt).sum() <= _MARGINAL_TOL:
                return plan, t, True
    plan = np.exp(log_u[:, None] + log_k + log_v[None, :])
    return plan, cfg.max_iters, False


def _solve_kernel(cost: np.ndarray, cfg: SinkhornConfig):
    P, Q = cost.shape
    kernel = np.exp(-cost / cfg.reg)
    if np.any(kernel.sum(axis=1) == 0.0) or np.any(kernel.sum(axis=0) == 0.0):
        raise NumericError(
            "kernel exp(-cost/reg) underflowed to zero; the regularizer is "
            "too small for this cost scale (use the log-domain path)")
    kernel_t = np.ascontiguousarray(kernel.T)
    u_tgt = np.full(P, 1.0 / P)
    v_tgt = np.full(Q, 1.0 / Q)
    u = np.ones(P)
    v = np.ones(Q)
    v_prev = v.copy()
    for t in range(1, cfg.max_iters + 1):
        u = u_tgt / (kernel @ v)
        v = v_tgt / (kernel_t @ u)
        delta_v = float(np.abs(v - v_prev).mean())
        v_prev = v.copy()
        if delta_v < cfg.threshold:
            plan = u[:, None] * kernel * v[None, :]
            if np.abs(plan.sum(axis=1) - u_tgt[0]).sum() <= _MARGINAL_TOL:
                return plan, t, True
    plan = u[:, None] * kernel * v[None, :]
    return plan, cfg.max_iters, False


def sinkhorn(cost: np.ndarray, cfg: SinkhornConfig = SinkhornConfig()) -> TransportPlan:
    """Solve entropy-regularized transport with uniform marginals.

    Alternates row and column scaling until the mean absolute change of the
    column scaling vector drops below ``cfg.threshold`` and the realized
    marginals satisfy the plan contract, or ``cfg.max_iters`` is reached (in
    which case the plan is still returned, flagged as not converged).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a nonempty 2-D matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    P, Q = cost.shape
    solve = _solve_log if cfg.log_domain else _solve_kernel
    plan, iters, converged = solve(cost, cfg)
    return TransportPlan(
        matrix=plan,
        row_target=np.full(P, 1.0 / P),
        col_target=np.full(Q, 1.0 / Q),
        converged=converged,
        iterations=iters,
    )


def ot_score(plan: TransportPlan, sim: np.ndarray) -> float:
    """Plan-weighted total similarity: the transport score of one class."""
    sim = np.asarray(sim, dtype=np.float64)
    if plan.matrix.shape != sim.shape:
        raise ValueError(
            f"plan shape {plan.matrix.shape} != similarity shape {sim.shape}")
    return float((plan.matrix * sim).sum())


def plan_variant(kind: PlanKind, cost: np.ndarray, sim: np.ndarray,
                 cfg: SinkhornConfig = SinkhornConfig()) -> TransportPlan:
    """Build a transport plan by one of the supported strategies.

    ``sinkhorn`` solves the regularized problem; ``uniform`` spreads mass
    equally; ``cosine`` allocates mass proportionally to the nonnegative part
    of the similarity (falling back to uniform, flagged, when no entry is
    positive).
    """
    if kind == "sinkhorn":
        return sinkhorn(cost, cfg)
    sim = np.asarray(sim, dtype=np.float64)
    P, Q = sim.shape
    row_target = np.full(P, 1.0 / P)
    col_target = np.full(Q, 1.0 / Q)
    if kind == "uniform":
        return TransportPlan(np.full((P, Q), 1.0 / (P * Q)), row_target, col_target)
    if kind == "cosine":
        weights = np.clip(sim, 0.0, None)
        total = weights.sum()
        if total <= 0.0:
            return TransportPlan(np.full((P, Q), 1.0 / (P * Q)), row_target,
                                 col_target, degenerate_fallback=True)
        matrix = weights / total
        # this variant defines its own marginals; record the realized ones
        return TransportPlan(matrix, matrix.sum(axis=1), matrix.sum(axis=0))
    raise ValueError(f"unknown plan kind: {kind!r}")
