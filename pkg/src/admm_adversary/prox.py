"""Norm-specific solvers for the first ADMM block.

Each solver minimizes  D(x - x0) + (rho/2) * ||x - v||^2  over x, where v is
the consensus point shifted by the scaled dual (v = z - s). L0, L1 and L2
have exact closed forms; Linf is solved iteratively with Adam. Outputs are
not box-clipped here; box feasibility belongs to the second block.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .numerics import AdamState, adam_step


class OracleBudgetError(RuntimeError):
    """Raised when a brute-force oracle would exceed its enumeration budget."""


class ProxSolverError(RuntimeError):
    """Raised when the iterative Linf solver hits a non-finite objective."""


@dataclass(frozen=True)
class ProxInput:
    x0: np.ndarray
    v: np.ndarray
    rho: float

    def __post_init__(self):
        if self.x0.shape != self.v.shape:
            raise ValueError(f"length mismatch: x0 {self.x0.shape} vs v {self.v.shape}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def prox_l2(p: ProxInput) -> np.ndarray:
    """Exact minimizer of ||x-x0||^2 + (rho/2)||x-v||^2 (affine shrinkage)."""
    r = p.rho
    return (r / (2.0 + r)) * p.v + (2.0 / (2.0 + r)) * p.x0


def prox_l0(p: ProxInput) -> np.ndarray:
    """Hard thresholding: zero every delta whose square is below 2/rho.

    Elements exactly at the 2/rho boundary are kept; both choices tie in
    objective value there.
    """
    delta = p.v - p.x0
    delta = np.where(delta * delta < 2.0 / p.rho, 0.0, delta)
    return p.x0 + delta


def prox_l1(p: ProxInput) -> np.ndarray:
    """Soft thresholding of v - x0 at 1/rho."""
    u = p.v - p.x0
    thresh = 1.0 / p.rho
    delta = np.maximum(u - thresh, 0.0) - np.maximum(-u - thresh, 0.0)
    return p.x0 + delta


def linf_objective(x: np.ndarray, p: ProxInput) -> float:
    d = x - p.v
    return float(np.max(np.abs(x - p.x0)) + 0.5 * p.rho * np.dot(d, d))


def prox_linf(p: ProxInput, iterations: int, learning_rate: float,
              seed: int = 0) -> np.ndarray:
    """Adam descent on ||x-x0||_inf + (rho/2)||x-v||^2, started at x = v.

    The max-norm subgradient puts equal mass, with the proper sign, on every
    coordinate within 1e-9 of the maximal |x_i - x0_i|. The method itself is
    deterministic; seed is accepted for interface uniformity. Returns the
    best-objective iterate seen.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    del seed
    x = p.v.copy()
    state = AdamState.fresh(x.size, learning_rate=learning_rate)
    best_x = x.copy()
    best_obj = linf_objective(x, p)
    for _ in range(iterations):
        d = x - p.x0
        a = np.max(np.abs(d))
        grad = p.rho * (x - p.v)
        if a > 0.0:
            ties = np.abs(d) >= a - 1e-9
            grad = grad + np.sign(d) * (ties / np.count_nonzero(ties))
        x, state = adam_step(state, x, grad)
        obj = linf_objective(x, p)
        if not np.isfinite(obj):
            raise ProxSolverError("non-finite objective during Linf descent")
        if obj < best_obj:
            best_obj = obj
            best_x = x.copy()
    return best_x


# -- brute-force oracles, used only by tests ---------------------------------


def brute_force_prox_oracle(objective, n: int, bounds: tuple[float, float],
                            grid_step: float) -> tuple[np.ndarray, float]:
    """Dense grid minimization of an n-dim objective; refuses n > 2."""
    if n > 2:
        raise OracleBudgetError(f"dense grid oracle limited to n <= 2, got {n}")
    lo, hi = bounds
    axis = np.arange(lo, hi + grid_step / 2, grid_step)
    best_x, best_val = None, np.inf
    if n == 1:
        for t in axis:
            val = objective(np.array([t]))
            if val < best_val:
                best_x, best_val = np.array([t]), val
    else:
        for t0 in axis:
            for t1 in axis:
                cand = np.array([t0, t1])
                val = objective(cand)
                if val < best_val:
                    best_x, best_val = cand, val
    return best_x, float(best_val)


def l0_support_oracle(p: ProxInput) -> tuple[np.ndarray, float]:
    """Exhaustive search over all 2^n support patterns for the L0 block.

    For a fixed support the quadratic is separable, so the best delta equals
    v - x0 on the support and zero elsewhere; the search over supports itself
    is exhaustive. Refuses n > 12.
    """
    n = p.x0.size
    if n > 12:
        raise OracleBudgetError(f"support enumeration limited to n <= 12, got {n}")
    u = p.v - p.x0
    best_delta, best_val = None, np.inf
    for pattern in product((False, True), repeat=n):
        keep = np.array(pattern)
        delta = np.where(keep, u, 0.0)
        resid = delta - u
        val = float(np.count_nonzero(delta != 0.0) + 0.5 * p.rho * np.dot(resid, resid))
        if val < best_val:
            best_delta, best_val = delta, val
    return p.x0 + best_delta, best_val
