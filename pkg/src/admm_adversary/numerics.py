"""Dense vector arithmetic: Lp norms, the Adam update rule, finite differences.

Everything runs in float64. Vectors are plain 1-D numpy arrays; functions are
pure and never mutate their arguments, so concurrent attack workers can share
them freely.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

# Entries with magnitude at or below this count as zero for L0 reporting.
# Exact proximal outputs write literal zeros, so this only guards arithmetic
# residue accumulated by iterative methods.
ZERO_TOL = 1e-12


class Norm(str, Enum):
    L0 = "l0"
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


def as_vector(v) -> np.ndarray:
    """Coerce to a 1-D float64 array without copying when already one."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {a.shape}")
    return a


def lp_norm(v, p: Norm) -> float:
    """Lp norm of a finite vector; L0 counts entries above ZERO_TOL."""
    v = as_vector(v)
    if p is Norm.L0:
        return float(np.count_nonzero(np.abs(v) > ZERO_TOL))
    if p is Norm.L1:
        return float(np.sum(np.abs(v)))
    if p is Norm.L2:
        return float(np.sqrt(np.sum(v * v)))
    if p is Norm.LINF:
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ValueError(f"unknown norm {p!r}")


@dataclass(frozen=True)
class AdamState:
    """Immutable Adam optimizer state; adam_step consumes and returns it."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    learning_rate: float = 0.01

    @classmethod
    def fresh(cls, n: int, learning_rate: float = 0.01, beta1: float = 0.9,
              beta2: float = 0.999, epsilon_hat: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=np.zeros(n),
            second_moment=np.zeros(n),
            step_count=0,
            beta1=beta1,
            beta2=beta2,
            epsilon_hat=epsilon_hat,
            learning_rate=learning_rate,
        )


def adam_step(state: AdamState, variable: np.ndarray,
              gradient: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns the moved variable and the advanced state.

    Deterministic: identical (state, variable, gradient) always produce
    identical outputs.
    """
    if variable.shape != gradient.shape or variable.shape != state.first_moment.shape:
        raise ValueError(
            f"length mismatch: variable {variable.shape}, gradient "
            f"{gradient.shape}, state {state.first_moment.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient * gradient
    # bias-corrected estimates
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    moved = variable - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_hat)
    return moved, replace(state, first_moment=m, second_moment=v, step_count=t)


def finite_diff_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, used as a test oracle."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = as_vector(x)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ArithmeticError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
