"""FGM and IFGM targeted baselines with per-image epsilon grid search."""

import logging
from dataclasses import dataclass

import numpy as np

from . import classifier
from .classifier import MlpModel
from .engine import AttackResult, distortion_profile, target_margin
from .numerics import Norm, as_vector

log = logging.getLogger(__name__)

BASELINE_NORMS = (Norm.L1, Norm.L2, Norm.LINF)


@dataclass(frozen=True)
class EpsilonGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("empty epsilon grid")
        if any(v <= 0 for v in self.values):
            raise ValueError("epsilon values must be positive")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("epsilon values must be strictly increasing")


def default_grid(p: Norm) -> EpsilonGrid:
    if p is Norm.LINF:
        values = np.linspace(0.01, 1.0, 100)
    elif p is Norm.L2:
        values = np.linspace(0.1, 10.0, 100)
    elif p is Norm.L1:
        values = np.linspace(1.0, 100.0, 100)
    else:
        raise ValueError(f"no baseline grid for norm {p!r}")
    return EpsilonGrid(tuple(float(v) for v in values))


def _target_ce_gradient(model: MlpModel, x: np.ndarray, target: int) -> np.ndarray:
    """Input gradient of the cross entropy toward the target label."""
    def loss_grad(z):
        t = z / model.temperature
        t = t - np.max(t)
        p = np.exp(t)
        p /= p.sum()
        p[target] -= 1.0
        return p / model.temperature
    return classifier.input_gradient(model, x, loss_grad)


def _gradient_step(model: MlpModel, x: np.ndarray, target: int,
                   epsilon: float, p: Norm) -> np.ndarray:
    g = _target_ce_gradient(model, x, target)
    if p is Norm.LINF:
        d = np.sign(g)
    else:
        scale = np.sum(np.abs(g)) if p is Norm.L1 else np.sqrt(np.sum(g * g))
        if scale == 0.0:
            log.debug("zero gradient at a baseline step; leaving input unchanged")
            return x
        d = g / scale
    return np.clip(x - epsilon * d, 0.0, 1.0)


def fgm(model: MlpModel, x0, target: int, epsilon: float, p: Norm) -> np.ndarray:
    """Single normalized gradient step toward the target, clipped to the box."""
    if p not in BASELINE_NORMS:
        raise ValueError(f"fgm supports {BASELINE_NORMS}, got {p!r}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    x0 = as_vector(x0)
    if epsilon == 0.0:
        return x0.copy()
    return _gradient_step(model, x0, target, epsilon, p)


def ifgm(model: MlpModel, x0, target: int, epsilon: float, steps: int,
         p: Norm) -> np.ndarray:
    """Iterated FGM with per-step budget epsilon/steps, re-linearized each step.

    The max-norm variant additionally projects back onto the epsilon ball
    around the original input after every step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x0 = as_vector(x0)
    step_eps = epsilon / steps
    x = x0.copy()
    for _ in range(steps):
        x = _gradient_step(model, x, target, step_eps, p)
        if p is Norm.LINF:
            x = np.clip(x0 + np.clip(x - x0, -epsilon, epsilon), 0.0, 1.0)
    return x


def grid_search_attack(model: MlpModel, x0, target: int, grid: EpsilonGrid,
                       steps: int, p: Norm) -> AttackResult:
    """Ascend the grid and report the first (smallest-epsilon) success."""
    x0 = as_vector(x0)
    x = x0.copy()
    for tried, eps in enumerate(grid.values, start=1):
        x = ifgm(model, x0, target, eps, steps, p)
        if classifier.predict(model, x) == target:
            return AttackResult(
                adversarial=x,
                success=True,
                distortions=distortion_profile(x - x0),
                target=target,
                constants_used={"epsilon": eps},
                iterations_run=tried,
                converged=False,
                norm=p,
                margin=target_margin(model, x, target),
            )
    return AttackResult(
        adversarial=x,
        success=False,
        distortions=distortion_profile(x - x0),
        target=target,
        constants_used={"epsilon": grid.values[-1]},
        iterations_run=len(grid.values),
        converged=False,
        norm=p,
        margin=target_margin(model, x, target),
    )
