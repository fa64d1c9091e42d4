"""Per-norm attack orchestration: constant searches, target plans, reduction.

The search drivers keep a feasible/infeasible bracket around the constant
being tuned, growing it tenfold until the first success and bisecting
afterwards, and always return the successful run with the smallest
distortion in the attack's own norm.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .classifier import LabeledDataset, MlpModel, predict
from .engine import (AdaptiveRho, AttackConfig, AttackResult, BinarySearchC,
                     FixedConstants, run_admm_with_state)
from .numerics import Norm


class TargetMode(str, Enum):
    AVERAGE = "average"
    BEST = "best"
    WORST = "worst"


@dataclass(frozen=True)
class TargetPlan:
    mode: TargetMode
    targets: tuple[tuple[int, ...], ...]   # per image
    rng_seed: int


def select_targets(dataset: LabeledDataset, model: MlpModel, mode: TargetMode,
                   seed: int) -> TargetPlan:
    """Build the per-image target lists for one evaluation case.

    Average case draws one label uniformly from the incorrect ones; best and
    worst cases enumerate all of them. Images must already be filtered to
    those the model classifies correctly.
    """
    m = model.num_classes
    if m < 2:
        raise ValueError("target selection needs at least two classes")
    rng = np.random.default_rng(seed)
    per_image = []
    for x, label in zip(dataset.inputs, dataset.labels):
        if predict(model, x) != label:
            raise ValueError("dataset contains a misclassified image; filter upstream")
        if mode is TargetMode.AVERAGE:
            k = int(rng.integers(m - 1))
            per_image.append((k if k < label else k + 1,))
        else:
            per_image.append(tuple(t for t in range(m) if t != label))
    return TargetPlan(mode, tuple(per_image), seed)


def reduce_case(results: list[AttackResult], mode: TargetMode) -> AttackResult:
    """Collapse the per-target results of one image into its case result."""
    if not results:
        raise ValueError("no results to reduce")
    if mode is TargetMode.AVERAGE:
        return results[0]
    norm = results[0].norm
    successes = [r for r in results if r.success]
    if mode is TargetMode.BEST:
        if not successes:
            return results[0]
        return min(successes, key=lambda r: r.distortions[norm.value])
    # worst case: a single failed target makes the image a failure
    if len(successes) < len(results):
        return next(r for r in results if not r.success)
    return max(successes, key=lambda r: r.distortions[norm.value])


def _bracketed_search(model, x0, target, base: AttackConfig, steps: int,
                      init: float, set_constant) -> AttackResult:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    lo, hi = 0.0, None
    value = init
    best = None
    last = None
    w = None
    norm_key = base.norm.value
    for _ in range(steps):
        config = replace(set_constant(base, value), search=FixedConstants())
        last, w = run_admm_with_state(model, x0, target, config, w_init=w)
        if last.success:
            hi = value
            if best is None or last.distortions[norm_key] < best.distortions[norm_key]:
                best = last
        else:
            lo = value
        value = value * 10.0 if hi is None else 0.5 * (lo + hi)
    return best if best is not None else last


def attack_with_binary_search_c(model: MlpModel, x0, target: int,
                                base: AttackConfig, steps: int,
                                c_init: float) -> AttackResult:
    """Search the margin weight: failures raise it, successes shrink it."""
    return _bracketed_search(model, x0, target, base, steps, c_init,
                             lambda cfg, c: replace(cfg, const=c))


def attack_with_adaptive_rho(model: MlpModel, x0, target: int,
                             base: AttackConfig, steps: int,
                             rho_init: float) -> AttackResult:
    """Search the penalty: a smaller rho prunes more pixels but fails more."""
    return _bracketed_search(model, x0, target, base, steps, rho_init,
                             lambda cfg, r: replace(cfg, rho=r))


def default_config(norm: Norm) -> AttackConfig:
    """Per-norm constants sized for the built-in desk-scale classifier."""
    if norm is Norm.L2:
        return AttackConfig(
            norm=norm, rho=20.0, const=0.001, admm_iterations=10,
            inner_iterations=1000, learning_rate=0.02,
            search=BinarySearchC(steps=9, c_init=0.001),
        )
    if norm is Norm.L0:
        return AttackConfig(
            norm=norm, rho=3.0, const=20.0, admm_iterations=10,
            inner_iterations=1000, learning_rate=0.01,
            search=AdaptiveRho(steps=9, rho_init=3.0),
        )
    if norm is Norm.L1:
        return AttackConfig(
            norm=norm, rho=10.0, const=2.0, admm_iterations=80,
            inner_iterations=200, learning_rate=0.1,
            search=FixedConstants(),
        )
    if norm is Norm.LINF:
        return AttackConfig(
            norm=norm, rho=0.1, const=0.1, admm_iterations=100,
            inner_iterations=500, inner_iterations_prox=300, learning_rate=0.005,
            search=FixedConstants(),
        )
    raise ValueError(f"unknown norm {norm!r}")


def attack(model: MlpModel, x0, target: int, norm: Norm,
           **overrides) -> AttackResult:
    """One (image, target) attack under the norm's default search policy."""
    config = replace(default_config(norm), **overrides)
    if isinstance(config.search, BinarySearchC):
        return attack_with_binary_search_c(
            model, x0, target, config, config.search.steps, config.search.c_init
        )
    if isinstance(config.search, AdaptiveRho):
        return attack_with_adaptive_rho(
            model, x0, target, config, config.search.steps, config.search.rho_init
        )
    result, _ = run_admm_with_state(model, x0, target, config)
    return result
