"""Norm-agnostic ADMM attack loop.

One attack run alternates a norm-specific proximal step on x, an Adam solve
of the margin-loss block on z (parametrized in tanh space so the box
constraint holds structurally), and the scaled dual update, until the
squared residuals drop below the convergence tolerance or the iteration
budget runs out.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import classifier
from .classifier import MlpModel
from .numerics import AdamState, Norm, adam_step, as_vector, lp_norm
from .prox import ProxInput, ProxSolverError, prox_l0, prox_l1, prox_l2, prox_linf

BOX_EPS = 1e-6    # clamp width for the inverse tanh map
SNAP_TOL = 1e-6   # reported pixels this close to a bound are rounded onto it


class SolverAbort(RuntimeError):
    """Inner solve hit a non-finite objective; the constant setting failed."""


@dataclass(frozen=True)
class FixedConstants:
    pass


@dataclass(frozen=True)
class BinarySearchC:
    steps: int = 9
    c_init: float = 0.001


@dataclass(frozen=True)
class AdaptiveRho:
    steps: int = 9
    rho_init: float = 3.0


SearchPolicy = Union[FixedConstants, BinarySearchC, AdaptiveRho]


@dataclass(frozen=True)
class AttackConfig:
    norm: Norm
    rho: float = 20.0
    const: float = 0.001
    kappa: float = 0.0
    admm_iterations: int = 10
    inner_iterations: int = 1000
    inner_iterations_prox: int = 100
    learning_rate: float = 0.02
    convergence_eps: float = 1e-6
    seed: int = 0
    search: SearchPolicy = field(default_factory=FixedConstants)
    # required success margin when reporting; stays 0 outside transferability runs
    kappa_report: float = 0.0


def validate_config(config: AttackConfig) -> None:
    if config.rho <= 0:
        raise ValueError("rho must be positive")
    if config.const <= 0:
        raise ValueError("const must be positive")
    if config.kappa < 0:
        raise ValueError("kappa must be non-negative")
    if config.convergence_eps <= 0:
        raise ValueError("convergence_eps must be positive")
    if config.admm_iterations < 0:
        raise ValueError("admm_iterations must be non-negative")
    if config.inner_iterations < 1 or config.inner_iterations_prox < 1:
        raise ValueError("inner iteration budgets must be >= 1")
    if config.learning_rate <= 0:
        raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray
    success: bool
    distortions: dict
    target: int
    constants_used: dict
    iterations_run: int
    converged: bool
    norm: Norm
    margin: float = float("-inf")


@dataclass
class TraceRecord:
    """One ADMM iteration snapshot, kept only when a trace list is supplied."""

    iteration: int
    rho: float
    const: float
    s_before: np.ndarray
    x: np.ndarray
    z: np.ndarray
    s_after: np.ndarray
    primal_sq: float
    dual_sq: float
    lagrangian_before_x: float
    lagrangian_after_x: float


def margin_loss(model: MlpModel, x, target: int, const: float, kappa: float) -> float:
    """const * max(max_{i != target} Z_i - Z_target, -kappa)."""
    z = classifier.logits(model, x)
    if not 0 <= target < z.size:
        raise ValueError(f"target {target} out of range for {z.size} classes")
    val, _ = _margin_terms(z, target, kappa)
    return const * val


def _margin_terms(logits: np.ndarray, target: int, kappa: float):
    """Clipped margin value and, when the hinge is active, the rival index."""
    rival = int(np.argmax(np.where(np.arange(logits.size) == target, -np.inf, logits)))
    expr = logits[rival] - logits[target]
    if np.isnan(expr):  # a NaN would otherwise hide in the floor branch
        return float("nan"), None
    if expr > -kappa:
        return float(expr), rival
    return float(-kappa), None


def target_margin(model: MlpModel, x, target: int) -> float:
    """Z_target - max_{i != target} Z_i; positive means classified as target."""
    z = classifier.logits(model, x)
    rival = int(np.argmax(np.where(np.arange(z.size) == target, -np.inf, z)))
    return float(z[target] - z[rival])


def box_forward(w: np.ndarray) -> np.ndarray:
    """Map unconstrained w onto the unit box, elementwise (tanh rescaling)."""
    return 0.5 * (np.tanh(w) + 1.0)


def box_inverse(z: np.ndarray) -> np.ndarray:
    """Inverse of box_forward, clamped so boundary values stay finite."""
    clipped = np.clip(z, BOX_EPS, 1.0 - BOX_EPS)
    return np.arctanh(2.0 * clipped - 1.0)


def snap_to_box(x: np.ndarray, tol: float = SNAP_TOL) -> np.ndarray:
    """Clip to [0,1] and round entries within tol of a bound onto the bound."""
    y = np.clip(x, 0.0, 1.0)
    y[y <= tol] = 0.0
    y[y >= 1.0 - tol] = 1.0
    return y


def dual_update(s: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Scaled dual ascent: s + (x - z), exact elementwise, no damping."""
    if not (s.shape == x.shape == z.shape):
        raise ValueError("length mismatch in dual update")
    return s + (x - z)


def residuals(x: np.ndarray, z: np.ndarray, z_prev: np.ndarray) -> tuple[float, float]:
    """Squared primal and dual residuals (||x-z||^2, ||z-z_prev||^2)."""
    dp = x - z
    dd = z - z_prev
    return float(np.dot(dp, dp)), float(np.dot(dd, dd))


def _distance_term(norm: Norm, delta: np.ndarray) -> float:
    # the l2 block minimizes the squared distance, so measure it that way here
    if norm is Norm.L2:
        return float(np.dot(delta, delta))
    return lp_norm(delta, norm)


def augmented_lagrangian(x, z, s, x0, model: MlpModel, target: int,
                         config: AttackConfig) -> float:
    """Scaled-form merit function for the split problem.

    Distance term selected by config.norm (quadratic for l2), margin loss in
    its differentiable form with config.const and config.kappa.
    """
    r = x - z + s
    return (
        _distance_term(config.norm, x - x0)
        + margin_loss(model, z, target, config.const, config.kappa)
        + 0.5 * config.rho * float(np.dot(r, r))
        - 0.5 * config.rho * float(np.dot(s, s))
    )


def solve_z_subproblem(model: MlpModel, x: np.ndarray, s: np.ndarray, target: int,
                       config: AttackConfig, w_start: np.ndarray) -> np.ndarray:
    """Adam descent in tanh space on margin loss plus the coupling quadratic.

    Warm-starts from w_start and returns the iterate with the lowest
    objective seen. Raises SolverAbort on a non-finite objective.
    """
    rho, const, kappa = config.rho, config.const, config.kappa
    w = w_start.copy()
    state = AdamState.fresh(w.size, learning_rate=config.learning_rate)

    def evaluate(wv):
        z = box_forward(wv)
        logits, cache = classifier._forward_cached(model, z)
        val, rival = _margin_terms(logits, target, kappa)
        r = x - z + s
        obj = const * val + 0.5 * rho * float(np.dot(r, r))
        return z, cache, rival, r, obj

    z, cache, rival, r, obj = evaluate(w)
    if not np.isfinite(obj):
        raise SolverAbort("non-finite objective at the z-subproblem start")
    best_w, best_obj = w.copy(), obj
    for _ in range(config.inner_iterations):
        grad_z = -rho * r
        if rival is not None:
            dlogits = np.zeros(model.num_classes)
            dlogits[rival] = const
            dlogits[target] = -const
            grad_z = grad_z + classifier._backprop_input(model, cache, dlogits)
        grad_w = grad_z * (2.0 * z * (1.0 - z))
        w, state = adam_step(state, w, grad_w)
        z, cache, rival, r, obj = evaluate(w)
        if not np.isfinite(obj):
            raise SolverAbort("non-finite objective during z-subproblem descent")
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
    return best_w


def _prox_step(config: AttackConfig, x0: np.ndarray, v: np.ndarray) -> np.ndarray:
    p = ProxInput(x0=x0, v=v, rho=config.rho)
    if config.norm is Norm.L2:
        return prox_l2(p)
    if config.norm is Norm.L0:
        return prox_l0(p)
    if config.norm is Norm.L1:
        return prox_l1(p)
    try:
        return prox_linf(p, config.inner_iterations_prox, config.learning_rate,
                         config.seed)
    except ProxSolverError as exc:
        raise SolverAbort(str(exc)) from exc


def distortion_profile(delta: np.ndarray) -> dict:
    return {
        "l0": lp_norm(delta, Norm.L0),
        "l1": lp_norm(delta, Norm.L1),
        "l2": lp_norm(delta, Norm.L2),
        "linf": lp_norm(delta, Norm.LINF),
    }


def _classify_candidate(model: MlpModel, candidate: np.ndarray, target: int,
                        kappa_report: float) -> tuple[bool, float]:
    z = classifier.logits(model, candidate)
    rival = int(np.argmax(np.where(np.arange(z.size) == target, -np.inf, z)))
    margin = float(z[target] - z[rival])
    ok = int(np.argmax(z)) == target and margin >= kappa_report
    return ok, margin


def run_admm_with_state(model: MlpModel, x0, target: int, config: AttackConfig,
                        w_init: Optional[np.ndarray] = None,
                        trace: Optional[list] = None):
    """Full ADMM attack at fixed constants; returns (result, final w).

    The final w is handed back so constant-search drivers can warm-start the
    next run.
    """
    validate_config(config)
    x0 = as_vector(x0)
    if model.num_classes < 2:
        raise ValueError("attacks need at least two classes")
    if not 0 <= target < model.num_classes:
        raise ValueError(f"target {target} out of range")
    if x0.size != model.input_dim:
        raise ValueError("input length disagrees with the model")

    w = box_inverse(x0) if w_init is None else w_init.copy()
    z = box_forward(w)
    x = z.copy()
    s = np.zeros_like(x0)

    best_vec = None
    best_dist = np.inf
    best_margin = float("-inf")
    converged = False
    aborted = False
    iterations_run = 0

    for k in range(config.admm_iterations):
        z_prev = z
        s_before = s.copy() if trace is not None else None
        l_before = (
            augmented_lagrangian(x, z, s, x0, model, target, config)
            if trace is not None else 0.0
        )
        x = _prox_step(config, x0, z - s)
        if trace is not None:
            l_after = augmented_lagrangian(x, z, s, x0, model, target, config)
        try:
            w = solve_z_subproblem(model, x, s, target, config, w)
        except SolverAbort:
            aborted = True
            iterations_run = k + 1
            break
        z = box_forward(w)
        assert np.all((z >= 0.0) & (z <= 1.0)), "tanh parametrization left the box"
        s = dual_update(s, x, z)
        iterations_run = k + 1

        candidates = [snap_to_box(z)]
        if config.norm is Norm.L0:
            # the proximal iterate carries the exactly-sparse perturbation
            candidates.append(snap_to_box(x))
        for cand in candidates:
            ok, margin = _classify_candidate(model, cand, target, config.kappa_report)
            if ok:
                dist = lp_norm(cand - x0, config.norm)
                if dist < best_dist:
                    best_vec, best_dist, best_margin = cand, dist, margin

        primal_sq, dual_sq = residuals(x, z, z_prev)
        if trace is not None:
            trace.append(TraceRecord(
                iteration=k, rho=config.rho, const=config.const,
                s_before=s_before, x=x.copy(), z=z.copy(), s_after=s.copy(),
                primal_sq=primal_sq, dual_sq=dual_sq,
                lagrangian_before_x=l_before, lagrangian_after_x=l_after,
            ))
        if primal_sq <= config.convergence_eps and dual_sq <= config.convergence_eps:
            converged = True
            break

    success = best_vec is not None and not aborted
    adversarial = best_vec if success else z
    _, final_margin = _classify_candidate(model, adversarial, target, 0.0)
    result = AttackResult(
        adversarial=adversarial,
        success=success,
        distortions=distortion_profile(adversarial - x0),
        target=target,
        constants_used={"rho": config.rho, "c": config.const},
        iterations_run=iterations_run,
        converged=converged,
        norm=config.norm,
        margin=best_margin if success else final_margin,
    )
    return result, w


def run_admm(model: MlpModel, x0, target: int, config: AttackConfig,
             w_init: Optional[np.ndarray] = None,
             trace: Optional[list] = None) -> AttackResult:
    result, _ = run_admm_with_state(model, x0, target, config, w_init, trace)
    return result
