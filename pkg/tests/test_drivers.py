import numpy as np
import pytest
from scipy import stats

import admm_adversary.drivers as drivers
from admm_adversary.classifier import LabeledDataset, init_model
from admm_adversary.drivers import (TargetMode, attack,
                                    attack_with_adaptive_rho,
                                    attack_with_binary_search_c,
                                    default_config, reduce_case,
                                    select_targets)
from admm_adversary.engine import (AdaptiveRho, AttackConfig, AttackResult,
                                   BinarySearchC, FixedConstants)
from admm_adversary.numerics import Norm


def fake_result(success, dist, norm=Norm.L2, target=1):
    return AttackResult(
        adversarial=np.full(4, 0.5), success=success,
        distortions={"l0": dist, "l1": dist, "l2": dist, "linf": dist},
        target=target, constants_used={"rho": 1.0, "c": 1.0},
        iterations_run=1, converged=False, norm=norm, margin=0.0,
    )


# -- target selection -----------------------------------------------------


def test_select_targets_modes(toy_model, eval_pool):
    for mode in TargetMode:
        plan = select_targets(eval_pool, toy_model, mode, seed=3)
        for targets, label in zip(plan.targets, eval_pool.labels):
            assert int(label) not in targets
            if mode is TargetMode.AVERAGE:
                assert len(targets) == 1
            else:
                assert len(targets) == 9
                assert sorted(targets) == [t for t in range(10) if t != label]


def test_select_targets_two_classes():
    model = init_model((2, 4, 2), seed=0)
    x = np.array([[0.2, 0.7]])
    label = np.array([int(np.argmax([0, 1]))])  # placeholder, fixed below
    from admm_adversary.classifier import predict
    label = np.array([predict(model, x[0])])
    data = LabeledDataset(x, label)
    for mode in TargetMode:
        plan = select_targets(data, model, mode, seed=0)
        assert plan.targets == ((1 - label[0],),)


def test_select_targets_uniform_over_incorrect_labels(toy_model, eval_pool):
    # one image, many seeds: the drawn target must be uniform over the
    # nine incorrect labels (chi-square at significance 0.01)
    one = eval_pool.subset([0])
    label = int(one.labels[0])
    draws = [
        select_targets(one, toy_model, TargetMode.AVERAGE, seed).targets[0][0]
        for seed in range(10000)
    ]
    assert label not in draws
    counts = [draws.count(t) for t in range(10) if t != label]
    assert stats.chisquare(counts).pvalue > 0.01


def test_select_targets_deterministic(toy_model, eval_pool):
    a = select_targets(eval_pool, toy_model, TargetMode.AVERAGE, seed=7)
    b = select_targets(eval_pool, toy_model, TargetMode.AVERAGE, seed=7)
    assert a == b


def test_select_targets_rejects_misclassified(toy_model, digits_splits):
    _, eval_split = digits_splits
    from admm_adversary.classifier import predict
    wrong = [i for i in range(len(eval_split))
             if predict(toy_model, eval_split.inputs[i]) != eval_split.labels[i]]
    assert wrong, "fixture needs at least one misclassified image"
    bad = eval_split.subset(wrong[:1])
    with pytest.raises(ValueError):
        select_targets(bad, toy_model, TargetMode.AVERAGE, seed=0)


def test_select_targets_rejects_single_class():
    model = init_model((3, 4, 1), seed=0)
    data = LabeledDataset(np.full((1, 3), 0.5), np.array([0]))
    with pytest.raises(ValueError):
        select_targets(data, model, TargetMode.AVERAGE, seed=0)


# -- case reduction ---------------------------------------------------------


def test_reduce_case_best_and_worst():
    results = [fake_result(True, d) for d in (2.0, 1.0, 3.0)]
    assert reduce_case(results, TargetMode.BEST).distortions["l2"] == 1.0
    assert reduce_case(results, TargetMode.WORST).distortions["l2"] == 3.0


def test_reduce_case_worst_fails_if_any_target_fails():
    results = [fake_result(True, 1.0)] * 8 + [fake_result(False, 0.0)]
    assert not reduce_case(results, TargetMode.WORST).success


def test_reduce_case_best_fails_only_if_all_fail():
    all_failed = [fake_result(False, 0.0)] * 3
    assert not reduce_case(all_failed, TargetMode.BEST).success
    one_good = all_failed + [fake_result(True, 5.0)]
    picked = reduce_case(one_good, TargetMode.BEST)
    assert picked.success and picked.distortions["l2"] == 5.0


def test_reduce_case_average_passthrough_and_empty():
    single = fake_result(True, 2.0)
    assert reduce_case([single], TargetMode.AVERAGE) is single
    with pytest.raises(ValueError):
        reduce_case([], TargetMode.BEST)


def test_reduce_case_best_no_harder_than_worst():
    rng = np.random.default_rng(0)
    for _ in range(25):
        results = [fake_result(True, float(rng.uniform(0.1, 5)))
                   for _ in range(9)]
        best = reduce_case(results, TargetMode.BEST)
        worst = reduce_case(results, TargetMode.WORST)
        assert best.distortions["l2"] <= worst.distortions["l2"]


# -- bracketing searches (scripted engine) -----------------------------------


class ScriptedEngine:
    """Replaces the ADMM loop with a feasibility threshold on the constant."""

    def __init__(self, succeed_above, distortion=lambda c: c):
        self.succeed_above = succeed_above
        self.distortion = distortion
        self.constants = []

    def __call__(self, model, x0, target, config, w_init=None, trace=None):
        value = config.const if isinstance(self, ConstScript) else config.rho
        self.constants.append(value)
        ok = value >= self.succeed_above
        return fake_result(ok, self.distortion(value), config.norm), np.zeros(4)


class ConstScript(ScriptedEngine):
    pass


class RhoScript(ScriptedEngine):
    pass


def test_binary_search_shrinks_after_first_success(monkeypatch):
    script = ConstScript(succeed_above=0.0005)  # first try already succeeds
    monkeypatch.setattr(drivers, "run_admm_with_state", script)
    base = AttackConfig(norm=Norm.L2)
    result = attack_with_binary_search_c(None, np.zeros(4), 1, base, steps=5,
                                         c_init=0.001)
    assert result.success
    assert all(c < 0.001 for c in script.constants[1:])


def test_binary_search_grows_until_success_then_bisects(monkeypatch):
    script = ConstScript(succeed_above=0.5)
    monkeypatch.setattr(drivers, "run_admm_with_state", script)
    base = AttackConfig(norm=Norm.L2)
    result = attack_with_binary_search_c(None, np.zeros(4), 1, base, steps=9,
                                         c_init=0.001)
    assert result.success
    cs = script.constants
    # tenfold growth while failing: 0.001, 0.01, 0.1, 1 then bisection
    assert cs[:4] == pytest.approx([0.001, 0.01, 0.1, 1.0])
    lo, hi = 0.0, None
    for c in cs:
        assert hi is None or lo < hi
        if c >= 0.5:
            hi = c
        else:
            lo = max(lo, c)
    # the reported success is the cheapest one found
    assert result.distortions["l2"] == pytest.approx(min(c for c in cs if c >= 0.5))


def test_binary_search_all_failures(monkeypatch):
    script = ConstScript(succeed_above=float("inf"))
    monkeypatch.setattr(drivers, "run_admm_with_state", script)
    base = AttackConfig(norm=Norm.L2)
    result = attack_with_binary_search_c(None, np.zeros(4), 1, base, steps=4,
                                         c_init=0.001)
    assert not result.success
    assert len(script.constants) == 4


def test_adaptive_rho_moves_down_after_success(monkeypatch):
    script = RhoScript(succeed_above=1.0)
    monkeypatch.setattr(drivers, "run_admm_with_state", script)
    base = AttackConfig(norm=Norm.L0)
    result = attack_with_adaptive_rho(None, np.zeros(4), 1, base, steps=6,
                                      rho_init=3.0)
    assert result.success
    assert script.constants[0] == 3.0
    assert all(r < 3.0 for r in script.constants[1:])
    # smallest feasible rho wins, shrinking the reported distortion
    assert result.distortions["l0"] == pytest.approx(min(
        r for r in script.constants if r >= 1.0
    ))


def test_adaptive_rho_all_failures(monkeypatch):
    script = RhoScript(succeed_above=float("inf"))
    monkeypatch.setattr(drivers, "run_admm_with_state", script)
    base = AttackConfig(norm=Norm.L0)
    result = attack_with_adaptive_rho(None, np.zeros(4), 1, base, steps=3,
                                      rho_init=3.0)
    assert not result.success


def test_search_requires_steps(monkeypatch):
    base = AttackConfig(norm=Norm.L2)
    with pytest.raises(ValueError):
        attack_with_binary_search_c(None, np.zeros(4), 1, base, steps=0,
                                    c_init=0.001)


# -- real searches on the toy model -------------------------------------------


def test_binary_search_beats_fixed_constant(toy_model, eval_pool):
    x0 = eval_pool.inputs[8]
    label = int(eval_pool.labels[8])
    target = (label + 3) % 10
    base = AttackConfig(norm=Norm.L2, rho=20.0, admm_iterations=6,
                        inner_iterations=200, learning_rate=0.02)
    searched = attack_with_binary_search_c(toy_model, x0, target, base,
                                           steps=6, c_init=0.05)
    import dataclasses
    fixed, _ = drivers.run_admm_with_state(
        toy_model, x0, target, dataclasses.replace(base, const=0.05)
    )
    assert searched.success
    if fixed.success:
        assert searched.distortions["l2"] <= fixed.distortions["l2"] + 1e-12


def test_adaptive_rho_beats_fixed_rho(toy_model, eval_pool):
    x0 = eval_pool.inputs[9]
    label = int(eval_pool.labels[9])
    target = (label + 1) % 10
    base = AttackConfig(norm=Norm.L0, rho=3.0, const=20.0, admm_iterations=6,
                        inner_iterations=200, learning_rate=0.01)
    searched = attack_with_adaptive_rho(toy_model, x0, target, base, steps=6,
                                        rho_init=3.0)
    fixed, _ = drivers.run_admm_with_state(toy_model, x0, target, base)
    assert searched.success
    if fixed.success:
        assert searched.distortions["l0"] <= fixed.distortions["l0"]


# -- dispatch ------------------------------------------------------------------


def test_default_configs_match_protocol():
    l2 = default_config(Norm.L2)
    assert (l2.rho, l2.admm_iterations, l2.inner_iterations) == (20.0, 10, 1000)
    assert l2.search == BinarySearchC(steps=9, c_init=0.001)
    l0 = default_config(Norm.L0)
    assert isinstance(l0.search, AdaptiveRho) and l0.search.steps == 9
    assert l0.admm_iterations == 10
    l1 = default_config(Norm.L1)
    assert (l1.const, l1.rho, l1.admm_iterations) == (2.0, 10.0, 80)
    assert l1.search == FixedConstants()
    linf = default_config(Norm.LINF)
    assert (linf.rho, linf.const, linf.admm_iterations) == (0.1, 0.1, 100)
    assert linf.search == FixedConstants()


def test_attack_dispatches_to_search_policy(toy_model, eval_pool, monkeypatch):
    calls = []

    def spy_search(model, x0, target, base, steps, c_init):
        calls.append(("c-search", steps, c_init))
        return fake_result(True, 1.0)

    monkeypatch.setattr(drivers, "attack_with_binary_search_c", spy_search)
    attack(toy_model, eval_pool.inputs[0], 1, Norm.L2)
    assert calls == [("c-search", 9, 0.001)]


def test_attack_deterministic_end_to_end(toy_model, eval_pool):
    x0 = eval_pool.inputs[10]
    label = int(eval_pool.labels[10])
    target = (label + 4) % 10
    overrides = dict(admm_iterations=4, inner_iterations=150,
                     search=BinarySearchC(steps=3, c_init=0.01))
    a = attack(toy_model, x0, target, Norm.L2, **overrides)
    b = attack(toy_model, x0, target, Norm.L2, **overrides)
    assert np.array_equal(a.adversarial, b.adversarial)
    assert a.distortions == b.distortions
    assert a.constants_used == b.constants_used
