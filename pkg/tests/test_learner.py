import math

import numpy as np
import pytest

from tmlmc import learner as learner_mod
from tmlmc.core import TabularMDP, UncertaintySpec
from tmlmc.learner import (LearnerConfig, Stepsize, recommended_nmax, recommended_stepsize, run,
                           run_many)
from tmlmc.mlmc import MLMCConfig, TabularGenerativeModel
from tmlmc.robustdp import policy_value, robust_value_iteration


def _cfg(T, div="tv", sigma=0.2, n_max=6, beta=0.1, **kw):
    return LearnerConfig(iterations=T, spec=UncertaintySpec(div, sigma), mlmc=MLMCConfig(n_max=n_max),
                         stepsize=Stepsize.constant(beta), **kw)


def test_zero_iterations(robot):
    res = run(TabularGenerativeModel(robot), _cfg(0))
    assert np.array_equal(res.q, np.zeros((2, 3))) and np.array_equal(res.policy, [0, 0])
    assert [r.iteration for r in res.trace.records] == [0]
    assert res.trace.records[0].cum_samples == 0


def test_one_full_step_on_deterministic_mdp():
    P = np.zeros((3, 2, 3))
    P[0, 0, 1] = P[0, 1, 2] = P[1, :, 2] = P[2, :, 0] = 1.0
    r = np.array([[0.0, 1.0], [0.5, 0.0], [1.0, 0.5]])
    support = np.array([0.0, 0.5, 1.0])
    dist = (r[..., None] == support).astype(float)
    mdp = TabularMDP(P, support, dist, 0.9, 1.0)
    res = run(TabularGenerativeModel(mdp), _cfg(1, sigma=0.0, beta=1.0))
    assert np.array_equal(res.q, r)


def test_recommended_nmax_examples(robot):
    assert recommended_nmax(UncertaintySpec("tv", 0.1), 2 ** 10, robot) == 20
    assert recommended_nmax(UncertaintySpec("chi2", 0.1), math.e, robot) == 3
    det = TabularMDP(np.tile(np.eye(2)[:, None, :], (1, 1, 1)), [0.0], np.ones((2, 1, 1)), 0.9, 1.0)
    kl_branch = math.log1p(1.0 * math.log(4) * math.log(2 ** 10)) / math.log(2)
    assert recommended_nmax(UncertaintySpec("kl", 0.1), 2 ** 10, det) == max(20, math.ceil(kl_branch))
    assert recommended_nmax(UncertaintySpec("kl", 0.1), 2 ** 10, det) == 20
    assert recommended_nmax(UncertaintySpec("kl", 0.1), 2 ** 10, det, proof_variant=True) == 20
    with pytest.raises(ValueError):
        recommended_nmax(UncertaintySpec("tv", 0.1), 1, robot)


def test_recommended_stepsize_examples():
    assert recommended_stepsize(math.e ** 2, 0.5) == 1.0
    assert recommended_stepsize(10 ** 5, 0.9) == pytest.approx(2 * math.log(1e5) / 1e4)
    vals = [recommended_stepsize(T, 0.9) for T in (10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        recommended_stepsize(1, 0.9)


def test_config_validation():
    with pytest.raises(ValueError):
        Stepsize.constant(0.0)
    with pytest.raises(ValueError):
        Stepsize.constant(1.5)
    with pytest.raises(ValueError):
        _cfg(-1)
    with pytest.raises(ValueError):
        _cfg(10, eval_every=-1)
    assert _cfg(1000).eval_period == 10 and _cfg(50).eval_period == 1


@pytest.mark.parametrize("div", ["tv", "chi2", "kl"])
def test_serial_parallel_and_batched_runs_identical(div, garnet_small):
    gen = TabularGenerativeModel(garnet_small)
    cfg = _cfg(15, div=div, sigma=0.3, seed=5, eval_every=0)
    serial = run(gen, cfg, run_id=2)
    threaded = run(gen, cfg, run_id=2, workers=3)
    batched = run_many(gen, cfg, [0, 1, 2], workers=2)[2]
    assert np.array_equal(serial.q, threaded.q) and np.array_equal(serial.q, batched.q)
    assert serial.trace.records == batched.trace.records


def test_runs_differ_by_run_id(robot):
    a, b = run_many(TabularGenerativeModel(robot), _cfg(20, eval_every=0), [0, 1])
    assert not np.array_equal(a.q, b.q)


def test_clamped_range_and_monotone_samples(garnet_small):
    gen = TabularGenerativeModel(garnet_small)
    res = run_many(gen, _cfg(40, div="kl", sigma=0.5, n_max=12, beta=1.0, eval_every=5), range(3))
    for r in res:
        assert r.q.min() >= 0 and r.q.max() <= garnet_small.q_max
        cum = [rec.cum_samples for rec in r.trace.records]
        assert cum == sorted(cum)


def test_nonfinite_aborts_without_clamp(robot, monkeypatch):
    def boom(gen, q, s, a, keys, spec, mlmc, q_rows=None):
        return np.full(len(keys), np.inf), np.ones(len(keys), dtype=np.int64)

    monkeypatch.setattr(learner_mod, "estimate_operator", boom)
    with pytest.raises(FloatingPointError, match="non-finite"):
        run(TabularGenerativeModel(robot), _cfg(3, clamp_q=False))
    res = run(TabularGenerativeModel(robot), _cfg(3))
    assert np.all(res.q == robot.q_max)


def test_trace_values_match_policy_evaluation(robot):
    spec = UncertaintySpec("tv", 0.2)
    q_star, _ = robust_value_iteration(robot, spec)
    res = run(TabularGenerativeModel(robot), _cfg(30, eval_every=10), baseline=q_star)
    assert [r.iteration for r in res.trace.records] == [0, 10, 20, 30]
    last = res.trace.records[-1]
    assert last.greedy_robust_value == pytest.approx(policy_value(res.policy, robot, spec).mean())
    assert last.q_gap_inf == pytest.approx(np.abs(res.q - q_star).max())


@pytest.mark.parametrize("n_max", [4, 8])
def test_cumulative_sample_budget(n_max, robot):
    T = 1000
    res = run_many(TabularGenerativeModel(robot), _cfg(T, n_max=n_max, eval_every=0), range(2))
    S, A = robot.num_states, robot.num_actions
    expect = 2 * S * A * T * (n_max + 2)
    for r in res:
        assert abs(r.trace.records[-1].cum_samples / expect - 1) < 0.05


def test_error_trend_on_two_state_mdp(robot):
    """Average sup-norm error over 20 seeds does not grow between t and 4t with recommended settings."""
    spec = UncertaintySpec("tv", 0.2)
    T = 4096
    q_star, _ = robust_value_iteration(robot, spec)
    cfg = LearnerConfig(T, spec, MLMCConfig(n_max=recommended_nmax(spec, T, robot)),
                        Stepsize(), seed=3, eval_every=T // 16)
    res = run_many(TabularGenerativeModel(robot), cfg, range(20), baseline=q_star)
    gap = {}
    for r in res:
        for rec in r.trace.records:
            gap.setdefault(rec.iteration, []).append(rec.q_gap_inf)
    mean_gap = {t: np.mean(v) for t, v in gap.items()}
    for t in (T // 16, T // 8, T // 4):
        assert mean_gap[4 * t] <= mean_gap[t]
