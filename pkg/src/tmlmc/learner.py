"""Synchronous robust Q-learning driven by threshold-MLMC operator estimates."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as crng
from .core import Divergence, TabularMDP, UncertaintySpec, greedy_policy, min_nonzero_entry
from .mlmc import MLMCConfig, TabularGenerativeModel, estimate_operator, operator_keys
from .robustdp import RobustModel, policy_value


class StepKind(str, enum.Enum):
    CONSTANT = "constant"
    RECOMMENDED = "recommended"


@dataclass(frozen=True)
class Stepsize:
    kind: StepKind = StepKind.RECOMMENDED
    value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StepKind(self.kind))
        if self.kind is StepKind.CONSTANT:
            if self.value is None or not 0.0 < self.value <= 1.0:
                raise ValueError(f"constant stepsize must lie in (0, 1], got {self.value}")

    @classmethod
    def constant(cls, beta: float) -> "Stepsize":
        return cls(StepKind.CONSTANT, float(beta))

    def resolve(self, iterations: int, gamma: float) -> float:
        if self.kind is StepKind.CONSTANT:
            return float(self.value)
        return recommended_stepsize(max(iterations, 2), gamma)


@dataclass(frozen=True)
class LearnerConfig:
    iterations: int
    spec: UncertaintySpec
    mlmc: MLMCConfig = field(default_factory=MLMCConfig)
    stepsize: Stepsize = field(default_factory=Stepsize)
    seed: int = 0
    clamp_q: bool = True
    # None means max(1, iterations // 100); 0 disables policy evaluation
    eval_every: int | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be nonnegative, got {self.iterations}")
        if self.eval_every is not None and self.eval_every < 0:
            raise ValueError(f"eval_every must be nonnegative, got {self.eval_every}")

    @property
    def eval_period(self) -> int:
        if self.eval_every is None:
            return max(1, self.iterations // 100)
        return self.eval_every


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    cum_samples: int
    q_gap_inf: float | None
    greedy_robust_value: float | None


@dataclass
class TrainingTrace:
    run_id: int = 0
    records: list = field(default_factory=list)


@dataclass
class RunResult:
    q: np.ndarray
    policy: np.ndarray
    trace: TrainingTrace


def recommended_stepsize(T: int, gamma: float) -> float:
    """``2 ln T / ((1 - gamma) T)``, capped at 1."""
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return min(1.0, 2.0 * math.log(T) / ((1.0 - gamma) * T))


def recommended_nmax(spec: UncertaintySpec, T: int, mdp: TabularMDP,
                     proof_variant: bool = False) -> int:
    """Level threshold ``ceil(2 log2 T)``, raised for KL by the ``p_min`` term.

    ``proof_variant`` swaps ``log(2|S|)`` for ``log(2|S|^2|A|)`` in the KL term.
    """
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    n = 2.0 * math.log(T) / math.log(2.0)
    if spec.divergence is Divergence.KL:
        S, A = mdp.num_states, mdp.num_actions
        cover = 2 * S * S * A if proof_variant else 2 * S
        p_min = min_nonzero_entry(mdp)
        n = max(n, math.log1p(p_min ** 2 * math.log(cover) * math.log(T)) / math.log(2.0))
    return math.ceil(n)


class _PolicyScorer:
    """Mean robust value of greedy policies, memoised by policy."""

    def __init__(self, mdp, spec, tol=1e-8):
        self.model = RobustModel(mdp, spec)
        self.mdp, self.spec, self.tol = mdp, spec, tol
        self.cache = {}

    def __call__(self, policy):
        key = tuple(int(x) for x in policy)
        if key not in self.cache:
            V = policy_value(policy, self.mdp, self.spec, tol=self.tol, model=self.model)
            self.cache[key] = float(V.mean())
        return self.cache[key]


def _sweep(gen, q, keys, s, a, q_rows, spec, mlmc, workers):
    if workers <= 1 or len(keys) < 2 * workers:
        return estimate_operator(gen, q, s, a, keys, spec, mlmc, q_rows=q_rows)
    bounds = np.linspace(0, len(keys), workers + 1).astype(int)
    chunks = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda sl: estimate_operator(gen, q, s[sl], a[sl], keys[sl], spec, mlmc,
                                         q_rows=q_rows[sl]),
            chunks))
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def run_many(gen: TabularGenerativeModel, config: LearnerConfig, run_ids=(0,),
             baseline=None, workers: int = 1, score=None) -> list:
    """Independent learner runs advanced together, one vectorised sweep per iteration.

    Run ``r`` draws every random number from streams keyed by
    ``(seed, r, t, s, a, term)``, so its trajectory does not depend on which
    other runs share the sweep or on ``workers``.
    """
    mdp = gen.mdp
    S, A = mdp.num_states, mdp.num_actions
    run_ids = [int(r) for r in run_ids]
    R = len(run_ids)
    T = config.iterations
    beta = config.stepsize.resolve(T, mdp.gamma)
    period = config.eval_period
    if score is None and period > 0:
        score = _PolicyScorer(mdp, config.spec)
    baseline = None if baseline is None else np.asarray(baseline, dtype=float)

    roots = np.array([crng.derive_key(config.seed, r) for r in run_ids], dtype=np.uint64)
    run_idx = np.repeat(np.arange(R), S * A)
    s = np.tile(np.repeat(np.arange(S), A), R)
    a = np.tile(np.tile(np.arange(A), S), R)
    q = np.zeros((R, S, A))
    cum = np.zeros(R, dtype=np.int64)
    traces = [TrainingTrace(run_id=r) for r in run_ids]

    def record(t):
        for i, trace in enumerate(traces):
            gap = None if baseline is None else float(np.abs(q[i] - baseline).max())
            value = score(greedy_policy(q[i])) if period > 0 else None
            trace.records.append(TraceRecord(t, int(cum[i]), gap, value))

    record(0)
    for t in range(T):
        keys = operator_keys(roots[run_idx], t, s, a)
        est, used = _sweep(gen, q, keys, s, a, run_idx, config.spec, config.mlmc, workers)
        q = (1.0 - beta) * q + beta * est.reshape(R, S, A)
        cum += used.reshape(R, S * A).sum(axis=1)
        if config.clamp_q:
            np.clip(q, 0.0, mdp.q_max, out=q)
        elif not np.all(np.isfinite(q)):
            bad = np.argwhere(~np.isfinite(q))[0]
            raise FloatingPointError(
                f"non-finite Q entry at run {run_ids[bad[0]]}, state {bad[1]}, action {bad[2]} "
                f"after iteration {t + 1}; enable clamp_q or lower the stepsize")
        done = t + 1
        if done == T or (period > 0 and done % period == 0):
            record(done)
    return [RunResult(q[i].copy(), greedy_policy(q[i]), traces[i]) for i in range(R)]


def run(gen: TabularGenerativeModel, config: LearnerConfig, baseline=None,
        workers: int = 1, run_id: int = 0) -> RunResult:
    """Single learner run; identical to run ``run_id`` of :func:`run_many`."""
    return run_many(gen, config, [run_id], baseline=baseline, workers=workers)[0]
