"""Threshold-MLMC estimators of the worst-case reward and next-state value.

Two routes compute the same estimator:

* the scalar functions (:func:`tmlmc_reward_estimate`, :func:`tmlmc_value_estimate`,
  :func:`tmlmc_operator`) follow the construction step by step for a single
  ``(s, a)``: draw a level, draw the batch, split it, solve three duals;
* :func:`estimate_terms` evaluates many ``(s, a)`` streams at once and is what
  the learner and the experiment commands use.

Both consume randomness in the same order from a stream: one uniform for the
level, one for the base sample, then one per tail sample. Given a
:class:`~tmlmc.rng.CounterStream` they see identical draws.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .core import MinDomain, UncertaintySpec, support_table
from .dual import DiscreteDistribution, solve_batch, worst_case

# largest number of tail samples materialised at once by estimate_terms
CHUNK = 1 << 18


class Term(enum.IntEnum):
    REWARD = 0
    TRANSITION = 1


@dataclass(frozen=True)
class MLMCConfig:
    psi: float = 0.5
    n_max: int = 32
    include_base_in_full: bool = False

    def __post_init__(self):
        if not 0.0 < self.psi < 1.0:
            raise ValueError(f"psi must lie in (0, 1), got {self.psi}")
        if self.n_max < 0 or self.n_max > 62:
            raise ValueError(f"n_max must lie in [0, 62], got {self.n_max}")

    def level_prob(self, level):
        return self.psi * (1.0 - self.psi) ** np.asarray(level, dtype=float)

    def expected_samples(self) -> float:
        """Expected draws per estimator call: 1 + sum_{n <= n_max} 2^{n+1} P_n."""
        n = np.arange(self.n_max + 1)
        return 1.0 + float((2.0 ** (n + 1) * self.level_prob(n)).sum())


@dataclass(frozen=True, eq=False)
class SampleBatch:
    base: float
    tail: np.ndarray
    level: int


class TabularGenerativeModel:
    """Generative model backed by the nominal rows of a :class:`TabularMDP`.

    Sampling is by inverse CDF over each row's support, so a sample is a pure
    function of one uniform. Rows are stored over a fixed-width support table
    (width = largest support in the MDP, zero-probability padding), which the
    vectorised estimator also uses for its per-row histograms.
    """

    def __init__(self, mdp: TabularMDP):
        self.mdp = mdp
        self.tables = {
            Term.TRANSITION: support_table(mdp.transition),
            Term.REWARD: support_table(mdp.reward_dist),
        }

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    def local_index(self, term, s, a, u):
        """Position within the row's support table selected by uniforms ``u``."""
        _, _, cdf = self.tables[Term(term)]
        u = np.asarray(u)
        idx = np.zeros(u.shape, dtype=np.intp)
        for k in range(cdf.shape[-1] - 1):
            idx += u >= cdf[s, a, k]
        return idx

    def sample_index(self, term, s, a, u):
        support, _, _ = self.tables[Term(term)]
        return support[s, a, self.local_index(term, s, a, u)]

    def sample_next_state(self, s, a, rng, size=None):
        return self.sample_index(Term.TRANSITION, s, a, rng.random(size))

    def sample_reward(self, s, a, rng, size=None):
        idx = self.sample_index(Term.REWARD, s, a, rng.random(size))
        return self.mdp.reward_support[idx]


def levels_from_uniform(u, psi):
    """Geometric levels on {0, 1, ...} with P(N = n) = psi (1 - psi)^n."""
    return np.floor(np.log1p(-np.asarray(u)) / math.log1p(-psi)).astype(np.int64)


def sample_level(rng, psi: float) -> int:
    return int(levels_from_uniform(rng.random(), psi))


def draw_batch(gen: TabularGenerativeModel, s: int, a: int, kind: Term, level: int,
               config: MLMCConfig, rng) -> SampleBatch:
    """Base sample plus ``2^(level+1)`` tail samples when ``level <= n_max``."""
    draw = gen.sample_reward if Term(kind) is Term.REWARD else gen.sample_next_state
    base = draw(s, a, rng)
    n_tail = 2 ** (level + 1) if level <= config.n_max else 0
    tail = draw(s, a, rng, size=n_tail) if n_tail else np.zeros(0, dtype=np.asarray(base).dtype)
    return SampleBatch(base=base, tail=np.asarray(tail), level=level)


def _empirical(samples, ambient_min):
    values, counts = np.unique(samples, return_counts=True)
    probs = counts / samples.size
    return DiscreteDistribution(values, probs, values[0] if ambient_min is None else ambient_min)


def empirical_splits(batch: SampleBatch, ambient_min=None, include_base=False):
    """Empirical distributions of the whole tail and of its odd/even positions.

    Tail positions are counted from 1, so ``odd`` holds ``tail[0], tail[2], ...``.
    With ``ambient_min=None`` each distribution uses its own support minimum.
    Returns ``(full, even, odd)``.
    """
    tail = np.asarray(batch.tail, dtype=float)
    if tail.size == 0:
        raise ValueError("empirical splits need a nonempty tail")
    pooled = np.append(tail, float(batch.base)) if include_base else tail
    return (_empirical(pooled, ambient_min), _empirical(tail[1::2], ambient_min),
            _empirical(tail[0::2], ambient_min))


def delta_correction(full, even, odd, spec: UncertaintySpec) -> float:
    return (worst_case(full, spec).value - 0.5 * worst_case(even, spec).value
            - 0.5 * worst_case(odd, spec).value)


def _correction(batch, spec, config, ambient_min):
    if batch.level > config.n_max:
        return 0.0
    full, even, odd = empirical_splits(batch, ambient_min, config.include_base_in_full)
    return delta_correction(full, even, odd, spec) / float(config.level_prob(batch.level))


def _term_streams(rng):
    if isinstance(rng, crng.CounterStream):
        return rng.child(Term.REWARD), rng.child(Term.TRANSITION)
    return rng, rng


def tmlmc_reward_estimate(gen, s, a, spec: UncertaintySpec, config: MLMCConfig, rng,
                          level=None) -> float:
    """``r_0 + delta / P_N`` for the reward term; ``level`` overrides the geometric draw."""
    drawn = sample_level(rng, config.psi)
    level = drawn if level is None else level
    batch = draw_batch(gen, s, a, Term.REWARD, level, config, rng)
    ambient = (float(gen.mdp.reward_support.min())
               if spec.min_domain is MinDomain.AMBIENT else None)
    return float(batch.base) + _correction(batch, spec, config, ambient)


def tmlmc_value_estimate(gen, s, a, q, spec: UncertaintySpec, config: MLMCConfig, rng,
                         level=None) -> float:
    """``V(s'_0) + delta / P_N`` with ``V = max_a q``."""
    V = np.asarray(q, dtype=float).max(axis=1)
    drawn = sample_level(rng, config.psi)
    level = drawn if level is None else level
    states = draw_batch(gen, s, a, Term.TRANSITION, level, config, rng)
    batch = SampleBatch(base=V[states.base], tail=V[states.tail], level=level)
    ambient = float(V.min()) if spec.min_domain is MinDomain.AMBIENT else None
    return float(batch.base) + _correction(batch, spec, config, ambient)


def tmlmc_operator(gen, s, a, q, spec: UncertaintySpec, config: MLMCConfig, rng) -> float:
    """One draw of the estimated robust Bellman operator at ``(s, a)``.

    A :class:`~tmlmc.rng.CounterStream` is split into independent reward and
    transition children; any other generator is consumed sequentially.
    """
    r_rng, p_rng = _term_streams(rng)
    reward = tmlmc_reward_estimate(gen, s, a, spec, config, r_rng)
    value = tmlmc_value_estimate(gen, s, a, q, spec, config, p_rng)
    return reward + gen.mdp.gamma * value


# ---------------------------------------------------------------------------
# vectorised engine


@dataclass(frozen=True, eq=False)
class TermEstimates:
    estimate: np.ndarray
    samples: np.ndarray
    level: np.ndarray


def _tally(gen, term, s, a, keys, tail_len, width):
    """Histogram of tail samples per row, split by tail-position parity.

    Returns ``counts[row, parity, j]`` where parity 0 is odd positions
    (1, 3, ...) and ``j`` indexes the row's support table.
    """
    B = len(keys)
    counts = np.zeros(B * 2 * width, dtype=np.int64)

    def add(rows, offsets):
        # offsets: 0-based tail index; the tail starts at stream counter 2
        u = crng.uniforms(keys[rows], offsets.astype(np.uint64) + np.uint64(2))
        j = gen.local_index(term, s[rows], a[rows], u)
        flat = (rows * 2 + (offsets & 1)) * width + j
        counts[:] += np.bincount(flat, minlength=counts.size)

    big = tail_len > CHUNK
    small = np.flatnonzero((tail_len > 0) & ~big)
    if small.size:
        lens = tail_len[small]
        group = np.cumsum(lens) // CHUNK
        for g in np.unique(group):
            rows = small[group == g]
            n = tail_len[rows]
            rep = np.repeat(rows, n)
            starts = np.repeat(np.cumsum(n) - n, n)
            add(rep, np.arange(rep.size, dtype=np.int64) - starts)
    for row in np.flatnonzero(big):
        for start in range(0, int(tail_len[row]), CHUNK):
            stop = min(start + CHUNK, int(tail_len[row]))
            add(np.full(stop - start, row), np.arange(start, stop, dtype=np.int64))
    return counts.reshape(B, 2, width)


def estimate_terms(gen: TabularGenerativeModel, term: Term, s, a, keys,
                   spec: UncertaintySpec, config: MLMCConfig, values=None,
                   value_rows=None) -> TermEstimates:
    """Threshold-MLMC estimates for many ``(s, a)`` streams at once.

    ``keys`` are counter-stream keys, one per row. For the transition term
    ``values`` holds ``V`` over states, either shared ``(S,)`` or per row
    ``(B, S)``; the reward term uses the MDP's reward support. With
    ``value_rows`` each row ``i`` reads ``values[value_rows[i]]`` instead.
    """
    term = Term(term)
    s = np.asarray(s, dtype=np.intp)
    a = np.asarray(a, dtype=np.intp)
    keys = np.asarray(keys, dtype=np.uint64)
    B = len(keys)
    support, _, _ = gen.tables[term]
    width = support.shape[-1]
    if term is Term.REWARD:
        values = gen.mdp.reward_support
    values = np.asarray(values, dtype=float)
    rows = np.arange(B)
    # atom values over each row's support table, (B, width)
    if values.ndim == 1:
        atom_vals = values[support[s, a]]
        ambient_all = np.full(B, values.min())
    else:
        vrows = rows if value_rows is None else np.asarray(value_rows, dtype=np.intp)
        atom_vals = values[vrows[:, None], support[s, a]]
        ambient_all = values.min(axis=1)[vrows]

    level = levels_from_uniform(crng.uniforms(keys, np.zeros(B, dtype=np.uint64)), config.psi)
    active = level <= config.n_max
    if np.any(level[active] >= 62):
        # 2^63 draws would overflow the sample counter long before they finish
        raise OverflowError("level 62 drawn: tail of 2^63 samples is not representable")
    tail_len = np.where(active, np.left_shift(np.int64(2), np.minimum(level, 61)), 0)
    base_j = gen.local_index(term, s, a, crng.uniforms(keys, np.ones(B, dtype=np.uint64)))
    base_val = atom_vals[rows, base_j]

    delta = np.zeros(B)
    live = np.flatnonzero(active)
    if live.size:
        counts = _tally(gen, term, s[live], a[live], keys[live], tail_len[live], width)
        odd, even = counts[:, 0], counts[:, 1]
        full = odd + even
        if config.include_base_in_full:
            full[np.arange(live.size), base_j[live]] += 1
        v = atom_vals[live]
        amb = ambient_all[live] if spec.min_domain is MinDomain.AMBIENT else None
        # one stacked solve for the full, even and odd empirical distributions
        c = np.concatenate([full, even, odd])
        sol = _row_duals(np.concatenate([v, v, v]), c / c.sum(axis=1, keepdims=True),
                         None if amb is None else np.concatenate([amb, amb, amb]), spec)
        sol = sol.reshape(3, live.size)
        delta[live] = sol[0] - 0.5 * sol[1] - 0.5 * sol[2]
    estimate = base_val + delta / config.level_prob(level)
    return TermEstimates(estimate=estimate, samples=1 + tail_len, level=level)


def _row_duals(values, probs, ambient, spec):
    if ambient is None:
        ambient = np.where(probs > 0, values, np.inf).min(axis=1)
    return solve_batch(values, probs, ambient, spec.divergence, spec.sigma)[0]


def operator_keys(root_keys, t, s, a):
    """Stream keys for ``(root, t, s, a)``; the two terms are children of these."""
    k = crng.child_key(root_keys, t)
    k = crng.child_key(k, s)
    return crng.child_key(k, a)


def estimate_operator(gen: TabularGenerativeModel, q, s, a, keys, spec: UncertaintySpec,
                      config: MLMCConfig, q_rows=None):
    """Vectorised estimated robust Bellman operator.

    ``q`` is ``(S, A)`` shared by all rows or a stack ``(K, S, A)``; with a
    stack, row ``i`` reads ``q[q_rows[i]]`` (default ``q[i]``). ``keys`` are
    per-row operator keys as from :func:`operator_keys`. Returns the
    estimates and the number of generative samples each row consumed.
    """
    q = np.asarray(q, dtype=float)
    V = q.max(axis=-1)
    keys = np.asarray(keys, dtype=np.uint64)
    r = estimate_terms(gen, Term.REWARD, s, a, crng.child_key(keys, int(Term.REWARD)),
                       spec, config)
    v = estimate_terms(gen, Term.TRANSITION, s, a, crng.child_key(keys, int(Term.TRANSITION)),
                       spec, config, values=V, value_rows=q_rows)
    return r.estimate + gen.mdp.gamma * v.estimate, r.samples + v.samples
