"""Worst-case expectations over divergence balls around a discrete distribution.

Each solver maximises the scalar dual objective of the inner problem

    inf { E_q[v] : rho(q, p) <= sigma }

over the dual variable ``alpha``. TV is solved exactly by enumerating the
breakpoints of its piecewise-linear objective, chi-square by golden-section
search on every interval between breakpoints, KL by a single golden-section
search (the KL objective is concave in ``alpha``) plus the ``alpha -> 0`` limit.

The batched entry point :func:`solve_batch` works on ``(B, M)`` arrays of atom
values and probabilities and is what the estimators and dynamic programming
use. Zero-probability atoms are allowed and ignored by all three objectives.
The scalar functions wrap it for a single :class:`DiscreteDistribution`.

:func:`worst_case_oracle` solves the primal problem by brute force (a refined
simplex lattice for TV, a scan of rays from ``p`` to the ball boundary for
chi-square and KL) and shares no code with the dual solvers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import Divergence, UncertaintySpec

PROB_ATOL = 1e-9
GOLDEN_RTOL = 1e-12
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
# fixed iteration count makes the result independent of how rows are batched
GOLDEN_STEPS = math.ceil(math.log(GOLDEN_RTOL) / math.log(_INVPHI))
# exp() of the KL search variable must stay finite
_LOG_ALPHA_MAX = 700.0


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Weighted atoms plus the minimum of ``v`` over the domain the adversary may use."""

    values: np.ndarray
    probs: np.ndarray
    ambient_min: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if v.shape != p.shape or v.size == 0:
            raise ValueError("values and probs must be nonempty and of equal length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValueError("probs must be nonnegative and sum to 1")
        if self.ambient_min > v[p > 0].min():
            raise ValueError("ambient_min exceeds the smallest atom value")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "ambient_min", float(self.ambient_min))

    @classmethod
    def from_atoms(cls, atoms, ambient_min=None) -> "DiscreteDistribution":
        v, p = zip(*atoms)
        v = np.asarray(v, dtype=float)
        p = np.asarray(p, dtype=float)
        if ambient_min is None:
            ambient_min = v[p > 0].min()
        return cls(v, p, ambient_min)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def mean(self) -> float:
        return float(self.probs @ self.values)

    def support_min(self) -> float:
        return float(self.values[self.probs > 0].min())

    def shifted(self, c: float) -> "DiscreteDistribution":
        return DiscreteDistribution(self.values + c, self.probs, self.ambient_min + c)


@dataclass(frozen=True)
class DualResult:
    value: float
    alpha_star: float


def truncate(values, alpha):
    """Componentwise ``min(v, alpha)``."""
    return np.minimum(values, alpha)


def _support_extrema(values, probs):
    live = probs > 0
    vmin = np.where(live, values, np.inf).min(axis=-1)
    vmax = np.where(live, values, -np.inf).max(axis=-1)
    return vmin, vmax


def tv_objective(values, probs, ambient_min, sigma, alpha):
    """E_p[(v)_alpha] - sigma/2 (alpha - ambient_min); ``alpha`` has shape (B, C)."""
    clipped = np.minimum(values[:, None, :], alpha[:, :, None])
    return (clipped * probs[:, None, :]).sum(axis=-1) - 0.5 * sigma * (alpha - ambient_min[:, None])


def chi2_objective(values, probs, sigma, alpha):
    """E_p[(v)_alpha] - sqrt(sigma Var_p[(v)_alpha]); ``alpha`` has shape (B, ...)."""
    extra = alpha.ndim - 1
    v = values.reshape(values.shape[:1] + (1,) * extra + values.shape[1:])
    p = probs.reshape(v.shape)
    clipped = np.minimum(v, alpha[..., None])
    mean = (clipped * p).sum(axis=-1)
    var = (((clipped - mean[..., None]) ** 2) * p).sum(axis=-1)
    return mean - np.sqrt(sigma * var)


def kl_objective(values, probs, vmin, sigma, alpha):
    """-alpha log E_p[exp(-v/alpha)] - alpha sigma, shifted by the support minimum.

    ``alpha`` has shape (B,) and must be positive. Zero-probability atoms are
    dropped; the sum of ``probs`` is taken to be exactly 1.
    """
    gaps = np.where(probs > 0, values - vmin[:, None], 0.0)
    tail = (probs * np.expm1(-gaps / alpha[:, None])).sum(axis=-1)
    return vmin - alpha * np.log1p(tail) - alpha * sigma


def _golden_max(f, lo, hi, steps=GOLDEN_STEPS):
    """Vectorised golden-section maximisation of a unimodal ``f`` on ``[lo, hi]``."""
    a, b = lo.copy(), hi.copy()
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(steps):
        right = f1 < f2
        # right: [a, b] <- [x1, b], old x2 becomes x1; else [a, x2], old x1 becomes x2
        a = np.where(right, x1, a)
        b = np.where(right, b, x2)
        probe = np.where(right, a + _INVPHI * (b - a), b - _INVPHI * (b - a))
        fnew = f(probe)
        x1, x2 = np.where(right, x2, probe), np.where(right, probe, x1)
        f1, f2 = np.where(right, f2, fnew), np.where(right, fnew, f1)
    best_x = np.where(f1 >= f2, x1, x2)
    return best_x, np.maximum(f1, f2)


def _solve_tv(values, probs, ambient_min, sigma):
    cand = np.sort(np.concatenate([values, ambient_min[:, None]], axis=1), axis=1)
    obj = tv_objective(values, probs, ambient_min, sigma, cand)
    k = obj.argmax(axis=1)  # first maximiser = smallest alpha, candidates are sorted
    rows = np.arange(len(values))
    return obj[rows, k], cand[rows, k]


def _solve_chi2(values, probs, sigma):
    B, M = values.shape
    vmin, vmax = _support_extrema(values, probs)
    # padding atoms (probability 0) take the row maximum so they add no breakpoints
    u = np.sort(np.where(probs > 0, values, vmax[:, None]), axis=1)
    cand_obj = chi2_objective(values, probs, sigma, u)
    best_k = cand_obj.argmax(axis=1)
    rows = np.arange(B)
    best_val, best_alpha = cand_obj[rows, best_k], u[rows, best_k]
    if M > 1:
        lo, hi = u[:, :-1], u[:, 1:]
        x, fx = _golden_max(lambda a: chi2_objective(values, probs, sigma, a), lo, hi)
        j = fx.argmax(axis=1)
        gx, gval = x[rows, j], fx[rows, j]
        better = gval > best_val
        best_val = np.where(better, gval, best_val)
        best_alpha = np.where(better, gx, best_alpha)
    return best_val, best_alpha


def _solve_kl(values, probs, sigma):
    vmin, vmax = _support_extrema(values, probs)
    span = vmax - vmin
    best_val, best_alpha = vmin.copy(), np.zeros_like(vmin)
    # alpha* <= (max v - min v)/sigma after shifting v by its support minimum.
    # The search runs over log(alpha): the bracket spans many decades for small
    # sigma, and the log keeps it finite for subnormal sigma.
    with np.errstate(divide="ignore"):
        log_span = np.log(span)
    log_hi = np.minimum(log_span - math.log(max(sigma, np.finfo(float).tiny)), _LOG_ALPHA_MAX)
    log_lo = np.log(GOLDEN_RTOL * (1.0 + span))
    live = log_hi > log_lo
    if np.any(live):
        p, m = probs[live], vmin[live]
        neg_gaps = -np.where(p > 0, values[live] - m[:, None], 0.0)

        def f(t):
            a = np.exp(t)
            tail = (p * np.expm1(neg_gaps / a[:, None])).sum(axis=-1)
            return m - a * (np.log1p(tail) + sigma)

        t, fx = _golden_max(f, log_lo[live], log_hi[live])
        better = fx > best_val[live]
        best_val[live] = np.where(better, fx, best_val[live])
        best_alpha[live] = np.where(better, np.exp(t), 0.0)
    return best_val, best_alpha


def solve_batch(values, probs, ambient_min, divergence, sigma):
    """Worst-case values and maximising duals for a batch of distributions.

    ``values`` and ``probs`` have shape ``(B, M)``; ``ambient_min`` shape ``(B,)``
    (only the TV objective reads it). Returns two ``(B,)`` arrays.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    ambient_min = np.broadcast_to(np.asarray(ambient_min, dtype=float), values.shape[:1])
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    divergence = Divergence(divergence)
    if values.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    if sigma == 0:
        vmin, vmax = _support_extrema(values, probs)
        alpha = vmin if divergence is Divergence.KL else vmax
        return (values * probs).sum(axis=1), np.where(divergence is Divergence.KL, 0.0, alpha)
    if divergence is Divergence.TV:
        return _solve_tv(values, probs, ambient_min, sigma)
    if divergence is Divergence.CHI2:
        return _solve_chi2(values, probs, sigma)
    return _solve_kl(values, probs, sigma)


def _solve_one(dist: DiscreteDistribution, divergence, sigma) -> DualResult:
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    val, alpha = solve_batch(dist.values[None], dist.probs[None], [dist.ambient_min],
                             divergence, sigma)
    return DualResult(float(val[0]), float(alpha[0]))


def worst_case_tv(dist: DiscreteDistribution, sigma: float) -> DualResult:
    return _solve_one(dist, Divergence.TV, sigma)


def worst_case_chi2(dist: DiscreteDistribution, sigma: float) -> DualResult:
    return _solve_one(dist, Divergence.CHI2, sigma)


def worst_case_kl(dist: DiscreteDistribution, sigma: float) -> DualResult:
    return _solve_one(dist, Divergence.KL, sigma)


def worst_case(dist: DiscreteDistribution, spec: UncertaintySpec) -> DualResult:
    return _solve_one(dist, spec.divergence, spec.sigma)


def compress_rows(values, probs):
    """Drop zero-probability columns, keeping a ``(B, M)`` layout with M minimal.

    ``values`` may be shared across rows (shape ``(K,)``). Padding slots get
    probability 0 and the row's largest support value.
    """
    probs = np.asarray(probs, dtype=float)
    values = np.broadcast_to(np.asarray(values, dtype=float), probs.shape)
    live = probs > 0
    m = max(int(live.sum(axis=1).max(initial=1)), 1)
    order = np.argsort(~live, axis=1, kind="stable")[:, :m]
    v = np.take_along_axis(values, order, axis=1)
    p = np.take_along_axis(probs, order, axis=1)
    keep = np.take_along_axis(live, order, axis=1)
    _, vmax = _support_extrema(v, p)
    return np.where(keep, v, vmax[:, None]), np.where(keep, p, 0.0)


# ---------------------------------------------------------------------------
# brute-force primal oracle


def divergence_value(q, p, divergence) -> np.ndarray:
    """rho(q, p) for rows of ``q`` (last axis indexes atoms).

    TV is measured as the full L1 distance ``||q - p||_1``: the sigma/2
    penalty of the TV dual is exact for that radius convention.
    """
    divergence = Divergence(divergence)
    if divergence is Divergence.TV:
        return np.abs(q - p).sum(axis=-1)
    live = p > 0
    ps = np.where(live, p, 1.0)
    if divergence is Divergence.CHI2:
        return np.where(live, (q - p) ** 2 / ps, 0.0).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log(q / ps), 0.0)
    return np.where(live, terms, 0.0).sum(axis=-1)


def _lattice_search(v, p, feasible, grid_step, coarse_step):
    """Refine a simplex lattice through ``p`` around the best feasible point."""
    d = v.size - 1

    # free coordinates are q[:d]; q[d] = p[d] - sum of offsets keeps q = p exact at 0
    def evaluate(offsets):
        head = p[:d] + offsets
        q = np.concatenate([head, (p[d] - offsets.sum(axis=1))[:, None]], axis=1)
        ok = (q >= 0).all(axis=1) & feasible(q)
        obj = np.where(ok, q @ v, np.inf)
        k = obj.argmin()
        return obj[k], offsets[k]

    h = coarse_step
    axes = [np.arange(math.floor(-p[i] / h), math.ceil((1 - p[i]) / h) + 1) * h for i in range(d)]
    grid = np.array(list(itertools.product(*axes)))
    best_val, best = evaluate(np.vstack([np.zeros((1, d)), grid]))
    window = np.array(list(itertools.product(range(-3, 4), repeat=d)), dtype=float)
    while h > grid_step:
        h = max(h / 3.0, grid_step)
        for _ in range(10_000):
            val, cand = evaluate(best + h * window)
            if not val < best_val:
                break
            best_val, best = val, cand
    return float(best_val)


def _ray_search(v, p, feasible, grid_step, n_dirs=1024, bisections=64):
    """Scan rays from ``p`` in the simplex plane, bisecting each to the boundary."""
    d = v.size
    # orthonormal basis of {x : sum(x) = 0}
    basis = np.linalg.qr(np.eye(d) - 1.0 / d)[0][:, : d - 1]

    def boundary_values(theta):
        if d == 2:
            dirs = np.sign(theta)[:, None] * basis[:, 0]
        else:
            dirs = np.cos(theta)[:, None] * basis[:, 0] + np.sin(theta)[:, None] * basis[:, 1]
        with np.errstate(divide="ignore"):
            reach = np.where(dirs < 0, p / -dirs, np.inf).min(axis=1)
        lo, hi = np.zeros_like(reach), reach.copy()
        for _ in range(bisections):
            mid = 0.5 * (lo + hi)
            ok = feasible(np.clip(p + mid[:, None] * dirs, 0.0, None))
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        edge_ok = feasible(np.clip(p + reach[:, None] * dirs, 0.0, None))
        lo = np.where(edge_ok, reach, lo)
        return np.clip(p + lo[:, None] * dirs, 0.0, None) @ v

    if d == 2:
        return float(boundary_values(np.array([1.0, -1.0])).min())
    width = 2.0 * math.pi
    theta = np.linspace(0.0, width, n_dirs, endpoint=False)
    obj = boundary_values(theta)
    best = obj.min()
    step = width / n_dirs
    while step > grid_step:
        centre = theta[obj.argmin()]
        theta = centre + np.linspace(-step, step, 65)
        obj = boundary_values(theta)
        best = min(best, obj.min())
        step /= 32.0
    return float(best)


def worst_case_oracle(dist: DiscreteDistribution, spec: UncertaintySpec,
                      grid_step: float = 1e-9, coarse_step: float = 0.02) -> float:
    """Primal brute force: minimum of ``q . v`` over explicitly checked feasible points.

    Every candidate ``q`` is tested against the divergence definition, so the
    result never falls below the true infimum; ``grid_step`` is the final
    resolution of the search.

    * TV: the ball is a polytope. A simplex lattice of spacing ``coarse_step``
      through ``p`` is scanned, then refined threefold around the incumbent
      down to ``grid_step``. The lattice covers the positive-mass atoms plus
      an extra atom at ``ambient_min``.
    * chi-square / KL: the ball lives on the support of ``p`` (at most three
      atoms, so at most a disc). Rays from ``p`` on an angular grid are
      bisected to the boundary of the ball (or of the simplex), and the angular
      grid is refined around the best ray until its spacing is below
      ``grid_step``.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    live = dist.probs > 0
    if live.sum() > 3:
        raise ValueError("oracle supports at most 3 atoms")
    div = spec.divergence
    sigma = spec.sigma
    if sigma == 0:
        # the ball is {p}; a feasibility test would admit rounding-level neighbours
        return dist.mean()
    v, p = dist.values[live], dist.probs[live]
    if div is Divergence.TV:
        # the adversary may also use the ambient minimiser, never a listed zero-mass atom
        if dist.ambient_min < v.min():
            v, p = np.append(v, dist.ambient_min), np.append(p, 0.0)
    if v.size == 1:
        return float(v[0])

    def feasible(q):
        return divergence_value(q, p, div) <= sigma

    if div is Divergence.TV:
        return _lattice_search(v, p, feasible, grid_step, coarse_step)
    return min(float(p @ v), _ray_search(v, p, feasible, grid_step))
