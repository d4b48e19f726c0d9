"""Benchmark MDPs: Garnet, recycling robot, 4x4 FrozenLake and gambler."""

from __future__ import annotations

import numpy as np

from .core import TabularMDP

GARNET_R_MAX = 200.0
GARNET_REDRAWS = 10
GARNET_REWARD_ATOMS = 10


def _point_mass_rewards(r):
    """Support and one-hot distributions for a deterministic reward table."""
    support, inverse = np.unique(r, return_inverse=True)
    dist = np.zeros(r.shape + (support.size,))
    np.put_along_axis(dist, inverse.reshape(r.shape + (1,)), 1.0, axis=-1)
    return support, dist


def _bernoulli_rewards(p_one, value=1.0):
    """Rewards ``value`` w.p. ``p_one`` and 0 otherwise, over the support {0, value}."""
    p_one = np.clip(p_one, 0.0, 1.0)
    return np.array([0.0, value]), np.stack([1.0 - p_one, p_one], axis=-1)


def garnet(num_states: int, num_actions: int, seed: int, gamma: float = 0.9,
           stochastic_reward: bool = False) -> TabularMDP:
    """Random Garnet instance.

    Per (s, a) the parameters ``omega, sigma, nu, psi ~ U[0, 100]`` are drawn,
    the kernel row is ``|N(omega, sigma)|`` normalised, and the reward is a
    single ``N(nu, psi)`` draw clipped to ``[0, 200]``. With
    ``stochastic_reward`` the reward is instead ``N(nu, psi)`` clipped and
    discretised onto 10 evenly spaced atoms of ``[0, 200]``.
    """
    if num_states < 1 or num_actions < 1:
        raise ValueError("garnet needs at least one state and one action")
    rng = np.random.default_rng(seed)
    S, A = num_states, num_actions
    params = rng.uniform(0.0, 100.0, size=(S, A, 4))
    omega, sigma, nu, psi = np.moveaxis(params, -1, 0)
    P = np.empty((S, A, S))
    for s in range(S):
        for a in range(A):
            for _ in range(GARNET_REDRAWS):
                raw = np.abs(rng.normal(omega[s, a], sigma[s, a], size=S))
                total = raw.sum()
                if total > 0:
                    break
            else:
                raise RuntimeError(f"garnet row ({s}, {a}) degenerate after {GARNET_REDRAWS} redraws")
            P[s, a] = raw / total
    if stochastic_reward:
        support = np.linspace(0.0, GARNET_R_MAX, GARNET_REWARD_ATOMS)
        edges = np.concatenate([[-np.inf], 0.5 * (support[1:] + support[:-1]), [np.inf]])
        # Monte Carlo histogram keeps this dependency-free; 4096 draws per row
        draws = rng.normal(nu[..., None], psi[..., None], size=(S, A, 4096))
        idx = np.searchsorted(edges, np.clip(draws, 0.0, GARNET_R_MAX), side="right") - 1
        dist = np.stack([(idx == k).mean(axis=-1) for k in range(support.size)], axis=-1)
        # drop atoms that no row uses so the support stays tight
        used = dist.sum(axis=(0, 1)) > 0
        support, dist = support[used], dist[..., used]
    else:
        r = np.clip(rng.normal(nu, psi), 0.0, GARNET_R_MAX)
        support, dist = _point_mass_rewards(r)
    return TabularMDP(P, support, dist, gamma, GARNET_R_MAX, name=f"garnet_{S}x{A}_seed{seed}")


LOW, HIGH = 0, 1
SEARCH, WAIT, RECHARGE = 0, 1, 2


def recycling_robot(alpha: float, beta: float, gamma: float = 0.9) -> TabularMDP:
    """Two battery levels {low, high}, actions {search, wait, recharge}.

    Searching earns 2 and waiting 1. Searching on a low battery keeps it low
    w.p. ``alpha``; otherwise the robot is rescued to high and earns 0 on that
    step, the nonnegative stand-in for the usual rescue penalty. Recharging
    earns 0 and leads to high.
    """
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    P = np.zeros((2, 3, 2))
    P[HIGH, SEARCH] = [1.0 - beta, beta]
    P[LOW, SEARCH] = [alpha, 1.0 - alpha]
    P[HIGH, WAIT, HIGH] = 1.0
    P[LOW, WAIT, LOW] = 1.0
    P[:, RECHARGE, HIGH] = 1.0
    support = np.array([0.0, 1.0, 2.0])
    dist = np.zeros((2, 3, 3))
    dist[HIGH, SEARCH, 2] = 1.0
    dist[LOW, SEARCH] = [1.0 - alpha, 0.0, alpha]
    dist[:, WAIT, 1] = 1.0
    dist[:, RECHARGE, 0] = 1.0
    return TabularMDP(P, support, dist, gamma, 2.0, name=f"robot_{alpha}_{beta}")


LAKE_SIZE = 4
LAKE_HOLES = ((1, 1), (1, 3), (2, 3), (3, 0))
LAKE_GOAL = (3, 3)
LAKE_START = (0, 0)
# up, down, left, right as (row, col) offsets
LAKE_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
_PERPENDICULAR = {0: (2, 3), 1: (2, 3), 2: (0, 1), 3: (0, 1)}


def lake_state(row: int, col: int) -> int:
    return row * LAKE_SIZE + col


def frozen_lake_4x4(slip: float, gamma: float = 0.95) -> TabularMDP:
    """Classic 4x4 FrozenLake with reflecting walls.

    The intended move happens w.p. ``1 - slip``; otherwise one of the two
    perpendicular moves, uniformly. Holes and the goal are absorbing. The
    reward is 1 on entering the goal, modelled per (s, a) as a Bernoulli with
    the probability of that transition.
    """
    if not 0.0 <= slip <= 1.0:
        raise ValueError(f"slip must lie in [0, 1], got {slip}")
    n = LAKE_SIZE
    S, A = n * n, len(LAKE_MOVES)
    absorbing = {lake_state(*h) for h in LAKE_HOLES} | {lake_state(*LAKE_GOAL)}
    P = np.zeros((S, A, S))
    for row in range(n):
        for col in range(n):
            s = lake_state(row, col)
            if s in absorbing:
                P[s, :, s] = 1.0
                continue
            for a in range(A):
                outcomes = [(a, 1.0 - slip)] + [(b, slip / 2.0) for b in _PERPENDICULAR[a]]
                for move, prob in outcomes:
                    dr, dc = LAKE_MOVES[move]
                    r2, c2 = row + dr, col + dc
                    if not (0 <= r2 < n and 0 <= c2 < n):
                        r2, c2 = row, col
                    P[s, a, lake_state(r2, c2)] += prob
    goal = lake_state(*LAKE_GOAL)
    p_goal = P[:, :, goal].copy()
    p_goal[goal] = 0.0
    support, dist = _bernoulli_rewards(p_goal)
    return TabularMDP(P, support, dist, gamma, 1.0, name=f"lake_{slip}")


def gambler(p_head: float, goal: int = 100, gamma: float = 0.99) -> TabularMDP:
    """Gambler's problem on capital 0..goal with stakes 1..goal//2.

    Action ``k - 1`` stakes ``k``; stakes above ``min(s, goal - s)`` are
    replaced by a stake of 1 so every state has the same action count.
    Reaching ``goal`` pays 1; states 0 and ``goal`` are absorbing.
    """
    if goal < 2:
        raise ValueError(f"goal must be at least 2, got {goal}")
    if not 0.0 < p_head < 1.0:
        raise ValueError(f"p_head must lie in (0, 1), got {p_head}")
    S, A = goal + 1, goal // 2
    P = np.zeros((S, A, S))
    win = np.zeros((S, A))
    P[0, :, 0] = 1.0
    P[goal, :, goal] = 1.0
    for s in range(1, goal):
        limit = min(s, goal - s)
        for a in range(A):
            k = a + 1 if a + 1 <= limit else 1
            P[s, a, s + k] += p_head
            P[s, a, s - k] += 1.0 - p_head
            if s + k == goal:
                win[s, a] = p_head
    support, dist = _bernoulli_rewards(win)
    return TabularMDP(P, support, dist, gamma, 1.0, name=f"gambler_{p_head}_{goal}")


def make_env(text: str) -> TabularMDP:
    """Build an environment from ``garnet:S,A,seed``, ``robot:a,b``, ``lake:slip``
    or ``gambler:p,goal``."""
    kind, _, args = text.partition(":")
    parts = [x.strip() for x in args.split(",")] if args.strip() else []
    try:
        if kind == "garnet" and len(parts) == 3:
            return garnet(int(parts[0]), int(parts[1]), int(parts[2]))
        if kind == "robot" and len(parts) == 2:
            return recycling_robot(float(parts[0]), float(parts[1]))
        if kind == "lake" and len(parts) == 1:
            return frozen_lake_4x4(float(parts[0]))
        if kind == "gambler" and len(parts) == 2:
            return gambler(float(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise ValueError(f"bad environment spec {text!r}: {exc}") from None
    raise ValueError(f"bad environment spec {text!r}; expected garnet:S,A,seed, "
                     "robot:a,b, lake:slip or gambler:p,goal")
