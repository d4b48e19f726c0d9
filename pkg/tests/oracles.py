"""Reference computations that share no code with the package solvers."""

import math

import numpy as np

from tmlmc.core import TabularMDP


def standard_vi(mdp, tol=1e-12, max_iter=200_000):
    """Non-robust value iteration on expected rewards, run to a tiny residual."""
    r = mdp.reward_dist @ mdp.reward_support
    q = np.zeros_like(r)
    for _ in range(max_iter):
        nxt = r + mdp.gamma * mdp.transition @ q.max(axis=1)
        if np.abs(nxt - q).max() < tol:
            return nxt
        q = nxt
    raise AssertionError("standard VI oracle did not converge")


def linear_policy_q(mdp, policy):
    """Non-robust Q^pi from one linear solve."""
    S = mdp.num_states
    r = mdp.reward_dist @ mdp.reward_support
    pi = np.asarray(policy)
    P_pi = mdp.transition[np.arange(S), pi]
    v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r[np.arange(S), pi])
    return r + mdp.gamma * mdp.transition @ v


def tv_two_point(p_high, low, high, sigma):
    """TV worst case for atoms {low: 1-p_high, high: p_high} with minimum at ``low``.

    The adversary moves sigma/2 of mass (L1 radius sigma) from high to low.
    """
    moved = min(p_high, sigma / 2.0)
    return low + (p_high - moved) * (high - low)


def binomial_pmf(n, p):
    logs = [math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            + k * math.log(p) + (n - k) * math.log1p(-p) for k in range(n + 1)]
    return np.exp(np.array(logs))


def two_state_instance(p_high=0.1, gamma=0.9):
    """One action, both rows ``(1 - p_high, p_high)``, zero point-mass reward.

    With ``Q = [[0], [1]]`` the next-state values are 0 and 1, so the TV
    worst case of an empirical distribution with ``k`` of ``n`` draws in the
    high state is ``max(0, k/n - sigma/2)``, except ``k = n`` where the only
    observed value is 1.
    """
    row = [1.0 - p_high, p_high]
    mdp = TabularMDP([[row], [row]], [0.0], [[[1.0]], [[1.0]]], gamma, 1.0, name="two_state")
    q = np.array([[0.0], [1.0]])
    return mdp, q


def expected_empirical_tv(n, p_high, sigma):
    """E[worst case over the empirical distribution of n draws] on the two-state instance."""
    pmf = binomial_pmf(n, p_high)
    k = np.arange(n + 1)
    vals = np.where(k == n, 1.0, np.maximum(0.0, k / n - sigma / 2.0))
    return float(pmf @ vals)
