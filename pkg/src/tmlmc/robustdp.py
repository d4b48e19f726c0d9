"""Exact robust dynamic programming on the nominal model."""

from __future__ import annotations

import numpy as np

from .core import MinDomain, TabularMDP, UncertaintySpec, support_table
from .dual import solve_batch


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class RobustModel:
    """Nominal rows laid out for batched dual solves, plus the fixed reward term."""

    def __init__(self, mdp: TabularMDP, spec: UncertaintySpec):
        self.mdp = mdp
        self.spec = spec
        S, A = mdp.num_states, mdp.num_actions
        support, probs, _ = support_table(mdp.transition)
        self.next_states = support.reshape(S * A, -1)
        self.next_probs = probs.reshape(S * A, -1)
        self.robust_reward = self._worst(mdp.reward_support, support_table(mdp.reward_dist),
                                         ambient=mdp.reward_support.min()).reshape(S, A)

    def _worst(self, values, table, ambient):
        support, probs, _ = table
        v = values[support.reshape(-1, support.shape[-1])]
        p = probs.reshape(v.shape)
        if self.spec.min_domain is MinDomain.SUPPORT:
            ambient = np.where(p > 0, v, np.inf).min(axis=1)
        return solve_batch(v, p, ambient, self.spec.divergence, self.spec.sigma)[0]

    def worst_next_value(self, V, rows=None):
        """Worst-case expected ``V`` over each (flattened) ``(s, a)`` ball."""
        idx = self.next_states if rows is None else self.next_states[rows]
        p = self.next_probs if rows is None else self.next_probs[rows]
        v = V[idx]
        if self.spec.min_domain is MinDomain.SUPPORT:
            ambient = np.where(p > 0, v, np.inf).min(axis=1)
        else:
            ambient = np.full(len(v), V.min())
        return solve_batch(v, p, ambient, self.spec.divergence, self.spec.sigma)[0]

    def bellman(self, q):
        V = np.asarray(q, dtype=float).max(axis=1)
        return self.robust_reward + self.mdp.gamma * self.worst_next_value(V).reshape(q.shape)


def robust_bellman(q, mdp: TabularMDP, spec: UncertaintySpec) -> np.ndarray:
    return RobustModel(mdp, spec).bellman(np.asarray(q, dtype=float))


def _stop_threshold(tol, gamma):
    # ||Q_k+1 - Q*|| <= gamma/(1-gamma) ||Q_k+1 - Q_k|| <= tol/2
    return tol * (1.0 - gamma) / (2.0 * gamma)


def robust_value_iteration(mdp: TabularMDP, spec: UncertaintySpec, tol: float = 1e-8,
                           max_iter: int = 1_000_000, model: RobustModel | None = None):
    """Iterate the robust Bellman operator from Q = 0 to a certified ``tol``.

    Returns ``(Q, iterations)``; raises :class:`ConvergenceError` when
    ``max_iter`` is exhausted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    model = model or RobustModel(mdp, spec)
    threshold = _stop_threshold(tol, mdp.gamma)
    q = np.zeros((mdp.num_states, mdp.num_actions))
    residual = np.inf
    for k in range(1, max_iter + 1):
        q_next = model.bellman(q)
        residual = np.abs(q_next - q).max()
        q = q_next
        if residual <= threshold:
            return q, k
    raise ConvergenceError("robust value iteration did not converge", residual, max_iter)


def robust_policy_evaluation(policy, mdp: TabularMDP, spec: UncertaintySpec,
                             tol: float = 1e-8, max_iter: int = 1_000_000,
                             model: RobustModel | None = None) -> np.ndarray:
    """Robust Q-function of a deterministic policy.

    Iterates the policy's state values to the same certified tolerance as
    value iteration, then applies one full backup to obtain every ``Q(s, a)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    model = model or RobustModel(mdp, spec)
    S, A = mdp.num_states, mdp.num_actions
    policy = np.asarray(policy, dtype=np.intp)
    rows = np.arange(S) * A + policy
    reward = model.robust_reward.reshape(-1)[rows]
    threshold = _stop_threshold(tol, mdp.gamma)
    V = np.zeros(S)
    residual = np.inf
    for _ in range(max_iter):
        V_next = reward + mdp.gamma * model.worst_next_value(V, rows)
        residual = np.abs(V_next - V).max()
        V = V_next
        if residual <= threshold:
            break
    else:
        raise ConvergenceError("robust policy evaluation did not converge", residual, max_iter)
    return model.robust_reward + mdp.gamma * model.worst_next_value(V).reshape(S, A)


def policy_value(policy, mdp: TabularMDP, spec: UncertaintySpec, tol: float = 1e-8,
                 model: RobustModel | None = None) -> np.ndarray:
    """Robust state values ``V^pi(s) = Q^pi(s, pi(s))``."""
    q = robust_policy_evaluation(policy, mdp, spec, tol=tol, model=model)
    return q[np.arange(mdp.num_states), np.asarray(policy)]
