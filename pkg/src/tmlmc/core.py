"""Tabular MDP data model shared by the solvers, estimators and learner.

Q-tables are plain ``(num_states, num_actions)`` float arrays and policies are
integer arrays of length ``num_states``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STOCHASTIC_ATOL = 1e-9


class Divergence(str, enum.Enum):
    TV = "tv"
    CHI2 = "chi2"
    KL = "kl"


class MinDomain(str, enum.Enum):
    """Where the TV dual takes the minimum of the value function.

    ``SUPPORT`` uses the atoms of the distribution being perturbed (the
    nominal row for exact DP, the sampled next states for the estimator).
    ``AMBIENT`` uses every state (every reward in the declared support).
    """

    SUPPORT = "support"
    AMBIENT = "ambient"


@dataclass(frozen=True)
class UncertaintySpec:
    divergence: Divergence
    sigma: float
    min_domain: MinDomain = MinDomain.SUPPORT

    def __post_init__(self):
        object.__setattr__(self, "divergence", Divergence(self.divergence))
        object.__setattr__(self, "min_domain", MinDomain(self.min_domain))
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be a finite nonnegative number, got {self.sigma}")


def _check_rows(name: str, rows: np.ndarray) -> None:
    if np.any(rows < 0) or not np.all(np.isfinite(rows)):
        raise ValueError(f"{name} has negative or non-finite entries")
    err = np.abs(rows.sum(axis=-1) - 1.0).max(initial=0.0)
    if err > STOCHASTIC_ATOL:
        raise ValueError(f"{name} rows do not sum to 1 (max deviation {err:.3e})")


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP with a nominal kernel and finite-support reward distributions.

    ``transition[s, a]`` is the nominal next-state distribution and
    ``reward_dist[s, a]`` a distribution over ``reward_support``.
    Arrays are copied and made read-only at construction.
    """

    transition: np.ndarray
    reward_support: np.ndarray
    reward_dist: np.ndarray
    gamma: float
    r_max: float
    name: str = field(default="mdp", compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward_support, dtype=float).reshape(-1)
        mu = np.array(self.reward_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if mu.shape != P.shape[:2] + (R.size,):
            raise ValueError(f"reward_dist must have shape {P.shape[:2] + (R.size,)}, got {mu.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.r_max > 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        if R.size == 0 or np.any(R < 0) or np.any(R > self.r_max):
            raise ValueError("reward_support must be nonempty and lie in [0, r_max]")
        if np.unique(R).size != R.size:
            raise ValueError("reward_support entries must be distinct")
        _check_rows("transition", P)
        _check_rows("reward_dist", mu)
        for arr in (P, R, mu):
            arr.flags.writeable = False
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_support", R)
        object.__setattr__(self, "reward_dist", mu)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def q_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def expected_reward(self) -> np.ndarray:
        return self.reward_dist @ self.reward_support

    def with_gamma(self, gamma: float) -> "TabularMDP":
        return TabularMDP(self.transition, self.reward_support, self.reward_dist,
                          gamma, self.r_max, name=self.name)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "r_max": self.r_max,
            "transition": self.transition.tolist(),
            "reward_support": self.reward_support.tolist(),
            "reward_dist": self.reward_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, name: str = "mdp") -> "TabularMDP":
        mdp = cls(
            transition=data["transition"],
            reward_support=data["reward_support"],
            reward_dist=data["reward_dist"],
            gamma=data["gamma"],
            r_max=data["r_max"],
            name=name,
        )
        if (mdp.num_states, mdp.num_actions) != (data["num_states"], data["num_actions"]):
            raise ValueError("num_states/num_actions disagree with the transition array")
        return mdp


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def load_mdp(path) -> TabularMDP:
    path = Path(path)
    return TabularMDP.from_dict(json.loads(path.read_text()), name=path.stem)


def value_vector(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float).max(axis=-1)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximiser, i.e. the smallest index on ties
    return np.asarray(q).argmax(axis=-1)


def min_nonzero_entry(mdp: TabularMDP) -> float:
    positive = mdp.transition[mdp.transition > 0]
    if positive.size == 0:
        raise ValueError("transition kernel has no positive entry")
    return float(positive.min())


def support_table(rows):
    """Per-row support indices, probabilities and CDFs padded to a common width."""
    live = rows > 0
    width = int(live.sum(axis=-1).max())
    order = np.argsort(~live, axis=-1, kind="stable")[..., :width]
    probs = np.take_along_axis(rows, order, axis=-1)
    keep = np.take_along_axis(live, order, axis=-1)
    probs = np.where(keep, probs, 0.0)
    # pad with the row's last support index so padded slots map to a real atom
    last = np.take_along_axis(order, keep.sum(axis=-1, keepdims=True) - 1, axis=-1)
    support = np.where(keep, order, last)
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    cdf = np.where(keep, cdf, 1.0)
    return support, probs, cdf
