"""Finite MDPs, epsilon-greedy policies, and induced-chain stationary analysis.

The model is the usual tuple of a finite state space, finite action space,
transition kernel P(s'|s,a), reward r(s,a,s'), and a discount in [0, 1).
Policies are deterministic state-to-action maps, optionally softened into
epsilon-greedy mixtures.  The induced state chain of a stochastic policy and
its stationary distribution are the quantities everything downstream (region
dynamics, stochastic sampling) is built on.

All containers are frozen dataclasses holding read-only numpy arrays, so
instances are safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import NotErgodic

if TYPE_CHECKING:
    from .partition import FeatureMap


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FiniteMdp:
    """A finite MDP with dense transition and reward tensors.

    ``trans[s, a, s']`` is the probability of moving to ``s'`` when playing
    action ``a`` in state ``s``; each ``trans[s, a]`` slice must be a
    probability distribution.  ``reward[s, a, s']`` is the one-step reward on
    that transition (per-(s, a) reward vectors can be broadcast into this
    shape by the fixture loader).
    """

    trans: np.ndarray
    reward: np.ndarray
    gamma: float
    name: str = ""
    tol: Tolerances = field(default=DEFAULT_TOLERANCES, repr=False)

    def __post_init__(self):
        trans = _freeze(self.trans)
        reward = _freeze(self.reward)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "reward", reward)
        if trans.ndim != 3 or trans.shape[0] != trans.shape[2]:
            raise ValueError(f"trans must have shape (S, A, S), got {trans.shape}")
        if reward.shape != trans.shape:
            raise ValueError(
                f"reward shape {reward.shape} does not match trans shape {trans.shape}"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if np.any(trans < 0.0):
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = trans.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > self.tol.prob_row_sum:
            raise ValueError("each trans[s, a] slice must sum to 1")
        if not np.all(np.isfinite(reward)):
            raise ValueError("rewards must be finite")

    @property
    def n_states(self) -> int:
        return self.trans.shape[0]

    @property
    def n_actions(self) -> int:
        return self.trans.shape[1]

    @property
    def reward_bound(self) -> float:
        """Largest absolute one-step reward."""
        return float(np.max(np.abs(self.reward)))

    def expected_reward(self) -> np.ndarray:
        """Expected reward per (s, a), flattened with the s * |A| + a convention."""
        return np.einsum("sap,sap->sa", self.trans, self.reward).reshape(-1)


@dataclass(frozen=True)
class DeterministicPolicy:
    """A state-to-action map, stored as a tuple so it hashes and compares."""

    actions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    def action(self, state: int) -> int:
        return self.actions[state]

    def validate(self, mdp: FiniteMdp) -> None:
        if len(self.actions) != mdp.n_states:
            raise ValueError("policy must assign an action to every state")
        if any(a < 0 or a >= mdp.n_actions for a in self.actions):
            raise ValueError("policy action index out of range")

    def code(self, n_actions: int) -> int:
        """Lexicographic integer id: sum of a(s) * |A|^s, stable across runs."""
        return sum(a * n_actions**s for s, a in enumerate(self.actions))


@dataclass(frozen=True)
class EpsGreedyPolicy:
    """Epsilon-greedy softening of a deterministic base policy.

    The base action is played with probability 1 - eps * (1 - 1/|A|); every
    other action gets eps / |A|.
    """

    base: DeterministicPolicy
    eps: float

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must be in [0, 1], got {self.eps}")

    def action_probs(self, n_actions: int) -> np.ndarray:
        """(S, A) table of action probabilities; rows sum to 1."""
        n_states = len(self.base.actions)
        probs = np.full((n_states, n_actions), self.eps / n_actions)
        for s, a in enumerate(self.base.actions):
            probs[s, a] = 1.0 - self.eps * (1.0 - 1.0 / n_actions)
        return probs


@dataclass(frozen=True)
class StationaryDistribution:
    """Left fixed point of a state chain, with the residual it was accepted at."""

    dist: np.ndarray
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "dist", _freeze(self.dist))


def induced_state_chain(mdp: FiniteMdp, pol: EpsGreedyPolicy) -> np.ndarray:
    """State-to-state transition matrix under the given stochastic policy.

    M[s, s'] = sum over a of pi(a|s) * trans[s, a, s'].
    """
    probs = pol.action_probs(mdp.n_actions)
    return np.einsum("sa,sap->sp", probs, mdp.trans)


def stationary_distribution(
    chain: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES
) -> StationaryDistribution:
    """Unique stationary distribution of a row-stochastic state chain.

    Solves the augmented least-squares system [M^T - I; 1^T] d = [0; 1] and
    verifies the result.  Raises :class:`NotErgodic` when the fixed point is
    not unique (the null space of M^T - I has dimension other than one) or
    when some entry is not strictly positive, i.e. the chain is reducible.
    Periodic but irreducible chains are accepted; only the fixed point
    matters here.
    """
    chain = np.asarray(chain, dtype=float)
    n = chain.shape[0]
    if chain.shape != (n, n):
        raise ValueError("chain must be square")

    core = chain.T - np.eye(n)
    sv = np.linalg.svd(core, compute_uv=False)
    null_dim = int(np.sum(sv <= 1e-10 * max(1.0, sv[0])))
    if null_dim != 1:
        raise NotErgodic(
            f"stationary distribution is not unique (null space dimension {null_dim})"
        )

    lhs = np.vstack([core, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    d, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)

    if np.any(d <= tol.stationary_min_entry):
        raise NotErgodic(
            "chain is reducible: some stationary entry is not strictly positive"
        )
    d = d / d.sum()
    residual = float(np.max(np.abs(d @ chain - d)))
    if residual > tol.stationary_residual:
        raise NotErgodic(f"stationary residual {residual:.3e} exceeds tolerance")
    return StationaryDistribution(dist=d, residual=residual)


@dataclass(frozen=True)
class FeatureValidation:
    """Report on the feature matrix and reward bounds.

    ``feature_bound`` is the largest per-pair feature 2-norm, ``reward_bound``
    the largest absolute reward.  ``full_rank`` is False when the feature
    matrix has deficient column rank; violations are report fields, never
    exceptions.
    """

    rank: int
    n_features: int
    full_rank: bool
    feature_bound: float
    reward_bound: float


def validate_features(features: "FeatureMap", mdp: FiniteMdp) -> FeatureValidation:
    """Check the feature matrix's column rank and compute the norm bounds."""
    phi = features.phi
    if phi.shape[0] != mdp.n_states * mdp.n_actions:
        raise ValueError(
            f"feature matrix has {phi.shape[0]} rows, expected "
            f"{mdp.n_states * mdp.n_actions}"
        )
    rank = int(np.linalg.matrix_rank(phi))
    return FeatureValidation(
        rank=rank,
        n_features=phi.shape[1],
        full_rank=rank == phi.shape[1],
        feature_bound=float(np.max(np.linalg.norm(phi, axis=1))),
        reward_bound=mdp.reward_bound,
    )
