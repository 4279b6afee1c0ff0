"""Per-region affine dynamics of the learning update.

Inside one greedy region the expected update direction is affine, b - A theta,
with b and A assembled from the transition kernel, the exploration policies,
and the stationary distribution of the induced chain.  This module builds
those pieces, their landmarks (the affine flow's fixed points A^-1 b), the
self-consistency flags, and the definiteness/stability diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import SingularDynamics
from .mdp import DeterministicPolicy, EpsGreedyPolicy, FiniteMdp, \
    induced_state_chain, stationary_distribution
from .partition import FeatureMap, GreedyRegion, _policy_halfspaces


@dataclass(frozen=True)
class AlgorithmConfig:
    """Exploration rates of the behavior (eps) and target (eps_prime) policies.

    eps_prime = 0 recovers Q-learning; eps_prime = eps recovers SARSA(0).
    """

    eps: float
    eps_prime: float

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must be in (0, 1], got {self.eps}")
        if not 0.0 <= self.eps_prime <= 1.0:
            raise ValueError(f"eps_prime must be in [0, 1], got {self.eps_prime}")

    @classmethod
    def q_learning(cls, eps: float) -> "AlgorithmConfig":
        return cls(eps=eps, eps_prime=0.0)

    @classmethod
    def sarsa(cls, eps: float) -> "AlgorithmConfig":
        return cls(eps=eps, eps_prime=eps)

    @property
    def label(self) -> str:
        if self.eps_prime == 0.0:
            return "q-learning"
        if self.eps_prime == self.eps:
            return "sarsa"
        return "generic"


@dataclass(frozen=True)
class PieceDynamics:
    """Affine drift b - A theta active on one greedy region."""

    policy: DeterministicPolicy
    b: np.ndarray
    A: np.ndarray
    #: fixed point A^-1 b, or None when A could not be inverted
    landmark: np.ndarray | None
    #: smallest eigenvalue of the symmetric part (A + A^T)/2
    pd_margin: float
    #: landmark lies in the closure of the piece's own greedy region
    self_consistent: bool
    #: landmark lies strictly inside that region
    landmark_interior: bool
    #: stationary state distribution of the induced behavior chain
    stationary: np.ndarray

    def drift(self, theta: np.ndarray) -> np.ndarray:
        return self.b - self.A @ theta


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def build_piece(
    mdp: FiniteMdp,
    features: FeatureMap,
    policy: DeterministicPolicy,
    cfg: AlgorithmConfig,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> PieceDynamics:
    """Assemble the affine dynamics induced by one greedy policy.

    The weighting matrix D is diagonal over (s, a) pairs with entries
    d(s) * pi_eps(a|s), where d is the stationary distribution of the state
    chain induced by the eps-greedy behavior policy.  The target kernel P'
    couples (s, a) to (s', a') through the transition kernel and the
    eps_prime-greedy policy.  Then b = Phi^T D rbar and
    A = Phi^T D (I - gamma P') Phi.
    """
    policy.validate(mdp.n_states, mdp.n_actions)
    n_sa = mdp.n_states * mdp.n_actions

    behavior = EpsGreedyPolicy(policy, cfg.eps)
    chain = induced_state_chain(mdp, behavior)
    stat = stationary_distribution(chain, tol)

    probs = behavior.action_probs(mdp.n_actions)
    d_diag = (stat.dist[:, None] * probs).reshape(n_sa)

    target_probs = EpsGreedyPolicy(policy, cfg.eps_prime).action_probs(mdp.n_actions)
    # P'[(s,a),(s',a')] = P(s'|s,a) * pi'(a'|s')
    p_target = np.einsum("sap,pq->sapq", mdp.trans, target_probs).reshape(n_sa, n_sa)

    rbar = mdp.expected_reward()
    phi = features.phi
    b = phi.T @ (d_diag * rbar)
    A = (phi.T * d_diag) @ (np.eye(n_sa) - mdp.gamma * p_target) @ phi

    sym_eigs = np.linalg.eigvalsh(0.5 * (A + A.T))
    pd_margin = float(sym_eigs[0])

    landmark = None
    if pd_margin > 0.0:
        landmark = np.linalg.solve(A, b)
        residual = np.linalg.norm(A @ landmark - b)
        if residual > tol.linear_solve_residual * (1.0 + np.linalg.norm(b)):
            raise SingularDynamics(
                f"landmark solve residual {residual:.3e} for policy {policy.actions}"
            )
    else:
        try:
            landmark = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            landmark = None

    self_consistent = False
    landmark_interior = False
    if landmark is not None:
        region = GreedyRegion(
            policy=policy, halfspaces=_policy_halfspaces(policy, features)
        )
        margin = region.closure_margin(landmark)
        scale = tol.boundary_proximity * (1.0 + float(np.linalg.norm(landmark)))
        self_consistent = margin >= -scale
        landmark_interior = margin > scale

    return PieceDynamics(
        policy=policy,
        b=_frozen(b),
        A=_frozen(A),
        landmark=None if landmark is None else _frozen(landmark),
        pd_margin=pd_margin,
        self_consistent=self_consistent,
        landmark_interior=landmark_interior,
        stationary=_frozen(stat.dist),
    )


def build_pieces(
    mdp: FiniteMdp,
    features: FeatureMap,
    policies: list[DeterministicPolicy],
    cfg: AlgorithmConfig,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> dict[DeterministicPolicy, PieceDynamics]:
    return {p: build_piece(mdp, features, p, cfg, tol) for p in policies}


@dataclass(frozen=True)
class DefinitenessReport:
    """Per-policy smallest symmetric-part eigenvalues; pass iff all positive."""

    margins: tuple[tuple[DeterministicPolicy, float], ...]
    ok: bool
    failing: tuple[DeterministicPolicy, ...]


def definiteness_report(pieces: list[PieceDynamics] | dict) -> DefinitenessReport:
    seq = list(pieces.values()) if isinstance(pieces, dict) else list(pieces)
    margins = tuple((p.policy, p.pd_margin) for p in seq)
    failing = tuple(p.policy for p in seq if p.pd_margin <= 0.0)
    return DefinitenessReport(margins=margins, ok=not failing, failing=failing)


def ges_margin(pieces: list[PieceDynamics] | dict) -> float:
    """min over pieces of the smallest eigenvalue of A + A^T.

    A positive value certifies that the origin of the scaled flow (offsets
    dropped, only -A theta drifts kept) is globally exponentially stable.
    """
    seq = list(pieces.values()) if isinstance(pieces, dict) else list(pieces)
    if not seq:
        raise ValueError("no pieces given")
    return min(2.0 * p.pd_margin for p in seq)


def growth_bound(features: FeatureMap, mdp: FiniteMdp) -> float:
    """Linear-growth constant of the piecewise drift:

    ||drift(theta)|| <= K(1 + ||theta||) with
    K = K_phi * (K_r + (1 + gamma) * K_phi),
    K_phi the largest feature-row norm and K_r the largest absolute reward.
    """
    k_phi = float(np.max(np.linalg.norm(features.phi, axis=1)))
    k_r = mdp.reward_bound
    return k_phi * (k_r + (1.0 + mdp.gamma) * k_phi)
