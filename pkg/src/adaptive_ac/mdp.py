"""Finite average-reward MDPs, softmax policies and their exact quantities.

Everything here is dense linear algebra on small chains (N up to ~10^4).
These functions are the ground truth the stochastic learners are checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._kernels import softmax_score
from .errors import (
    DimensionMismatch,
    IdentityMismatch,
    NonErgodicChain,
    RankDeficientBasis,
    SingularSystem,
)

MAX_STATES = 10_000
_EIG_GAP = 1e-10
_COND_LIMIT = 1e12
_GRAM_MIN_EIG = 1e-10


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Per-action transition matrices ``transitions[u, x, y]`` and state rewards ``rewards[x]``."""

    transitions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        g = np.asarray(self.rewards, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise DimensionMismatch(f"transitions must have shape (U, N, N), got {P.shape}")
        if g.shape != (P.shape[1],):
            raise DimensionMismatch(f"rewards must have shape ({P.shape[1]},), got {g.shape}")
        if P.shape[1] > MAX_STATES:
            raise DimensionMismatch(f"at most {MAX_STATES} states supported")
        if np.any(P < 0):
            raise ValueError("transition matrices have negative entries")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if not np.all(np.isfinite(g)):
            raise ValueError("rewards must be finite")
        P.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", g)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[0]


def _softmax_rows(prefs: np.ndarray) -> np.ndarray:
    z = prefs - prefs.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Gibbs policy mu(u|x) proportional to exp(theta . xi(x, u)).

    ``actor_features`` has shape (N, U, K_theta).
    """

    theta: np.ndarray
    actor_features: np.ndarray
    theta_bounds: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        xi = np.asarray(self.actor_features, dtype=float)
        if xi.ndim != 3 or xi.shape[2] != theta.shape[0]:
            raise DimensionMismatch(
                f"actor features {xi.shape} incompatible with theta of length {theta.shape[0]}"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "actor_features", xi)

    @property
    def num_actions(self) -> int:
        return self.actor_features.shape[1]

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.actor_features, self.theta_bounds)

    def action_probabilities(self) -> np.ndarray:
        """Matrix of mu(u|x), shape (N, U)."""
        return _softmax_rows(self.actor_features @ self.theta)

    def probs(self, x: int) -> np.ndarray:
        return _softmax_rows(self.actor_features[x] @ self.theta)

    def likelihood_ratio(self, x: int, u: int) -> np.ndarray:
        """Score at (x, u) via the compiled kernel the fast loops use."""
        return softmax_score(self.actor_features[x], self.theta, int(u))[1]


class InducedChain(NamedTuple):
    transition: np.ndarray
    stationary: np.ndarray
    average_reward: float
    differential_value: np.ndarray
    recurrent_state: int


def induced_transition(mdp: FiniteMdp, policy: SoftmaxPolicy) -> np.ndarray:
    mu = policy.action_probabilities()
    if mu.shape != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatch("policy and MDP disagree on state/action counts")
    return np.einsum("xu,uxy->xy", mu, mdp.transitions)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left principal eigenvector of ``P``; raises if eigenvalue 1 is not simple."""
    vals, vecs = np.linalg.eig(P.T)
    order = np.argsort(np.abs(vals - 1.0))
    if len(vals) > 1 and abs(vals[order[1]] - 1.0) < _EIG_GAP:
        raise NonErgodicChain(
            f"eigenvalue 1 is not simple (next eigenvalue {vals[order[1]]:.3e})"
        )
    v = np.real(vecs[:, order[0]])
    v = v / v.sum()
    # One power step removes eigen-solver drift; clip roundoff negatives.
    v = np.clip(v @ P, 0.0, None)
    return v / v.sum()


def solve_differential_value(P, g, eta, anchor):
    n = P.shape[0]
    M = np.eye(n) - P
    rhs = g - eta
    M[anchor, :] = 0.0
    M[anchor, anchor] = 1.0
    rhs[anchor] = 0.0
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystem(f"anchored system condition number {cond:.3e}")
    return np.linalg.solve(M, rhs)


def induced_chain(mdp: FiniteMdp, policy: SoftmaxPolicy) -> InducedChain:
    P = induced_transition(mdp, policy)
    D = stationary_distribution(P)
    eta = float(D @ mdp.rewards)
    anchor = int(np.argmax(D))  # argmax breaks ties toward the lowest index
    J = solve_differential_value(P, mdp.rewards.copy(), eta, anchor)
    return InducedChain(P, D, eta, J, anchor)


def bellman_apply(chain: InducedChain, mdp: FiniteMdp, v) -> np.ndarray:
    """T v = g - eta + P_theta v."""
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.num_states,):
        raise DimensionMismatch(f"value vector must have length {mdp.num_states}")
    return mdp.rewards - chain.average_reward + chain.transition @ v


def td_errors(chain: InducedChain, mdp: FiniteMdp, v) -> np.ndarray:
    """Matrix of d(x, y) = g(x) - eta + v(y) - v(x)."""
    v = np.asarray(v, dtype=float)
    return (mdp.rewards - chain.average_reward - v)[:, None] + v[None, :]


def _gram(features, stationary):
    G = features.T @ (stationary[:, None] * features)
    lo = np.linalg.eigvalsh(G).min()
    if lo <= _GRAM_MIN_EIG:
        raise RankDeficientBasis(
            f"D-weighted Gram matrix has smallest eigenvalue {lo:.3e}",
            singular_values=np.linalg.svd(features, compute_uv=False),
        )
    return G


def projection_matrix(features, stationary) -> np.ndarray:
    """Pi = Phi (Phi' D Phi)^-1 Phi' D."""
    Phi = np.asarray(features, dtype=float)
    D = np.asarray(stationary, dtype=float)
    G = _gram(Phi, D)
    return Phi @ np.linalg.solve(G, Phi.T * D[None, :])


def likelihood_ratio(policy: SoftmaxPolicy, x: int, u: int) -> np.ndarray:
    """Score function grad log mu(u|x) = xi(x,u) - sum_u' mu(u'|x) xi(x,u')."""
    xi = policy.actor_features[x]
    return xi[u] - policy.probs(x) @ xi


def exact_policy_gradient(mdp, policy, value, chain) -> np.ndarray:
    """E[psi(x,u) d(x,y)] with the exact differential value ``value``."""
    mu = policy.action_probabilities()
    xi = policy.actor_features
    psi = xi - np.einsum("xu,xuk->xk", mu, xi)[:, None, :]
    d = td_errors(chain, mdp, value)
    # expected TD error after taking u in x
    dbar = np.einsum("uxy,xy->xu", mdp.transitions, d)
    return np.einsum("x,xu,xuk,xu->k", chain.stationary, mu, psi, dbar)


class TdMatrices(NamedTuple):
    A: np.ndarray  # E[phi (phi' - phi)^T]
    b: np.ndarray  # E[phi (g - eta)]
    C: np.ndarray  # E[phi phi^T]


def td_matrices(mdp, chain, features) -> TdMatrices:
    Phi = np.asarray(features, dtype=float)
    D = chain.stationary
    DPhi = D[:, None] * Phi
    A = DPhi.T @ (chain.transition @ Phi - Phi)
    b = DPhi.T @ (mdp.rewards - chain.average_reward)
    C = DPhi.T @ Phi
    return TdMatrices(A, b, C)


class Objectives(NamedTuple):
    mse: float
    msbe: float
    mspbe: float


def exact_objectives(mdp, policy, chain, features, r, *, tol=1e-9) -> Objectives:
    """MSE, MSBE and MSPBE of the linear value Phi r under the stationary law.

    MSPBE is computed both as ||Pi T(Phi r) - Phi r||_D^2 and as
    (Ar + b)' C^-1 (Ar + b); the two must agree.
    """
    Phi = np.asarray(features, dtype=float)
    r = np.asarray(r, dtype=float)
    D = chain.stationary
    v = Phi @ r
    err = v - chain.differential_value
    mse = 0.5 * float(D @ err**2)
    resid = bellman_apply(chain, mdp, v) - v
    msbe = 0.5 * float(D @ resid**2)

    Pi = projection_matrix(Phi, D)
    proj = Pi @ resid
    norm_form = float(D @ proj**2)
    A, b, C = td_matrices(mdp, chain, Phi)
    e = A @ r + b
    w_form = float(e @ np.linalg.solve(C, e))
    if abs(norm_form - w_form) > tol * max(1.0, abs(norm_form)):
        raise IdentityMismatch(f"MSPBE forms disagree: {norm_form!r} vs {w_form!r}")
    return Objectives(mse, msbe, w_form)


def mean_squared_td_error(mdp, chain, features, r) -> float:
    """0.5 E[d^2] with mean rewards: the objective the ABBE iterates descend."""
    v = np.asarray(features, dtype=float) @ np.asarray(r, dtype=float)
    d = td_errors(chain, mdp, v)
    return 0.5 * float(chain.stationary @ np.sum(chain.transition * d**2, axis=1))
