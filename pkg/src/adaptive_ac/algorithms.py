"""Adaptive-basis actor-critic updates, one transition at a time.

Each step function is pure: it copies the incoming state, advances every
iterate from the pre-step values and returns a new state. The arithmetic
lives in ``_kernels`` and is shared with the fast loops in ``runner``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from . import _kernels as K
from .errors import ColdEstimatorBank, DimensionMismatch, NonFiniteUpdate
from .schedule import StepSchedule

CHECKPOINT_FORMAT = "adaptive-ac-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_BURN_IN = 1000


class TransitionSample(NamedTuple):
    x: Any
    u: int
    g: float
    y: Any


@dataclass(frozen=True, eq=False)
class LearnerState:
    eta: float
    r: np.ndarray
    theta: np.ndarray
    s: np.ndarray
    step_count: int = 0

    @classmethod
    def initial(cls, basis, policy, s=None):
        """eta = 0, r = 0, theta = 0 (uniform policy), s at the basis default."""
        s0 = basis.initial_params() if s is None else np.asarray(s, dtype=float)
        return cls(0.0, np.zeros(basis.num_features), np.zeros(len(policy.theta)), s0.copy(), 0)

    def arrays(self):
        return (np.array([self.eta], dtype=float), np.array(self.r, dtype=float),
                np.array(self.theta, dtype=float), np.array(self.s, dtype=float))

    def to_dict(self):
        return {"eta": self.eta, "r": self.r.tolist(), "theta": self.theta.tolist(),
                "s": self.s.tolist(), "step_count": self.step_count}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["eta"]), np.array(d["r"], dtype=float), np.array(d["theta"], dtype=float),
                   np.array(d["s"], dtype=float), int(d["step_count"]))

    def same_as(self, other) -> bool:
        """Bitwise equality of all iterates."""
        return (self.step_count == other.step_count
                and np.array_equal(np.float64(self.eta), np.float64(other.eta))
                and all(np.array_equal(a, b) for a, b in
                        ((self.r, other.r), (self.theta, other.theta), (self.s, other.s))))


@dataclass(frozen=True, eq=False)
class EstimatorBank:
    """Running estimates of A, dA/ds_i, db/ds_i, w, dw/dr_i and dw/ds_i.

    ``w_r[i]`` and ``w_s[i]`` hold the i-th derivative vectors; ``A_s`` has
    shape (K_s, K_r, K_r) and ``b_s`` shape (K_s, K_r).
    """

    A: np.ndarray
    A_s: np.ndarray
    b_s: np.ndarray
    w: np.ndarray
    w_r: np.ndarray
    w_s: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, num_features, num_params):
        k, ks = num_features, num_params
        return cls(np.zeros((k, k)), np.zeros((ks, k, k)), np.zeros((ks, k)),
                   np.zeros(k), np.zeros((k, k)), np.zeros((ks, k)), 0)

    def arrays(self):
        return tuple(np.array(a, dtype=float) for a in
                     (self.A, self.A_s, self.b_s, self.w, self.w_r, self.w_s))

    def to_dict(self):
        names = ("A", "A_s", "b_s", "w", "w_r", "w_s")
        out = {n: getattr(self, n).tolist() for n in names}
        out["step_count"] = self.step_count
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[n], dtype=float) for n in ("A", "A_s", "b_s", "w", "w_r", "w_s")),
                   int(d["step_count"]))


def _theta_bounds(policy, k):
    lo, hi = policy.theta_bounds
    return np.full(k, float(lo)), np.full(k, float(hi))


def _raise_status(status, step):
    if status:
        name = K.STATUS_NAMES[status]
        raise NonFiniteUpdate(f"non-finite {name} iterate at step {step}", component=name, step=step)


def _terms(state, sample, basis, policy):
    phi = basis.features(state.s, sample.x)
    phi_next = basis.features(state.s, sample.y)
    psi = np.asarray(policy.with_theta(state.theta).likelihood_ratio(sample.x, sample.u), dtype=float)
    if psi.shape != state.theta.shape:
        raise DimensionMismatch("policy score and theta lengths differ")
    return phi, phi_next, psi


def td_error(sample: TransitionSample, state: LearnerState, basis) -> float:
    """d = g - eta + phi(y, s)'r - phi(x, s)'r at the current s."""
    phi = basis.features(state.s, sample.x)
    phi_next = basis.features(state.s, sample.y)
    return float(K.td_error(float(sample.g), float(state.eta), np.asarray(state.r, dtype=float),
                            phi, phi_next))


def _finish(eta, r, theta, s, state):
    return LearnerState(float(eta[0]), r, theta, s, state.step_count + 1)


def abtd_step(state: LearnerState, sample: TransitionSample, sched: StepSchedule, basis, policy) -> LearnerState:
    """Adaptive-basis TD: critic and actor as usual, basis by the bootstrapped gradient."""
    phi, phi_next, psi = _terms(state, sample, basis, policy)
    jtr = basis.jtr(state.s, sample.x, state.r)
    eta, r, theta, s = state.arrays()
    a = sched.alpha(state.step_count)
    th_lo, th_hi = _theta_bounds(policy, len(theta))
    s_lo, s_hi = basis.param_bounds()
    status = K.abtd_update(eta, r, theta, s, phi, phi_next, jtr, psi, float(sample.g), a,
                           th_lo, th_hi, s_lo, s_hi)
    _raise_status(status, state.step_count)
    return _finish(eta, r, theta, s, state)


def abbe_step(state: LearnerState, sample: TransitionSample, sched: StepSchedule, basis, policy) -> LearnerState:
    """Adaptive basis for the Bellman error: gradient descent on 0.5 E[d^2] in r and s."""
    phi, phi_next, psi = _terms(state, sample, basis, policy)
    jtr = basis.jtr(state.s, sample.x, state.r)
    jtr_next = basis.jtr(state.s, sample.y, state.r)
    eta, r, theta, s = state.arrays()
    a = sched.alpha(state.step_count)
    th_lo, th_hi = _theta_bounds(policy, len(theta))
    s_lo, s_hi = basis.param_bounds()
    status = K.abbe_update(eta, r, theta, s, phi, phi_next, jtr, jtr_next, psi, float(sample.g), a,
                           th_lo, th_hi, s_lo, s_hi)
    _raise_status(status, state.step_count)
    return _finish(eta, r, theta, s, state)


def abpbe_estimator_step(bank: EstimatorBank, sample: TransitionSample, state: LearnerState,
                         sched: StepSchedule, basis, *, printed: bool = False) -> EstimatorBank:
    """Advance the estimator bank on the fastest scale.

    ``printed=True`` reproduces the recursions exactly as published (A
    estimated with the opposite sign, db/ds driven by g instead of g - eta).
    """
    phi = basis.features(state.s, sample.x)
    phi_next = basis.features(state.s, sample.y)
    J = basis.jacobian(state.s, sample.x)
    J_next = basis.jacobian(state.s, sample.y)
    A, A_s, b_s, w, w_r, w_s = bank.arrays()
    a4 = sched.alpha(state.step_count)[3]
    status = K.estimator_update(A, A_s, b_s, w, w_r, w_s, phi, phi_next, J, J_next,
                                float(sample.g), float(state.eta), np.asarray(state.r, dtype=float),
                                a4, printed)
    _raise_status(status, state.step_count)
    return EstimatorBank(A, A_s, b_s, w, w_r, w_s, bank.step_count + 1)


def abpbe_step(state: LearnerState, bank: EstimatorBank, sample: TransitionSample, sched: StepSchedule,
               basis, policy, *, burn_in: int = DEFAULT_BURN_IN, printed: bool = False) -> LearnerState:
    """Adaptive basis for the projected Bellman error: stochastic MSPBE descent in r and s."""
    if bank.step_count < burn_in:
        raise ColdEstimatorBank(f"estimator bank has {bank.step_count} updates, burn-in is {burn_in}")
    phi, phi_next, psi = _terms(state, sample, basis, policy)
    eta, r, theta, s = state.arrays()
    a = sched.alpha(state.step_count)
    th_lo, th_hi = _theta_bounds(policy, len(theta))
    s_lo, s_hi = basis.param_bounds()
    status = K.abpbe_update(eta, r, theta, s, phi, phi_next, psi, float(sample.g), a,
                            *bank.arrays(), printed, th_lo, th_hi, s_lo, s_hi)
    _raise_status(status, state.step_count)
    return _finish(eta, r, theta, s, state)


def average_reward_step(state: LearnerState, sample: TransitionSample, sched: StepSchedule) -> LearnerState:
    """Only the eta recursion; used while the ABPBE bank warms up."""
    a3 = sched.alpha(state.step_count)[2]
    eta = state.eta + a3 * (float(sample.g) - state.eta)
    if not np.isfinite(eta):
        raise NonFiniteUpdate("non-finite eta iterate", component="eta", step=state.step_count)
    return LearnerState(eta, state.r.copy(), state.theta.copy(), state.s.copy(), state.step_count + 1)


# ---------------------------------------------------------------------------
# checkpoints

def checkpoint_dict(state: LearnerState, sched: StepSchedule, seed, bank: EstimatorBank | None = None,
                    extra: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "schedule": sched.to_dict(),
        "state": state.to_dict(),
        "bank": None if bank is None else bank.to_dict(),
        "extra": extra or {},
    }


def save_checkpoint(path, state, sched, seed, bank=None, extra=None):
    """Write a JSON checkpoint; floats round-trip exactly through ``repr``."""
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(state, sched, seed, bank, extra), fh)


@dataclass
class Checkpoint:
    state: LearnerState
    schedule: StepSchedule
    seed: Any
    bank: EstimatorBank | None
    extra: dict = field(default_factory=dict)


def parse_checkpoint(d: dict) -> Checkpoint:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an adaptive-ac checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    bank = None if d["bank"] is None else EstimatorBank.from_dict(d["bank"])
    return Checkpoint(LearnerState.from_dict(d["state"]), StepSchedule.from_dict(d["schedule"]),
                      d["seed"], bank, d.get("extra", {}))


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        return parse_checkpoint(json.load(fh))
