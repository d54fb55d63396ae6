"""Benchmark problems: Garnet random MDPs and the mountain car.

Also holds the uniform random stream used by every sampler so that a run is
a deterministic function of its seed, independent of how it is chunked.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels as K
from .algorithms import TransitionSample
from .basis import CosineBasis, RbfBasis
from .errors import DimensionMismatch, InvalidAction, NonErgodicChain
from .mdp import FiniteMdp, SoftmaxPolicy, stationary_distribution

GARNET_FORMAT = "garnet"
GARNET_VERSION = 1


# ---------------------------------------------------------------------------
# random stream

class UniformStream:
    """Rows of ``width`` uniforms drawn in fixed-size blocks.

    The position (generator state at the block start plus an offset) is
    serialisable, so a run can be resumed bit-exactly.
    """

    def __init__(self, seed, width, block=1 << 16):
        self.width = int(width)
        self.block = int(block)
        self._rng = np.random.default_rng(seed)
        self._fill()

    def _fill(self):
        self._block_state = self._rng.bit_generator.state
        self._buf = self._rng.random((self.block, self.width))
        self._offset = 0

    def available(self) -> np.ndarray:
        """Unconsumed rows of the current block (refilled when exhausted)."""
        if self._offset >= self.block:
            self._fill()
        return self._buf[self._offset:]

    def advance(self, rows: int):
        if rows < 0 or self._offset + rows > self.block:
            raise ValueError("cannot advance past the current block")
        self._offset += rows

    def take(self, rows: int) -> np.ndarray:
        parts = []
        while rows > 0:
            buf = self.available()
            k = min(rows, buf.shape[0])
            parts.append(buf[:k])
            self.advance(k)
            rows -= k
        if not parts:
            return np.empty((0, self.width))
        return np.concatenate(parts)

    def position(self) -> dict:
        return {"state": self._block_state, "offset": self._offset,
                "width": self.width, "block": self.block}

    @classmethod
    def from_position(cls, pos: dict) -> "UniformStream":
        self = cls.__new__(cls)
        self.width = int(pos["width"])
        self.block = int(pos["block"])
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = pos["state"]
        self._fill()
        self._offset = int(pos["offset"])
        return self


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# Garnet

@dataclass(frozen=True)
class GarnetSpec:
    num_states: int
    num_actions: int
    branching: int
    sigma: float

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ValueError("Garnet needs at least one state and one action")
        if not 1 <= self.branching <= self.num_states:
            raise ValueError(f"branching {self.branching} outside 1..{self.num_states}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def to_dict(self):
        return {"X": self.num_states, "U": self.num_actions, "B": self.branching, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["X"]), int(d["U"]), int(d["B"]), float(d["sigma"]))

    def __str__(self):
        return f"garnet({self.num_states},{self.num_actions},{self.branching},{self.sigma:g})"


@dataclass(frozen=True, eq=False)
class GarnetInstance:
    spec: GarnetSpec
    seed: object
    mdp: FiniteMdp
    mean_rewards: np.ndarray  # per (state, action), drawn around the state reward

    @property
    def sigma(self):
        return self.spec.sigma

    def to_json(self, include_matrices=False) -> str:
        d = {"format": GARNET_FORMAT, "version": GARNET_VERSION,
             "spec": self.spec.to_dict(), "seed": _json_safe(self.seed)}
        if include_matrices:
            d["transitions"] = self.mdp.transitions.tolist()
            d["rewards"] = self.mdp.rewards.tolist()
            d["mean_rewards"] = self.mean_rewards.tolist()
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "GarnetInstance":
        d = json.loads(text)
        if d.get("format") != GARNET_FORMAT or d.get("version") != GARNET_VERSION:
            raise ValueError("not a version-1 Garnet description")
        inst = generate_garnet(GarnetSpec.from_dict(d["spec"]), d["seed"])
        if "transitions" in d:
            same = (np.array_equal(inst.mdp.transitions, np.array(d["transitions"]))
                    and np.array_equal(inst.mdp.rewards, np.array(d["rewards"]))
                    and np.array_equal(inst.mean_rewards, np.array(d["mean_rewards"])))
            if not same:
                raise ValueError("stored matrices do not match regeneration from the seed")
        return inst


def generate_garnet(spec: GarnetSpec, seed) -> GarnetInstance:
    """Random MDP: N(0,1) state rewards, B random successors per (x, u) with
    probabilities from sorted uniform cut points, and per-(x, u) mean rewards
    N(g(x), sigma^2)."""
    rng = np.random.default_rng(seed)
    X, U, B = spec.num_states, spec.num_actions, spec.branching
    g = rng.standard_normal(X)
    P = np.zeros((U, X, X))
    for x in range(X):
        for u in range(U):
            succ = rng.choice(X, size=B, replace=False)
            cuts = np.sort(rng.random(B - 1))
            P[u, x, succ] = np.diff(np.concatenate(([0.0], cuts, [1.0])))
    mean_rewards = g[:, None] + spec.sigma * rng.standard_normal((X, U))
    return GarnetInstance(spec, seed, FiniteMdp(P, g), mean_rewards)


def generate_ergodic_garnet(spec: GarnetSpec, seed, max_tries=1000) -> GarnetInstance:
    """First instance along a deterministic seed sequence whose policy-induced
    chain has a unique stationary distribution (the support of the chain does
    not depend on theta for softmax policies)."""
    base = [int(v) for v in np.atleast_1d(seed)]
    for attempt in range(max_tries):
        trial = base if attempt == 0 else base + [attempt]
        inst = generate_garnet(spec, trial if len(trial) > 1 else trial[0])
        P = inst.mdp.transitions.mean(axis=0)
        try:
            stationary_distribution(P)
        except NonErgodicChain:
            continue
        return inst
    raise NonErgodicChain(f"no ergodic {spec} found in {max_tries} attempts")


def garnet_actor_features(basis: CosineBasis, s0, num_actions: int) -> np.ndarray:
    """Block one-hot actor features xi(x, u) = (0, .., phi(x, s0), .., 0).

    Built once from the initial basis parameters and never updated.
    """
    N, k = basis.num_states, basis.num_features
    xi = np.zeros((N, num_actions, k * num_actions))
    for x in range(N):
        phi = basis.features(s0, x)
        for u in range(num_actions):
            xi[x, u, u * k:(u + 1) * k] = phi
    return xi


def garnet_cdf(mdp: FiniteMdp) -> np.ndarray:
    return np.ascontiguousarray(np.cumsum(mdp.transitions, axis=2))


REWARD_MODES = ("state", "state-action")


# ---------------------------------------------------------------------------
# mountain car

@dataclass(frozen=True)
class MountainCarParams:
    force: float = 0.001
    gravity: float = 0.0025
    p_min: float = -1.2
    p_max: float = 0.6
    v_max: float = 0.07
    goal: float = 0.5
    start: tuple[float, float] = (-1.2, 0.5)
    max_episode_steps: int = 1000

    def dynamics_array(self):
        return np.array([self.force, self.gravity, self.p_min, self.p_max, self.v_max, self.goal])

    @property
    def low(self):
        return (self.p_min, -self.v_max)

    @property
    def high(self):
        return (self.p_max, self.v_max)

    def to_dict(self):
        return {"force": self.force, "gravity": self.gravity, "p_min": self.p_min, "p_max": self.p_max,
                "v_max": self.v_max, "goal": self.goal, "start": list(self.start),
                "max_episode_steps": self.max_episode_steps}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "start" in d:
            d["start"] = tuple(d["start"])
        return cls(**d)


class MountainCarState(NamedTuple):
    position: float
    velocity: float


ACTIONS = (-1, 0, 1)


def mountain_car_step(state: MountainCarState, action: int, params: MountainCarParams = MountainCarParams()):
    """Returns (next state, reward, at_goal). Reward is -1 per step, 0 on reaching the goal."""
    if action not in ACTIONS:
        raise InvalidAction(f"action must be one of {ACTIONS}, got {action!r}")
    p, v, reward, at_goal = K.mc_dynamics(float(state[0]), float(state[1]), float(action),
                                          params.dynamics_array())
    return MountainCarState(p, v), reward, bool(at_goal)


def mountain_car_reset(u: float, params: MountainCarParams = MountainCarParams()) -> MountainCarState:
    """Start state for uniform draw ``u``: position uniform on ``params.start``, zero velocity."""
    lo, hi = params.start
    return MountainCarState(lo + u * (hi - lo), 0.0)


@dataclass(frozen=True, eq=False)
class BlockRbfPolicy:
    """Softmax over the three car actions with block one-hot RBF actor features."""

    actor_basis: RbfBasis
    actor_params: np.ndarray
    theta: np.ndarray
    theta_bounds: tuple[float, float] = (-10.0, 10.0)
    num_actions: int = 3

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.actor_basis.num_features * self.num_actions,):
            raise DimensionMismatch("theta length must be num_features * num_actions")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "actor_params", np.asarray(self.actor_params, dtype=float))

    @classmethod
    def grid(cls, params: MountainCarParams, per_axis=8, theta=None):
        basis = RbfBasis(per_axis * per_axis, params.low, params.high)
        th = np.zeros(basis.num_features * 3) if theta is None else theta
        return cls(basis, basis.grid_params(), th)

    def with_theta(self, theta):
        return BlockRbfPolicy(self.actor_basis, self.actor_params, theta, self.theta_bounds, self.num_actions)

    def _phi(self, x):
        return self.actor_basis.features(self.actor_params, x)

    def probs(self, x):
        return K.block_policy(self._phi(x), self.theta, self.num_actions)

    def likelihood_ratio(self, x, u):
        phi = self._phi(x)
        return K.block_score(phi, K.block_policy(phi, self.theta, self.num_actions), int(u))


# ---------------------------------------------------------------------------
# trajectories

def _dummy_bank(k, ks):
    return (np.zeros((k, k)), np.zeros((ks, k, k)), np.zeros((ks, k)),
            np.zeros(k), np.zeros((k, k)), np.zeros((ks, k)))


_ZERO_SCHED = (np.zeros(4), np.ones(4), np.ones(4))


def _garnet_samples(inst: GarnetInstance, policy: SoftmaxPolicy, horizon, seed, reward_mode, x0):
    if reward_mode not in REWARD_MODES:
        raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
    mdp = inst.mdp
    if policy.actor_features.shape[:2] != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatch("policy features do not match the MDP")
    stream = UniformStream(seed, 4)
    cdf = garnet_cdf(mdp)
    xi = np.ascontiguousarray(policy.actor_features)
    theta = np.array(policy.theta, dtype=float)
    k = theta.shape[0]
    phases = np.zeros((mdp.num_states, 1))
    x = int(x0)
    left = horizon
    while left > 0:
        unif = stream.available()[:left]
        rec = np.empty((unif.shape[0], 4))
        x, done, _ = K.garnet_chunk(
            K.ALG_ABTD, x, 0, unif, cdf, mdp.rewards, inst.mean_rewards, inst.sigma,
            reward_mode == "state-action", xi, phases,
            np.zeros(1), np.zeros(1), theta.copy(), np.zeros(1), *_ZERO_SCHED,
            np.full(k, -np.inf), np.full(k, np.inf), np.full(1, -np.inf), np.full(1, np.inf),
            *_dummy_bank(1, 1), np.zeros(1, dtype=np.int64), 0, False, True, rec)
        stream.advance(done)
        left -= done
        for row in rec[:done]:
            yield TransitionSample(int(row[0]), int(row[1]), float(row[2]), int(row[3]))


def _car_samples(params: MountainCarParams, policy: BlockRbfPolicy, horizon, seed, x0):
    stream = UniformStream(seed, 2)
    pos = np.array(x0 if x0 is not None else mountain_car_reset(0.5, params), dtype=float)
    ep_len = np.zeros(1, dtype=np.int64)
    lo = np.array(params.low)
    span = np.array(params.high) - lo
    theta = policy.theta.copy()
    k = theta.shape[0]
    dummy_s = np.array([0.5, 0.5, 1.0, 1.0])
    left = horizon
    while left > 0:
        unif = stream.available()[:left]
        rec = np.empty((unif.shape[0], 6))
        lengths = np.zeros(unif.shape[0], dtype=np.int64)
        done, _, _ = K.mc_chunk(
            K.ALG_ABTD, pos, ep_len, 0, unif, params.dynamics_array(), np.array(params.start),
            params.max_episode_steps, lo, span, policy.actor_params,
            np.zeros(1), np.zeros(1), theta, dummy_s.copy(), *_ZERO_SCHED,
            np.full(k, -np.inf), np.full(k, np.inf), np.full(4, -np.inf), np.full(4, np.inf),
            *_dummy_bank(1, 4), np.zeros(1, dtype=np.int64), 0, False,
            lengths, unif.shape[0] + 1, True, rec)
        stream.advance(done)
        left -= done
        for row in rec[:done]:
            yield TransitionSample(MountainCarState(row[0], row[1]), int(row[2]), float(row[3]),
                                    MountainCarState(row[4], row[5]))


def sample_trajectory(env, policy, horizon: int, seed, *, reward_mode="state", x0=None) -> Iterator:
    """On-policy stream of (x, u, g, y) transitions.

    Garnet rewards are g(x) plus N(0, sigma^2) noise, or the per-(x, u) mean
    reward plus noise in ``state-action`` mode. The car is a continuing
    chain: reaching the goal (or the episode cap) jumps straight to a fresh
    start state.
    """
    if isinstance(env, GarnetInstance):
        return _garnet_samples(env, policy, horizon, seed, reward_mode, 0 if x0 is None else x0)
    if isinstance(env, MountainCarParams):
        return _car_samples(env, policy, horizon, seed, x0)
    raise TypeError(f"unsupported environment {type(env).__name__}")
