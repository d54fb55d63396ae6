"""Fast on-policy learning loops for the two benchmark families.

A learner owns its iterates, its random stream and the current environment
state; ``advance`` runs many steps inside a compiled kernel that performs the
same per-step arithmetic as :mod:`adaptive_ac.algorithms`.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .algorithms import (
    DEFAULT_BURN_IN,
    EstimatorBank,
    LearnerState,
    checkpoint_dict,
    parse_checkpoint,
)
from .basis import CosineBasis, RbfBasis
from .environments import (
    REWARD_MODES,
    BlockRbfPolicy,
    GarnetInstance,
    MountainCarParams,
    UniformStream,
    garnet_actor_features,
    garnet_cdf,
    mountain_car_reset,
)
from .errors import ConfigError, NonFiniteUpdate
from .mdp import SoftmaxPolicy
from .schedule import StepSchedule

ALGORITHMS = {"abtd": K.ALG_ABTD, "abbe": K.ALG_ABBE, "abpbe": K.ALG_ABPBE}


def _alg_code(name):
    try:
        return ALGORITHMS[name]
    except KeyError:
        raise ConfigError(f"unknown algorithm {name!r}; expected one of {sorted(ALGORITHMS)}") from None


class _LearnerBase:
    def __init__(self, algorithm, schedule: StepSchedule, seed, basis, theta_len, theta_bounds,
                 state: LearnerState | None, s0, burn_in, printed):
        self.algorithm = algorithm
        self._alg = _alg_code(algorithm)
        self.schedule = schedule
        self.seed = seed
        self.basis = basis
        self.burn_in = int(burn_in)
        self.printed = bool(printed)
        if state is None:
            s_init = basis.initial_params() if s0 is None else np.asarray(s0, dtype=float)
            state = LearnerState(0.0, np.zeros(basis.num_features), np.zeros(theta_len), s_init.copy(), 0)
        self._eta, self._r, self._theta, self._s = state.arrays()
        self.n = state.step_count
        bank = EstimatorBank.zeros(basis.num_features, basis.num_params)
        self._bank = list(bank.arrays())
        self._bank_count = np.zeros(1, dtype=np.int64)
        self._th_lo = np.full(theta_len, float(theta_bounds[0]))
        self._th_hi = np.full(theta_len, float(theta_bounds[1]))
        self._s_lo, self._s_hi = basis.param_bounds()
        self._sched = schedule.arrays()

    @property
    def state(self) -> LearnerState:
        return LearnerState(float(self._eta[0]), self._r.copy(), self._theta.copy(), self._s.copy(), self.n)

    @property
    def bank(self) -> EstimatorBank:
        return EstimatorBank(*(a.copy() for a in self._bank), int(self._bank_count[0]))

    def set_bank(self, bank: EstimatorBank):
        self._bank = list(bank.arrays())
        self._bank_count[0] = bank.step_count

    def _check(self, status, done):
        if status:
            name = K.STATUS_NAMES[status]
            step = self.n + done - 1
            raise NonFiniteUpdate(f"{self.algorithm}: non-finite {name} iterate at step {step}",
                                  component=name, step=step)

    def _base_extra(self):
        return {"algorithm": self.algorithm, "stream": self._stream.position(),
                "burn_in": self.burn_in, "printed": self.printed}

    def checkpoint(self) -> dict:
        bank = self.bank if self._alg == K.ALG_ABPBE else None
        return checkpoint_dict(self.state, self.schedule, self.seed, bank, self._extra())


class GarnetLearner(_LearnerBase):
    """ABTD / ABBE / ABPBE on a Garnet instance with the cosine critic basis."""

    def __init__(self, instance: GarnetInstance, basis: CosineBasis, algorithm, schedule, seed, *,
                 actor_features=None, s0=None, state=None, reward_mode="state", x0=0,
                 burn_in=DEFAULT_BURN_IN, printed=False, theta_bounds=(-10.0, 10.0)):
        if reward_mode not in REWARD_MODES:
            raise ConfigError(f"reward_mode must be one of {REWARD_MODES}")
        mdp = instance.mdp
        if basis.num_states != mdp.num_states:
            raise ConfigError("basis and MDP disagree on the number of states")
        if actor_features is None:
            start = basis.initial_params() if s0 is None else np.asarray(s0, dtype=float)
            actor_features = garnet_actor_features(basis, start, mdp.num_actions)
        self.instance = instance
        self.actor_features = np.ascontiguousarray(actor_features, dtype=float)
        self.reward_mode = reward_mode
        self.theta_bounds = tuple(theta_bounds)
        super().__init__(algorithm, schedule, seed, basis, self.actor_features.shape[2], theta_bounds,
                         state, s0, burn_in, printed)
        self._cdf = garnet_cdf(mdp)
        self.x = int(x0)
        self._stream = UniformStream(seed, 4)

    def policy(self) -> SoftmaxPolicy:
        return SoftmaxPolicy(self._theta.copy(), self.actor_features, self.theta_bounds)

    def advance(self, steps: int, record=False):
        """Run ``steps`` transitions; with ``record`` return the (x, u, g, y) rows."""
        inst = self.instance
        recs = []
        left = int(steps)
        while left > 0:
            unif = self._stream.available()[:left]
            rec = np.empty((unif.shape[0] if record else 0, 4))
            x, done, status = K.garnet_chunk(
                self._alg, self.x, self.n, unif, self._cdf, inst.mdp.rewards, inst.mean_rewards,
                inst.sigma, self.reward_mode == "state-action", self.actor_features, self.basis.phases,
                self._eta, self._r, self._theta, self._s, *self._sched,
                self._th_lo, self._th_hi, self._s_lo, self._s_hi,
                *self._bank, self._bank_count, self.burn_in, self.printed, record, rec)
            self._check(status, done)
            self._stream.advance(done)
            self.x = int(x)
            self.n += done
            left -= done
            if record:
                recs.append(rec[:done])
        if record:
            return np.concatenate(recs) if recs else np.empty((0, 4))
        return None

    def _extra(self):
        extra = self._base_extra()
        extra.update({"x": self.x, "reward_mode": self.reward_mode})
        return extra

    @classmethod
    def from_checkpoint(cls, ckpt: dict, instance, basis, actor_features=None):
        cp = parse_checkpoint(ckpt)
        ex = cp.extra
        self = cls(instance, basis, ex["algorithm"], cp.schedule, cp.seed, actor_features=actor_features,
                   state=cp.state, reward_mode=ex["reward_mode"], x0=ex["x"], burn_in=ex["burn_in"],
                   printed=ex["printed"])
        if cp.bank is not None:
            self.set_bank(cp.bank)
        self._stream = UniformStream.from_position(ex["stream"])
        return self


class MountainCarLearner(_LearnerBase):
    """Actor-critic on the continuing mountain car with an RBF critic basis."""

    def __init__(self, params: MountainCarParams, basis: RbfBasis, algorithm, schedule, seed, *,
                 policy: BlockRbfPolicy | None = None, s0=None, state=None, position=None,
                 burn_in=DEFAULT_BURN_IN, printed=False):
        if tuple(basis.low) != tuple(params.low) or tuple(basis.high) != tuple(params.high):
            raise ConfigError("critic basis box must match the car's state box")
        self.params = params
        self.actor = policy or BlockRbfPolicy.grid(params)
        super().__init__(algorithm, schedule, seed, basis, len(self.actor.theta), self.actor.theta_bounds,
                         state, s0, burn_in, printed)
        init_ss, stream_ss = np.random.SeedSequence(seed).spawn(2)
        if position is None:
            position = mountain_car_reset(np.random.default_rng(init_ss).random(), params)
        self._pos = np.array(position, dtype=float)
        self._ep_len = np.zeros(1, dtype=np.int64)
        self._stream = UniformStream(stream_ss, 2)
        self._lo = np.array(params.low)
        self._span = np.array(params.high) - self._lo

    @property
    def position(self):
        return tuple(self._pos)

    def policy(self) -> BlockRbfPolicy:
        return self.actor.with_theta(self._theta.copy())

    def _run(self, max_steps, max_episodes, record):
        lengths_all, recs = [], []
        steps_done = eps_done = 0
        while steps_done < max_steps and eps_done < max_episodes:
            unif = self._stream.available()[:max_steps - steps_done]
            lengths = np.zeros(unif.shape[0] + 1, dtype=np.int64)
            rec = np.empty((unif.shape[0] if record else 0, 6))
            done, eps, status = K.mc_chunk(
                self._alg, self._pos, self._ep_len, self.n, unif, self.params.dynamics_array(),
                np.array(self.params.start), self.params.max_episode_steps, self._lo, self._span,
                self.actor.actor_params, self._eta, self._r, self._theta, self._s, *self._sched,
                self._th_lo, self._th_hi, self._s_lo, self._s_hi,
                *self._bank, self._bank_count, self.burn_in, self.printed,
                lengths, max_episodes - eps_done, record, rec)
            self._check(status, done)
            self._stream.advance(done)
            self.n += done
            steps_done += done
            eps_done += eps
            lengths_all.append(lengths[:eps])
            if record:
                recs.append(rec[:done])
        lengths = np.concatenate(lengths_all) if lengths_all else np.zeros(0, dtype=np.int64)
        if record:
            return lengths, (np.concatenate(recs) if recs else np.empty((0, 6)))
        return lengths

    def advance(self, steps: int, record=False):
        """Run ``steps`` transitions; returns lengths of episodes finished meanwhile."""
        return self._run(int(steps), np.iinfo(np.int64).max // 2, record)

    def run_episodes(self, episodes: int, max_steps=None):
        """Run until ``episodes`` more episodes finish; returns their lengths."""
        limit = np.iinfo(np.int64).max // 2 if max_steps is None else int(max_steps)
        return self._run(limit, int(episodes), False)

    def _extra(self):
        extra = self._base_extra()
        extra.update({"position": [float(v) for v in self._pos], "episode_steps": int(self._ep_len[0])})
        return extra

    @classmethod
    def from_checkpoint(cls, ckpt: dict, params, basis, policy=None):
        cp = parse_checkpoint(ckpt)
        ex = cp.extra
        self = cls(params, basis, ex["algorithm"], cp.schedule, cp.seed, policy=policy, state=cp.state,
                   position=ex["position"], burn_in=ex["burn_in"], printed=ex["printed"])
        if cp.bank is not None:
            self.set_bank(cp.bank)
        self._ep_len[0] = ex["episode_steps"]
        self._stream = UniformStream.from_position(ex["stream"])
        return self


class SarsaLearner:
    """Episodic SARSA(0) with epsilon-greedy actions over a fixed RBF grid."""

    def __init__(self, params: MountainCarParams, seed, *, per_axis=8, alpha=0.05, gamma=1.0, epsilon=0.0):
        self.params = params
        self.basis = RbfBasis(per_axis * per_axis, params.low, params.high)
        self.basis_params = self.basis.grid_params()
        self.weights = np.zeros((3, self.basis.num_features))
        self.alpha, self.gamma, self.epsilon = float(alpha), float(gamma), float(epsilon)
        init_ss, stream_ss = np.random.SeedSequence(seed).spawn(2)
        self._pos = np.array(mountain_car_reset(np.random.default_rng(init_ss).random(), params), dtype=float)
        self._ep_len = np.zeros(1, dtype=np.int64)
        self._action = np.full(1, -1, dtype=np.int64)
        self._stream = UniformStream(stream_ss, 3)
        self._lo = np.array(params.low)
        self._span = np.array(params.high) - self._lo

    def run_episodes(self, episodes: int):
        out = []
        left = int(episodes)
        while left > 0:
            unif = self._stream.available()
            lengths = np.zeros(unif.shape[0] + 1, dtype=np.int64)
            done, eps = K.sarsa_chunk(
                self._pos, self._ep_len, self._action, unif, self.params.dynamics_array(),
                np.array(self.params.start), self.params.max_episode_steps, self._lo, self._span,
                self.basis_params, self.weights, self.alpha, self.gamma, self.epsilon, lengths, left)
            self._stream.advance(done)
            out.append(lengths[:eps])
            left -= eps
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def sarsa_baseline_step(weights, phi, u, reward, phi_next, u_next, done, alpha, gamma=1.0):
    """One SARSA(0) update on linear Q-weights (shape (U, K)); returns new weights."""
    w = np.array(weights, dtype=float)
    K.sarsa_update(w, np.asarray(phi, dtype=float), int(u), float(reward),
                   np.asarray(phi_next, dtype=float), int(u_next), bool(done), float(alpha), float(gamma))
    return w


def epsilon_greedy(q, epsilon, rng):
    """Action index from an epsilon-greedy rule using two uniforms from ``rng``."""
    u1, u2 = rng.random(2)
    return int(K.epsilon_greedy(np.asarray(q, dtype=float), float(epsilon), u1, u2))
