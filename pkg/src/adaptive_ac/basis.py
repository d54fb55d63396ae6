"""Adaptive bases phi(x, s): linear in the critic weights, nonlinear in s.

Two families are provided:

* ``CosineBasis`` for finite state sets, phi_d(x, s) = cos(x s / d + rho[x, d])
  with a single scalar frequency s and fixed random phases.
* ``RbfBasis`` for the two-dimensional mountain-car state, Gaussian bumps
  whose centers and per-axis widths are all adaptive.

The numeric kernels are numba functions so the fast learning loops can call
exactly the same code as the Python API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from numba import njit

from .errors import DimensionMismatch, InvalidState, RankDeficientBasis, WidthUnderflow


# ---------------------------------------------------------------------------
# kernels

@njit(cache=True)
def cosine_features(x, s, phases):
    k = phases.shape[1]
    out = np.empty(k)
    label = x + 1.0  # states are labelled 1..N in the feature formula
    for d in range(k):
        out[d] = math.cos(label * s[0] / (d + 1) + phases[x, d])
    return out


@njit(cache=True)
def cosine_jacobian(x, s, phases):
    k = phases.shape[1]
    out = np.empty((k, 1))
    label = x + 1.0
    for d in range(k):
        c = label / (d + 1)
        out[d, 0] = -c * math.sin(c * s[0] + phases[x, d])
    return out


@njit(cache=True)
def cosine_jtr(x, s, phases, r):
    """d/ds of phi(x, s)' r (length-1 vector)."""
    k = phases.shape[1]
    label = x + 1.0
    acc = 0.0
    for d in range(k):
        c = label / (d + 1)
        acc -= r[d] * c * math.sin(c * s[0] + phases[x, d])
    out = np.empty(1)
    out[0] = acc
    return out


@njit(cache=True)
def rbf_features(z, s):
    m = s.shape[0] // 4
    out = np.empty(m)
    for i in range(m):
        dp = (z[0] - s[i]) / s[2 * m + i]
        dv = (z[1] - s[m + i]) / s[3 * m + i]
        out[i] = math.exp(-dp * dp - dv * dv)
    return out


@njit(cache=True)
def rbf_jacobian(z, s):
    m = s.shape[0] // 4
    out = np.zeros((m, 4 * m))
    for i in range(m):
        wp = s[2 * m + i]
        wv = s[3 * m + i]
        ep = z[0] - s[i]
        ev = z[1] - s[m + i]
        f = math.exp(-(ep / wp) ** 2 - (ev / wv) ** 2)
        out[i, i] = f * 2.0 * ep / (wp * wp)
        out[i, m + i] = f * 2.0 * ev / (wv * wv)
        out[i, 2 * m + i] = f * 2.0 * ep * ep / (wp * wp * wp)
        out[i, 3 * m + i] = f * 2.0 * ev * ev / (wv * wv * wv)
    return out


@njit(cache=True)
def rbf_jtr(z, s, r):
    m = s.shape[0] // 4
    out = np.empty(4 * m)
    for i in range(m):
        wp = s[2 * m + i]
        wv = s[3 * m + i]
        ep = z[0] - s[i]
        ev = z[1] - s[m + i]
        f = r[i] * math.exp(-(ep / wp) ** 2 - (ev / wv) ** 2)
        out[i] = f * 2.0 * ep / (wp * wp)
        out[m + i] = f * 2.0 * ev / (wv * wv)
        out[2 * m + i] = f * 2.0 * ep * ep / (wp * wp * wp)
        out[3 * m + i] = f * 2.0 * ev * ev / (wv * wv * wv)
    return out


# ---------------------------------------------------------------------------
# basis specifications

@dataclass(frozen=True, eq=False)
class CosineBasis:
    """Cosine features over states 0..N-1 with phase table of shape (N, K_r)."""

    phases: np.ndarray
    s_bounds: tuple[float, float] = (0.01, 10.0)
    default_s: float = 0.5

    kind = "cosine"
    bound = 1.0

    def __post_init__(self):
        ph = np.ascontiguousarray(self.phases, dtype=float)
        if ph.ndim != 2 or ph.shape[1] < 1:
            raise DimensionMismatch("phase table must have shape (N, K_r)")
        ph.setflags(write=False)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def random(cls, num_states, num_features, rng, **kwargs):
        rng = np.random.default_rng(rng)
        return cls(rng.uniform(0.0, 2.0 * np.pi, size=(num_states, num_features)), **kwargs)

    @property
    def num_states(self):
        return self.phases.shape[0]

    @property
    def num_features(self):
        return self.phases.shape[1]

    @property
    def num_params(self):
        return 1

    def initial_params(self):
        return np.array([self.default_s])

    def param_bounds(self):
        return np.array([self.s_bounds[0]]), np.array([self.s_bounds[1]])

    def _check(self, s, x):
        s = np.asarray(s, dtype=float).reshape(-1)
        if s.shape != (1,):
            raise DimensionMismatch("cosine basis takes a single scalar parameter")
        if isinstance(x, (bool, np.bool_)) or not isinstance(x, (int, np.integer)):
            raise InvalidState(f"cosine basis needs an integer state index, got {x!r}")
        if not 0 <= x < self.num_states:
            raise InvalidState(f"state {x} outside 0..{self.num_states - 1}")
        return s, int(x)

    def features(self, s, x):
        s, x = self._check(s, x)
        return cosine_features(x, s, self.phases)

    def jacobian(self, s, x):
        s, x = self._check(s, x)
        return cosine_jacobian(x, s, self.phases)

    def jtr(self, s, x, r):
        s, x = self._check(s, x)
        return cosine_jtr(x, s, self.phases, np.asarray(r, dtype=float))


@dataclass(frozen=True, eq=False)
class RbfBasis:
    """Gaussian RBFs on a box-shaped 2-D state space.

    States are rescaled to the unit square before evaluation; centers and
    widths in ``s`` are expressed in those unit coordinates. Layout of ``s``:
    (centers_p[M], centers_v[M], widths_p[M], widths_v[M]).
    """

    num_centers: int
    low: tuple[float, float] = (-1.2, -0.07)
    high: tuple[float, float] = (0.6, 0.07)
    width_floor: float = 1e-3

    kind = "rbf"
    bound = 1.0

    @property
    def num_features(self):
        return self.num_centers

    @property
    def num_params(self):
        return 4 * self.num_centers

    def normalize(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (2,) or not np.all(np.isfinite(x)):
            raise InvalidState(f"RBF basis needs a finite (position, velocity) pair, got {x!r}")
        lo = np.asarray(self.low)
        return (x - lo) / (np.asarray(self.high) - lo)

    def grid_params(self, per_axis=None):
        """Uniform grid of centers with widths equal to the grid spacing."""
        k = per_axis or int(round(math.sqrt(self.num_centers)))
        if k * k != self.num_centers or k < 2:
            raise ValueError("grid initialisation needs a square number (>= 4) of centers")
        ticks = np.linspace(0.0, 1.0, k)
        cp, cv = np.meshgrid(ticks, ticks, indexing="ij")
        width = np.full(self.num_centers, ticks[1] - ticks[0])
        return np.concatenate([cp.ravel(), cv.ravel(), width, width])

    def initial_params(self):
        return self.grid_params()

    def param_bounds(self):
        m = self.num_centers
        lo = np.concatenate([np.zeros(2 * m), np.full(2 * m, self.width_floor)])
        hi = np.ones(4 * m)
        return lo, hi

    def _check(self, s, x):
        s = np.asarray(s, dtype=float)
        if s.shape != (self.num_params,):
            raise DimensionMismatch(f"expected {self.num_params} RBF parameters, got {s.shape}")
        widths = s[2 * self.num_centers:]
        if np.any(widths < self.width_floor):
            raise WidthUnderflow(f"RBF width {widths.min():.3g} below floor {self.width_floor}")
        return s, self.normalize(x)

    def features(self, s, x):
        s, z = self._check(s, x)
        return rbf_features(z, s)

    def jacobian(self, s, x):
        s, z = self._check(s, x)
        return rbf_jacobian(z, s)

    def jtr(self, s, x, r):
        s, z = self._check(s, x)
        return rbf_jtr(z, s, np.asarray(r, dtype=float))


BasisSpec = Union[CosineBasis, RbfBasis]


def eval_features(spec: BasisSpec, s, x) -> np.ndarray:
    return spec.features(s, x)


def eval_feature_jacobian(spec: BasisSpec, s, x) -> np.ndarray:
    """Matrix of d phi_d / d s_i, shape (K_r, K_s)."""
    return spec.jacobian(s, x)


class FeatureMatrix(NamedTuple):
    matrix: np.ndarray
    singular_values: np.ndarray
    spans_constant: bool


def feature_matrix(spec: BasisSpec, s, num_states: int, *, rtol=1e-10) -> FeatureMatrix:
    """Stack phi(x, s) over all states and verify full column rank."""
    if not isinstance(spec, CosineBasis):
        raise TypeError("feature_matrix needs a finite-state basis")
    if num_states != spec.num_states:
        raise DimensionMismatch(f"basis covers {spec.num_states} states, asked for {num_states}")
    Phi = np.stack([spec.features(s, x) for x in range(num_states)])
    sv = np.linalg.svd(Phi, compute_uv=False)
    if sv.size == 0 or sv[-1] <= rtol * max(sv[0], 1e-300) or Phi.shape[1] > num_states:
        raise RankDeficientBasis(
            f"feature matrix rank {int(np.sum(sv > rtol * sv[0]))} < {Phi.shape[1]}",
            singular_values=sv,
        )
    ones = np.ones(num_states)
    coef, *_ = np.linalg.lstsq(Phi, ones, rcond=None)
    spans_constant = bool(np.linalg.norm(Phi @ coef - ones) < 1e-8 * math.sqrt(num_states))
    return FeatureMatrix(Phi, sv, spans_constant)


def jacobian_stack(spec: CosineBasis, s, num_states: int) -> np.ndarray:
    """All state Jacobians, shape (N, K_r, K_s)."""
    return np.stack([spec.jacobian(s, x) for x in range(num_states)])
