"""Step-size sequences for the four coupled time scales.

Scale 1 is the slowest (basis parameters s), scale 2 the actor, scale 3 the
critic (eta, r) and scale 4 the ABPBE estimators. Each scale uses
alpha_n = c / (n0 + n) ** p.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

RATIO_CHECK_POINTS = (10**3, 10**4, 10**6)
RATIO_LIMIT = 0.05


@njit(cache=True)
def step_sizes(coef, offset, power, n):
    out = np.empty(4)
    for i in range(4):
        out[i] = coef[i] / (offset[i] + n) ** power[i]
    return out


@dataclass(frozen=True)
class StepSchedule:
    coefficients: tuple[float, float, float, float]
    offsets: tuple[float, float, float, float]
    exponents: tuple[float, float, float, float]

    def arrays(self):
        return (
            np.array(self.coefficients, dtype=float),
            np.array(self.offsets, dtype=float),
            np.array(self.exponents, dtype=float),
        )

    def alpha(self, n: int) -> np.ndarray:
        """Step sizes (alpha^1, ..., alpha^4) at iteration n."""
        return step_sizes(*self.arrays(), float(n))

    def frozen(self, *scales: int) -> "StepSchedule":
        """Copy with the given scales (1-based) switched off."""
        c = list(self.coefficients)
        for i in scales:
            c[i - 1] = 0.0
        return StepSchedule(tuple(c), self.offsets, self.exponents)

    def single_scale(self, which: int) -> "StepSchedule":
        """Collapse every scale onto scale ``which`` (single-time-scale mode)."""
        i = which - 1
        return StepSchedule(
            (self.coefficients[i],) * 4, (self.offsets[i],) * 4, (self.exponents[i],) * 4
        )

    def to_dict(self):
        return {
            "coefficients": list(self.coefficients),
            "offsets": list(self.offsets),
            "exponents": list(self.exponents),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(float(v) for v in d["coefficients"]),
            tuple(float(v) for v in d["offsets"]),
            tuple(float(v) for v in d["exponents"]),
        )


DEFAULT_SCHEDULE = StepSchedule(
    coefficients=(1.0, 5.0, 10.0, 64.0),
    offsets=(1000.0, 1000.0, 1000.0, 50000.0),
    exponents=(1.0, 0.8, 0.6, 0.51),
)


# Mountain car: reward -1 almost everywhere, so early learning hinges on
# large but bounded actor/critic steps. The nearly flat alpha4 (<= 0.7)
# keeps the scale-3/4 ratio check satisfied for ABPBE.
MOUNTAIN_CAR_SCHEDULE = StepSchedule(
    coefficients=(1.0, 60.0, 100.0, 800.0),
    offsets=(1e5, 1e5, 1e5, 1e6),
    exponents=(1.0, 0.8, 0.6, 0.51),
)


def default_schedule(kind: str = "garnet") -> StepSchedule:
    return MOUNTAIN_CAR_SCHEDULE if kind == "mountain-car" else DEFAULT_SCHEDULE


@dataclass
class ScheduleReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    ratios: dict[int, list[float]] = field(default_factory=dict)

    def to_dict(self):
        return {"ok": self.ok, "violations": self.violations,
                "ratios": {str(k): v for k, v in self.ratios.items()}}


def validate_schedule(sched: StepSchedule, scales=(1, 2, 3, 4)) -> ScheduleReport:
    """Check summability conditions and vanishing ratios between adjacent scales."""
    violations = []
    scales = sorted(scales)
    for i in scales:
        c, p = sched.coefficients[i - 1], sched.exponents[i - 1]
        if c <= 0:
            violations.append(f"scale {i}: coefficient {c} must be positive")
        if not 0.5 < p <= 1.0:
            violations.append(f"scale {i}: exponent {p} outside (0.5, 1]")
    ratios = {}
    for i, j in zip(scales, scales[1:]):
        if sched.exponents[i - 1] <= sched.exponents[j - 1]:
            violations.append(f"scales {i}/{j}: exponents not strictly decreasing, ratio does not vanish")
        vals = []
        for n in RATIO_CHECK_POINTS:
            a = sched.alpha(n)
            vals.append(float(a[i - 1] / a[j - 1]) if a[j - 1] > 0 else float("inf"))
        ratios[i] = vals
        if not vals[-1] < RATIO_LIMIT:
            violations.append(
                f"scales {i}/{j}: ratio {vals[-1]:.3g} at n={RATIO_CHECK_POINTS[-1]} not below {RATIO_LIMIT}"
            )
    return ScheduleReport(not violations, violations, ratios)
