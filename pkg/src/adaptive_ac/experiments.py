"""Seeded experiment runner: per-repeat learning curves, aggregates, manifest.

Every random quantity of repeat ``i`` is derived from the seed list
``[base_seed, i, k]`` (k = 0 instance, 1 basis phases, 2 sample stream), so
a (config, base seed) pair determines every output byte regardless of the
number of worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .basis import CosineBasis, RbfBasis, feature_matrix
from .environments import GarnetSpec, MountainCarParams, generate_ergodic_garnet
from .errors import ConfigError, NonFiniteUpdate
from .mdp import exact_objectives, induced_chain, mean_squared_td_error
from .runner import GarnetLearner, MountainCarLearner, SarsaLearner
from .schedule import StepSchedule, default_schedule, validate_schedule

CSV_VERSION = 1
KINDS = ("garnet", "mountain-car", "mts-vs-sts", "validate")
ALGORITHMS = ("abtd", "abbe", "abpbe", "static-ac", "sarsa")
FAIL_FRACTION = 0.10

_KIND_DEFAULTS = {
    "garnet": dict(num_states=30, num_actions=4, branching=2, sigma=0.1, num_features=4,
                   horizon=200_000, repeats=20),
    "mts-vs-sts": dict(num_states=30, num_actions=5, branching=5, sigma=0.1, num_features=8,
                       horizon=200_000, repeats=20),
    "mountain-car": dict(num_features=16, horizon=5000, repeats=10),
    "validate": dict(repeats=1, horizon=0),
}


def package_version():
    from . import __version__
    return __version__


@dataclass
class ExperimentConfig:
    """Experiment description; ``None`` fields take per-kind defaults.

    ``horizon`` counts transitions on Garnet problems and episodes on the
    mountain car.
    """

    kind: str = "garnet"
    algorithm: str = "abtd"
    num_states: int | None = None
    num_actions: int | None = None
    branching: int | None = None
    sigma: float | None = None
    reward_mode: str = "state"
    num_features: int | None = None
    schedule: dict | None = None
    horizon: int | None = None
    repeats: int | None = None
    seed: int = 0
    eval_interval: int = 1000
    sts_scale: int = 3
    max_episode_steps: int = 1000
    workers: int = 1
    output: str = "results"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def resolved(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        updates = {k: v for k, v in _KIND_DEFAULTS[self.kind].items() if getattr(self, k) is None}
        cfg = replace(self, **updates)
        if cfg.schedule is None:
            cfg = replace(cfg, schedule=default_schedule(cfg.kind).to_dict())
        cfg.validate()
        return cfg

    def step_schedule(self) -> StepSchedule:
        try:
            return StepSchedule.from_dict(self.schedule)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from None

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.kind == "validate":
            return
        if self.algorithm == "sarsa" and self.kind != "mountain-car":
            raise ConfigError("sarsa is only available on the mountain car")
        if self.kind == "mts-vs-sts" and self.algorithm in ("static-ac", "sarsa"):
            raise ConfigError("mts-vs-sts compares schedules of an adaptive algorithm")
        if self.horizon is None or self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.repeats is None or self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.reward_mode not in ("state", "state-action"):
            raise ConfigError("reward_mode must be 'state' or 'state-action'")
        if not 1 <= self.sts_scale <= 4:
            raise ConfigError("sts_scale must be in 1..4")
        if self.kind != "mountain-car":
            for name in ("num_states", "num_actions", "branching"):
                if getattr(self, name) < 1:
                    raise ConfigError(f"{name} must be positive")
            if self.branching > self.num_states:
                raise ConfigError("branching cannot exceed the number of states")
            if self.num_features > self.num_states:
                raise ConfigError("num_features cannot exceed the number of states")
        if self.algorithm != "sarsa":
            report = validate_schedule(self.step_schedule(), scales_used(self.algorithm))
            if not report.ok:
                raise ConfigError("schedule violates the multi-time-scale conditions: "
                                  + "; ".join(report.violations))


def scales_used(algorithm: str):
    return {"abtd": (1, 2, 3), "abbe": (1, 2, 3), "abpbe": (1, 2, 3, 4),
            "static-ac": (2, 3), "sarsa": ()}[algorithm]


def repeat_seed(base, i, stream):
    return [int(base), int(i), int(stream)]


# ---------------------------------------------------------------------------
# single repeats

@dataclass
class RepeatResult:
    index: int
    columns: list
    rows: list
    failed: bool = False
    error: str = ""
    seeds: dict = field(default_factory=dict)


def _learner_alg(algorithm, sched):
    if algorithm == "static-ac":
        return "abtd", sched.frozen(1)
    return algorithm, sched


def _garnet_objectives(inst, basis, learner):
    mdp = inst.mdp
    st = learner.state
    policy = learner.policy()
    chain = induced_chain(mdp, policy)
    Phi = feature_matrix(basis, st.s, mdp.num_states).matrix
    obj = exact_objectives(mdp, policy, chain, Phi, st.r)
    mstde = mean_squared_td_error(mdp, chain, Phi, st.r)
    return [st.eta, chain.average_reward, obj.mse, obj.msbe, obj.mspbe, mstde, *st.s.tolist()]


def run_garnet_repeat(cfg: ExperimentConfig, i: int, sched: StepSchedule | None = None) -> RepeatResult:
    spec = GarnetSpec(cfg.num_states, cfg.num_actions, cfg.branching, cfg.sigma)
    seeds = {k: repeat_seed(cfg.seed, i, j) for j, k in enumerate(("instance", "basis", "stream"))}
    inst = generate_ergodic_garnet(spec, seeds["instance"])
    basis = CosineBasis.random(spec.num_states, cfg.num_features, seeds["basis"])
    alg, sched = _learner_alg(cfg.algorithm, sched or cfg.step_schedule())
    learner = GarnetLearner(inst, basis, alg, sched, seeds["stream"], reward_mode=cfg.reward_mode)
    columns = ["step", "eta_estimate", "exact_eta", "mse", "msbe", "mspbe", "mstde"]
    columns += [f"s_{j}" for j in range(basis.num_params)]
    res = RepeatResult(i, columns, [], seeds=seeds)
    if cfg.horizon == 0:
        return res
    res.rows.append([0, *_garnet_objectives(inst, basis, learner)])
    try:
        while learner.n < cfg.horizon:
            learner.advance(min(cfg.eval_interval, cfg.horizon - learner.n))
            res.rows.append([learner.n, *_garnet_objectives(inst, basis, learner)])
    except NonFiniteUpdate as exc:
        res.failed, res.error = True, str(exc)
    return res


def run_mountain_car_repeat(cfg: ExperimentConfig, i: int) -> RepeatResult:
    params = MountainCarParams(max_episode_steps=cfg.max_episode_steps)
    seeds = {"stream": repeat_seed(cfg.seed, i, 2)}
    columns = ["episode", "step", "steps_to_goal", "eta_estimate"]
    res = RepeatResult(i, columns, [], seeds=seeds)
    if cfg.algorithm == "sarsa":
        per_axis = int(round(math.sqrt(cfg.num_features)))
        learner = SarsaLearner(params, seeds["stream"], per_axis=per_axis)
        lengths = learner.run_episodes(cfg.horizon)
        step = np.cumsum(lengths)
        res.rows = [[e + 1, int(step[e]), int(lengths[e]), math.nan] for e in range(len(lengths))]
        return res
    basis = RbfBasis(cfg.num_features, params.low, params.high)
    alg, sched = _learner_alg(cfg.algorithm, cfg.step_schedule())
    learner = MountainCarLearner(params, basis, alg, sched, seeds["stream"])
    try:
        while len(res.rows) < cfg.horizon:
            lengths = learner.run_episodes(1)
            res.rows.append([len(res.rows) + 1, learner.n, int(lengths[0]), learner.state.eta])
    except NonFiniteUpdate as exc:
        res.failed, res.error = True, str(exc)
    return res


def _run_repeat(args):
    cfg, i, variant = args
    if cfg.kind == "mountain-car":
        return run_mountain_car_repeat(cfg, i)
    sched = cfg.step_schedule()
    if variant == "sts":
        sched = sched.single_scale(cfg.sts_scale)
    return run_garnet_repeat(cfg, i, sched)


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def curve_csv(cfg, res: RepeatResult, variant=None) -> str:
    buf = io.StringIO()
    tag = f" variant={variant}" if variant else ""
    buf.write(f"# adaptive-ac curve v{CSV_VERSION} kind={cfg.kind} algorithm={cfg.algorithm}"
              f" repeat={res.index}{tag} status={'failed' if res.failed else 'ok'}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(res.columns)
    for row in res.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def aggregate(results, index_columns=1):
    """Mean and standard error across successful repeats, row by row.

    Rows are aligned by position (all repeats share the same evaluation
    grid). Returns (columns, rows)."""
    ok = [r for r in results if not r.failed]
    base = results[0].columns
    columns = list(base[:index_columns])
    for name in base[index_columns:]:
        columns += [f"{name}_mean", f"{name}_stderr"]
    if not ok:
        return columns, []
    n_rows = min(len(r.rows) for r in ok)
    rows = []
    for j in range(n_rows):
        vals = np.array([r.rows[j] for r in ok], dtype=float)
        row = [ok[0].rows[j][k] for k in range(index_columns)]
        for k in range(index_columns, vals.shape[1]):
            col = vals[:, k]
            mean = float(np.mean(col))
            se = float(np.std(col, ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
            row += [mean, se]
        rows.append(row)
    return columns, rows


def aggregate_csv(cfg, columns, rows, n_ok, n_total, variant=None) -> str:
    buf = io.StringIO()
    tag = f" variant={variant}" if variant else ""
    buf.write(f"# adaptive-ac aggregate v{CSV_VERSION} kind={cfg.kind} algorithm={cfg.algorithm}{tag}"
              f" repeats_ok={n_ok} repeats_total={n_total}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_curve(path):
    """Parse a curve or aggregate CSV back into (columns, float array)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = next(reader)
    data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return columns, data.reshape(-1, len(columns))


def _recorded_config(cfg):
    # execution-only settings are left out so outputs do not depend on them
    d = cfg.to_dict()
    d.pop("workers")
    d.pop("output")
    return d


@dataclass
class ExperimentOutcome:
    manifest: dict
    results: dict
    valid: bool

    @property
    def exit_code(self):
        return 0 if self.valid else 3


def run_experiment(config: ExperimentConfig) -> ExperimentOutcome:
    """Run all repeats (optionally in a process pool) and write result files."""
    cfg = config.resolved()
    if cfg.kind == "validate":
        raise ConfigError("use the validate command for kind=validate")
    variants = ["mts", "sts"] if cfg.kind == "mts-vs-sts" else [None]
    jobs = [(cfg, i, v) for v in variants for i in range(cfg.repeats)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outs = list(pool.map(_run_repeat, jobs))
    else:
        outs = [_run_repeat(job) for job in jobs]

    os.makedirs(cfg.output, exist_ok=True)
    manifest = {"format": "adaptive-ac-manifest", "version": CSV_VERSION,
                "code_version": package_version(), "config": _recorded_config(cfg), "variants": {}}
    by_variant = {}
    valid = True
    for v in variants:
        res = [o for (c, i, vv), o in zip(jobs, outs) if vv == v]
        by_variant[v or "default"] = res
        sub = os.path.join(cfg.output, v) if v else cfg.output
        os.makedirs(sub, exist_ok=True)
        for r in res:
            with open(os.path.join(sub, f"curve_{r.index:03d}.csv"), "w") as fh:
                fh.write(curve_csv(cfg, r, v))
        cols, rows = aggregate(res)
        n_fail = sum(r.failed for r in res)
        with open(os.path.join(sub, "aggregate.csv"), "w") as fh:
            fh.write(aggregate_csv(cfg, cols, rows, len(res) - n_fail, len(res), v))
        ok = n_fail <= FAIL_FRACTION * len(res)
        valid = valid and ok
        manifest["variants"][v or "default"] = {
            "repeats": [{"index": r.index, "seeds": r.seeds, "status": "failed" if r.failed else "ok",
                         "error": r.error} for r in res],
            "failed": n_fail,
            "aggregate_valid": ok,
        }
    manifest["valid"] = valid
    with open(os.path.join(cfg.output, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentOutcome(manifest, by_variant, valid)


__all__ = [
    "ALGORITHMS", "KINDS", "ExperimentConfig", "ExperimentOutcome", "RepeatResult", "aggregate",
    "read_curve", "run_experiment", "run_garnet_repeat", "run_mountain_car_repeat", "scales_used",
]
