"""Experiment configuration, evaluation of learned rewards and result files.

A run trains one algorithm on demonstrations drawn from the expert
equilibrium of a task, then scores the learned reward under every requested
dynamics variant. Results go to a metrics CSV (one row per variant, play
count and seed), a quantile CSV for median/10%/90% curves, and a JSON
manifest that pins the configuration by hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .baseline import BaselineConfig, mfgmdp_irl_train
from .core import ConfigurationError, DemoSet, MfgError, MfgSpec, NumericError, expected_return, generate_demos
from .envs import ENV_NAMES, VARIANTS, make_env
from .irl import IrlConfig, RewardModel, mfirl_train
from .metrics import dev_mf, dev_policy
from .samplers import SamplerConfig
from .solver import Equilibrium, SolverConfig, solve_ermfne_with_fallback

ALGORITHMS = ("mfirl", "mfg-mdp")
STATUS_OK = "ok"
STATUS_NOT_CONVERGED = "not_converged"


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    variant: str = "original"  # dynamics the demonstrations are drawn from
    agents: int = 100
    plays: tuple = tuple(range(1, 11))
    horizon: int = 50
    seeds: tuple = (0,)
    algorithm: str = "mfirl"
    eval_variants: tuple = VARIANTS
    solver: SolverConfig = field(default_factory=SolverConfig)
    irl: IrlConfig = field(default_factory=IrlConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        for name in ("plays", "seeds", "eval_variants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.env not in ENV_NAMES:
            raise ConfigurationError(f"unknown env {self.env!r}; expected one of {ENV_NAMES}")
        for v in (self.variant, *self.eval_variants):
            if v not in VARIANTS:
                raise ConfigurationError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.seeds:
            raise ConfigurationError("seed list must be non-empty")
        if not self.plays or min(self.plays) < 1:
            raise ConfigurationError("play counts must be a non-empty list of positive integers")
        if not self.eval_variants:
            raise ConfigurationError("at least one evaluation variant is required")
        for name in ("agents", "horizon", "workers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown experiment settings {sorted(unknown)}")
        if "env" not in doc:
            raise ConfigurationError("experiment config needs an 'env'")
        try:
            if "solver" in doc:
                doc["solver"] = SolverConfig(**doc["solver"])
            if "irl" in doc:
                doc["irl"] = IrlConfig.from_dict(doc["irl"])
            if "baseline" in doc:
                doc["baseline"] = BaselineConfig.from_dict(doc["baseline"])
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in ("plays", "seeds", "eval_variants"):
            d[name] = list(d[name])
        d["solver"] = asdict(self.solver)
        d["irl"] = self.irl.to_dict()
        d["baseline"] = self.baseline.to_dict()
        return d

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; the output directory does not enter it."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def spec(self, variant: Optional[str] = None) -> MfgSpec:
        return make_env(self.env, variant or self.variant, horizon=self.horizon)


@dataclass(frozen=True)
class MetricsRow:
    env: str
    variant: str
    algorithm: str
    M: int
    seed: int
    expected_return: float
    dev_mf: float  # smoothed KL, the variant the tolerances refer to
    dev_policy: float
    dev_mf_raw: float  # unsmoothed; inf where the learned flow misses expert mass
    dev_policy_raw: float
    converged: bool
    status: str
    runtime_s: float = 0.0


CSV_COLUMNS = tuple(f.name for f in fields(MetricsRow))
_FLOAT_COLUMNS = ("expected_return", "dev_mf", "dev_policy", "dev_mf_raw", "dev_policy_raw", "runtime_s")


@dataclass(frozen=True)
class Evaluation:
    expected_return: float
    dev_mf: float
    dev_policy: float
    dev_mf_raw: float
    dev_policy_raw: float
    converged: bool
    equilibrium: Equilibrium


def expert_equilibrium(spec: MfgSpec, cfg: SolverConfig = SolverConfig()) -> Equilibrium:
    """ERMFNE of the ground-truth reward; a non-converged expert is an error."""
    if spec.reward is None:
        raise ConfigurationError("expert equilibrium needs a ground-truth reward")
    eq = solve_ermfne_with_fallback(None, spec, cfg)
    if not eq.converged:
        raise NumericError(f"expert equilibrium of {spec.name}/{spec.variant} did not converge "
                           f"(residual {eq.residual:.3g})")
    return eq


def _nonneg(x: float) -> float:
    # KL is non-negative; clip the rounding residue of identical inputs
    return max(0.0, x)


def evaluate_reward(
    reward, spec: MfgSpec, cfg: SolverConfig = SolverConfig(), expert: Optional[Equilibrium] = None
) -> Evaluation:
    """Score a learned reward against the ground truth carried by ``spec``.

    The equilibrium is solved under ``reward`` (a ``RewardModel`` is used in
    its shaped form), its return is measured under the ground-truth reward
    without any entropy bonus, and both deviations are taken against the
    ground-truth equilibrium.
    """
    if isinstance(reward, RewardModel):
        reward = reward.shaped()
    expert = expert if expert is not None else expert_equilibrium(spec, cfg)
    eq = solve_ermfne_with_fallback(reward, spec.without_reward(), cfg)
    return Evaluation(
        expected_return=expected_return(eq.flow, eq.policy, spec),
        dev_mf=_nonneg(dev_mf(expert.flow, eq.flow, smoothed=True)),
        dev_policy=_nonneg(dev_policy(expert.policy, eq.policy, expert.flow, smoothed=True)),
        dev_mf_raw=_nonneg(dev_mf(expert.flow, eq.flow)),
        dev_policy_raw=_nonneg(dev_policy(expert.policy, eq.policy, expert.flow)),
        converged=eq.converged,
        equilibrium=eq,
    )


def train(algorithm: str, spec: MfgSpec, demos: DemoSet, irl: IrlConfig, baseline: BaselineConfig):
    """Returns ``(model, log)`` for either algorithm."""
    if algorithm == "mfirl":
        return mfirl_train(spec.without_reward(), demos, irl)
    if algorithm == "mfg-mdp":
        return mfgmdp_irl_train(spec.without_reward(), demos, baseline)
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


def _run_cell(cfg: ExperimentConfig, M: int, seed: int, demos: DemoSet, experts: dict) -> list:
    rows = []
    t0 = time.perf_counter()
    try:
        model, _ = train(cfg.algorithm, cfg.spec(), demos.subset(M),
                         replace(cfg.irl, seed=seed), replace(cfg.baseline, seed=seed))
        error = None
    except MfgError as exc:
        model, error = None, f"error: {type(exc).__name__}: {exc}"
    train_time = time.perf_counter() - t0
    for variant in cfg.eval_variants:
        t1 = time.perf_counter()
        base = dict(env=cfg.env, variant=variant, algorithm=cfg.algorithm, M=M, seed=seed)
        nan_row = dict(expected_return=math.nan, dev_mf=math.nan, dev_policy=math.nan,
                       dev_mf_raw=math.nan, dev_policy_raw=math.nan, converged=False)
        if model is None:
            rows.append(MetricsRow(**base, **nan_row, status=error, runtime_s=train_time))
            continue
        try:
            ev = evaluate_reward(model, cfg.spec(variant), cfg.solver, experts[variant])
            status = STATUS_OK if ev.converged else STATUS_NOT_CONVERGED
            rows.append(MetricsRow(
                **base, expected_return=ev.expected_return, dev_mf=ev.dev_mf, dev_policy=ev.dev_policy,
                dev_mf_raw=ev.dev_mf_raw, dev_policy_raw=ev.dev_policy_raw, converged=ev.converged,
                status=status, runtime_s=train_time + time.perf_counter() - t1,
            ))
        except MfgError as exc:
            rows.append(MetricsRow(**base, **nan_row, status=f"error: {type(exc).__name__}: {exc}",
                                   runtime_s=train_time + time.perf_counter() - t1))
    return rows


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list:
    """Train and evaluate every ``(M, seed)`` cell; failures are recorded per row.

    Demonstrations for one seed are nested across play counts: the run with
    ``M`` plays uses the first ``M`` plays of that seed's largest demo set.
    """
    demo_spec = cfg.spec()
    experts = {v: expert_equilibrium(cfg.spec(v), cfg.solver) for v in cfg.eval_variants}
    demo_expert = experts.get(cfg.variant) or expert_equilibrium(demo_spec, cfg.solver)
    n_plays = max(cfg.plays)
    demos = {s: generate_demos(demo_spec, demo_expert.policy, cfg.agents, n_plays, s) for s in cfg.seeds}
    cells = [(M, s) for M in cfg.plays for s in cfg.seeds]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(lambda c: _run_cell(cfg, c[0], c[1], demos[c[1]], experts), cells))
    rows = [r for cell in results for r in cell]
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", rows)
        write_quantiles_csv(out / "quantiles.csv", rows)
        expert_returns = {v: expected_return(e.flow, e.policy, cfg.spec(v)) for v, e in experts.items()}
        write_manifest(out / "manifest.json", cfg, expert_returns, ["metrics.csv", "quantiles.csv"])
    return rows


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])


def read_metrics_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = dict(rec)
            for c in _FLOAT_COLUMNS:
                kw[c] = float(kw[c])
            kw["M"], kw["seed"] = int(kw["M"]), int(kw["seed"])
            kw["converged"] = kw["converged"] == "true"
            out.append(MetricsRow(**kw))
    return out


QUANTILE_METRICS = ("expected_return", "dev_mf", "dev_policy")
QUANTILE_COLUMNS = ("env", "variant", "algorithm", "M", "n") + tuple(
    f"{m}_{q}" for m in QUANTILE_METRICS for q in ("q10", "median", "q90")
)


def quantile_table(rows) -> list:
    """Per ``(env, variant, algorithm, M)``: 10%, 50% and 90% quantiles over ok rows."""
    groups = {}
    for r in rows:
        if r.status == STATUS_OK:
            groups.setdefault((r.env, r.variant, r.algorithm, r.M), []).append(r)
    table = []
    for key in sorted(groups):
        rs = groups[key]
        rec = dict(zip(("env", "variant", "algorithm", "M"), key), n=len(rs))
        for m in QUANTILE_METRICS:
            vals = np.array([getattr(r, m) for r in rs])
            for q, level in (("q10", 0.1), ("median", 0.5), ("q90", 0.9)):
                rec[f"{m}_{q}"] = float(np.quantile(vals, level))
        table.append(rec)
    return table


def write_quantiles_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUANTILE_COLUMNS)
        for rec in quantile_table(rows):
            w.writerow([_fmt(rec[c]) for c in QUANTILE_COLUMNS])


def versions() -> dict:
    return {"mfirl": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path, cfg: ExperimentConfig, expert_returns: dict, files: list) -> None:
    doc = {
        "config": cfg.to_dict(),
        "config_sha256": cfg.config_hash(),
        "seeds": list(cfg.seeds),
        "versions": versions(),
        "expert_expected_return": expert_returns,
        "files": files,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# desk-scale settings for the ``table1`` reproduction suite: tabular samplers, a larger step size than
# the library default so that a few hundred epochs suffice, and larger minibatches and
# sample counts to lower the gradient noise floor
TABLE1_IRL = IrlConfig(epochs=300, lr=3e-3, minibatch=128, n_samples=1024, sampler=SamplerConfig(mode="tabular"))
TABLE1_BASELINE = BaselineConfig(epochs=150, lr=3e-3, n_samples=32, sampler_steps=5)


def reproduce_table1(
    out_dir, seeds=tuple(range(10)), plays=(10,), algorithms=ALGORITHMS, envs=ENV_NAMES,
    irl: IrlConfig = TABLE1_IRL, baseline: BaselineConfig = TABLE1_BASELINE,
) -> list:
    """Expert rows plus one experiment per (env, algorithm); writes ``table1.csv``.

    The table reports new-dynamics medians over seeds at the largest play
    count, next to the expert's own return under the same dynamics.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for env in envs:
        expert_new = expert_equilibrium(make_env(env, "new"))
        table.append(dict(env=env, algorithm="expert", M="", n="",
                          expected_return=expected_return(expert_new.flow, expert_new.policy, make_env(env, "new")),
                          dev_mf=0.0, dev_policy=0.0))
        for algo in algorithms:
            cfg = ExperimentConfig(env=env, plays=tuple(plays), seeds=tuple(seeds), algorithm=algo,
                                   irl=irl, baseline=baseline, out_dir=str(out / f"{env}-{algo}"))
            rows = run_experiment(cfg)
            for rec in quantile_table(rows):
                if rec["variant"] == "new" and rec["M"] == max(plays):
                    table.append(dict(env=env, algorithm=algo, M=rec["M"], n=rec["n"],
                                      expected_return=rec["expected_return_median"],
                                      dev_mf=rec["dev_mf_median"], dev_policy=rec["dev_policy_median"]))
    cols = ("env", "algorithm", "M", "n", "expected_return", "dev_mf", "dev_policy")
    with open(out / "table1.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for rec in table:
            w.writerow([_fmt(rec[c]) for c in cols])
    return table


def expert_returns_under(variant: str, horizon: int = 50, cfg: SolverConfig = SolverConfig()) -> dict:
    """Ground-truth return of each task's expert equilibrium under ``variant`` dynamics."""
    out = {}
    for env in ENV_NAMES:
        spec = make_env(env, variant, horizon=horizon)
        eq = expert_equilibrium(spec, cfg)
        out[env] = expected_return(eq.flow, eq.policy, spec)
    return out


__all__ = [
    "ALGORITHMS",
    "CSV_COLUMNS",
    "Evaluation",
    "ExperimentConfig",
    "MetricsRow",
    "TABLE1_BASELINE",
    "TABLE1_IRL",
    "evaluate_reward",
    "expert_equilibrium",
    "expert_returns_under",
    "quantile_table",
    "read_metrics_csv",
    "reproduce_table1",
    "run_experiment",
    "train",
    "write_manifest",
    "write_metrics_csv",
    "write_quantiles_csv",
]
