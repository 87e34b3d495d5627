"""Experiment orchestration: configs, macro-replications, sweeps and the LQC check.

Outputs are plain CSV/JSON so curves and verdicts can be plotted elsewhere.
Every byte except the ``wall_ms`` column (and ``wall_time_s`` in sweep
summaries) is fixed by the resolved config.
"""
import csv
import dataclasses
import json
import logging
import math
import os
import time
import typing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import ALGOS, DivergenceError, NaturalPolicyGradient, RunRecord, resolve_reuse
from .envs import make_env
from .lqc_sim import simulate_lqc
from .optim import ProjectionBox, StepSchedule
from .rng import RNG_CONTRACT, rep_generator
from .stats import MIN_QQ_REPS, qq_report, write_density_csv, write_qq_csv
from .theory import normalized_error, theoretical_sigma

log = logging.getLogger(__name__)

QQ_MIN_CORRELATION = 0.99
VAR_RATIO_BAND = (0.8, 1.2)


class ConfigError(ValueError):
    pass


_ENV_DEFAULTS = {
    "cartpole": dict(gamma=0.99, B=4, K_grad=10, K_fim=1, epsilon=1e-3, schedule="constant",
                     alpha=0.01, power=0.9, adam=True, iterations=150, macro_reps=50,
                     sampling="single_path", theta0=None, independent_fim=False, record_every=1),
    "lqc": dict(gamma=0.5, B=5, K_grad=5, K_fim=1, epsilon=0.01, schedule="polynomial",
                alpha=1.0, power=0.9, adam=False, iterations=50_000, macro_reps=500,
                sampling="iid", theta0=2.0, independent_fim=True, record_every=100),
}


@dataclass
class ExperimentConfig:
    """Flat experiment description; ``None`` fields take per-environment defaults."""

    env: str = "cartpole"
    algo: str = "rnpg"
    B: Optional[int] = None
    K_grad: Optional[int] = None
    K_fim: Optional[int] = None
    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    schedule: Optional[str] = None
    alpha: Optional[float] = None
    power: Optional[float] = None
    adam: Optional[bool] = None
    iterations: Optional[int] = None
    macro_reps: Optional[int] = None
    base_seed: int = 0
    omega_max: Optional[float] = None
    box_radius: float = 1e6
    sampling: Optional[str] = None
    theta0: Optional[float] = None
    independent_fim: Optional[bool] = None
    trpo_delta: float = 0.01
    record_every: Optional[int] = None
    engine: str = "auto"
    mc_reps: int = 10**7

    def resolved(self) -> "ExperimentConfig":
        if self.env not in _ENV_DEFAULTS:
            raise ConfigError(f"unknown env {self.env!r}; expected one of {sorted(_ENV_DEFAULTS)}")
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algo {self.algo!r}; expected one of {ALGOS}")
        values = dataclasses.asdict(self)
        for key, default in _ENV_DEFAULTS[self.env].items():
            if values[key] is None:
                values[key] = default
        try:
            values["K_grad"], values["K_fim"] = resolve_reuse(self.algo, values["K_grad"], values["K_fim"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cfg = ExperimentConfig(**values)
        cfg._validate()
        if cfg.engine == "auto":
            cfg.engine = "batched" if cfg.batched_eligible() else "generic"
        return cfg

    def _validate(self):
        checks = [
            (self.B >= 1, "B must be >= 1"),
            (self.iterations >= 1, "iterations must be >= 1"),
            (self.macro_reps >= 1, "macro_reps must be >= 1"),
            (0.0 < self.gamma < 1.0, "gamma must lie in (0, 1)"),
            (self.epsilon > 0, "epsilon must be positive"),
            (self.sampling in ("iid", "single_path"), "sampling must be iid or single_path"),
            (self.engine in ("auto", "generic", "batched"), "engine must be auto, generic or batched"),
            (self.omega_max is None or self.omega_max > 0, "omega_max must be positive"),
            (self.record_every >= 1, "record_every must be >= 1"),
            (self.trpo_delta > 0, "trpo_delta must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.step_schedule()
            ProjectionBox(self.box_radius)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.engine == "batched" and not self.batched_eligible():
            raise ConfigError("the batched engine only runs vnpg/rnpg on lqc with i.i.d. sampling, "
                              "an independent Fisher batch, K_fim=1 and no Adam")

    def batched_eligible(self) -> bool:
        return (self.env == "lqc" and self.algo in ("vnpg", "rnpg") and self.sampling == "iid"
                and self.independent_fim and self.K_fim == 1 and not self.adam)

    def step_schedule(self) -> StepSchedule:
        if self.schedule == "constant":
            return StepSchedule("constant", self.alpha)
        return StepSchedule(self.schedule, self.alpha, self.power)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        hints = typing.get_type_hints(ExperimentConfig)
        values = dataclasses.asdict(self)
        for key, raw in overrides.items():
            key = key.replace("-", "_")
            if key not in hints:
                raise ConfigError(f"unknown option --{key}")
            values[key] = _coerce(raw, hints[key], key)
        return ExperimentConfig(**values)

    def agent(self, rep: int) -> NaturalPolicyGradient:
        return NaturalPolicyGradient(
            algo=self.algo, n_iter=self.iterations, batch_size=self.B, K_grad=self.K_grad,
            K_fim=self.K_fim, epsilon=self.epsilon, schedule=self.schedule, alpha=self.alpha,
            power=self.power, adam=self.adam, box_radius=self.box_radius, omega_max=self.omega_max,
            sampling=self.sampling, independent_fim=self.independent_fim, trpo_delta=self.trpo_delta,
            theta0=self.theta0, random_state=rep_generator(self.base_seed, rep),
            record_every=self.record_every, rep=rep,
        )


def _coerce(raw, hint, key):
    if not isinstance(raw, str):
        return raw
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    target = args[0] if args else hint
    if raw.lower() in ("none", "null"):
        if type(None) in typing.get_args(hint):
            return None
        raise ConfigError(f"--{key} cannot be none")
    try:
        if target is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return target(raw)
    except ValueError as exc:
        raise ConfigError(f"--{key}: cannot parse {raw!r} as {target.__name__}") from exc


@dataclass
class RepOutcome:
    rep: int
    records: list
    theta: Optional[np.ndarray]
    error: Optional[str] = None


def _run_generic_rep(args) -> RepOutcome:
    cfg, rep = args
    env = make_env(cfg.env, cfg.gamma)
    agent = cfg.agent(rep)
    try:
        agent.fit(env)
    except DivergenceError as exc:
        records = list(getattr(agent, "history_", []))
        last = records[-1].iteration if records else 0
        records.append(RunRecord(rep, last + 1, math.nan, math.nan, math.nan, math.nan,
                                 records[-1].wall_ms if records else 0))
        return RepOutcome(rep, records, None, str(exc))
    params = agent.params()
    return RepOutcome(rep, agent.history_, params.theta)


def _run_batched(cfg: "ExperimentConfig", reps) -> list[RepOutcome]:
    start = time.perf_counter()
    trace = simulate_lqc([cfg.base_seed + r for r in reps], cfg.B, cfg.K_grad, cfg.gamma,
                         cfg.epsilon, cfg.step_schedule(), cfg.iterations, cfg.theta0,
                         ProjectionBox(cfg.box_radius), cfg.omega_max, cfg.record_every)
    wall = int(1000 * (time.perf_counter() - start))
    out = []
    for i, rep in enumerate(reps):
        records = [
            RunRecord(rep, int(it), float(trace.reward_path[i, j]), abs(float(trace.theta_path[i, j])),
                      abs(float(trace.grad_path[i, j])), float(trace.ratio_max_path[i, j]), wall)
            for j, it in enumerate(trace.iterations)
        ]
        theta = trace.theta[i:i + 1]
        if not np.all(np.isfinite(theta)):
            out.append(RepOutcome(rep, records, None, "non-finite parameters"))
        else:
            out.append(RepOutcome(rep, records, theta.copy()))
    return out


def run_reps(cfg: "ExperimentConfig", jobs: int = 1) -> list[RepOutcome]:
    reps = list(range(cfg.macro_reps))
    if cfg.engine == "batched":
        return _run_batched(cfg, reps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_generic_rep, [(cfg, r) for r in reps]))
    return [_run_generic_rep((cfg, r)) for r in reps]


@dataclass
class RunResult:
    path: Path
    config: ExperimentConfig
    outcomes: list

    @property
    def n_failed(self) -> int:
        return sum(o.error is not None for o in self.outcomes)

    def reward_matrix(self) -> np.ndarray:
        """(reps, recorded iterations) mean rewards of the successful reps."""
        rows = [[r.mean_reward for r in o.records] for o in self.outcomes if o.error is None]
        return np.array(rows)


def run_experiment(config: ExperimentConfig, out_dir, jobs: int = 1) -> RunResult:
    """Run ``macro_reps`` independent replications and write config, metrics and parameters."""
    cfg = config.resolved()
    out = Path(out_dir)
    (out / "final_params").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    outcomes = run_reps(cfg, jobs)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RunRecord.header())
        for o in outcomes:
            for rec in o.records:
                w.writerow([_fmt(v) for v in rec.row()])
    policy_kind = "gaussian_shift" if cfg.env == "lqc" else "softmax_mlp"
    for o in outcomes:
        if o.error is not None:
            log.warning("rep %d failed: %s", o.rep, o.error)
            continue
        stem = out / "final_params" / f"rep_{o.rep:04d}"
        stem.with_suffix(".bin").write_bytes(np.asarray(o.theta, dtype="<f8").tobytes())
        dims = {} if policy_kind == "gaussian_shift" else {"obs_dim": 4, "hidden": 32, "n_actions": 2}
        stem.with_suffix(".json").write_text(json.dumps(
            {"kind": policy_kind, "dims": dims, "size": int(np.size(o.theta)), "dtype": "<f8"},
            sort_keys=True) + "\n")
    failures = {o.rep: o.error for o in outcomes if o.error is not None}
    (out / "run.json").write_text(json.dumps(
        {"rng_contract": RNG_CONTRACT, "failed_reps": failures}, indent=2, sort_keys=True) + "\n")
    return RunResult(out, cfg, outcomes)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_reuse(config: ExperimentConfig, K_list, K_fim_list, out_dir, jobs: int = 1) -> Path:
    """One run per ``(K_grad, K_fim)`` plus ``summary.csv``."""
    if not K_list or not K_fim_list:
        raise ConfigError("K lists must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kf in K_fim_list:
        for kg in K_list:
            cfg = dataclasses.replace(config, K_grad=int(kg), K_fim=int(kf))
            t0 = time.perf_counter()
            res = run_experiment(cfg, out / f"K{kg}_Kfim{kf}", jobs)
            wall = time.perf_counter() - t0
            rewards = res.reward_matrix()
            if len(rewards) == 0:
                final, se = math.nan, math.nan
            else:
                final = float(rewards[:, -1].mean())
                se = float(_std_error_curve(rewards).mean()) if len(rewards) > 1 else math.nan
            rows.append((int(kg), int(kf), final, se, wall))
    for kg in K_list:
        times = [r[4] for r in rows if r[0] == int(kg)]
        if any(b < a for a, b in zip(times, times[1:])):
            warnings.warn(f"wall time decreased with K_fim at K_grad={kg}: {times}", RuntimeWarning)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K_grad", "K_fim", "final_mean_reward", "mean_std_error", "wall_time_s"])
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return out


def _std_error_curve(rewards: np.ndarray) -> np.ndarray:
    return rewards.std(axis=0, ddof=1) / math.sqrt(len(rewards))


def lqc_errors(cfg: ExperimentConfig) -> tuple[np.ndarray, float]:
    """Normalized final errors ``theta_N / sqrt(alpha_N)`` of every rep (batched engine)."""
    outcomes = _run_batched(cfg, list(range(cfg.macro_reps)))
    alpha_n = cfg.step_schedule()(cfg.iterations)
    thetas = np.array([o.theta[0] if o.theta is not None else math.nan for o in outcomes])
    return normalized_error(thetas, 0.0, alpha_n), alpha_n


def lqc_verify(config: ExperimentConfig, out_dir, strict: bool = False) -> dict:
    """Compare the empirical law of the normalized error with the predicted normal law."""
    if config.env != "lqc":
        raise ConfigError("lqc-verify needs env=lqc")
    cfg = dataclasses.replace(config, engine="batched").resolved()
    if cfg.macro_reps < MIN_QQ_REPS and strict:
        raise ConfigError(f"insufficient replications: {cfg.macro_reps} < {MIN_QQ_REPS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    errors, alpha_n = lqc_errors(cfg)
    theory = theoretical_sigma(cfg.gamma, cfg.B, cfg.K_grad, cfg.epsilon, cfg.mc_reps, seed=cfg.base_seed)
    (out / "theory.json").write_text(json.dumps(theory.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "normalized_error"])
        for r, e in enumerate(errors):
            w.writerow([r, repr(float(e))])
    verdict = {
        "B": cfg.B, "K": cfg.K_grad, "gamma": cfg.gamma, "epsilon": cfg.epsilon,
        "iterations": cfg.iterations, "alpha_final": alpha_n, "n_reps": int(len(errors)),
        "sigma_inf": theory.sigma_inf, "empirical_variance": float(np.var(errors, ddof=1)),
        "empirical_mean": float(np.mean(errors)),
        "thresholds": {"min_correlation": QQ_MIN_CORRELATION, "var_ratio": list(VAR_RATIO_BAND)},
    }
    if not np.all(np.isfinite(errors)):
        verdict.update(correlation=None, var_ratio=None, passed=False, reason="non-finite final iterates")
    elif len(errors) < MIN_QQ_REPS:
        verdict.update(correlation=None, var_ratio=None, passed=False,
                       reason=f"insufficient replications ({len(errors)} < {MIN_QQ_REPS})")
    else:
        report = qq_report(errors, theory.sigma_inf)
        write_qq_csv(out / "qq.csv", report)
        write_density_csv(out / "density.csv", errors, theory.sigma_inf)
        verdict.update(correlation=report.correlation, var_ratio=report.var_ratio,
                       passed=bool(report.passes(QQ_MIN_CORRELATION, VAR_RATIO_BAND)))
    (out / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    return verdict


def write_theory(gamma, B, K, epsilon, mc_reps, seed, out_path=None) -> dict:
    theory = theoretical_sigma(gamma, B, K, epsilon, mc_reps, seed).to_dict()
    if out_path is not None:
        path = Path(out_path)
        if path.suffix != ".json":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "theory.json"
        path.write_text(json.dumps(theory, indent=2, sort_keys=True) + "\n")
    return theory


def default_jobs() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
