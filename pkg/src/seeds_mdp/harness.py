"""Experiment orchestration: regret accounting, replications, horizon sweeps."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .adversary import AdversarySpec, generate_losses, lower_bound_mdp
from .mdp import DeterministicPolicy, LayeredMdp, chain_mdp, load_mdp, random_mdp, validate_mdp
from .occupancy import best_fixed_policy
from .record import ExperimentRecord
from .rng import RngStream
from .seeds import play_super_episode, run_seeds, seeds_params
from .seeds_ut import run_seeds_ut, seedsut_params

ALGORITHMS = ("seeds", "seeds_ut", "oreps_baseline", "fixed_uniform")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass(frozen=True)
class RegretSummary:
    loss_regret: float
    switching_cost: float
    total: float
    n_switches: int
    comparator_loss: float


def compute_regret(record: ExperimentRecord, mdp: LayeredMdp, losses, beta: float = 1.0, *, realized=False) -> RegretSummary:
    """Loss regret against the best deterministic policy in hindsight plus beta per switch."""
    if losses is None:
        raise ValueError("compute_regret needs the full loss sequence")
    losses = np.asarray(losses, dtype=float)
    if losses.shape[0] != record.T:
        raise ValueError(f"loss sequence has {losses.shape[0]} episodes, record has {record.T}")
    _, best = best_fixed_policy(mdp, losses.sum(axis=0))
    learner = float((record.realized_loss if realized else record.expected_loss).sum())
    switching = beta * record.n_switches
    loss_regret = learner - best
    return RegretSummary(loss_regret, switching, loss_regret + switching, record.n_switches, best)


@dataclass(frozen=True)
class ExperimentConfig:
    mdp: dict
    adversary: AdversarySpec
    algorithm: str = "seeds"
    T: int = 1000
    beta: float = 1.0
    delta: float = 0.1
    c_eta: float = 1.0
    c_tau: float = 1.0
    c_gamma: float = 1.0
    tau: int | None = None
    eta: float | None = None
    replications: int = 1
    base_seed: int = 0
    output: str | None = None
    upper_method: str = "exact"
    lazy: bool = False

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["adversary"] = self.adversary.to_dict()
        return doc


_NUMBER_FIELDS = {"beta": float, "delta": float, "c_eta": float, "c_tau": float, "c_gamma": float, "eta": float}


def parse_config(doc: dict) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from a JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown field")
    if "mdp" not in doc:
        raise ConfigError("mdp", "missing")
    if not isinstance(doc["mdp"], dict):
        raise ConfigError("mdp", "expected an object")
    if "adversary" not in doc:
        raise ConfigError("adversary", "missing")
    try:
        adversary = AdversarySpec.from_dict(doc["adversary"])
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigError("adversary", str(exc)) from None
    kwargs = {"mdp": doc["mdp"], "adversary": adversary}
    for key in ("T", "replications", "base_seed", "tau"):
        if doc.get(key) is not None:
            val = doc[key]
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(key, f"expected an integer, got {val!r}")
            kwargs[key] = val
    for key, kind in _NUMBER_FIELDS.items():
        if doc.get(key) is not None:
            val = doc[key]
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(key, f"expected a number, got {val!r}")
            kwargs[key] = kind(val)
    for key in ("algorithm", "output", "upper_method"):
        if doc.get(key) is not None:
            if not isinstance(doc[key], str):
                raise ConfigError(key, "expected a string")
            kwargs[key] = doc[key]
    if "lazy" in doc:
        kwargs["lazy"] = bool(doc["lazy"])
    cfg = ExperimentConfig(**kwargs)
    check_config(cfg)
    return cfg


def check_config(cfg: ExperimentConfig) -> None:
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"expected one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if cfg.T < 1:
        raise ConfigError("T", "must be >= 1")
    if cfg.replications < 1:
        raise ConfigError("replications", "must be >= 1")
    if not cfg.beta > 0:
        raise ConfigError("beta", "must be positive")
    if not 0 < cfg.delta < 1:
        raise ConfigError("delta", "must lie in (0, 1)")
    for key in ("c_eta", "c_tau", "c_gamma"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, "must be positive")
    if cfg.tau is not None and cfg.tau < 1:
        raise ConfigError("tau", "must be >= 1")
    if cfg.eta is not None and not cfg.eta > 0:
        raise ConfigError("eta", "must be positive")
    if cfg.upper_method not in ("exact", "greedy"):
        raise ConfigError("upper_method", "expected 'exact' or 'greedy'")
    build_mdp(cfg.mdp)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return parse_config(json.loads(text))


def build_mdp(spec: dict) -> LayeredMdp:
    """Instantiate the MDP described by the ``mdp`` config block."""
    try:
        if "inline" in spec:
            mdp = LayeredMdp.from_dict(spec["inline"])
        elif "path" in spec:
            mdp = load_mdp(spec["path"])
        elif "generator" in spec:
            gen = spec["generator"]
            if gen == "lower_bound":
                mdp = lower_bound_mdp(int(spec["S"]), int(spec["H"]), int(spec["A"]))
            elif gen == "random":
                mdp = random_mdp(tuple(spec["layer_sizes"]), int(spec["A"]), RngStream(int(spec.get("seed", 0)), 3), float(spec.get("support", 1.0)))
            elif gen == "chain":
                mdp = chain_mdp(int(spec["H"]), int(spec.get("A", 2)))
            else:
                raise ValueError(f"unknown generator {gen!r}")
        else:
            raise ValueError("expected one of 'inline', 'path' or 'generator'")
    except KeyError as exc:
        raise ConfigError("mdp", f"missing parameter {exc.args[0]!r}") from None
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError("mdp", str(exc)) from None
    problems = validate_mdp(mdp)
    if problems:
        raise ConfigError("mdp", "; ".join(problems[:3]))
    return mdp


def resolve_params(cfg: ExperimentConfig, mdp: LayeredMdp):
    H, S, A = mdp.H, mdp.n_states_total, mdp.n_actions
    if cfg.algorithm == "seeds_ut":
        p = seedsut_params(cfg.T, H, S, A, cfg.beta, cfg.delta, cfg.c_eta, cfg.c_tau, cfg.c_gamma)
    else:
        p = seeds_params(cfg.T, H, S, A, cfg.beta, cfg.c_eta, cfg.c_tau)
    if cfg.algorithm == "oreps_baseline":
        p = replace(p, tau=1)
    elif cfg.tau is not None:
        p = replace(p, tau=cfg.tau)
    if cfg.eta is not None:
        p = replace(p, eta=cfg.eta)
    return p


def run_fixed_uniform(mdp: LayeredMdp, losses, rng: RngStream) -> ExperimentRecord:
    """One uniformly random deterministic policy, kept for the whole run."""
    T = losses.shape[0]
    policy = DeterministicPolicy(rng.child(0).generator().integers(0, mdp.n_actions, size=mdp.n_states))
    record = ExperimentRecord(T=T, tau=T)
    record.meta["algorithm"] = "fixed_uniform"
    record.policies.append(policy)
    play_super_episode(record, mdp, policy, losses, 0, 0, T, rng.child(1).generator(), None)
    return record


def run_once(cfg: ExperimentConfig, replication: int, mdp=None, losses=None):
    """One replication; returns ``(record, RegretSummary, params)``."""
    mdp = build_mdp(cfg.mdp) if mdp is None else mdp
    losses = generate_losses(cfg.adversary, mdp, cfg.T) if losses is None else losses
    stream = RngStream(cfg.base_seed + replication)
    params = resolve_params(cfg, mdp)
    if cfg.algorithm == "fixed_uniform":
        record = run_fixed_uniform(mdp, losses, stream)
    elif cfg.algorithm == "seeds_ut":
        record = run_seeds_ut(mdp, losses, params, rng=stream, upper_method=cfg.upper_method)
    else:
        record = run_seeds(mdp, losses, params, rng=stream, lazy=cfg.lazy)
    return record, compute_regret(record, mdp, losses, cfg.beta), params


def _replication_job(args):
    cfg_doc, r = args
    cfg = parse_config(cfg_doc)
    record, regret, params = run_once(cfg, r)
    record.meta.pop("final_q", None)
    record.meta.pop("final_q3", None)
    record.reports = []
    return r, record, regret, params


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("SEEDS_MDP_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def _stats(values):
    arr = np.asarray(values, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "stderr": se}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    regrets: list
    params: object
    summary: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, *, write=True) -> ExperimentResult:
    """Run every replication (seed ``base_seed + r``), aggregate, and persist."""
    check_config(cfg)
    mdp = build_mdp(cfg.mdp)
    workers = worker_count(cfg.replications)
    if workers > 1:
        doc = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = sorted(pool.map(_replication_job, [(doc, r) for r in range(cfg.replications)]), key=lambda x: x[0])
        records = [x[1] for x in results]
        regrets = [x[2] for x in results]
        params = results[0][3]
    else:
        losses = generate_losses(cfg.adversary, mdp, cfg.T)
        records, regrets = [], []
        for r in range(cfg.replications):
            record, regret, params = run_once(cfg, r, mdp, losses)
            records.append(record)
            regrets.append(regret)
    tau = getattr(params, "tau", cfg.T) if cfg.algorithm != "fixed_uniform" else cfg.T
    per_run = [
        {
            "replication": r,
            "seed": cfg.base_seed + r,
            "loss_regret": g.loss_regret,
            "switching_cost": g.switching_cost,
            "total_regret": g.total,
            "n_switches": g.n_switches,
            "n_super_episodes": rec.n_super_episodes,
            "switch_bound": math.ceil(cfg.T / tau),
        }
        for r, (rec, g) in enumerate(zip(records, regrets))
    ]
    summary = {
        "config": cfg.to_dict(),
        "params": {k: getattr(params, k) for k in ("eta", "tau", "gamma") if hasattr(params, k)},
        "comparator_loss": regrets[0].comparator_loss,
        "runs": per_run,
        "aggregate": {
            key: _stats([row[key] for row in per_run])
            for key in ("loss_regret", "switching_cost", "total_regret", "n_switches", "n_super_episodes")
        },
    }
    result = ExperimentResult(cfg, records, regrets, params, summary)
    if write and cfg.output:
        write_outputs(result, cfg.output)
    return result


def write_outputs(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for r, record in enumerate(result.records):
            record.write_csv(out / f"run_{r:03d}.csv")
        with open(out / "summary.json", "w", newline="\n", encoding="utf-8") as fh:
            json.dump(result.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc


def fit_loglog(T_values, regrets):
    """Least-squares slope and intercept of log(regret) against log(T)."""
    x = np.log(np.asarray(T_values, dtype=float))
    y = np.asarray(regrets, dtype=float)
    if np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive regrets")
    slope, intercept = np.polyfit(x, np.log(y), 1)
    return float(slope), float(intercept)


@dataclass
class SweepResult:
    slope: float
    intercept: float
    table: list


def sweep_and_fit(cfg: ExperimentConfig, T_list, *, write=True) -> SweepResult:
    """Re-run the experiment at each horizon (parameters re-derived per T) and
    fit the regret growth exponent."""
    T_list = [int(t) for t in T_list]
    if len(T_list) < 3 or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("sweep needs at least three increasing horizons")
    table = []
    for T in T_list:
        sub = None if cfg.output is None else str(Path(cfg.output) / f"T_{T}")
        res = run_experiment(replace(cfg, T=T, output=sub), write=write)
        agg = res.summary["aggregate"]
        table.append({
            "T": T,
            "tau": res.summary["params"].get("tau"),
            "eta": res.summary["params"].get("eta"),
            "mean_total_regret": agg["total_regret"]["mean"],
            "stderr_total_regret": agg["total_regret"]["stderr"],
            "mean_loss_regret": agg["loss_regret"]["mean"],
            "mean_switching_cost": agg["switching_cost"]["mean"],
        })
    slope, intercept = fit_loglog([row["T"] for row in table], [row["mean_total_regret"] for row in table])
    result = SweepResult(slope, intercept, table)
    if write and cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        keys = list(table[0])
        with open(out / "sweep.csv", "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(keys) + "\n")
            for row in table:
                fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys) + "\n")
        with open(out / "fit.json", "w", newline="\n", encoding="utf-8") as fh:
            json.dump({"slope": slope, "intercept": intercept}, fh, indent=2)
            fh.write("\n")
    return result
