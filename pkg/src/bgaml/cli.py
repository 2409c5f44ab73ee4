"""Command-line entry point: scenarios, dataset generation, training, tuning, optimization."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import assign
from .bga import compare_runs, oracle_fitness, run_bga_ml, write_fitness_distributions
from .fixture import build_fixture, fixture_incident
from .gacore import GAConfig, Layout, run_ga
from .netmodel import Incident, NetworkError, NetworkSpec, incident_from_dict, load_network
from .surrogate.dataset import NetworkState, TrainingDataset, generate_dataset, network_state
from .surrogate.metrics import METRICS, evaluate_metrics
from .surrogate.models import RegressorSpec, fit, model_from_dict
from .surrogate.search import N_ITER_CHOICES, holdout_split, random_search

U64 = 2**64


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    network: str | None = None
    incident: dict | None = field(default_factory=lambda: asdict(fixture_incident()))
    ga: dict = field(default_factory=dict)
    surrogate: dict = field(default_factory=dict)
    model: str | None = None
    dataset: str | None = None
    plan: list[int] | None = None
    n_runs: int = 2000
    n_snapshots: int = 1
    tune_kind: str = "XGBT"
    n_iter: int = 100
    scoring: str = "R2"
    holdout: float = 0.2
    scenario: int = 1
    engine: str = "ga"
    seed: int = 0
    out: str = "out"
    oracle: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or not 0 <= self.seed < U64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.scenario not in (1, 2, 3, 4):
            raise ConfigError("scenario must be one of 1, 2, 3, 4")
        if self.engine not in ("ga", "bga"):
            raise ConfigError("engine must be 'ga' or 'bga'")
        for name in ("network", "model", "dataset"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{name} path {path} does not exist")

    def load_network(self) -> NetworkSpec:
        return build_fixture() if self.network is None else load_network(self.network)

    def load_incident(self, required: bool) -> Incident | None:
        if self.incident is None:
            if required:
                raise ConfigError("this run needs an incident but the config has none")
            return None
        return incident_from_dict(self.incident)

    def ga_config(self) -> GAConfig:
        return GAConfig(seed=self.seed, **self.ga)

    def regressor(self, kind: str | None = None) -> RegressorSpec:
        params = dict(self.surrogate)
        if kind is not None:
            params["kind"] = kind
        return RegressorSpec(seed=self.seed, **params)


# --- persistence helpers --------------------------------------------------


def save_bundle(path: Path, model, state: NetworkState | None) -> None:
    data = {"model": model.to_dict()}
    if state is not None:
        data["state"] = {"intervals": list(state.intervals), "columns": list(state.columns),
                         "values": [float(v) for v in state.values]}
    path.write_text(json.dumps(data, indent=1))


def load_bundle(path: str | Path):
    data = json.loads(Path(path).read_text())
    model = model_from_dict(data["model"])
    st = data.get("state")
    state = None
    if st is not None:
        state = NetworkState(tuple(st["intervals"]), tuple(st["columns"]), np.array(st["values"], dtype=float))
    return model, state


def write_plan(path: Path, network: NetworkSpec, plan) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "phase", "duration"])
        i = 0
        for c in network.controllers:
            for k in range(c.num_phases):
                w.writerow([c.id, k + 1, int(plan[i])])
                i += 1


def write_summary(path: Path, items: dict) -> None:
    lines = [f"{k}: {v}" for k, v in items.items()]
    path.write_text("\n".join(lines) + "\n")


def _ttt(network, plan, incident, oracle_kw) -> float:
    try:
        return assign.solve_ue(network, plan, incident, **oracle_kw).total_travel_time
    except assign.InfeasiblePlan:
        return float("inf")


def _flat(plan) -> str:
    return ";".join(str(int(p)) for p in plan)


# --- subcommands ----------------------------------------------------------


def _run_ga(cfg, network, incident, out: Path, prefix: str = "ga"):
    result = run_ga(cfg.ga_config(), Layout.of(network), oracle_fitness(network, incident, **cfg.oracle))
    result.log.to_csv(out / f"{prefix}_log.csv")
    return result


def cmd_scenario(cfg: RunConfig, out: Path) -> dict:
    network = cfg.load_network()
    s = cfg.scenario
    incident = cfg.load_incident(required=s in (2, 3, 4))
    start = time.perf_counter()
    summary: dict = {"scenario": s}
    if s in (1, 2):
        if s == 2 and cfg.plan is not None:
            plan, log = np.array(cfg.plan), None
        else:
            result = _run_ga(cfg, network, None, out)
            plan, log = result.best, result.log
        ttt = _ttt(network, plan, incident if s == 2 else None, cfg.oracle)
        if log is not None:
            summary["best_fitness"] = repr(float(log.best.max()))
            summary["convergence_generation"] = log.convergence_generation()
    elif s == 3:
        result = _run_ga(cfg, network, incident, out)
        plan, log = result.best, result.log
        ttt = -result.best_fitness
        summary["best_fitness"] = repr(result.best_fitness)
        summary["convergence_generation"] = log.convergence_generation()
    else:
        if cfg.model is None:
            raise ConfigError("scenario 4 needs a trained surrogate (config key 'model' or --model)")
        model, state = load_bundle(cfg.model)
        if state is None:
            state = network_state(network, incident, n_snapshots=cfg.n_snapshots, **cfg.oracle)
        bga = run_bga_ml(cfg.ga_config(), network, incident, model, state, **cfg.oracle)
        bga.log.to_csv(out / "bga_log.csv")
        bga.stats.to_csv(out / "phase_stats.csv", network)
        plan, ttt = bga.plan, bga.oracle_ttt
        summary["best_fitness"] = repr(float(bga.log.best.max()))
        summary["convergence_generation"] = bga.log.convergence_generation()
    write_plan(out / "plan.csv", network, plan)
    summary["plan"] = _flat(plan)
    summary["total_travel_time"] = repr(float(ttt))
    summary["wall_seconds"] = f"{time.perf_counter() - start:.3f}"
    return summary


def cmd_gen_dataset(cfg: RunConfig, out: Path) -> dict:
    network = cfg.load_network()
    incident = cfg.load_incident(required=False)
    start = time.perf_counter()
    data = generate_dataset(network, incident, cfg.n_runs, cfg.seed, n_snapshots=cfg.n_snapshots, **cfg.oracle)
    data.to_csv(out / "dataset.csv")
    return {
        "rows": len(data),
        "n_runs": cfg.n_runs,
        "duplicates_removed": data.duplicates,
        "failed_runs": data.dropped,
        "features": data.X.shape[1],
        "wall_seconds": f"{time.perf_counter() - start:.3f}",
    }


def _load_dataset(cfg: RunConfig) -> tuple[TrainingDataset, NetworkState]:
    if cfg.dataset is None:
        raise ConfigError("this command needs a dataset (config key 'dataset' or --dataset)")
    data = TrainingDataset.from_csv(cfg.dataset, cfg.load_network())
    if len(data) == 0:
        raise ConfigError(f"dataset {cfg.dataset} has no rows")
    state_cols = data.columns[data.n_plan :]
    intervals = tuple(sorted({int(c.rsplit("_t", 1)[1].split("_")[0]) for c in state_cols}))
    state = NetworkState(intervals, tuple(state_cols), data.X[0, data.n_plan :].copy())
    return data, state


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    data, state = _load_dataset(cfg)
    spec = cfg.regressor()
    start = time.perf_counter()
    train, test = holdout_split(len(data), cfg.holdout, cfg.seed)
    if len(train) == 0:
        raise ConfigError("dataset too small for a holdout split")
    model = fit(spec, data.X[train], data.y[train])
    metrics = evaluate_metrics(model.predict(data.X[test]), data.y[test])
    save_bundle(out / "model.json", model, state)
    with open(out / "holdout_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for m in METRICS:
            w.writerow([m, repr(metrics[m])])
    summary = {"kind": spec.kind, "train_rows": len(train), "holdout_rows": len(test)}
    summary.update({m: repr(metrics[m]) for m in METRICS})
    summary["wall_seconds"] = f"{time.perf_counter() - start:.3f}"
    return summary


def cmd_tune(cfg: RunConfig, out: Path) -> dict:
    data, _ = _load_dataset(cfg)
    start = time.perf_counter()
    report = random_search(cfg.tune_kind, data.X, data.y, cfg.n_iter, cfg.scoring, cfg.seed)
    report.to_csv(out / "cv_report.csv")
    best = report.best
    summary = {"kind": cfg.tune_kind, "scoring": cfg.scoring, "n_iter": cfg.n_iter,
               "candidates": len(report.candidates)}
    summary.update({f"best_{k}": v for k, v in best.spec.hyperparameters().items()}
                   if best.spec.kind != "LR" else {})
    summary.update({f"best_mean_{m}": repr(best.mean[m]) for m in METRICS})
    summary["wall_seconds"] = f"{time.perf_counter() - start:.3f}"
    return summary


def cmd_optimize(cfg: RunConfig, out: Path) -> dict:
    network = cfg.load_network()
    incident = cfg.load_incident(required=False)
    start = time.perf_counter()
    if cfg.engine == "ga":
        result = _run_ga(cfg, network, incident, out)
        plan, log = result.best, result.log
        ttt = -result.best_fitness
    else:
        if cfg.model is None:
            raise ConfigError("the bga engine needs a trained surrogate (--model)")
        model, state = load_bundle(cfg.model)
        if state is None:
            state = network_state(network, incident, n_snapshots=cfg.n_snapshots, **cfg.oracle)
        bga = run_bga_ml(cfg.ga_config(), network, incident, model, state, **cfg.oracle)
        bga.log.to_csv(out / "bga_log.csv")
        bga.stats.to_csv(out / "phase_stats.csv", network)
        write_fitness_distributions(out / "fitness_distributions.csv", {"bga": bga.log})
        plan, log, ttt = bga.plan, bga.log, bga.oracle_ttt
    write_plan(out / "plan.csv", network, plan)
    return {
        "engine": cfg.engine,
        "plan": _flat(plan),
        "total_travel_time": repr(float(ttt)),
        "best_fitness": repr(float(log.best.max())),
        "convergence_generation": log.convergence_generation(),
        "wall_seconds": f"{time.perf_counter() - start:.3f}",
    }


COMMANDS = {
    "scenario": cmd_scenario,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "tune": cmd_tune,
    "optimize": cmd_optimize,
}


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgaml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=_seed)
        p.add_argument("--out", help="output directory")
        if name == "scenario":
            p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4))
            p.add_argument("--model")
        if name == "optimize":
            p.add_argument("--engine", choices=("ga", "bga"))
            p.add_argument("--model")
        if name == "gen-dataset":
            p.add_argument("--n-runs", type=int, dest="n_runs")
        if name in ("train", "tune"):
            p.add_argument("--dataset")
        if name == "train":
            p.add_argument("--kind", choices=("LR", "RF", "GBDT", "XGBT"))
        if name == "tune":
            p.add_argument("--kind", dest="tune_kind", choices=("LR", "RF", "GBDT", "XGBT"))
            p.add_argument("--n-iter", type=int, dest="n_iter")
            p.add_argument("--scoring", choices=METRICS)
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "kind") and v is not None}
    cfg = replace(cfg, **overrides)
    if getattr(args, "kind", None):
        cfg = replace(cfg, surrogate={**cfg.surrogate, "kind": args.kind})
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out)
    except (ConfigError, NetworkError, ValueError, KeyError, TypeError, OSError) as e:
        print(f"bgaml {args.command}: error: {e}", file=sys.stderr)
        return 2
    write_summary(out / "summary.txt", summary)
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
