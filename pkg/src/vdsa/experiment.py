"""Experiment orchestration: spec files, training, evaluation and result files.

An experiment spec names a scenario preset, optional config overrides and a
list of agent variants. All variants share the evaluation seeds, so they are
compared on identical channel realisations. Offline training data is gathered
once per experiment with pure exploration and replayed into each variant's
table, truncated at that variant's sample target.

Output layout under ``out``::

    manifest.json            spec, full config, digest, seeds, file list
    summary.json             per-variant aggregates
    config.yaml              resolved simulation config
    tables/<name>_trained.qtbl / .csv, tables/<name>_final.qtbl / .csv
    runs/reception.csv       variant, run, platoon, position, attempts, successes
    runs/bands.csv           variant, run, platoon, epoch, band
    runs/dtt_sir.csv         variant, dtt_channel, sample, sir_db
    plots/*.csv              see emit_plot_data
"""

from __future__ import annotations

import csv
import json
import logging
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vdsa.config import PRESETS, SimulationConfig, dump_yaml, from_plain, load_yaml, merge_overrides, preset, to_plain
from vdsa.engine import (
    BaselineAgent,
    MetricsLog,
    QLearningAgent,
    Simulation,
    Transitions,
    band_switch_stats,
    collect_training_transitions,
    dtt_sir_cdf,
    per_run_reception,
    reception_rate_by_position,
    replay_transitions,
    violation_fraction,
)
from vdsa.learning.qtable import QTable
from vdsa.scenario import ConfigError

LOG = logging.getLogger(__name__)

VARIANTS = ("baseline", "eps_greedy_ideal", "eps_greedy_federated", "softmax_ideal")
DEFAULT_RUNS = 20
PAPER_RUNS = 200


@dataclass(frozen=True)
class VariantSpec:
    name: str
    variant: str
    training_samples_target: int = 0
    epsilon: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if not self.name or any(c in self.name for c in "/\\ "):
            raise ConfigError(f"variant name {self.name!r} must be a non-empty token")
        if self.training_samples_target < 0:
            raise ConfigError("training_samples_target must be non-negative")
        if self.epsilon is not None:
            if not self.variant.startswith("eps_greedy"):
                raise ConfigError(f"{self.name}: epsilon only applies to eps_greedy variants")
            if not 0.0 <= self.epsilon <= 1.0:
                raise ConfigError(f"{self.name}: epsilon must lie in [0, 1]")
        if self.variant == "baseline" and self.training_samples_target:
            raise ConfigError(f"{self.name}: the baseline takes no training")

    @property
    def learns(self) -> bool:
        return self.variant != "baseline"

    @property
    def fusion(self) -> str:
        return "federated" if self.variant.endswith("federated") else "ideal"

    @property
    def policy(self) -> str:
        return "softmax" if self.variant.startswith("softmax") else "epsilon_greedy"


@dataclass(frozen=True)
class ExperimentSpec:
    preset: str = "three_platoons_six"
    variants: tuple[VariantSpec, ...] = (VariantSpec("baseline", "baseline"),)
    runs: int = DEFAULT_RUNS
    master_seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("variant names must be unique")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")

    def simulation_config(self) -> SimulationConfig:
        base = preset(self.preset)
        if not self.overrides:
            return base
        merged = merge_overrides(base.to_dict(), self.overrides)
        return SimulationConfig.from_dict(merged)

    def to_dict(self) -> dict:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        spec = from_plain(cls, data, "spec")
        spec.simulation_config()  # surface override errors early
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_dict(load_yaml(path))

    def with_runs(self, runs: int) -> "ExperimentSpec":
        return ExperimentSpec(self.preset, self.variants, runs, self.master_seed, self.overrides)

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return ExperimentSpec(self.preset, self.variants, self.runs, seed, self.overrides)


@dataclass
class VariantResult:
    spec: VariantSpec
    metrics: MetricsLog
    trained_table: QTable | None = None
    final_table: QTable | None = None
    training_samples: int = 0


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    config: SimulationConfig
    variants: dict[str, VariantResult]


# ---------------------------------------------------------------------------
# training and evaluation


def train_tables(
    spec: ExperimentSpec, sim: Simulation, workers: int = 1, cache: Path | None = None
) -> dict[str, tuple[QTable, int]]:
    """Trained table and used sample count for every learning variant."""
    learners = [v for v in spec.variants if v.learns]
    target = max((v.training_samples_target for v in learners), default=0)
    out: dict[str, tuple[QTable, int]] = {}
    trans = None
    if target > 0:
        path = cache / f"training_{sim.config.digest()}_{spec.master_seed}_{target}.npz" if cache else None
        if path is not None and path.exists():
            trans = Transitions.load(path)
        else:
            LOG.info("collecting %d training samples", target)
            trans = collect_training_transitions(sim, target, spec.master_seed, workers)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                trans.save(path)
    for v in learners:
        table = QTable.zeros(sim.config.quantizer.levels, sim.K)
        if v.training_samples_target > 0:
            table = replay_transitions(
                trans, table, sim.M, sim.config.learning, v.fusion, limit=v.training_samples_target
            )
        out[v.name] = (table, table.total_samples)
    return out


def make_agent(v: VariantSpec, sim: Simulation, table: QTable | None):
    cfg = sim.config
    if not v.learns:
        return BaselineAgent(cfg.baseline)
    return QLearningAgent(
        table.copy(),
        sim.M,
        cfg.learning,
        policy=v.policy,
        fusion=v.fusion,
        action_mapping=cfg.engine.action_mapping,
        epsilon=v.epsilon,
    )


_EVAL_SIM: Simulation | None = None


def _init_eval(config: SimulationConfig) -> None:
    global _EVAL_SIM
    _EVAL_SIM = Simulation(config)


def _baseline_run(args: tuple[int, int]) -> MetricsLog:
    run_index, seed = args
    return _EVAL_SIM.run_episode(BaselineAgent(_EVAL_SIM.config.baseline), run_index, seed).metrics


def evaluate_variant(
    v: VariantSpec, sim: Simulation, runs: int, master_seed: int, table: QTable | None = None, workers: int = 1
) -> tuple[MetricsLog, QTable | None]:
    """Evaluation runs ``0..runs-1``; learning agents keep learning across runs."""
    if not v.learns and workers > 1:
        # runs are independent without a carried table
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(i, master_seed) for i in range(runs)]
        with ProcessPoolExecutor(workers, initializer=_init_eval, initargs=(sim.config,)) as pool:
            logs = list(pool.map(_baseline_run, jobs))
        return MetricsLog.merge(logs), None
    agent = make_agent(v, sim, table)
    results = sim.run(agent, runs, master_seed)
    final = agent.table.copy() if v.learns else None
    return MetricsLog.merge([r.metrics for r in results]), final


def run_experiment(
    spec: ExperimentSpec, out: str | Path | None = None, workers: int = 1, cache: str | Path | None = None
) -> ExperimentResult:
    config = spec.simulation_config()
    sim = Simulation(config)
    cache = Path(cache) if cache else (Path(out) / "cache" if out else None)
    trained = train_tables(spec, sim, workers, cache)
    variants = {}
    for v in spec.variants:
        table, used = trained.get(v.name, (None, 0))
        LOG.info("evaluating %s over %d runs", v.name, spec.runs)
        metrics, final = evaluate_variant(v, sim, spec.runs, spec.master_seed, table, workers)
        variants[v.name] = VariantResult(v, metrics, table, final, used)
    result = ExperimentResult(spec, config, variants)
    if out is not None:
        write_results(result, out)
    return result


# ---------------------------------------------------------------------------
# summaries and files


def summarize_variant(vr: VariantResult, sir_min_db: float) -> dict:
    m = vr.metrics
    rates = reception_rate_by_position(m)
    last = max(rates) if rates else None
    per_run = per_run_reception(m, last) if last is not None else np.empty(0)
    se = float(per_run.std(ddof=1) / math.sqrt(per_run.size)) if per_run.size > 1 else float("nan")
    cdfs = dtt_sir_cdf(m, sir_min_db)
    quant = {}
    for band, c in cdfs.items():
        if c.empty:
            quant[str(band)] = None
            continue
        quant[str(band)] = {
            f"p{int(q * 100):02d}": float(np.quantile(c.samples_db[np.isfinite(c.samples_db)], q))
            if np.isfinite(c.samples_db).any()
            else float("inf")
            for q in (0.01, 0.05, 0.1, 0.5, 0.9)
        }
    return {
        "variant": vr.spec.variant,
        "training_samples": vr.training_samples,
        "runs": m.runs,
        "reception_by_position": {str(k): v for k, v in rates.items()},
        "last_position": last,
        "last_position_mean": float(per_run.mean()) if per_run.size else float("nan"),
        "last_position_se": se,
        "switches_per_platoon": band_switch_stats(m),
        "dtt_violation_fraction": violation_fraction(m, sir_min_db),
        "dtt_violation_by_channel": {str(b): c.violation_fraction for b, c in cdfs.items()},
        "dtt_sir_quantiles_db": quant,
        "power_floor_events": int(m.floor_events),
    }


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def write_results(result: ExperimentResult, out: str | Path) -> list[str]:
    """Write every output file; the directory is filled atomically per file set."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        files = _write_into(result, staging)
        for rel in files:
            dst = out / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            (staging / rel).replace(dst)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return files


def _write_into(result: ExperimentResult, out: Path) -> list[str]:
    files: list[str] = []
    spec, cfg = result.spec, result.config
    for sub in ("tables", "runs", "plots"):
        (out / sub).mkdir(exist_ok=True)

    (out / "config.yaml").write_text(dump_yaml(cfg.to_dict()), encoding="utf-8")
    files.append("config.yaml")

    rec_rows, band_rows, sir_rows = [], [], []
    for name, vr in result.variants.items():
        m = vr.metrics
        runs, M, n = m.leader_attempts.shape
        for r in range(runs):
            for p in range(M):
                for pos in range(1, n):
                    rec_rows.append([name, r, p, pos, int(m.leader_attempts[r, p, pos]), int(m.leader_successes[r, p, pos])])
                for e, b in enumerate(m.band_history[r, p]):
                    band_rows.append([name, r, p, e, int(b)])
        for ch, samples in sorted(m.dtt_sir_samples_db.items()):
            for i, x in enumerate(samples):
                sir_rows.append([name, ch, i, repr(float(x))])
        for tag, table in (("trained", vr.trained_table), ("final", vr.final_table)):
            if table is not None:
                table.save(out / "tables" / f"{name}_{tag}.qtbl")
                table.to_csv(out / "tables" / f"{name}_{tag}.csv")
                files += [f"tables/{name}_{tag}.qtbl", f"tables/{name}_{tag}.csv"]
    _write_csv(out / "runs" / "reception.csv", ["variant", "run", "platoon", "position", "attempts", "successes"], rec_rows)
    _write_csv(out / "runs" / "bands.csv", ["variant", "run", "platoon", "epoch", "band"], band_rows)
    _write_csv(out / "runs" / "dtt_sir.csv", ["variant", "dtt_channel", "sample", "sir_db"], sir_rows)
    files += ["runs/reception.csv", "runs/bands.csv", "runs/dtt_sir.csv"]

    files += ["plots/" + p for p in emit_plot_data(result, out / "plots")]

    sir_min = cfg.protection.sir_min_db
    summary = {name: summarize_variant(vr, sir_min) for name, vr in result.variants.items()}
    _dump_json(out / "summary.json", summary)
    files.append("summary.json")

    manifest = {
        "spec": spec.to_dict(),
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "master_seed": spec.master_seed,
        "evaluation_runs": list(range(spec.runs)),
        "training_samples": {n: vr.training_samples for n, vr in result.variants.items()},
        "files": sorted(files + ["manifest.json"]),
    }
    _dump_json(out / "manifest.json", manifest)
    files.append("manifest.json")
    return files


def emit_plot_data(result: ExperimentResult, out: str | Path, cdf_points: int = 1000) -> list[str]:
    """Plot-ready tables: reception vs position, switches per platoon, DTT SIR CDF."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rec, sw, cdf = [], [], []
    sir_min = result.config.protection.sir_min_db
    for name, vr in result.variants.items():
        m = vr.metrics
        att = m.leader_attempts.sum(axis=(0, 1))
        ok = m.leader_successes.sum(axis=(0, 1))
        for pos, rate in reception_rate_by_position(m).items():
            rec.append([name, pos, repr(rate), int(att[pos]), int(ok[pos])])
        per_platoon = m.band_switches.mean(axis=0)
        for p, s in enumerate(per_platoon):
            sw.append([name, p, repr(float(s))])
        sw.append([name, "all", repr(band_switch_stats(m))])
        for ch, c in dtt_sir_cdf(m, sir_min).items():
            if c.empty:
                continue
            idx = np.unique(np.linspace(0, c.samples_db.size - 1, min(cdf_points, c.samples_db.size)).round().astype(int))
            for i in idx:
                cdf.append([name, ch, repr(float(c.samples_db[i])), repr(float(c.fractions[i]))])
    _write_csv(out / "reception_vs_position.csv", ["variant", "position", "rate", "attempts", "successes"], rec)
    _write_csv(out / "switches_per_platoon.csv", ["variant", "platoon", "mean_switches"], sw)
    _write_csv(out / "dtt_sir_cdf.csv", ["variant", "dtt_channel", "sir_db", "fraction"], cdf)
    return ["reception_vs_position.csv", "switches_per_platoon.csv", "dtt_sir_cdf.csv"]


def load_summary(out: str | Path) -> dict:
    path = Path(out) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"no summary.json under {out}")
    return json.loads(path.read_text(encoding="utf-8"))
