"""Experiment orchestration: seeded multi-run training, logging, aggregation.

One experiment = one schedule, one dataset, n_runs independently seeded
models. Every run writes its own metrics.csv / measures.csv / checkpoints;
the experiment directory combines them, aggregates mean/min/max across runs,
and records a manifest from which the whole experiment can be reproduced
byte-for-byte.

Layout of an experiment directory:

    manifest.json
    metrics.csv               epoch,schedule,run_seed,metric,value
    measures.csv              epoch,schedule,run_seed,measure,scope,modality,value
    aggregate_metrics.csv     epoch,schedule,metric,mean,min,max,runs
    aggregate_measures.csv    epoch,schedule,measure,scope,modality,mean,min,max,runs
    runs/seed_<s>/            per-run CSVs and checkpoints/epoch_<n>.ckpt
"""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .data import Dataset, SyntheticParams, augmented_pool, generate_synthetic, load_csv_dataset
from .errors import ConfigError, ExperimentError, TrainingError
from .layout import default_layout
from .losses import elbo_loss
from .measures import measure_report
from .model import MultimodalVae, save_checkpoint
from .nn import RngState, adam_step
from .schedules import BetaSchedule, beta_at

MANIFEST_FORMAT_VERSION = 1

METRIC_NAMES = ("prediction_error", "reconstruction_loss", "latent_loss", "beta", "total_loss")

# rng stream tags
_TAG_INIT = 1
_TAG_TRAIN = 2
_TAG_EVAL_SUBSET = 3


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines an experiment's outputs."""

    schedule_kind: str = "constant1"
    total_epochs: int = 8000
    warmup_epochs: int = 1000
    cycle_length: int = 80
    tail_start: int | None = None
    batch_size: int | None = None       # None: one full-pool batch per epoch
    hidden_width: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    csv_path: str | None = None         # dataset source; None means synthetic
    n_samples: int = 2000
    data_seed: int = 1234
    noise: float = 0.01
    dt: float = 0.1
    contact_threshold: float = 0.75
    episode_length: int = 64
    eval_cadence: int = 250
    eval_set_size: int = 1024
    eval_holdout: bool = False
    n_runs: int = 20
    base_seed: int = 0
    checkpoint_cadence: int | None = None  # None: final checkpoint only
    workers: int = 1
    out_dir: str = ""

    def __post_init__(self):
        for name in ("total_epochs", "n_samples", "eval_cadence", "eval_set_size",
                     "n_runs", "workers", "hidden_width", "episode_length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.total_epochs % self.eval_cadence != 0:
            raise ConfigError(
                f"eval_cadence {self.eval_cadence} does not divide total_epochs {self.total_epochs}"
            )
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 (or None for full batches)")
        if self.checkpoint_cadence is not None and self.checkpoint_cadence < 1:
            raise ConfigError("checkpoint_cadence must be >= 1 (or None)")
        self.schedule()  # validates kind and schedule parameters

    def schedule(self) -> BetaSchedule:
        return BetaSchedule(
            kind=self.schedule_kind, total_epochs=self.total_epochs,
            warmup_epochs=self.warmup_epochs, cycle_length=self.cycle_length,
            tail_start=self.tail_start,
        )

    def synthetic_params(self) -> SyntheticParams:
        return SyntheticParams(
            noise=self.noise, dt=self.dt,
            contact_threshold=self.contact_threshold, episode_length=self.episode_length,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(canon).hexdigest()


# ----------------------------------------------------------------- data prep

def load_base_dataset(config: RunConfig) -> Dataset:
    if config.csv_path is not None:
        return load_csv_dataset(config.csv_path, default_layout())
    return generate_synthetic(config.data_seed, config.n_samples, config.synthetic_params())


def prepare_data(config: RunConfig) -> tuple[Dataset, Dataset]:
    """(training dataset, evaluation dataset); both share normalization stats.

    The eval set is a seed-determined subset drawn once and reused at every
    evaluation epoch. With eval_holdout the last eval_set_size samples are
    reserved for evaluation only.
    """
    base = load_base_dataset(config)
    size = config.eval_set_size
    if config.eval_holdout:
        if size >= len(base):
            raise ConfigError(f"holdout of {size} leaves no training data (have {len(base)})")
        train_vals = base.values[:-size]
        eval_vals = base.values[-size:]
    else:
        if size > len(base):
            raise ConfigError(f"eval_set_size {size} exceeds dataset size {len(base)}")
        perm = RngState.derive(config.data_seed, _TAG_EVAL_SUBSET).permutation(len(base))
        eval_vals = base.values[np.sort(perm[:size])]
        train_vals = base.values
    train = Dataset(train_vals, base.layout, dict(base.provenance, role="train"),
                    base.column_min, base.column_max)
    eval_ = Dataset(np.array(eval_vals), base.layout, dict(base.provenance, role="eval"),
                    base.column_min, base.column_max)
    return train, eval_


def _fingerprint(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()


# ------------------------------------------------------------------ training

def train_run(config: RunConfig, run_seed: int, run_dir: str | Path) -> dict:
    """One seeded training run; returns a status record for the manifest.

    A non-finite loss or parameter aborts the run and marks it failed; other
    runs of the experiment are unaffected.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        with threadpool_limits(limits=1):
            _train_run_inner(config, run_seed, run_dir)
    except TrainingError as exc:
        return {"seed": run_seed, "status": "failed",
                "error": f"{exc} (epoch={exc.epoch}, batch={exc.batch})"}
    return {"seed": run_seed, "status": "completed", "error": None}


def _train_run_inner(config: RunConfig, run_seed: int, run_dir: Path) -> None:
    train_ds, eval_ds = prepare_data(config)
    layout = train_ds.layout
    model = MultimodalVae.initialized(layout, config.hidden_width,
                                      RngState.derive(run_seed, _TAG_INIT))
    train_rng = RngState.derive(run_seed, _TAG_TRAIN)
    schedule = config.schedule()
    n_mod = len(layout.names)
    pools = {}
    metrics_rows: list[tuple] = []
    measures_rows: list[tuple] = []
    ckpt_dir = run_dir / "checkpoints"

    for epoch in range(config.total_epochs):
        beta = beta_at(schedule, epoch)
        key = epoch % n_mod
        if key not in pools:
            pools[key] = augmented_pool(train_ds, epoch)
        pool = pools[key]

        if config.batch_size is None:
            lb = elbo_loss(model, pool.inputs, pool.targets, beta, train_rng, epoch=epoch)
            adam_step(model.params, config.learning_rate, config.adam_beta1,
                      config.adam_beta2, config.adam_eps, epoch=epoch)
            epoch_recon, epoch_latent, epoch_total = \
                lb.reconstruction_loss, lb.latent_loss, lb.total
        else:
            order = train_rng.permutation(len(pool))
            acc = np.zeros(3)
            for bi, start in enumerate(range(0, len(pool), config.batch_size)):
                rows = order[start : start + config.batch_size]
                lb = elbo_loss(model, pool.inputs[rows], pool.targets[rows], beta,
                               train_rng, epoch=epoch, batch=bi)
                adam_step(model.params, config.learning_rate, config.adam_beta1,
                          config.adam_beta2, config.adam_eps, epoch=epoch)
                acc += len(rows) * np.array([lb.reconstruction_loss, lb.latent_loss, lb.total])
            epoch_recon, epoch_latent, epoch_total = acc / len(pool)

        done = epoch + 1
        if done % config.eval_cadence == 0:
            report = measure_report(model, eval_ds, epoch=done,
                                    expected_size=config.eval_set_size)
            for name, value in (
                ("prediction_error", report.prediction_error),
                ("reconstruction_loss", epoch_recon),
                ("latent_loss", epoch_latent),
                ("beta", beta),
                ("total_loss", epoch_total),
            ):
                metrics_rows.append((done, config.schedule_kind, run_seed, name, value))
            for meas, scope, modality, value in report.rows():
                measures_rows.append(
                    (done, config.schedule_kind, run_seed, meas, scope, modality, value)
                )
        if config.checkpoint_cadence is not None and done % config.checkpoint_cadence == 0 \
                and done != config.total_epochs:
            save_checkpoint(model, ckpt_dir / f"epoch_{done}.ckpt", done, train_rng)

    save_checkpoint(model, ckpt_dir / f"epoch_{config.total_epochs}.ckpt",
                    config.total_epochs, train_rng)
    _write_rows(run_dir / "metrics.csv",
                ("epoch", "schedule", "run_seed", "metric", "value"), metrics_rows)
    _write_rows(run_dir / "measures.csv",
                ("epoch", "schedule", "run_seed", "measure", "scope", "modality", "value"),
                measures_rows)


def _train_run_job(args: tuple) -> dict:
    config_dict, run_seed, run_dir = args
    return train_run(RunConfig.from_dict(config_dict), run_seed, run_dir)


# ---------------------------------------------------------------- experiment

@dataclass
class AggregateSeries:
    """Mean/min/max across runs for every logged series of one experiment."""

    schedule: str
    metric_rows: list = field(default_factory=list)
    measure_rows: list = field(default_factory=list)

    def metric_series(self, metric: str):
        rows = sorted(r for r in self.metric_rows if r["metric"] == metric)
        return _series_arrays(rows)

    def measure_series(self, measure: str, scope: str, modality: str):
        rows = sorted(
            r for r in self.measure_rows
            if (r["measure"], r["scope"], r["modality"]) == (measure, scope, modality)
        )
        return _series_arrays(rows)


def _series_arrays(rows):
    epochs = np.array([r["epoch"] for r in rows])
    return (epochs,
            np.array([r["mean"] for r in rows]),
            np.array([r["min"] for r in rows]),
            np.array([r["max"] for r in rows]))


def run_experiment(config: RunConfig) -> tuple[AggregateSeries, dict]:
    """All runs of one schedule; returns the aggregates and the manifest dict."""
    if not config.out_dir:
        raise ConfigError("experiment needs an out_dir")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [config.base_seed + i for i in range(config.n_runs)]
    jobs = [(config.to_dict(), seed, str(out / "runs" / f"seed_{seed}")) for seed in seeds]

    if config.workers > 1 and config.n_runs > 1:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(min(config.workers, config.n_runs)) as pool:
            statuses = pool.map(_train_run_job, jobs)
    else:
        statuses = [_train_run_job(job) for job in jobs]

    completed = [s["seed"] for s in statuses if s["status"] == "completed"]
    if not completed:
        raise ExperimentError(
            "all runs failed: " + "; ".join(str(s["error"]) for s in statuses)
        )

    metrics = _combine_runs(out, completed, "metrics.csv")
    measures = _combine_runs(out, completed, "measures.csv")
    agg = AggregateSeries(schedule=config.schedule_kind)
    agg.metric_rows = _aggregate(metrics, key_fields=("metric",), n_runs=len(completed))
    agg.measure_rows = _aggregate(measures, key_fields=("measure", "scope", "modality"),
                                  n_runs=len(completed))
    _write_aggregate(out / "aggregate_metrics.csv", config.schedule_kind,
                     ("metric",), agg.metric_rows)
    _write_aggregate(out / "aggregate_measures.csv", config.schedule_kind,
                     ("measure", "scope", "modality"), agg.measure_rows)

    train_ds, eval_ds = prepare_data(config)
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": "mmvae-experiment",
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": seeds,
        "runs": statuses,
        "dataset_fingerprint": _fingerprint(train_ds.values),
        "eval_fingerprint": _fingerprint(eval_ds.values),
        "outputs": {
            "metrics.csv": _file_hash(out / "metrics.csv"),
            "measures.csv": _file_hash(out / "measures.csv"),
        },
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return agg, manifest


def experiment_from_manifest(manifest_path: str | Path,
                             out_dir: str | Path | None = None) -> tuple[AggregateSeries, dict]:
    """Re-execute the experiment recorded in a manifest (optionally elsewhere)."""
    manifest = load_manifest(manifest_path)
    config = RunConfig.from_dict(manifest["config"])
    if out_dir is not None:
        config = replace(config, out_dir=str(out_dir))
    return run_experiment(config)


def load_manifest(path: str | Path) -> dict:
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ConfigError(f"unsupported manifest version {manifest.get('format_version')!r}")
    return manifest


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _combine_runs(out: Path, seeds: list[int], name: str) -> list[list[str]]:
    """Concatenate per-run CSVs (in seed order) into one experiment-level file."""
    header = None
    rows: list[list[str]] = []
    for seed in seeds:
        with open(out / "runs" / f"seed_{seed}" / name, newline="") as f:
            reader = csv.reader(f)
            head = next(reader)
            if header is None:
                header = head
            for row in reader:
                rows.append(row)
    _write_rows(out / name, header, rows, preformatted=True)
    return rows


def _aggregate(rows: list[list[str]], key_fields: tuple[str, ...], n_runs: int) -> list[dict]:
    """mean/min/max across runs for each (epoch, key) group, epoch-sorted."""
    offset = 3  # epoch, schedule, run_seed come first
    n_keys = len(key_fields)
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = (int(row[0]), *row[offset : offset + n_keys])
        groups.setdefault(key, []).append(float(row[offset + n_keys]))
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1:])):
        vals = groups[key]
        mn, mx = min(vals), max(vals)
        mean = min(max(float(np.mean(vals)), mn), mx)
        rec = {"epoch": key[0], "mean": mean, "min": mn, "max": mx, "runs": len(vals)}
        rec.update(dict(zip(key_fields, key[1:])))
        out.append(rec)
    return out


def _write_aggregate(path: Path, schedule: str, key_fields: tuple[str, ...],
                     rows: list[dict]) -> None:
    header = ("epoch", "schedule", *key_fields, "mean", "min", "max", "runs")
    table = [
        (r["epoch"], schedule, *[r[k] for k in key_fields],
         r["mean"], r["min"], r["max"], r["runs"])
        for r in rows
    ]
    _write_rows(path, header, table)


def _write_rows(path: Path, header, rows, preformatted: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if preformatted:
                writer.writerow(row)
            else:
                writer.writerow([_fmt(v) for v in row])


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------- comparison

def tail_windows(total_epochs: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """The two comparison windows: [6/8 T, 7/8 T) and [7/8 T, T]."""
    return ((6 * total_epochs / 8, 7 * total_epochs / 8),
            (7 * total_epochs / 8, total_epochs))


def compare_schedules(experiment_dirs, out_dir: str | Path | None = None) -> dict:
    """Window means per (schedule, series) over the two tail windows.

    All experiments must share the dataset, the eval set, and total_epochs.
    Returns {"measures": [...], "metrics": [...]} row dicts and optionally
    writes comparison.csv / comparison_metrics.csv.
    """
    manifests = [load_manifest(Path(d) / "manifest.json") for d in experiment_dirs]
    ref = manifests[0]
    for m in manifests[1:]:
        for key in ("dataset_fingerprint", "eval_fingerprint"):
            if m[key] != ref[key]:
                raise ValueError(f"experiments do not share {key.replace('_', ' ')}")
        if m["config"]["total_epochs"] != ref["config"]["total_epochs"]:
            raise ValueError("experiments do not share total_epochs")

    total = ref["config"]["total_epochs"]
    (lo1, hi1), (lo2, hi2) = tail_windows(total)
    measure_rows, metric_rows = [], []
    for directory, manifest in zip(experiment_dirs, manifests):
        directory = Path(directory)
        schedule = manifest["config"]["schedule_kind"]
        for window, lo, hi, include_hi in ((1, lo1, hi1, False), (2, lo2, hi2, True)):
            agg_meas = _read_aggregate(directory / "aggregate_measures.csv",
                                       ("measure", "scope", "modality"))
            for key, series in _window_means(agg_meas, lo, hi, include_hi).items():
                measure_rows.append({
                    "schedule": schedule, "measure": key[0], "scope": key[1],
                    "modality": key[2], "window": window, "mean": series,
                })
            agg_met = _read_aggregate(directory / "aggregate_metrics.csv", ("metric",))
            for key, series in _window_means(agg_met, lo, hi, include_hi).items():
                metric_rows.append({
                    "schedule": schedule, "metric": key[0], "window": window, "mean": series,
                })

    if out_dir is not None:
        out = Path(out_dir)
        _write_rows(out / "comparison.csv",
                    ("schedule", "measure", "scope", "modality", "window", "mean"),
                    [(r["schedule"], r["measure"], r["scope"], r["modality"],
                      r["window"], r["mean"]) for r in measure_rows])
        _write_rows(out / "comparison_metrics.csv",
                    ("schedule", "metric", "window", "mean"),
                    [(r["schedule"], r["metric"], r["window"], r["mean"])
                     for r in metric_rows])
    return {"measures": measure_rows, "metrics": metric_rows}


def _read_aggregate(path: Path, key_fields: tuple[str, ...]) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            row = {"epoch": int(rec["epoch"]), "mean": float(rec["mean"]),
                   "min": float(rec["min"]), "max": float(rec["max"])}
            for k in key_fields:
                row[k] = rec[k]
            rows.append(row)
    return rows


def _window_means(rows: list[dict], lo: float, hi: float, include_hi: bool) -> dict:
    keys = [k for k in rows[0] if k not in ("epoch", "mean", "min", "max")] if rows else []
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        e = r["epoch"]
        if e < lo or e > hi or (not include_hi and e >= hi):
            continue
        groups.setdefault(tuple(r[k] for k in keys), []).append(r["mean"])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}
