"""Named experiment sweeps and the multi-sensor rate-allocation search.

A sweep evaluates a grid of (axis value, method) cells on top of one base
scenario. Methods:

  ae_online / pca_online   codec inside the closed loop
  ae_offline / pca_offline reconstruction error on recorded test data only
  uc                       uncompressed, observation dim = the axis value
  uc(o)                    uncompressed with observation dim fixed at o

Trained autoencoders are cached on disk keyed by a content hash of everything
that determines them (scenario data distribution, sensor index, latent
dimension, training configuration), so repeated sweeps never retrain.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .codecs import (
    CodecDescriptor,
    TrainConfig,
    ae_train,
    load_codec,
    pca_fit,
    save_codec,
)
from .errors import ConfigError
from .simulation import (
    MeanStderr,
    MetricsSummary,
    PURPOSE_EVAL,
    PURPOSE_TRAIN,
    ScenarioConfig,
    SensorSpec,
    collect_dataset,
    evaluate_online,
    evaluate_offline,
    identity_codecs,
    scenario_hash,
    _LoopMatrices,
)

AXES = ("compression_dim", "observation_dim", "allocation_pair", "total_budget")
METHOD_RE = re.compile(r"^(ae_online|ae_offline|pca_online|pca_offline|uc|uc\((\d+)\))$")

# Per-sensor training setup used by the sweeps. Validation-based early
# stopping plus capped steps per epoch keep the codec grid affordable; the
# reconstruction problem is low-rank linear and converges within a few
# thousand minibatches.
SWEEP_TRAIN_CONFIG = TrainConfig(epochs=24, patience=3, steps_per_epoch=250, seed=0)


def check_method(method: str) -> None:
    if not METHOD_RE.match(method):
        raise ConfigError(f"unknown method {method!r}")


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    axis: str
    values: tuple
    methods: tuple[str, ...]

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep values must be nonempty")
        for m in self.methods:
            check_method(m)
        if self.axis == "allocation_pair":
            if self.base.budget is None:
                raise ConfigError("allocation sweeps need a declared budget")
            for pair in self.values:
                if len(pair) != 2 or sum(pair) != self.base.budget:
                    raise ConfigError(
                        f"allocation pair {tuple(pair)} does not sum to budget {self.base.budget}"
                    )

    @staticmethod
    def from_dict(doc: dict) -> "SweepSpec":
        unknown = set(doc) - {"base", "axis", "values", "methods"}
        if unknown:
            raise ConfigError(f"unknown keys in sweep spec: {sorted(unknown)}")
        values = doc["values"]
        if doc["axis"] == "allocation_pair":
            values = tuple(tuple(v) for v in values)
        else:
            values = tuple(values)
        return SweepSpec(
            base=ScenarioConfig.from_dict(doc["base"]),
            axis=doc["axis"],
            values=values,
            methods=tuple(doc["methods"]),
        )


@dataclass
class SweepResult:
    sweep_id: str
    axis: str
    cells: dict  # (axis_value_label, method) -> MetricsSummary
    optimal_allocation: dict = field(default_factory=dict)  # budget label -> (d1, d2)


def axis_label(value) -> str:
    if isinstance(value, (tuple, list)):
        return ":".join(str(v) for v in value)
    return str(value)


def sweep_id_for(spec: SweepSpec) -> str:
    doc = {
        "base": spec.base.to_dict(),
        "axis": spec.axis,
        "values": [list(v) if isinstance(v, tuple) else v for v in spec.values],
        "methods": list(spec.methods),
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


class CodecCache:
    """Disk + memory cache of trained autoencoders and collected datasets."""

    def __init__(self, cache_dir: str | None, train_cfg: TrainConfig = SWEEP_TRAIN_CONFIG):
        self.cache_dir = cache_dir
        self.train_cfg = train_cfg
        self._datasets: dict = {}
        self._codecs: dict = {}
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def dataset(self, cfg: ScenarioConfig, purpose: int = PURPOSE_TRAIN):
        key = (scenario_hash(cfg), purpose)
        if key not in self._datasets:
            self._datasets[key] = collect_dataset(cfg, purpose=purpose)
        return self._datasets[key]

    def ae_key(self, cfg: ScenarioConfig, sensor_index: int, latent_dim: int) -> str:
        doc = {
            "scenario": scenario_hash(cfg),
            "sensor": sensor_index,
            "latent": latent_dim,
            "train": self.train_cfg.to_dict(),
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def trained_ae(self, cfg: ScenarioConfig, sensor_index: int, latent_dim: int):
        key = self.ae_key(cfg, sensor_index, latent_dim)
        if key in self._codecs:
            return self._codecs[key]
        path = os.path.join(self.cache_dir, f"ae_{key}.json") if self.cache_dir else None
        if path and os.path.exists(path):
            codec = load_codec(path)
        else:
            data = self.dataset(cfg)[sensor_index]
            desc = CodecDescriptor("ae", input_dim=data.shape[1], latent_dim=latent_dim)
            codec, _ = ae_train(desc, data, self.train_cfg)
            if path:
                save_codec(codec, path)
        self._codecs[key] = codec
        return codec

    def pca(self, cfg: ScenarioConfig, sensor_index: int, latent_dim: int):
        data = self.dataset(cfg)[sensor_index]
        return pca_fit(data, latent_dim)


def _offline_summary(cfg: ScenarioConfig, codecs, cache: CodecCache) -> MetricsSummary:
    """L1-only summary on test-range recorded data (no closed-loop effect)."""
    test_data = cache.dataset(cfg, purpose=PURPOSE_EVAL)
    l1 = [evaluate_offline(test_data[i], codecs[i]) for i in range(len(codecs))]
    return MetricsSummary(
        l1_per_sensor=l1, l2=None, l3_total=None, l3_per_step=None,
        rounds=cfg.rounds, diverged_rounds=0,
    )


def _with_obs_dim(cfg: ScenarioConfig, obs_dim: int) -> ScenarioConfig:
    sensors = tuple(
        SensorSpec(obs_dim=obs_dim, r_scale=s.r_scale, c_seed=s.c_seed, elem_variance=s.elem_variance)
        for s in cfg.sensors
    )
    doc = cfg.to_dict()
    doc["sensors"] = [s.to_dict() for s in sensors]
    doc["codecs"] = None
    doc["budget"] = None
    return ScenarioConfig.from_dict(doc)


def _strip_budget(cfg: ScenarioConfig) -> ScenarioConfig:
    doc = cfg.to_dict()
    doc["codecs"] = None
    doc["budget"] = None
    return ScenarioConfig.from_dict(doc)


def _run_method_cell(cfg: ScenarioConfig, method: str, latent_dim: int, cache: CodecCache) -> MetricsSummary:
    """Evaluate one (scenario, method, latent dim) cell; cfg carries the axis value."""
    bare = _strip_budget(cfg)
    mats = _LoopMatrices(bare)
    if method == "uc":
        return evaluate_online(bare, identity_codecs(mats.sensors), mats=mats)
    if method.startswith("uc("):
        fixed = int(METHOD_RE.match(method).group(2))
        fixed_cfg = _with_obs_dim(bare, fixed)
        fixed_mats = _LoopMatrices(fixed_cfg)
        return evaluate_online(fixed_cfg, identity_codecs(fixed_mats.sensors), mats=fixed_mats)
    kind = method.split("_")[0]
    if kind == "ae":
        codecs = [cache.trained_ae(bare, i, latent_dim) for i in range(len(bare.sensors))]
    else:
        codecs = [cache.pca(bare, i, latent_dim) for i in range(len(bare.sensors))]
    if method.endswith("_online"):
        return evaluate_online(bare, codecs, mats=mats)
    return _offline_summary(bare, codecs, cache)


def _run_cells(spec: SweepSpec, jobs: int, cell_fn, keys) -> dict:
    """Evaluate cells (optionally in a thread pool), assembling in fixed order."""
    if jobs <= 1:
        return {key: cell_fn(key) for key in keys}
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {key: pool.submit(cell_fn, key) for key in keys}
        return {key: futures[key].result() for key in keys}


def sweep_compression_dims(
    base: ScenarioConfig,
    dims,
    methods=("ae_online", "ae_offline", "pca_online", "pca_offline", "uc", "uc(20)"),
    cache: CodecCache | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Vary the latent dimension of a single sensor at fixed observation dim.

    The `uc` method rebuilds the sensor with observation dim equal to the
    axis value (same c_seed, so dims are reproducible)."""
    if len(base.sensors) != 1:
        raise ConfigError("compression-dim sweeps require a single sensor")
    spec = SweepSpec(base=base, axis="compression_dim", values=tuple(dims), methods=tuple(methods))
    cache = cache or CodecCache(None)

    def cell(key):
        d, method = key
        if method == "uc":
            return _run_method_cell(_with_obs_dim(base, int(d)), "uc", int(d), cache)
        return _run_method_cell(base, method, int(d), cache)

    keys = [(d, m) for d in spec.values for m in spec.methods]
    cells = _run_cells(spec, jobs, cell, keys)
    return SweepResult(
        sweep_id=sweep_id_for(spec),
        axis=spec.axis,
        cells={(axis_label(d), m): v for (d, m), v in cells.items()},
    )


def sweep_observation_dims(
    base: ScenarioConfig,
    obs_dims,
    fixed_d: int,
    methods=("ae_online", "ae_offline", "pca_online", "pca_offline", "uc"),
    cache: CodecCache | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Vary the observation dimension at a fixed compression dimension.

    Observation matrices are regenerated per axis value from (c_seed,
    obs_dim); the `uc` method is the uncompressed loop on the same sensors."""
    if len(base.sensors) != 1:
        raise ConfigError("observation-dim sweeps require a single sensor")
    spec = SweepSpec(base=base, axis="observation_dim", values=tuple(obs_dims), methods=tuple(methods))
    cache = cache or CodecCache(None)

    def cell(key):
        n_y, method = key
        return _run_method_cell(_with_obs_dim(base, int(n_y)), method, fixed_d, cache)

    keys = [(n_y, m) for n_y in spec.values for m in spec.methods]
    cells = _run_cells(spec, jobs, cell, keys)
    return SweepResult(
        sweep_id=sweep_id_for(spec),
        axis=spec.axis,
        cells={(axis_label(n_y), m): v for (n_y, m), v in cells.items()},
    )


def _allocation_pairs(r_t: int):
    return [(d1, r_t - d1) for d1 in range(1, r_t)]


def _evaluate_allocation(base: ScenarioConfig, pair, cache: CodecCache, method: str = "ae_online") -> MetricsSummary:
    bare = _strip_budget(base)
    mats = _LoopMatrices(bare)
    kind = method.split("_")[0]
    if kind == "ae":
        codecs = [cache.trained_ae(bare, i, d) for i, d in enumerate(pair)]
    else:
        codecs = [cache.pca(bare, i, d) for i, d in enumerate(pair)]
    return evaluate_online(bare, codecs, mats=mats)


def allocation_sweep(
    base2sensor: ScenarioConfig,
    r_t: int,
    methods=("ae_online",),
    cache: CodecCache | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Exhaustive search over (d1, r_t - d1) splits of the transmission budget."""
    if len(base2sensor.sensors) != 2:
        raise ConfigError("allocation sweeps require exactly two sensors")
    pairs = _allocation_pairs(r_t)
    doc = base2sensor.to_dict()
    doc["budget"] = r_t
    doc["codecs"] = None
    base = ScenarioConfig.from_dict(doc)
    spec = SweepSpec(base=base, axis="allocation_pair", values=tuple(pairs), methods=tuple(methods))
    cache = cache or CodecCache(None)

    def cell(key):
        pair, method = key
        return _evaluate_allocation(base, pair, cache, method)

    keys = [(pair, m) for pair in pairs for m in spec.methods]
    cells = _run_cells(spec, jobs, cell, keys)
    result = SweepResult(
        sweep_id=sweep_id_for(spec),
        axis=spec.axis,
        cells={(axis_label(p), m): v for (p, m), v in cells.items()},
    )
    best = _argmin_l3({p: cells[(p, methods[0])] for p in pairs})
    if best is not None:
        result.optimal_allocation[str(r_t)] = best
    return result


def _argmin_l3(by_pair: dict):
    best, best_val = None, np.inf
    for pair, summary in by_pair.items():
        if summary.unstable or summary.l3_total is None:
            continue
        if summary.l3_total.mean < best_val:
            best, best_val = pair, summary.l3_total.mean
    return best


def total_budget_sweep(
    base2sensor: ScenarioConfig,
    budgets,
    methods=("ae_online",),
    cache: CodecCache | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Optimal allocation (by L3) for each total transmission budget."""
    cache = cache or CodecCache(None)
    cells = {}
    optimal = {}
    for r_t in budgets:
        sub = allocation_sweep(base2sensor, int(r_t), methods=methods, cache=cache, jobs=jobs)
        pair = sub.optimal_allocation.get(str(int(r_t)))
        if pair is None:
            raise ConfigError(f"every allocation diverged for budget {r_t}")
        optimal[str(int(r_t))] = pair
        for m in methods:
            cells[(str(int(r_t)), m)] = sub.cells[(axis_label(pair), m)]
    spec = SweepSpec(
        base=base2sensor, axis="total_budget", values=tuple(int(b) for b in budgets), methods=tuple(methods)
    )
    return SweepResult(
        sweep_id=sweep_id_for(spec), axis=spec.axis, cells=cells, optimal_allocation=optimal
    )


def _with_single_sensor(cfg: ScenarioConfig, keep_index: int) -> ScenarioConfig:
    doc = cfg.to_dict()
    doc["sensors"] = [cfg.sensors[keep_index].to_dict()]
    doc["codecs"] = None
    doc["budget"] = None
    # Preserve the original c_seed default so the kept sensor's C is unchanged.
    if doc["sensors"][0]["c_seed"] is None:
        doc["sensors"][0]["c_seed"] = 1000 + keep_index
    return ScenarioConfig.from_dict(doc)


def table_one(
    base2sensor: ScenarioConfig,
    r_t: int = 6,
    cache: CodecCache | None = None,
    jobs: int = 1,
):
    """Compare the optimal compressed allocation against uncompressed baselines.

    Rows: the best (d1, d2) split of budget r_t, each sensor alone
    uncompressed, both sensors uncompressed, and both sensors reduced to
    observation dimension 3.
    """
    if len(base2sensor.sensors) != 2:
        raise ConfigError("table_one requires exactly two sensors")
    cache = cache or CodecCache(None)
    alloc = allocation_sweep(base2sensor, r_t, cache=cache, jobs=jobs)
    best_pair = alloc.optimal_allocation.get(str(r_t))
    rows = {}
    if best_pair is None:
        raise ConfigError(f"every allocation diverged for budget {r_t}")
    rows[f"optimal({best_pair[0]},{best_pair[1]})"] = alloc.cells[(axis_label(best_pair), "ae_online")]
    for i, name in ((0, "uc_sensor1"), (1, "uc_sensor2")):
        solo = _with_single_sensor(base2sensor, i)
        rows[name] = _run_method_cell(solo, "uc", solo.sensors[0].obs_dim, cache)
    both = _strip_budget(base2sensor)
    rows["uc_both"] = _run_method_cell(both, "uc", 0, cache)
    small = _with_obs_dim(base2sensor, 3)
    rows["uc3_both"] = _run_method_cell(small, "uc", 3, cache)
    return {"best_pair": best_pair, "rows": rows, "allocation": alloc}


CSV_HEADER = ["sweep_id", "axis_value", "method", "sensor_id", "metric", "mean", "stderr", "rounds", "diverged"]
METRIC_NAMES = ("l1", "l2", "l3_total", "l3_per_step")


def _metric_rows(result: SweepResult):
    rows = {name: [] for name in METRIC_NAMES}
    for (axis_value, method), summary in result.cells.items():
        base = [result.sweep_id, axis_value, method]
        for i, ms in enumerate(summary.l1_per_sensor):
            rows["l1"].append(
                base + [str(i), "l1", repr(ms.mean), repr(ms.stderr), str(summary.rounds), str(summary.diverged_rounds)]
            )
        for name, ms in (("l2", summary.l2), ("l3_total", summary.l3_total), ("l3_per_step", summary.l3_per_step)):
            if ms is None:
                continue
            rows[name].append(
                base + ["", name, repr(ms.mean), repr(ms.stderr), str(summary.rounds), str(summary.diverged_rounds)]
            )
    return rows


def emit_report(result: SweepResult, out_dir: str) -> list[str]:
    """Write one CSV per metric plus a plain-text summary table."""
    os.makedirs(out_dir, exist_ok=True)
    rows = _metric_rows(result)
    written = []
    for name in METRIC_NAMES:
        if not rows[name]:
            continue
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            writer.writerows(rows[name])
        written.append(path)
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write(render_summary(result))
    written.append(summary_path)
    return written


def render_summary(result: SweepResult) -> str:
    lines = [f"sweep {result.sweep_id} (axis: {result.axis})"]
    header = f"{'axis':>12} {'method':>14} {'l2':>12} {'l3_total':>14} {'l1[s]':>30} {'div':>4}"
    lines.append(header)
    for (axis_value, method), s in result.cells.items():
        l2 = f"{s.l2.mean:.4f}" if s.l2 is not None and np.isfinite(s.l2.mean) else "-"
        l3 = (
            f"{s.l3_total.mean:.4f}±{s.l3_total.stderr:.4f}"
            if s.l3_total is not None and np.isfinite(s.l3_total.mean)
            else ("unstable" if s.unstable else "-")
        )
        l1 = " ".join(
            f"{ms.mean:.4f}" if np.isfinite(ms.mean) else "nan" for ms in s.l1_per_sensor
        )
        lines.append(f"{axis_value:>12} {method:>14} {l2:>12} {l3:>14} {l1:>30} {s.diverged_rounds:>4}")
    if result.optimal_allocation:
        lines.append("optimal allocations:")
        for budget, pair in result.optimal_allocation.items():
            lines.append(f"  budget {budget}: ({pair[0]},{pair[1]})")
    return "\n".join(lines) + "\n"


def read_report(out_dir: str) -> dict:
    """Parse emitted CSVs back into {(axis_value, method): {metric: ...}}."""
    cells: dict = {}
    for name in METRIC_NAMES:
        path = os.path.join(out_dir, f"{name}.csv")
        if not os.path.exists(path):
            continue
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_HEADER:
                raise ConfigError(f"{path} has unexpected columns {reader.fieldnames}")
            for row in reader:
                key = (row["axis_value"], row["method"])
                entry = cells.setdefault(key, {})
                metric = row["metric"]
                record = MeanStderr(float(row["mean"]), float(row["stderr"]))
                if metric == "l1":
                    entry.setdefault("l1", {})[int(row["sensor_id"])] = record
                else:
                    entry[metric] = record
                entry["rounds"] = int(row["rounds"])
                entry["diverged"] = int(row["diverged"])
    return cells
