"""Command-line front end: collect, train, eval, sweep, report.

All commands take a JSON config (strictly parsed) and write into --out.
Runs are reproducible: the same config and seed produce byte-identical
output files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .codecs import CodecDescriptor, IdentityCodec, TrainConfig, ae_train, load_codec, pca_fit, save_codec
from .errors import ConfigError
from .experiments import (
    CodecCache,
    SweepResult,
    SweepSpec,
    allocation_sweep,
    emit_report,
    read_report,
    render_summary,
    sweep_compression_dims,
    sweep_observation_dims,
    sweep_id_for,
    total_budget_sweep,
)
from .simulation import (
    PURPOSE_EVAL,
    ScenarioConfig,
    collect_dataset,
    evaluate_online,
    identity_codecs,
    _LoopMatrices,
)


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _scenario(doc: dict, seed: int | None) -> ScenarioConfig:
    if seed is not None:
        doc = dict(doc, root_seed=seed)
    return ScenarioConfig.from_dict(doc)


def _resolve_codecs(cfg: ScenarioConfig, mats: _LoopMatrices):
    """Codecs for an eval run: checkpoints where given, identity otherwise."""
    if cfg.codecs is None:
        return identity_codecs(mats.sensors)
    out = []
    for spec, sensor in zip(cfg.codecs, mats.sensors):
        if spec.kind == "identity":
            out.append(IdentityCodec(sensor.n_y))
        elif spec.checkpoint:
            out.append(load_codec(spec.checkpoint))
        else:
            raise ConfigError(
                f"sensor {sensor.index}: codec kind {spec.kind!r} needs a checkpoint path"
            )
    return out


def cmd_collect(args) -> int:
    cfg = _scenario(_load_json(args.config), args.seed)
    data = collect_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.npz")
    np.savez(path, **{f"sensor_{i}": d for i, d in enumerate(data)})
    print(f"wrote {path}: " + ", ".join(f"sensor_{i} {d.shape}" for i, d in enumerate(data)))
    return 0


def cmd_train(args) -> int:
    doc = _load_json(args.config)
    unknown = set(doc) - {"scenario", "sensor_index", "kind", "latent_dim", "train"}
    if unknown:
        raise ConfigError(f"unknown keys in train config: {sorted(unknown)}")
    cfg = _scenario(doc["scenario"], args.seed)
    sensor_index = int(doc.get("sensor_index", 0))
    kind = doc.get("kind", "ae")
    latent_dim = int(doc["latent_dim"])
    data = collect_dataset(cfg)[sensor_index]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"codec_{kind}_s{sensor_index}_d{latent_dim}.json")
    if kind == "pca":
        codec = pca_fit(data, latent_dim)
        save_codec(codec, path)
        print(f"wrote {path}: pca offline mse {float(codec.spectrum[latent_dim:].sum()):.6g}")
        return 0
    if kind != "ae":
        raise ConfigError(f"train supports kinds 'ae' and 'pca', got {kind!r}")
    train_cfg = TrainConfig(**doc.get("train", {}))
    desc = CodecDescriptor("ae", input_dim=data.shape[1], latent_dim=latent_dim)
    codec, curve = ae_train(desc, data, train_cfg)
    save_codec(codec, path)
    best = min(c["val_mse"] for c in curve) if curve else float("nan")
    print(f"wrote {path}: best validation mse {best:.6g} over {len(curve)} epochs")
    return 0


def cmd_eval(args) -> int:
    cfg = _scenario(_load_json(args.config), args.seed)
    if args.mode:
        cfg = ScenarioConfig.from_dict(dict(cfg.to_dict(), mode=args.mode))
    mats = _LoopMatrices(cfg)
    codecs = _resolve_codecs(cfg, mats)
    os.makedirs(args.out, exist_ok=True)
    if cfg.mode == "offline":
        from .simulation import evaluate_offline

        data = collect_dataset(cfg, purpose=PURPOSE_EVAL, mats=mats)
        lines = []
        for i, codec in enumerate(codecs):
            ms = evaluate_offline(data[i], codec)
            lines.append(f"sensor {i}: offline L1 {ms.mean:.6g} +/- {ms.stderr:.3g}")
        text = "\n".join(lines) + "\n"
    else:
        summary = evaluate_online(cfg, codecs, mats=mats)
        lines = [
            f"rounds {summary.rounds} diverged {summary.diverged_rounds}",
        ]
        if summary.unstable:
            lines.append("unstable closed loop: every round diverged")
        else:
            for i, ms in enumerate(summary.l1_per_sensor):
                lines.append(f"sensor {i}: L1 {ms.mean:.6g} +/- {ms.stderr:.3g}")
            lines.append(f"L2 {summary.l2.mean:.6g} +/- {summary.l2.stderr:.3g}")
            lines.append(f"L3 total {summary.l3_total.mean:.6g} +/- {summary.l3_total.stderr:.3g}")
            lines.append(f"L3 per step {summary.l3_per_step.mean:.6g}")
        text = "\n".join(lines) + "\n"
    path = os.path.join(args.out, "eval.txt")
    with open(path, "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_sweep(args) -> int:
    doc = _load_json(args.config)
    if args.seed is not None:
        doc = dict(doc, base=dict(doc["base"], root_seed=args.seed))
    spec = SweepSpec.from_dict(doc)
    jobs = 1 if args.deterministic else max(1, args.jobs)
    cache = CodecCache(args.cache or os.path.join(args.out, "checkpoints"))
    if spec.axis == "compression_dim":
        result = sweep_compression_dims(spec.base, spec.values, spec.methods, cache=cache, jobs=jobs)
    elif spec.axis == "observation_dim":
        fixed_d = doc.get("fixed_d")
        if fixed_d is None:
            raise ConfigError("observation_dim sweeps need a top-level fixed_d key")
        values = tuple(v for v in spec.values)
        result = sweep_observation_dims(spec.base, values, int(fixed_d), spec.methods, cache=cache, jobs=jobs)
    elif spec.axis == "allocation_pair":
        result = allocation_sweep(spec.base, spec.base.budget, spec.methods, cache=cache, jobs=jobs)
    else:
        result = total_budget_sweep(spec.base, spec.values, spec.methods, cache=cache, jobs=jobs)
    files = emit_report(result, args.out)
    print(f"sweep {result.sweep_id}: wrote " + ", ".join(files))
    return 0


def cmd_report(args) -> int:
    cells = read_report(args.out)
    if not cells:
        print(f"no metric CSVs under {args.out}", file=sys.stderr)
        return 1
    header = f"{'axis':>12} {'method':>14} {'metric':>12} {'mean':>14} {'stderr':>12}"
    print(header)
    for (axis_value, method), entry in cells.items():
        for metric in ("l2", "l3_total", "l3_per_step"):
            if metric in entry:
                ms = entry[metric]
                print(f"{axis_value:>12} {method:>14} {metric:>12} {ms.mean:>14.6g} {ms.stderr:>12.3g}")
        for sensor, ms in sorted(entry.get("l1", {}).items()):
            print(f"{axis_value:>12} {method:>14} {'l1[' + str(sensor) + ']':>12} {ms.mean:>14.6g} {ms.stderr:>12.3g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratelqr",
        description="Rate-limited closed-loop sensing and control experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--mode", choices=("online", "offline"), default=None)
        p.add_argument("--jobs", type=int, default=1, help="parallel cells (sweeps)")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="force single-threaded, bit-exact execution",
        )

    common(sub.add_parser("collect", help="record uncompressed observations"))
    p_train = sub.add_parser("train", help="train one codec checkpoint")
    common(p_train)
    common(sub.add_parser("eval", help="evaluate one scenario"))
    p_sweep = sub.add_parser("sweep", help="run a sweep spec")
    common(p_sweep)
    p_sweep.add_argument("--cache", default=None, help="codec checkpoint cache directory")
    p_report = sub.add_parser("report", help="render metric CSVs as a table")
    common(p_report, needs_config=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "collect": cmd_collect,
        "train": cmd_train,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
