"""Command-line entry point: datagen, train, eval, budget, simulate.

Exit codes: 0 success, 2 configuration/usage error, 3 data/validation
error. All commands are pure functions of their inputs and the seed; the
OPENHEALTH_SIM_SEED environment variable is the fallback when --seed is
not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .classifier import (
    DegenerateDatasetError,
    evaluate,
    init_model,
    load_model,
    quantize_model,
    render_report,
    save_model,
    split_dataset,
    train,
)
from .config import Config, ConfigError, load_config
from .core import label_set_for
from .dataio import (
    DatasetFormatError,
    generate_synthetic,
    read_dataset,
    storage_budget,
    write_dataset,
)
from .firmware import BudgetError, memory_footprint, plan_duty_cycle, EnergyState
from .pipeline import (
    FEATURES_PER_CHANNEL,
    extract_feature_matrix,
    normalize_features,
    segment,
    windows_to_matrix,
)
from .netproto import write_observation_log
from .simengine import run_scenario, trace_observations, write_metrics, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

ENV_SEED = "OPENHEALTH_SIM_SEED"


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _resolve_seed(arg_seed: int | None, default: int = 0) -> int:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{ENV_SEED} must be an integer, got {env!r}", EXIT_CONFIG) from None
    return default


def _load_config(path: str) -> Config:
    try:
        return load_config(path)
    except ConfigError as exc:
        lines = "\n".join(f"config error: {e}" for e in exc.errors)
        raise CliError(lines, EXIT_CONFIG) from None


def _labeled_windows(recording, config: Config, app: str):
    label_set = label_set_for(app)
    if recording.annotations and not isinstance(recording.annotations[0].label, label_set):
        raise CliError(
            f"dataset labels do not belong to the {app!r} label set", EXIT_DATA
        )
    windows = segment(recording, config.pipeline.window, config.pipeline.overlap)
    labeled = [w for w in windows if w.label is not None]
    if not labeled:
        raise CliError("dataset yields no labeled windows", EXIT_DATA)
    matrix = windows_to_matrix(labeled)
    labels = np.array([w.label.value for w in labeled], dtype=int)
    return matrix, labels


def cmd_datagen(args) -> int:
    config = _load_config(args.config)
    spec = config.synthetic.get(args.app)
    if spec is None:
        raise CliError(f"config has no synthetic_models.{args.app} section", EXIT_CONFIG)
    seed = _resolve_seed(args.seed)
    model = spec.make_model(seed)
    recording = generate_synthetic(model, spec.full_schedule(), config.profile.sample_rate_hz)
    write_dataset(recording, args.out)
    print(
        f"wrote {args.out}: {len(recording.samples)} samples, "
        f"{len(recording.annotations)} annotations, seed {seed}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args.config) if args.config else Config()
    try:
        recording = read_dataset(args.data)
    except (DatasetFormatError, FileNotFoundError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None
    matrix, labels = _labeled_windows(recording, config, args.app)
    feats = extract_feature_matrix(matrix)

    train_config = config.train.config
    seed = _resolve_seed(args.seed, default=train_config.seed)
    if seed != train_config.seed:
        from dataclasses import replace

        train_config = replace(train_config, seed=seed)

    train_idx, test_idx = split_dataset(len(labels), train_config.split_fraction, seed)
    x_train, stats = normalize_features(feats[train_idx])
    label_set = label_set_for(args.app)
    layer_sizes = (feats.shape[1], config.train.hidden, len(label_set))
    model = init_model(layer_sizes, seed=seed)
    model.stats = stats
    try:
        trained, history = train(model, x_train, labels[train_idx], train_config)
    except DegenerateDatasetError as exc:
        raise CliError(f"degenerate dataset: {exc}", EXIT_DATA) from None

    step = max(1, len(history) // 10)
    for epoch in range(0, len(history), step):
        print(f"epoch {epoch + 1:4d}  loss {history[epoch]:.6f}")
    if (len(history) - 1) % step != 0:
        print(f"epoch {len(history):4d}  loss {history[-1]:.6f}")

    save_model(trained, args.out)
    print(f"wrote {args.out}: layers {list(layer_sizes)}, {trained.n_params} parameters")

    if len(test_idx):
        x_test, _ = normalize_features(feats[test_idx], stats)
        report = evaluate(trained, x_test, labels[test_idx], label_set)
        print()
        print(render_report(report), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = load_model(args.model)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(f"model error: {exc}", EXIT_DATA) from None
    try:
        recording = read_dataset(args.data)
    except (DatasetFormatError, FileNotFoundError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None

    n_classes = model.layer_sizes[2]
    app = {7: "har", 4: "gesture"}.get(n_classes)
    if app is None:
        raise CliError(f"model has {n_classes} classes; expected 7 (har) or 4 (gesture)", EXIT_DATA)
    config = _load_config(args.config) if args.config else Config()
    matrix, labels = _labeled_windows(recording, config, app)
    feats = extract_feature_matrix(matrix)
    if feats.shape[1] != model.layer_sizes[0]:
        raise CliError(
            f"feature dimension {feats.shape[1]} does not match model input {model.layer_sizes[0]}",
            EXIT_DATA,
        )
    normed, _ = normalize_features(feats, model.stats)
    report = evaluate(model, normed, labels, label_set_for(app))
    print(render_report(report), end="")

    json_path = args.json or (str(Path(args.data).with_suffix("")) + "_report.json")
    Path(json_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"\nwrote {json_path}")
    return EXIT_OK


def cmd_budget(args) -> int:
    config = _load_config(args.config)
    profile = config.profile
    w = config.pipeline.window
    channels = len(config.pipeline.channels) if config.pipeline.channels else 7
    hidden = config.train.hidden
    d = channels * FEATURES_PER_CHANNEL
    layer_sizes = (d, hidden, 7)
    qm = quantize_model(init_model(layer_sizes, seed=0))
    try:
        ledger = memory_footprint(w, channels, layer_sizes, qm.flash_bytes, profile)
    except BudgetError as exc:
        raise CliError(f"budget error: {exc}", EXIT_CONFIG) from None

    rate = profile.sample_rate_hz
    accel_hourly = storage_budget(rate, 3, 2, 3600)
    all_hourly = storage_budget(rate, channels, 2, 3600)

    print(f"Model: layers {list(layer_sizes)}, quantized image {qm.flash_bytes} B")
    print(
        f"SRAM:  {ledger.sram_used_bytes} / {ledger.sram_budget_bytes} B "
        f"(headroom {ledger.sram_headroom} B)"
    )
    print(
        f"Flash: {ledger.flash_used_bytes} / {ledger.flash_budget_bytes} B "
        f"(headroom {ledger.flash_headroom} B)"
    )
    print(
        f"Raw accelerometer storage: {accel_hourly:,.0f} bytes/hour "
        f"({rate:g} Hz x 3 channels x 2 B int16)"
    )
    print(
        f"Raw all-channel storage:   {all_hourly:,.0f} bytes/hour "
        f"({rate:g} Hz x {channels} channels x 2 B int16)"
    )

    e = config.energy
    energy_state = EnergyState(
        battery_mwh=e.battery_initial_mwh,
        capacity_mwh=e.battery_capacity_mwh,
        harvest_power_mw=lambda t: 0.0,
        mppt_efficiency=e.mppt_efficiency,
        charge_efficiency=e.charge_efficiency,
    )
    plan = plan_duty_cycle(list(e.harvest_profile_mw), profile, "har", energy_state, e.reserve_fraction)
    harvest_day = sum(e.harvest_profile_mw) * e.mppt_efficiency
    sleep_floor = profile.p_sleep_mw * 24
    print(
        f"Daily energy: harvest {harvest_day:.1f} mWh, sleep floor {sleep_floor:.1f} mWh, "
        f"planned active {plan.planned_active_mwh:.1f} mWh "
        f"(mean duty {sum(plan.fractions) / 24:.1%})"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if config.scenario is None:
        raise CliError("config has no scenario section", EXIT_CONFIG)
    seed = _resolve_seed(args.seed)
    trace = run_scenario(config, seed)
    write_trace(trace, args.trace)
    metrics_path = args.metrics or (str(Path(args.trace).with_suffix("")) + "_metrics.json")
    write_metrics(trace, metrics_path)
    observations_path = args.observations or (
        str(Path(args.trace).with_suffix("")) + "_observations.csv"
    )
    write_observation_log(trace_observations(trace.lines), observations_path)

    m = trace.metrics
    print(
        f"wrote {args.trace} ({len(trace.lines)} events), {metrics_path} "
        f"and {observations_path}"
    )
    print(
        f"host: {m['host']['frames_received']} frames received, "
        f"{sum(m['host']['frames_rejected'].values())} rejected, "
        f"{m['host']['alerts_notified']} alerts notified"
    )
    for name, d in m["devices"].items():
        batt = d["battery_mwh"]
        print(
            f"{name}: {d['frames_sent']} frames sent, battery "
            f"{batt.get('start', 0):.3f} -> {batt.get('end', 0):.3f} mWh"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openhealth",
        description="Wearable health-monitoring platform: data, training, budgets, simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic dataset CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--app", choices=("har", "gesture"), default="har")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", help="train a classifier on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--app", choices=("har", "gesture"), default="har")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--json", help="JSON report path (default: alongside the data)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("budget", help="memory, storage and daily-energy report")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_budget)

    p = sub.add_parser("simulate", help="run a deterministic end-to-end scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", required=True)
    p.add_argument("--metrics", help="metrics JSON path (default: alongside the trace)")
    p.add_argument("--observations", help="host observation CSV path (default: alongside the trace)")
    p.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
