"""JSON configuration document: schema validation, defaults, typed accessors.

Validation collects every violation instead of stopping at the first, and
rejects unknown keys at any nesting level. The shipped reference config
spells out every default explicitly and doubles as the schema's
documentation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .classifier import TrainConfig
from .core import DeviceProfile, Label, label_set_for
from .dataio import LabelSignalModel, SyntheticActivityModel
from .netproto import ChannelModel, RetryPolicy


class ConfigError(ValueError):
    """Invalid configuration; .errors lists every violation found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class PipelineSettings:
    window: int = 128
    overlap: float = 0.5
    channels: tuple[str, ...] | None = None  # None = all channels in the data


@dataclass(frozen=True)
class TrainSettings:
    config: TrainConfig = field(default_factory=TrainConfig)
    hidden: int = 16


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-app synthetic corpus description: label models plus a schedule."""

    app: str
    signals: dict[Label, LabelSignalModel]
    schedule: tuple[tuple[Label, int], ...]
    repeat: int = 1

    def make_model(self, seed: int) -> SyntheticActivityModel:
        return SyntheticActivityModel(signals=self.signals, seed=seed)

    def full_schedule(self) -> list[tuple[Label, int]]:
        return list(self.schedule) * self.repeat


@dataclass(frozen=True)
class EnergySettings:
    battery_capacity_mwh: float = 40.0
    battery_initial_mwh: float = 8.0
    harvest_profile_mw: tuple[float, ...] = (0.0,) * 24
    mppt_efficiency: float = 0.95
    charge_efficiency: float = 1.0
    reserve_fraction: float = 0.2


@dataclass(frozen=True)
class ProtocolSettings:
    key: bytes = bytes(range(16))
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    sync_interval_ms: int = 21_600_000
    sync_timeout_ms: int = 1000
    sync_retries: int = 3


@dataclass(frozen=True)
class DeviceSpec:
    device_id: int
    app: str = "har"
    clock_offset_ms: int = 0
    schedule: tuple[tuple[Label, int], ...] = ()
    alert_schedule: tuple[tuple[int, Label], ...] = ()


@dataclass(frozen=True)
class ScenarioSettings:
    duration_ms: int = 3_600_000
    devices: tuple[DeviceSpec, ...] = ()
    report_every_n_windows: int = 1
    idle_timeout_ms: int = 3000
    inference_latency_ms: int = 5
    tx_bitrate_kbps: float = 250.0
    alert_labels: tuple[str, ...] = ()
    local_processing: bool = True
    use_duty_plan: bool = False
    energy_log_interval_ms: int = 3_600_000
    model_path: str | None = None


@dataclass(frozen=True)
class Config:
    profile: DeviceProfile = field(default_factory=DeviceProfile)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    synthetic: dict[str, SyntheticSpec] = field(default_factory=dict)
    energy: EnergySettings = field(default_factory=EnergySettings)
    channel: ChannelModel = field(default_factory=ChannelModel)
    protocol: ProtocolSettings = field(default_factory=ProtocolSettings)
    scenario: ScenarioSettings | None = None


class _Ctx:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def error(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")


def _check_keys(obj: dict, allowed: Sequence[str], path: str, ctx: _Ctx) -> None:
    for key in obj:
        if key not in allowed:
            ctx.error(f"{path}.{key}" if path else key, "unknown key")


def _num(obj, key, default, path, ctx, lo=None, hi=None, integer=False):
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.error(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
        return default
    if integer and not isinstance(v, int):
        ctx.error(f"{path}.{key}", "expected an integer")
        return default
    if lo is not None and v < lo:
        ctx.error(f"{path}.{key}", f"must be >= {lo}")
        return default
    if hi is not None and v > hi:
        ctx.error(f"{path}.{key}", f"must be <= {hi}")
        return default
    return v


def _str(obj, key, default, path, ctx, choices=None):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, str):
        ctx.error(f"{path}.{key}", "expected a string")
        return default
    if choices and v not in choices:
        ctx.error(f"{path}.{key}", f"must be one of {sorted(choices)}")
        return default
    return v


def _bool(obj, key, default, path, ctx):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, bool):
        ctx.error(f"{path}.{key}", "expected true/false")
        return default
    return v


def _parse_profile(obj: dict, ctx: _Ctx) -> DeviceProfile:
    path = "device_profile"
    allowed = [
        "cpu_mhz", "sram_bytes", "flash_bytes", "p_active_har_mw",
        "p_active_gesture_mw", "p_sleep_mw", "p_tx_mw", "sample_rate_hz",
    ]
    _check_keys(obj, allowed, path, ctx)
    d = DeviceProfile()
    kwargs = dict(
        cpu_mhz=_num(obj, "cpu_mhz", d.cpu_mhz, path, ctx, lo=1e-9),
        sram_bytes=_num(obj, "sram_bytes", d.sram_bytes, path, ctx, lo=1, integer=True),
        flash_bytes=_num(obj, "flash_bytes", d.flash_bytes, path, ctx, lo=1, integer=True),
        p_active_har_mw=_num(obj, "p_active_har_mw", d.p_active_har_mw, path, ctx, lo=1e-9),
        p_active_gesture_mw=_num(obj, "p_active_gesture_mw", d.p_active_gesture_mw, path, ctx, lo=1e-9),
        p_sleep_mw=_num(obj, "p_sleep_mw", d.p_sleep_mw, path, ctx, lo=1e-9),
        p_tx_mw=_num(obj, "p_tx_mw", d.p_tx_mw, path, ctx, lo=1e-9),
        sample_rate_hz=_num(obj, "sample_rate_hz", d.sample_rate_hz, path, ctx, lo=1e-9),
    )
    try:
        return DeviceProfile(**kwargs)
    except ValueError as exc:
        ctx.error(path, str(exc))
        return d


def _parse_pipeline(obj: dict, ctx: _Ctx) -> PipelineSettings:
    path = "pipeline"
    _check_keys(obj, ["window", "overlap", "channels"], path, ctx)
    channels = None
    if obj.get("channels") is not None:
        raw = obj["channels"]
        if not isinstance(raw, list) or not all(isinstance(c, str) for c in raw):
            ctx.error(f"{path}.channels", "expected a list of channel names")
        else:
            channels = tuple(raw)
    return PipelineSettings(
        window=_num(obj, "window", 128, path, ctx, lo=16, integer=True),
        overlap=_num(obj, "overlap", 0.5, path, ctx, lo=0.0, hi=0.999),
        channels=channels,
    )


def _parse_train(obj: dict, ctx: _Ctx) -> TrainSettings:
    path = "train"
    allowed = [
        "learning_rate", "momentum", "epochs", "batch_size", "seed",
        "split_fraction", "patience", "hidden",
    ]
    _check_keys(obj, allowed, path, ctx)
    patience = None
    if obj.get("patience") is not None:
        patience = _num(obj, "patience", None, path, ctx, lo=1, integer=True)
    try:
        config = TrainConfig(
            learning_rate=_num(obj, "learning_rate", 0.05, path, ctx, lo=1e-12),
            momentum=_num(obj, "momentum", 0.9, path, ctx, lo=0.0, hi=0.999),
            epochs=_num(obj, "epochs", 200, path, ctx, lo=1, integer=True),
            batch_size=_num(obj, "batch_size", 32, path, ctx, lo=1, integer=True),
            seed=_num(obj, "seed", 0, path, ctx, integer=True),
            split_fraction=_num(obj, "split_fraction", 0.8, path, ctx, lo=0.01, hi=0.99),
            patience=patience,
        )
    except ValueError as exc:
        ctx.error(path, str(exc))
        config = TrainConfig()
    return TrainSettings(config=config, hidden=_num(obj, "hidden", 16, path, ctx, lo=1, integer=True))


def _parse_vec3(obj, key, path, ctx):
    v = obj.get(key)
    if not isinstance(v, list) or len(v) != 3 or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        ctx.error(f"{path}.{key}", "expected a 3-number list")
        return (0.0, 0.0, 1.0)
    return (float(v[0]), float(v[1]), float(v[2]))


def _parse_label(name: Any, label_set: type, path: str, ctx: _Ctx) -> Label | None:
    if not isinstance(name, str):
        ctx.error(path, "expected a label name string")
        return None
    try:
        return label_set[name]
    except KeyError:
        ctx.error(path, f"unknown label {name!r} for this application")
        return None


def _parse_synthetic_app(app: str, obj: dict, ctx: _Ctx) -> SyntheticSpec | None:
    path = f"synthetic_models.{app}"
    _check_keys(obj, ["labels", "schedule", "repeat"], path, ctx)
    label_set = label_set_for(app)
    labels_obj = obj.get("labels")
    if not isinstance(labels_obj, dict) or not labels_obj:
        ctx.error(f"{path}.labels", "expected a non-empty label map")
        return None
    signals: dict[Label, LabelSignalModel] = {}
    for name, params in labels_obj.items():
        label = _parse_label(name, label_set, f"{path}.labels.{name}", ctx)
        if label is None or not isinstance(params, dict):
            if not isinstance(params, dict):
                ctx.error(f"{path}.labels.{name}", "expected a parameter object")
            continue
        ppath = f"{path}.labels.{name}"
        allowed = ["orientation", "freq_hz", "amp_g", "noise_sigma", "stretch_base", "stretch_amp"]
        _check_keys(params, allowed, ppath, ctx)
        stretch_base = None
        if params.get("stretch_base") is not None:
            stretch_base = _num(params, "stretch_base", None, ppath, ctx, lo=0.0, hi=1.0)
        signals[label] = LabelSignalModel(
            orientation=_parse_vec3(params, "orientation", ppath, ctx),
            freq_hz=_num(params, "freq_hz", 0.0, ppath, ctx, lo=0.0),
            amp_g=_num(params, "amp_g", 0.0, ppath, ctx, lo=0.0),
            noise_sigma=_num(params, "noise_sigma", 0.0, ppath, ctx, lo=0.0),
            stretch_base=stretch_base,
            stretch_amp=_num(params, "stretch_amp", 0.0, ppath, ctx, lo=0.0),
        )
    schedule = _parse_schedule(obj.get("schedule"), label_set, f"{path}.schedule", ctx)
    repeat = _num(obj, "repeat", 1, path, ctx, lo=1, integer=True)
    if not signals or schedule is None:
        return None
    missing = [l.name for l, _ in schedule if l not in signals]
    if missing:
        ctx.error(f"{path}.schedule", f"labels without signal models: {sorted(set(missing))}")
        return None
    try:
        SyntheticActivityModel(signals=signals, seed=0)  # invariant check
    except ValueError as exc:
        ctx.error(f"{path}.labels", str(exc))
        return None
    return SyntheticSpec(app=app, signals=signals, schedule=tuple(schedule), repeat=repeat)


def _parse_schedule(raw: Any, label_set: type, path: str, ctx: _Ctx):
    if not isinstance(raw, list) or not raw:
        ctx.error(path, "expected a non-empty list of [label, duration_ms] pairs")
        return None
    out = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, list) or len(entry) != 2:
            ctx.error(f"{path}[{i}]", "expected [label, duration_ms]")
            continue
        label = _parse_label(entry[0], label_set, f"{path}[{i}]", ctx)
        if label is None:
            continue
        if not isinstance(entry[1], int) or entry[1] <= 0:
            ctx.error(f"{path}[{i}]", "duration_ms must be a positive integer")
            continue
        out.append((label, entry[1]))
    return out if out else None


def _parse_energy(obj: dict, ctx: _Ctx) -> EnergySettings:
    path = "energy"
    allowed = [
        "battery_capacity_mwh", "battery_initial_mwh", "harvest_profile_mw",
        "mppt_efficiency", "charge_efficiency", "reserve_fraction",
    ]
    _check_keys(obj, allowed, path, ctx)
    profile = (0.0,) * 24
    raw = obj.get("harvest_profile_mw")
    if raw is not None:
        if (
            not isinstance(raw, list)
            or len(raw) != 24
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0 for x in raw)
        ):
            ctx.error(f"{path}.harvest_profile_mw", "expected 24 nonnegative numbers")
        else:
            profile = tuple(float(x) for x in raw)
    capacity = _num(obj, "battery_capacity_mwh", 40.0, path, ctx, lo=1e-9)
    initial = _num(obj, "battery_initial_mwh", 8.0, path, ctx, lo=0.0)
    if initial > capacity:
        ctx.error(f"{path}.battery_initial_mwh", "must not exceed battery_capacity_mwh")
        initial = capacity
    return EnergySettings(
        battery_capacity_mwh=capacity,
        battery_initial_mwh=initial,
        harvest_profile_mw=profile,
        mppt_efficiency=_num(obj, "mppt_efficiency", 0.95, path, ctx, lo=1e-9, hi=1.0),
        charge_efficiency=_num(obj, "charge_efficiency", 1.0, path, ctx, lo=1e-9, hi=1.0),
        reserve_fraction=_num(obj, "reserve_fraction", 0.2, path, ctx, lo=0.0, hi=0.9),
    )


def _parse_channel(obj: dict, ctx: _Ctx) -> ChannelModel:
    path = "channel"
    _check_keys(obj, ["latency_ms", "loss_probability", "corruption_probability"], path, ctx)
    latency: int | tuple[int, int] = 20
    raw = obj.get("latency_ms")
    if raw is not None:
        if isinstance(raw, int) and not isinstance(raw, bool) and raw >= 0:
            latency = raw
        elif (
            isinstance(raw, list) and len(raw) == 2
            and all(isinstance(x, int) and not isinstance(x, bool) for x in raw)
            and 0 <= raw[0] <= raw[1]
        ):
            latency = (raw[0], raw[1])
        else:
            ctx.error(f"{path}.latency_ms", "expected a nonnegative integer or [lo, hi] range")
    try:
        return ChannelModel(
            latency_ms=latency,
            loss_probability=_num(obj, "loss_probability", 0.0, path, ctx, lo=0.0, hi=1.0),
            corruption_probability=_num(obj, "corruption_probability", 0.0, path, ctx, lo=0.0, hi=0.999),
        )
    except ValueError as exc:
        ctx.error(path, str(exc))
        return ChannelModel()


def _parse_protocol(obj: dict, ctx: _Ctx) -> ProtocolSettings:
    path = "protocol"
    _check_keys(obj, ["key_hex", "retry", "sync_interval_ms", "sync_timeout_ms", "sync_retries"], path, ctx)
    key = bytes(range(16))
    raw = obj.get("key_hex")
    if raw is not None:
        if not isinstance(raw, str):
            ctx.error(f"{path}.key_hex", "expected a hex string")
        else:
            try:
                key = bytes.fromhex(raw)
            except ValueError:
                ctx.error(f"{path}.key_hex", "not valid hex")
            if len(key) != 16:
                ctx.error(f"{path}.key_hex", "must encode exactly 16 bytes")
                key = bytes(range(16))
    retry_obj = obj.get("retry", {})
    retry = RetryPolicy()
    if not isinstance(retry_obj, dict):
        ctx.error(f"{path}.retry", "expected an object")
    else:
        _check_keys(retry_obj, ["interval_ms", "max_attempts"], f"{path}.retry", ctx)
        retry = RetryPolicy(
            interval_ms=_num(retry_obj, "interval_ms", 200, f"{path}.retry", ctx, lo=1, integer=True),
            max_attempts=_num(retry_obj, "max_attempts", 10, f"{path}.retry", ctx, lo=1, integer=True),
        )
    return ProtocolSettings(
        key=key,
        retry=retry,
        sync_interval_ms=_num(obj, "sync_interval_ms", 21_600_000, path, ctx, lo=0, integer=True),
        sync_timeout_ms=_num(obj, "sync_timeout_ms", 1000, path, ctx, lo=1, integer=True),
        sync_retries=_num(obj, "sync_retries", 3, path, ctx, lo=1, integer=True),
    )


def _parse_device(obj: Any, index: int, synthetic: dict[str, SyntheticSpec], ctx: _Ctx) -> DeviceSpec | None:
    path = f"scenario.devices[{index}]"
    if not isinstance(obj, dict):
        ctx.error(path, "expected an object")
        return None
    allowed = ["id", "app", "clock_offset_ms", "schedule", "alert_schedule"]
    _check_keys(obj, allowed, path, ctx)
    device_id = _num(obj, "id", index + 1, path, ctx, lo=0, hi=0xFFFF, integer=True)
    app = _str(obj, "app", "har", path, ctx, choices={"har", "gesture"})
    label_set = label_set_for(app)
    schedule = ()
    if "schedule" in obj:
        parsed = _parse_schedule(obj["schedule"], label_set, f"{path}.schedule", ctx)
        schedule = tuple(parsed) if parsed else ()
    if not schedule:
        spec = synthetic.get(app)
        if spec is not None:
            schedule = tuple(spec.full_schedule())
        else:
            ctx.error(f"{path}.schedule", f"no schedule given and no synthetic_models.{app} to fall back on")
    alerts = []
    raw_alerts = obj.get("alert_schedule", [])
    if not isinstance(raw_alerts, list):
        ctx.error(f"{path}.alert_schedule", "expected a list of [t_ms, label] pairs")
    else:
        for i, entry in enumerate(raw_alerts):
            if not isinstance(entry, list) or len(entry) != 2 or not isinstance(entry[0], int):
                ctx.error(f"{path}.alert_schedule[{i}]", "expected [t_ms, label]")
                continue
            label = _parse_label(entry[1], label_set, f"{path}.alert_schedule[{i}]", ctx)
            if label is not None:
                alerts.append((entry[0], label))
    return DeviceSpec(
        device_id=device_id,
        app=app,
        clock_offset_ms=_num(obj, "clock_offset_ms", 0, path, ctx, integer=True),
        schedule=schedule,
        alert_schedule=tuple(alerts),
    )


def _parse_scenario(obj: dict, synthetic: dict[str, SyntheticSpec], ctx: _Ctx) -> ScenarioSettings:
    path = "scenario"
    allowed = [
        "duration_ms", "devices", "report_every_n_windows", "idle_timeout_ms",
        "inference_latency_ms", "tx_bitrate_kbps", "alert_labels",
        "local_processing", "use_duty_plan", "energy_log_interval_ms", "model_path",
    ]
    _check_keys(obj, allowed, path, ctx)
    devices = []
    raw_devices = obj.get("devices")
    if not isinstance(raw_devices, list) or not raw_devices:
        ctx.error(f"{path}.devices", "expected a non-empty device list")
    else:
        seen_ids = set()
        for i, d in enumerate(raw_devices):
            spec = _parse_device(d, i, synthetic, ctx)
            if spec is not None:
                if spec.device_id in seen_ids:
                    ctx.error(f"{path}.devices[{i}].id", f"duplicate device id {spec.device_id}")
                seen_ids.add(spec.device_id)
                devices.append(spec)
    alert_labels = ()
    raw_al = obj.get("alert_labels", [])
    if not isinstance(raw_al, list) or not all(isinstance(x, str) for x in raw_al):
        ctx.error(f"{path}.alert_labels", "expected a list of label names")
    else:
        alert_labels = tuple(raw_al)
    local = _bool(obj, "local_processing", True, path, ctx)
    if local is False:
        ctx.error(
            f"{path}.local_processing",
            "raw-sample streaming is not supported; only processed observations leave the device",
        )
    model_path = None
    if obj.get("model_path") is not None:
        model_path = _str(obj, "model_path", None, path, ctx)
    return ScenarioSettings(
        duration_ms=_num(obj, "duration_ms", 3_600_000, path, ctx, lo=1, integer=True),
        devices=tuple(devices),
        report_every_n_windows=_num(obj, "report_every_n_windows", 1, path, ctx, lo=1, integer=True),
        idle_timeout_ms=_num(obj, "idle_timeout_ms", 3000, path, ctx, lo=0, integer=True),
        inference_latency_ms=_num(obj, "inference_latency_ms", 5, path, ctx, lo=1, integer=True),
        tx_bitrate_kbps=_num(obj, "tx_bitrate_kbps", 250.0, path, ctx, lo=1e-9),
        alert_labels=alert_labels,
        local_processing=True,
        use_duty_plan=_bool(obj, "use_duty_plan", False, path, ctx),
        energy_log_interval_ms=_num(obj, "energy_log_interval_ms", 3_600_000, path, ctx, lo=1, integer=True),
        model_path=model_path,
    )


TOP_LEVEL_SECTIONS = [
    "device_profile", "pipeline", "train", "synthetic_models",
    "energy", "channel", "protocol", "scenario",
]


def parse_config(raw: Any) -> Config:
    """Validate a parsed JSON document; raises ConfigError listing every problem."""
    ctx = _Ctx()
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])
    _check_keys(raw, TOP_LEVEL_SECTIONS, "", ctx)

    def section(name: str) -> dict:
        v = raw.get(name, {})
        if not isinstance(v, dict):
            ctx.error(name, "expected an object")
            return {}
        return v

    profile = _parse_profile(section("device_profile"), ctx)
    pipeline = _parse_pipeline(section("pipeline"), ctx)
    train = _parse_train(section("train"), ctx)

    synthetic: dict[str, SyntheticSpec] = {}
    syn_obj = section("synthetic_models")
    _check_keys(syn_obj, ["har", "gesture"], "synthetic_models", ctx)
    for app in ("har", "gesture"):
        if app in syn_obj:
            if not isinstance(syn_obj[app], dict):
                ctx.error(f"synthetic_models.{app}", "expected an object")
                continue
            spec = _parse_synthetic_app(app, syn_obj[app], ctx)
            if spec is not None:
                synthetic[app] = spec

    energy = _parse_energy(section("energy"), ctx)
    channel = _parse_channel(section("channel"), ctx)
    protocol = _parse_protocol(section("protocol"), ctx)
    scenario = None
    if "scenario" in raw:
        scenario = _parse_scenario(section("scenario"), synthetic, ctx)

    if ctx.errors:
        raise ConfigError(ctx.errors)
    return Config(
        profile=profile,
        pipeline=pipeline,
        train=train,
        synthetic=synthetic,
        energy=energy,
        channel=channel,
        protocol=protocol,
        scenario=scenario,
    )


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON in {path}: {exc}"]) from None
    return parse_config(raw)
