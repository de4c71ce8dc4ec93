"""Autonomous wearable-node behavior: power states, wake-on-motion, energy, memory.

Power accounting is state-dwell-time times a constant per-state power.
The duty-cycle allocator is a deliberately simple scheme: each hour slot
gets the active fraction its harvest (plus a uniform share of battery
above reserve) can fund beyond the always-on sleep floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

from .core import DeviceProfile, SensorSample
from .pipeline import FEATURES_PER_CHANNEL

MOTION_THRESHOLD_G = 0.05
SRAM_STACK_RESERVE = 4096
FLASH_CODE_RESERVE = 32768
RAW_SAMPLE_BYTES_PER_SCALAR = 2  # int16 ring buffer
ACTIVATION_BYTES = 8
BATTERY_RECOVERY_FRACTION = 0.05  # hysteresis after depletion
SLOT_MS = 3_600_000
SLOTS_PER_DAY = 24


class PowerState(Enum):
    Sleep = "Sleep"
    Sampling = "Sampling"
    Processing = "Processing"
    Transmitting = "Transmitting"


class DeviceEvent(Enum):
    MotionDetected = "MotionDetected"
    WindowFull = "WindowFull"
    InferenceDone = "InferenceDone"
    TxDone = "TxDone"
    IdleTimeout = "IdleTimeout"


class DeviceAction(Enum):
    StartSampling = "start_sampling"
    RunInference = "run_inference"
    EnqueueDataFrame = "enqueue_data_frame"
    ResumeSampling = "resume_sampling"
    EnterLowPower = "enter_low_power"


# Legal transitions; every other (state, event) pair is a logged no-op.
_TRANSITIONS: dict[tuple[PowerState, DeviceEvent], tuple[PowerState, DeviceAction]] = {
    (PowerState.Sleep, DeviceEvent.MotionDetected): (PowerState.Sampling, DeviceAction.StartSampling),
    (PowerState.Sampling, DeviceEvent.WindowFull): (PowerState.Processing, DeviceAction.RunInference),
    (PowerState.Processing, DeviceEvent.InferenceDone): (PowerState.Transmitting, DeviceAction.EnqueueDataFrame),
    (PowerState.Transmitting, DeviceEvent.TxDone): (PowerState.Sampling, DeviceAction.ResumeSampling),
    (PowerState.Sampling, DeviceEvent.IdleTimeout): (PowerState.Sleep, DeviceAction.EnterLowPower),
}


@dataclass(frozen=True)
class StepResult:
    state: PowerState
    actions: tuple[DeviceAction, ...]
    noop: bool


def step_state_machine(state: PowerState, event: DeviceEvent) -> StepResult:
    """Advance the power-state machine; undefined pairs are recorded no-ops."""
    hit = _TRANSITIONS.get((state, event))
    if hit is None:
        return StepResult(state=state, actions=(), noop=True)
    new_state, action = hit
    return StepResult(state=new_state, actions=(action,), noop=False)


def motion_detector(samples: Sequence[SensorSample], threshold_g: float = MOTION_THRESHOLD_G) -> bool:
    """True iff |accel| deviates from 1 g by more than the threshold anywhere."""
    if len(samples) < 2:
        raise ValueError("motion detection needs at least 2 samples")
    deviation = max(abs(math.sqrt(sum(v * v for v in s.accel)) - 1.0) for s in samples)
    return deviation > threshold_g


def state_power_mw(profile: DeviceProfile, app: str, state: PowerState) -> float:
    if state is PowerState.Sleep:
        return profile.p_sleep_mw
    if state is PowerState.Transmitting:
        return profile.p_tx_mw
    return profile.active_power_mw(app)


@dataclass(frozen=True)
class EnergyState:
    """Battery bookkeeping plus the harvest environment."""

    battery_mwh: float
    capacity_mwh: float
    harvest_power_mw: Callable[[int], float]
    mppt_efficiency: float = 0.95
    charge_efficiency: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.mppt_efficiency <= 1.0:
            raise ValueError("mppt_efficiency must be in (0, 1]")
        if not 0.0 < self.charge_efficiency <= 1.0:
            raise ValueError("charge_efficiency must be in (0, 1]")
        if self.capacity_mwh <= 0:
            raise ValueError("capacity_mwh must be > 0")
        if not 0.0 <= self.battery_mwh <= self.capacity_mwh:
            raise ValueError("battery_mwh outside [0, capacity]")


@dataclass(frozen=True)
class EnergyDelta:
    """Ledger entry for one accounting step (all values in mWh).

    applied_mwh is the actual battery change; net_mwh the unclamped flow;
    curtailed (battery full) and shortfall (battery empty) make clamping
    explicit so trace sums reconcile exactly.
    """

    net_mwh: float
    applied_mwh: float
    curtailed_mwh: float
    shortfall_mwh: float
    harvest_mwh: float
    consumed_mwh: float


def account_energy(
    dwell: Mapping[PowerState, float],
    profile: DeviceProfile,
    app: str,
    energy: EnergyState,
    t_ms: int,
    dt_ms: int,
) -> tuple[EnergyState, EnergyDelta, bool]:
    """Integrate harvest minus consumption over dt; returns (state, delta, depleted).

    Charging applies charge_efficiency; discharging is taken at face value.
    Depletion to zero is reported as a flag, not an exception.
    """
    if dt_ms <= 0:
        raise ValueError("dt_ms must be > 0")
    share = sum(dwell.values())
    if not math.isclose(share, 1.0, abs_tol=1e-9):
        raise ValueError(f"dwell fractions must sum to 1, got {share}")
    dt_h = dt_ms / 3_600_000.0
    harvest_mw = energy.mppt_efficiency * energy.harvest_power_mw(t_ms)
    consumption_mw = sum(
        state_power_mw(profile, app, state) * frac for state, frac in dwell.items()
    )
    net_mw = harvest_mw - consumption_mw
    eff = energy.charge_efficiency if net_mw >= 0 else 1.0
    net_mwh = net_mw * eff * dt_h

    raw = energy.battery_mwh + net_mwh
    new_level = min(max(raw, 0.0), energy.capacity_mwh)
    curtailed = max(0.0, raw - energy.capacity_mwh)
    shortfall = max(0.0, -raw)
    delta = EnergyDelta(
        net_mwh=net_mwh,
        applied_mwh=new_level - energy.battery_mwh,
        curtailed_mwh=curtailed,
        shortfall_mwh=shortfall,
        harvest_mwh=harvest_mw * dt_h,
        consumed_mwh=consumption_mw * dt_h,
    )
    depleted = new_level <= 0.0
    return replace(energy, battery_mwh=new_level), delta, depleted


@dataclass(frozen=True)
class DutyPlan:
    """Per-hour active fractions for one day, plus the funding arithmetic."""

    fractions: tuple[float, ...]
    planned_active_mwh: float
    available_mwh: float

    def __post_init__(self) -> None:
        if len(self.fractions) != SLOTS_PER_DAY:
            raise ValueError(f"duty plan needs {SLOTS_PER_DAY} slots")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("duty fractions must lie in [0, 1]")
        if self.planned_active_mwh > self.available_mwh + 1e-9:
            raise ValueError("planned energy exceeds projected available energy")

    def fraction_at(self, t_ms: int) -> float:
        return self.fractions[(t_ms // SLOT_MS) % SLOTS_PER_DAY]


def plan_duty_cycle(
    forecast_mw: Sequence[float],
    profile: DeviceProfile,
    app: str,
    energy: EnergyState,
    reserve_fraction: float = 0.2,
) -> DutyPlan:
    """Energy-neutral day plan from a 24-slot harvest forecast.

    Each slot may spend its own post-MPPT harvest plus a uniform share of
    the battery above reserve, on top of the unavoidable sleep floor. The
    active cost rate is the worst-case active-state power so transmit
    bursts stay funded.
    """
    if len(forecast_mw) != SLOTS_PER_DAY:
        raise ValueError(f"forecast must have {SLOTS_PER_DAY} slots")
    if any(h < 0 for h in forecast_mw):
        raise ValueError("forecast must be nonnegative")
    c_active = max(profile.active_power_mw(app), profile.p_tx_mw)  # mWh per full slot
    c_sleep = profile.p_sleep_mw
    if c_active <= c_sleep:
        raise ValueError("active power must exceed sleep power")
    extra = max(0.0, energy.battery_mwh - reserve_fraction * energy.capacity_mwh)
    share = extra / SLOTS_PER_DAY
    fractions = []
    for h in forecast_mw:
        h_eff = energy.mppt_efficiency * h
        f = (h_eff + share - c_sleep) / (c_active - c_sleep)
        fractions.append(min(1.0, max(0.0, f)))
    planned = sum(f * (c_active - c_sleep) for f in fractions)
    available = sum(energy.mppt_efficiency * h for h in forecast_mw) + extra
    return DutyPlan(
        fractions=tuple(fractions),
        planned_active_mwh=planned,
        available_mwh=available,
    )


def sinusoidal_daylight_profile(
    peak_mw: float,
    sunrise_hour: float = 6.0,
    sunset_hour: float = 18.0,
    night_floor_mw: float = 0.0,
) -> list[float]:
    """Default 24-slot harvest curve: half-sine daylight bump over a night floor."""
    slots = []
    for slot in range(SLOTS_PER_DAY):
        mid = slot + 0.5
        if sunrise_hour <= mid <= sunset_hour:
            phase = (mid - sunrise_hour) / (sunset_hour - sunrise_hour)
            slots.append(night_floor_mw + peak_mw * math.sin(math.pi * phase))
        else:
            slots.append(night_floor_mw)
    return slots


class BudgetError(ValueError):
    """A modeled memory footprint exceeds the device budget."""


@dataclass(frozen=True)
class MemoryLedger:
    sram_used_bytes: int
    flash_used_bytes: int
    sram_budget_bytes: int
    flash_budget_bytes: int

    @property
    def sram_headroom(self) -> int:
        return self.sram_budget_bytes - self.sram_used_bytes

    @property
    def flash_headroom(self) -> int:
        return self.flash_budget_bytes - self.flash_used_bytes


def memory_footprint(
    w: int,
    channels: int,
    layer_sizes: tuple[int, int, int],
    model_flash_bytes: int,
    profile: DeviceProfile,
) -> MemoryLedger:
    """SRAM/flash ledger for a configuration; raises BudgetError on overflow.

    SRAM: int16 sample ring buffer + float feature scratch + activations +
    stack reserve. Flash: quantized parameter image + code reserve.
    """
    d, h, c = layer_sizes
    if d != channels * FEATURES_PER_CHANNEL:
        raise ValueError(
            f"model input dimension {d} does not match {channels} channels "
            f"x {FEATURES_PER_CHANNEL} features"
        )
    sram = (
        w * channels * RAW_SAMPLE_BYTES_PER_SCALAR
        + ACTIVATION_BYTES * d
        + ACTIVATION_BYTES * (h + c)
        + SRAM_STACK_RESERVE
    )
    flash = model_flash_bytes + FLASH_CODE_RESERVE
    ledger = MemoryLedger(
        sram_used_bytes=sram,
        flash_used_bytes=flash,
        sram_budget_bytes=profile.sram_bytes,
        flash_budget_bytes=profile.flash_bytes,
    )
    if sram > profile.sram_bytes:
        raise BudgetError(
            f"SRAM budget exceeded: need {sram} bytes, have {profile.sram_bytes}"
        )
    if flash > profile.flash_bytes:
        raise BudgetError(
            f"flash budget exceeded: need {flash} bytes, have {profile.flash_bytes}"
        )
    return ledger
