"""Deterministic discrete-event simulation of devices, channel and host.

One seeded RNG drives everything through per-entity substreams derived by
hashing (entity name, seed), so event handling order can never change the
randomness an entity sees. Simulated time is integer milliseconds.

Trace format (UTF-8, tab-separated, one event per line):

    t_ms <TAB> kind <TAB> entity <TAB> detail...

The first line is always ``0  trace_version  sim  1``. Device lines carry
state and battery so the firmware view (event, device, state, battery) is
embedded in every transition record. Frame lines carry the full frame hex,
which doubles as the channel byte log for privacy and nonce audits.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from typing import Callable

import numpy as np

from .classifier import MlpModel, forward, load_model
from .config import Config, DeviceSpec, ScenarioSettings
from .core import ActivityLabel, Label, label_set_for
from .dataio import synthesize_signal
from .firmware import (
    BATTERY_RECOVERY_FRACTION,
    DeviceEvent,
    DutyPlan,
    EnergyState,
    PowerState,
    SLOT_MS,
    account_energy,
    plan_duty_cycle,
    step_state_machine,
)
from .netproto import (
    AppId,
    DataPayload,
    FrameType,
    HostGateway,
    ProtocolError,
    ReplayWindow,
    decode_frame,
    encode_frame,
    estimate_offset,
    pack_sync_report,
    pack_sync_request,
    peek_header,
    unpack_ack,
    unpack_sync_reply,
)
from .pipeline import extract_feature_matrix, normalize_features

TRACE_VERSION = 1
MIN_RADIO_MS = 1

MAJORITY = 0.75


class VersionMismatch(ValueError):
    pass


def _entity_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "big")])


def _window_rng(seed: int, device_id: int, window_start_ms: int) -> np.random.Generator:
    return np.random.default_rng([seed, device_id, window_start_ms])


class Simulator:
    """Event kernel: time-ordered queue with an insertion-order tiebreaker."""

    def __init__(self, seed: int):
        self.seed = seed
        self.now = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._tie = 0
        self.lines: list[str] = []

    def schedule(self, t_ms: int, fn: Callable[[], None]) -> None:
        if t_ms < self.now:
            raise ValueError(f"event scheduled in the past ({t_ms} < {self.now})")
        heapq.heappush(self._heap, (t_ms, self._tie, fn))
        self._tie += 1

    def emit(self, kind: str, entity: str, *details) -> None:
        parts = [str(self.now), kind, entity, *[str(d) for d in details]]
        self.lines.append("\t".join(parts))

    def run(self, until_ms: int) -> None:
        while self._heap and self._heap[0][0] <= until_ms:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
        self.now = until_ms

    def rng_for(self, name: str) -> np.random.Generator:
        return _entity_rng(self.seed, name)


class SimChannel:
    """Lossy, latent, seeded bit-flipping link between devices and the host."""

    def __init__(self, sim: Simulator, model, name: str = "channel"):
        self.sim = sim
        self.model = model
        self.name = name
        self.rng = sim.rng_for(name)
        self.byte_log: list[bytes] = []

    def _latency(self) -> int:
        lat = self.model.latency_ms
        if isinstance(lat, tuple):
            return int(self.rng.integers(lat[0], lat[1] + 1))
        return lat

    def send(self, src: str, frame: bytes, receiver) -> None:
        _, type_value, device_id, seq, _ = peek_header(frame)
        kind = FrameType(type_value).name
        self.sim.emit("frame_tx", src, kind, device_id, seq, len(frame), frame.hex())
        self.byte_log.append(frame)
        if self.rng.random() < self.model.loss_probability:
            self.sim.emit("frame_lost", self.name, src, kind, device_id, seq)
            return
        if self.rng.random() < self.model.corruption_probability:
            flipped = bytearray(frame)
            bit = int(self.rng.integers(0, len(flipped) * 8))
            flipped[bit // 8] ^= 1 << (bit % 8)
            frame = bytes(flipped)
            self.sim.emit("frame_corrupt", self.name, src, kind, device_id, seq, frame.hex())
            self.byte_log.append(frame)
        self.sim.schedule(self.sim.now + self._latency(), lambda: receiver.receive(frame))


class SimHost:
    """Host gateway wrapper that routes ACKs back through the channel."""

    def __init__(self, sim: Simulator, gateway: HostGateway, channel: SimChannel):
        self.sim = sim
        self.gateway = gateway
        self.channel = channel
        self.devices: dict[int, "SimDevice"] = {}

    def receive(self, frame: bytes) -> None:
        try:
            _, type_value, device_id, seq, _ = peek_header(frame)
            kind = FrameType(type_value).name
        except ProtocolError:
            self.sim.emit("frame_reject", "host", -1, "truncated")
            return
        result = self.gateway.step(self.sim.now, [frame])
        if result.rejects:
            for dev, code in result.rejects:
                self.sim.emit("frame_reject", "host", dev, code)
        else:
            self.sim.emit("frame_rx", "host", kind, device_id, seq)
        for obs in result.observations:
            self.sim.emit(
                "observation", "host", obs.device_id, obs.corrected_t_ms,
                obs.app_id.value, obs.label_index, obs.confidence,
            )
        for note in result.notifications:
            self.sim.emit("alert_notified", "host", note.device_id, note.seq, note.label_index)
        for ack in result.acks:
            target = self.devices.get(peek_header(ack)[2])
            if target is not None:
                self.channel.send("host", ack, target)


@dataclass
class _PendingAlert:
    seq: int
    frame: bytes
    label: Label
    first_sent_ms: int = 0
    attempts: int = 0
    delivered: bool = False


@dataclass
class _PendingSync:
    seq: int
    t1: int
    attempt: int


class SimDevice:
    """Autonomous wearable node: wake-on-motion, classify, transmit, harvest."""

    def __init__(
        self,
        sim: Simulator,
        spec: DeviceSpec,
        config: Config,
        scenario: ScenarioSettings,
        channel: SimChannel,
        model: MlpModel | None,
    ):
        self.sim = sim
        self.spec = spec
        self.config = config
        self.scenario = scenario
        self.channel = channel
        self.model = model
        self.name = f"dev{spec.device_id}"
        self.app = spec.app
        self.app_id = AppId.HAR if spec.app == "har" else AppId.GESTURE
        self.label_set = label_set_for(spec.app)
        self.profile = config.profile
        self.key = config.protocol.key
        self.host: SimHost | None = None

        rate = self.profile.sample_rate_hz
        self.period_ms = 1000.0 / rate
        self.window = config.pipeline.window
        self.window_ms = round(self.window * 1000.0 / rate)
        self.cycle_ms = (
            self.window_ms
            + scenario.inference_latency_ms
            + self._tx_ms(self._data_frame_len())
        )

        self.blocks = self._tile_blocks(spec.schedule, scenario.duration_ms)
        self.signals = config.synthetic[spec.app].signals

        e = config.energy
        self.energy = EnergyState(
            battery_mwh=e.battery_initial_mwh,
            capacity_mwh=e.battery_capacity_mwh,
            harvest_power_mw=self._harvest_at,
            mppt_efficiency=e.mppt_efficiency,
            charge_efficiency=e.charge_efficiency,
        )
        self.duty_plan: DutyPlan | None = None
        if scenario.use_duty_plan:
            self.duty_plan = plan_duty_cycle(
                list(e.harvest_profile_mw), self.profile, self.app, self.energy, e.reserve_fraction
            )

        self.state = PowerState.Sleep
        self.cycle_gen = 0
        self.window_index = 0
        self.last_motion_ms = -(10 ** 12)
        self.last_account_ms = 0
        self.depleted = False
        self.slot_active_ms: dict[int, float] = {}
        self.net_cum = 0.0
        self.curtailed_cum = 0.0
        self.shortfall_cum = 0.0
        self.harvest_cum = 0.0
        self.consumed_cum = 0.0

        self.seq = 0
        self.replay = ReplayWindow()
        self.pending_sync: _PendingSync | None = None
        self.alert_queue: list[_PendingAlert] = []
        self.alert_labels = {
            name for name in scenario.alert_labels if name in self.label_set.__members__
        }

    # -- setup ---------------------------------------------------------------

    @staticmethod
    def _tile_blocks(schedule, duration_ms: int):
        blocks = []
        t = 0
        if not schedule:
            return [(0, duration_ms, None)]
        while t < duration_ms:
            for label, dur in schedule:
                if t >= duration_ms:
                    break
                end = min(t + dur, duration_ms)
                blocks.append((t, end, label))
                t = end
        return blocks

    def start(self) -> None:
        cap = self.energy.capacity_mwh
        self.sim.emit(
            "device_init", self.name, self.app,
            f"{self.energy.battery_mwh:.9f}", f"{cap:.9f}", self.spec.clock_offset_ms,
        )
        if self.duty_plan is not None:
            self.sim.emit(
                "duty_plan", self.name,
                ",".join(f"{f:.4f}" for f in self.duty_plan.fractions),
            )
        self._emit_energy()
        self._send_management_frame(FrameType.HELLO, b"")
        self._start_sync(attempt=1)
        for start_ms, _, _ in self.blocks:
            self.sim.schedule(start_ms, self._wake_check)
        slot = SLOT_MS
        while slot < self.scenario.duration_ms:
            self.sim.schedule(slot, self._wake_check)
            slot += SLOT_MS
        tick = self.scenario.energy_log_interval_ms
        t = tick
        while t < self.scenario.duration_ms:
            self.sim.schedule(t, self._energy_tick)
            t += tick
        for t_ms, label in self.spec.alert_schedule:
            if t_ms < self.scenario.duration_ms:
                self.sim.schedule(t_ms, lambda lbl=label: self._trigger_alert(lbl))

    # -- clocks and signals ----------------------------------------------------

    def device_clock(self, t_ms: int) -> int:
        return max(0, t_ms + self.spec.clock_offset_ms)

    def _harvest_at(self, t_ms: int) -> float:
        profile = self.config.energy.harvest_profile_mw
        return profile[(t_ms // SLOT_MS) % 24]

    def _block_at(self, t_ms: int):
        lo, hi = 0, len(self.blocks) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.blocks[mid][0] <= t_ms:
                lo = mid
            else:
                hi = mid - 1
        return self.blocks[lo]

    def _window_samples(self, start_ms: int):
        """Synthesize the W samples of the window beginning at start_ms.

        Seeded by (scenario seed, device, window start) so the stream does
        not depend on event ordering. Windows may span schedule blocks;
        samples are drawn per block run in time order.
        """
        rng = _window_rng(self.sim.seed, self.spec.device_id, start_ms)
        idx = np.arange(self.window)
        t_ms = start_ms + idx * self.period_ms
        t_s = t_ms / 1000.0
        labels: list[Label | None] = []
        accel = np.empty((self.window, 3))
        gyro = np.empty((self.window, 3))
        stretch_parts: list[np.ndarray | None] = []
        i = 0
        while i < self.window:
            block = self._block_at(min(int(t_ms[i]), self.scenario.duration_ms - 1))
            j = i
            while j < self.window and int(t_ms[j]) < block[1]:
                j += 1
            j = max(j, i + 1)
            label = block[2]
            sig = self.signals[label]
            a, g, s = synthesize_signal(sig, t_s[i:j], rng)
            accel[i:j] = a
            gyro[i:j] = g
            stretch_parts.append(s)
            labels.extend([label] * (j - i))
            i = j
        if stretch_parts[0] is not None:
            stretch = np.concatenate(stretch_parts)
            matrix = np.hstack([accel, gyro, stretch[:, None]])
        else:
            matrix = np.hstack([accel, gyro])
        return matrix, labels

    def _oracle_label(self, labels) -> tuple[Label, float]:
        counts: dict[Label, int] = {}
        for l in labels:
            counts[l] = counts.get(l, 0) + 1
        top_label = max(counts, key=lambda k: (counts[k], -k.value))
        top = counts[top_label]
        frac = top / len(labels)
        if frac >= MAJORITY:
            return top_label, frac
        if len(counts) >= 2 and self.label_set is ActivityLabel:
            return ActivityLabel.Transition, frac
        return top_label, frac

    def _classify(self, matrix: np.ndarray, labels) -> tuple[Label, float]:
        if self.model is None:
            return self._oracle_label(labels)
        feats = extract_feature_matrix(matrix[None, :, :])
        normed, _ = normalize_features(feats, self.model.stats)
        probs = forward(self.model, normed[0])
        idx = int(np.argmax(probs))
        return self.label_set(idx), float(probs[idx])

    # -- energy ------------------------------------------------------------------

    def _advance(self, to_ms: int) -> None:
        """Integrate energy in the current state up to to_ms, split per hour slot."""
        t = self.last_account_ms
        while t < to_ms:
            slot_end = (t // SLOT_MS + 1) * SLOT_MS
            piece_end = min(slot_end, to_ms)
            dt = piece_end - t
            self.energy, delta, depleted = account_energy(
                {self.state: 1.0}, self.profile, self.app, self.energy, t, dt
            )
            self.net_cum += delta.net_mwh
            self.curtailed_cum += delta.curtailed_mwh
            self.shortfall_cum += delta.shortfall_mwh
            self.harvest_cum += delta.harvest_mwh
            self.consumed_cum += delta.consumed_mwh
            if self.state is not PowerState.Sleep:
                slot = t // SLOT_MS
                self.slot_active_ms[slot] = self.slot_active_ms.get(slot, 0.0) + dt
            t = piece_end
            if depleted and not self.depleted:
                self.depleted = True
                self.last_account_ms = t
                self.sim.emit("battery_depleted", self.name)
                self._force_sleep()
        self.last_account_ms = to_ms

    def _consume_impulse(self, mwh: float) -> None:
        """One-off transmit burst outside the cycle dwell accounting."""
        raw = self.energy.battery_mwh - mwh
        new_level = max(raw, 0.0)
        self.shortfall_cum += max(0.0, -raw)
        self.net_cum -= mwh
        self.consumed_cum += mwh
        self.energy = dc_replace(self.energy, battery_mwh=new_level)
        if new_level <= 0.0 and not self.depleted:
            self.depleted = True
            self.sim.emit("battery_depleted", self.name)
            self._force_sleep()

    def _emit_energy(self) -> None:
        self.sim.emit(
            "energy", self.name,
            f"{self.energy.battery_mwh:.9f}", f"{self.net_cum:.9f}",
            f"{self.curtailed_cum:.9f}", f"{self.shortfall_cum:.9f}",
            f"{self.harvest_cum:.9f}", f"{self.consumed_cum:.9f}",
        )

    def _energy_tick(self) -> None:
        self._advance(self.sim.now)
        self._maybe_recover()
        self._emit_energy()

    def _maybe_recover(self) -> None:
        if self.depleted and self.energy.battery_mwh >= BATTERY_RECOVERY_FRACTION * self.energy.capacity_mwh:
            self.depleted = False
            self.sim.emit("battery_recovered", self.name)

    def finalize(self) -> None:
        self._advance(self.scenario.duration_ms)
        self._emit_energy()

    # -- state machine ------------------------------------------------------------

    def _transition(self, event: DeviceEvent) -> bool:
        result = step_state_machine(self.state, event)
        if result.noop:
            self.sim.emit("device_noop", self.name, self.state.value, event.value)
            return False
        self.state = result.state
        self.sim.emit(
            "device_state", self.name, self.state.value, f"{self.energy.battery_mwh:.6f}"
        )
        return True

    def _force_sleep(self) -> None:
        self.cycle_gen += 1
        if self.state is not PowerState.Sleep:
            self.state = PowerState.Sleep
            self.sim.emit(
                "device_state", self.name, self.state.value, f"{self.energy.battery_mwh:.6f}"
            )

    # -- duty gating -----------------------------------------------------------------

    def _duty_allows(self, extra_ms: float) -> bool:
        if self.duty_plan is None:
            return True
        slot = self.sim.now // SLOT_MS
        budget = self.duty_plan.fractions[slot % 24] * SLOT_MS
        return self.slot_active_ms.get(slot, 0.0) + extra_ms <= budget

    # -- the sampling/processing/transmitting cycle ------------------------------------

    def _wake_check(self) -> None:
        self._advance(self.sim.now)
        self._maybe_recover()
        if self.depleted or self.state is not PowerState.Sleep:
            return
        if self.sim.now + self.cycle_ms > self.scenario.duration_ms:
            return
        if not self._duty_allows(self.cycle_ms):
            return
        if not self._probe_motion():
            return
        self.last_motion_ms = self.sim.now
        if self._transition(DeviceEvent.MotionDetected):
            gen = self.cycle_gen
            self.sim.schedule(self.sim.now + self.window_ms, lambda: self._window_done(gen))

    def _probe_motion(self) -> bool:
        matrix, _ = self._window_samples(self.sim.now)
        return _matrix_motion(matrix)

    def _window_done(self, gen: int) -> None:
        if gen != self.cycle_gen or self.state is not PowerState.Sampling:
            return
        self._advance(self.sim.now)
        if self.depleted:
            return
        start_ms = self.sim.now - self.window_ms
        matrix, labels = self._window_samples(start_ms)
        if _matrix_motion(matrix):
            self.last_motion_ms = self.sim.now
        label, confidence = self._classify(matrix, labels)
        if self._transition(DeviceEvent.WindowFull):
            conf_fp = min(10000, round(confidence * 10000))
            self.sim.emit("classify", self.name, self.window_index, label.name, conf_fp)
            self.sim.schedule(
                self.sim.now + self.scenario.inference_latency_ms,
                lambda: self._inference_done(gen, label, conf_fp),
            )

    def _inference_done(self, gen: int, label: Label, conf_fp: int) -> None:
        if gen != self.cycle_gen or self.state is not PowerState.Processing:
            return
        self._advance(self.sim.now)
        if self.depleted:
            return
        if self._transition(DeviceEvent.InferenceDone):
            self.window_index += 1
            tx_ms = MIN_RADIO_MS
            if self.window_index % self.scenario.report_every_n_windows == 0:
                frame = self._build_data_frame(label, conf_fp)
                self.channel.send(self.name, frame, self.host)
                tx_ms = self._tx_ms(len(frame))
            if label.name in self.alert_labels:
                self._trigger_alert(label)
            self.sim.schedule(self.sim.now + tx_ms, lambda: self._tx_done(gen))

    def _tx_done(self, gen: int) -> None:
        if gen != self.cycle_gen or self.state is not PowerState.Transmitting:
            return
        self._advance(self.sim.now)
        if self.depleted:
            return
        if not self._transition(DeviceEvent.TxDone):
            return
        idle = self.sim.now - self.last_motion_ms >= self.scenario.idle_timeout_ms
        out_of_time = self.sim.now + self.cycle_ms > self.scenario.duration_ms
        if idle or out_of_time or not self._duty_allows(self.cycle_ms):
            self._transition(DeviceEvent.IdleTimeout)
            self.cycle_gen += 1
            return
        next_gen = self.cycle_gen
        self.sim.schedule(self.sim.now + self.window_ms, lambda: self._window_done(next_gen))

    # -- frames -------------------------------------------------------------------------

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def _tx_ms(self, frame_len: int) -> int:
        bits = frame_len * 8
        return max(MIN_RADIO_MS, round(bits / self.scenario.tx_bitrate_kbps))

    def _data_frame_len(self) -> int:
        return 10 + 12 + 16

    def _build_data_frame(self, label: Label, conf_fp: int) -> bytes:
        payload = DataPayload(
            timestamp_ms=self.device_clock(self.sim.now),
            label_index=label.value,
            confidence=conf_fp,
            app_id=self.app_id,
        ).pack()
        return encode_frame(FrameType.DATA, self.spec.device_id, self._next_seq(), payload, self.key)

    def _send_management_frame(self, ftype: FrameType, payload: bytes) -> int:
        seq = self._next_seq()
        frame = encode_frame(ftype, self.spec.device_id, seq, payload, self.key)
        self._consume_impulse(self.profile.p_tx_mw * self._tx_ms(len(frame)) / 3_600_000.0)
        self.channel.send(self.name, frame, self.host)
        return seq

    # -- time sync -------------------------------------------------------------------------

    def _start_sync(self, attempt: int) -> None:
        if self.sim.now >= self.scenario.duration_ms:
            return
        t1 = self.device_clock(self.sim.now)
        seq = self._send_management_frame(FrameType.TIME_SYNC, pack_sync_request(t1))
        self.pending_sync = _PendingSync(seq=seq, t1=t1, attempt=attempt)
        timeout = self.config.protocol.sync_timeout_ms
        self.sim.schedule(self.sim.now + timeout, lambda: self._sync_timeout(seq, attempt))

    def _sync_timeout(self, seq: int, attempt: int) -> None:
        if self.pending_sync is None or self.pending_sync.seq != seq:
            return
        if attempt < self.config.protocol.sync_retries:
            self._start_sync(attempt + 1)
        else:
            self.pending_sync = None
            self.sim.emit("sync_timeout", self.name, attempt)
            self._schedule_next_sync()

    def _schedule_next_sync(self) -> None:
        interval = self.config.protocol.sync_interval_ms
        if interval > 0 and self.sim.now + interval < self.scenario.duration_ms:
            self.sim.schedule(self.sim.now + interval, lambda: self._start_sync(1))

    def _complete_sync(self, t1: int, t2: int, t3: int) -> None:
        t4 = self.device_clock(self.sim.now)
        offset, rtt = estimate_offset(t1, t2, t3, t4)
        self.pending_sync = None
        self.sim.emit("sync", self.name, f"{offset:.3f}", rtt)
        self._send_management_frame(FrameType.TIME_SYNC, pack_sync_report(offset, max(0, rtt)))
        self._schedule_next_sync()

    # -- alerts ------------------------------------------------------------------------------

    def _trigger_alert(self, label: Label) -> None:
        payload = DataPayload(
            timestamp_ms=self.device_clock(self.sim.now),
            label_index=label.value,
            confidence=10000,
            app_id=self.app_id,
        ).pack()
        seq = self._next_seq()
        frame = encode_frame(FrameType.ALERT, self.spec.device_id, seq, payload, self.key)
        alert = _PendingAlert(seq=seq, frame=frame, label=label)
        self.alert_queue.append(alert)
        if len(self.alert_queue) == 1:
            self._send_alert_attempt(alert)

    def _send_alert_attempt(self, alert: _PendingAlert) -> None:
        if alert.delivered:
            return
        retry = self.config.protocol.retry
        if alert.attempts >= retry.max_attempts:
            self.sim.emit("alert_undelivered", self.name, alert.seq, alert.attempts)
            self._pop_alert(alert)
            return
        alert.attempts += 1
        if alert.attempts == 1:
            alert.first_sent_ms = self.sim.now
        self._consume_impulse(self.profile.p_tx_mw * self._tx_ms(len(alert.frame)) / 3_600_000.0)
        self.sim.emit("alert_sent", self.name, alert.seq, alert.attempts)
        self.channel.send(self.name, alert.frame, self.host)
        self.sim.schedule(
            self.sim.now + retry.interval_ms, lambda: self._alert_retry(alert.seq)
        )

    def _alert_retry(self, seq: int) -> None:
        if not self.alert_queue or self.alert_queue[0].seq != seq:
            return
        self._send_alert_attempt(self.alert_queue[0])

    def _pop_alert(self, alert: _PendingAlert) -> None:
        if self.alert_queue and self.alert_queue[0] is alert:
            self.alert_queue.pop(0)
        if self.alert_queue:
            self._send_alert_attempt(self.alert_queue[0])

    # -- receive path ----------------------------------------------------------------------------

    def receive(self, frame: bytes) -> None:
        try:
            decoded = decode_frame(frame, self.key, self.replay)
        except ProtocolError as exc:
            self.sim.emit("frame_reject", self.name, self.spec.device_id, exc.code)
            return
        self.sim.emit("frame_rx", self.name, decoded.frame_type.name, decoded.device_id, decoded.seq)
        if decoded.frame_type is not FrameType.ACK:
            return
        acked_seq, data = unpack_ack(decoded.payload)
        if self.pending_sync is not None and acked_seq == self.pending_sync.seq and data:
            t1, t2, t3 = unpack_sync_reply(data)
            self._complete_sync(t1, t2, t3)
            return
        if self.alert_queue and self.alert_queue[0].seq == acked_seq:
            alert = self.alert_queue[0]
            alert.delivered = True
            latency = self.sim.now - alert.first_sent_ms
            self.sim.emit("alert_delivered", self.name, alert.seq, alert.attempts, latency)
            self._pop_alert(alert)


def _matrix_motion(matrix: np.ndarray, threshold_g: float = 0.05) -> bool:
    mags = np.linalg.norm(matrix[:, :3], axis=1)
    return bool(np.max(np.abs(mags - 1.0)) > threshold_g)


@dataclass
class SimTrace:
    lines: list[str]
    metrics: dict

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def run_scenario(config: Config, seed: int = 0) -> SimTrace:
    """Execute the configured scenario; returns the trace and derived metrics."""
    scenario = config.scenario
    if scenario is None:
        raise ValueError("config has no scenario section")
    for spec in scenario.devices:
        if spec.app not in config.synthetic:
            raise ValueError(f"device {spec.device_id}: no synthetic_models.{spec.app} section")

    sim = Simulator(seed)
    sim.emit("trace_version", "sim", TRACE_VERSION)
    sim.emit("scenario", "sim", scenario.duration_ms, len(scenario.devices), seed)

    channel = SimChannel(sim, config.channel)
    gateway = HostGateway(
        {spec.device_id: config.protocol.key for spec in scenario.devices},
        clock=lambda: sim.now,
    )
    host = SimHost(sim, gateway, channel)

    model = None
    if scenario.model_path is not None:
        model = load_model(scenario.model_path)

    devices = []
    for spec in scenario.devices:
        device = SimDevice(sim, spec, config, scenario, channel, model)
        device.host = host
        host.devices[spec.device_id] = device
        devices.append(device)

    for device in devices:
        device.start()
    sim.run(scenario.duration_ms)
    for device in devices:
        device.finalize()
    sim.emit("scenario_end", "sim")

    return SimTrace(lines=sim.lines, metrics=trace_metrics(sim.lines))


def write_trace(trace: SimTrace, path: str | Path) -> None:
    Path(path).write_text(trace.text(), encoding="utf-8")


def write_metrics(trace: SimTrace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace.metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def trace_observations(lines: list[str]):
    """Host observation log entries recovered from the trace."""
    from .netproto import Observation

    out = []
    for line in lines:
        parts = line.split("\t")
        if parts[1] != "observation":
            continue
        out.append(
            Observation(
                device_id=int(parts[3]),
                corrected_t_ms=int(parts[4]),
                app_id=AppId(int(parts[5])),
                label_index=int(parts[6]),
                confidence=int(parts[7]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Trace-derived metrics and replay checking

def trace_metrics(lines: list[str]) -> dict:
    """Aggregate a trace into summary metrics (re-derivable from the file alone)."""
    devices: dict[str, dict] = {}
    host = {"frames_received": 0, "frames_rejected": {}, "observations": {}, "alerts_notified": 0}
    channel = {"transmitted": 0, "lost": 0, "corrupted": 0}
    duration = 0
    seed = None

    def dev(name: str) -> dict:
        return devices.setdefault(
            name,
            {
                "app": None,
                "frames_sent": 0,
                "classifications": {},
                "alerts": {"sent": 0, "delivered": 0, "undelivered": 0, "attempts": {}, "latency_ms": {}},
                "battery_mwh": {},
                "battery_series": [],
                "energy_mwh": {},
                "sync": {"offset_est_ms": None, "rtt_ms": None, "timeouts": 0},
                "noops": 0,
                "depletions": 0,
            },
        )

    for line in lines:
        parts = line.split("\t")
        t = int(parts[0])
        kind, entity = parts[1], parts[2]
        if kind == "scenario":
            duration = int(parts[3])
            seed = int(parts[5])
        elif kind == "device_init":
            d = dev(entity)
            d["app"] = parts[3]
            d["battery_mwh"]["start"] = float(parts[4])
            d["battery_mwh"]["capacity"] = float(parts[5])
        elif kind == "frame_tx":
            channel["transmitted"] += 1
            if entity != "host":
                dev(entity)["frames_sent"] += 1
        elif kind == "frame_lost":
            channel["lost"] += 1
        elif kind == "frame_corrupt":
            channel["corrupted"] += 1
        elif kind == "frame_rx" and entity == "host":
            host["frames_received"] += 1
        elif kind == "frame_reject" and entity == "host":
            code = parts[4]
            host["frames_rejected"][code] = host["frames_rejected"].get(code, 0) + 1
        elif kind == "observation":
            key = parts[3]
            host["observations"][key] = host["observations"].get(key, 0) + 1
        elif kind == "alert_notified":
            host["alerts_notified"] += 1
        elif kind == "classify":
            d = dev(entity)
            label = parts[4]
            d["classifications"][label] = d["classifications"].get(label, 0) + 1
        elif kind == "alert_sent":
            a = dev(entity)["alerts"]
            seq = parts[3]
            if parts[4] == "1":
                a["sent"] += 1
            a["attempts"][seq] = int(parts[4])
        elif kind == "alert_delivered":
            a = dev(entity)["alerts"]
            a["delivered"] += 1
            a["attempts"][parts[3]] = int(parts[4])
            a["latency_ms"][parts[3]] = int(parts[5])
        elif kind == "alert_undelivered":
            a = dev(entity)["alerts"]
            a["undelivered"] += 1
            a["attempts"][parts[3]] = int(parts[4])
        elif kind == "sync":
            s = dev(entity)["sync"]
            s["offset_est_ms"] = float(parts[3])
            s["rtt_ms"] = int(parts[4])
        elif kind == "sync_timeout":
            dev(entity)["sync"]["timeouts"] += 1
        elif kind == "device_noop":
            dev(entity)["noops"] += 1
        elif kind == "battery_depleted":
            dev(entity)["depletions"] += 1
        elif kind == "energy":
            d = dev(entity)
            battery = float(parts[3])
            d["battery_series"].append([t, battery])
            d["battery_mwh"]["end"] = battery
            d["battery_mwh"]["min"] = min(d["battery_mwh"].get("min", battery), battery)
            d["energy_mwh"] = {
                "net": float(parts[4]),
                "curtailed": float(parts[5]),
                "shortfall": float(parts[6]),
                "harvested": float(parts[7]),
                "consumed": float(parts[8]),
            }

    for d in devices.values():
        series = d.pop("battery_series")
        daily = []
        by_t = {t: b for t, b in series}
        day = 0
        while day * 86_400_000 <= duration:
            t = day * 86_400_000
            if t in by_t:
                daily.append([day, by_t[t]])
            day += 1
        if duration in by_t and (not daily or daily[-1][0] * 86_400_000 != duration):
            daily.append([duration / 86_400_000, by_t[duration]])
        d["battery_daily"] = daily

    return {
        "trace_version": TRACE_VERSION,
        "duration_ms": duration,
        "seed": seed,
        "devices": devices,
        "host": host,
        "channel": channel,
    }


@dataclass
class ReplayReport:
    passed: bool
    failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    checks_run: int = 0


def replay(lines: list[str], canaries: tuple[bytes, ...] = ()) -> ReplayReport:
    """Re-check trace invariants: version, energy ledger, seq monotonicity,
    frame causality and canary absence. Line numbers are 1-based."""
    report = ReplayReport(passed=True)
    if not lines:
        report.warnings.append("empty trace: vacuous pass")
        return report
    first = lines[0].split("\t")
    if len(first) < 4 or first[1] != "trace_version":
        raise VersionMismatch("trace has no version line")
    if int(first[3]) != TRACE_VERSION:
        raise VersionMismatch(f"trace version {first[3]} != supported {TRACE_VERSION}")

    initial: dict[str, float] = {}
    capacity: dict[str, float] = {}
    highest_seq: dict[str, int] = {}
    seen_frames: dict[tuple[str, int], str] = {}
    tx_keys: set[tuple[str, int, int, int]] = set()
    event_lines = 0

    for lineno, line in enumerate(lines, start=1):
        parts = line.split("\t")
        kind, entity = parts[1], parts[2]
        if kind in ("trace_version", "scenario", "scenario_end"):
            continue
        event_lines += 1
        if kind == "device_init":
            initial[entity] = float(parts[4])
            capacity[entity] = float(parts[5])
        elif kind == "energy":
            report.checks_run += 1
            battery, net, curtailed, shortfall = (
                float(parts[3]), float(parts[4]), float(parts[5]), float(parts[6]),
            )
            expected = initial.get(entity, battery) + net - curtailed + shortfall
            if abs(battery - expected) > 1e-6:
                report.failures.append(
                    f"line {lineno}: energy ledger mismatch for {entity}: "
                    f"battery {battery} != {expected:.9f}"
                )
            if battery < -1e-9 or battery > capacity.get(entity, float("inf")) + 1e-9:
                report.failures.append(f"line {lineno}: battery {battery} outside [0, capacity]")
        elif kind == "frame_tx":
            report.checks_run += 1
            ftype, device_id, seq, hexes = parts[3], int(parts[4]), int(parts[5]), parts[7]
            direction = 1 if entity == "host" else 0
            tx_keys.add((ftype, device_id, seq, direction))
            if entity != "host":
                key = (entity, seq)
                if key in seen_frames:
                    if seen_frames[key] != hexes:
                        report.failures.append(
                            f"line {lineno}: device {entity} reused seq {seq} for different bytes"
                        )
                else:
                    top = highest_seq.get(entity, -1)
                    if seq <= top:
                        report.failures.append(
                            f"line {lineno}: device {entity} seq {seq} not above {top}"
                        )
                    highest_seq[entity] = max(top, seq)
                    seen_frames[key] = hexes
            if canaries:
                raw = bytes.fromhex(hexes)
                for canary in canaries:
                    if canary in raw:
                        report.failures.append(
                            f"line {lineno}: canary bytes {canary.hex()} leaked on the air"
                        )
        elif kind == "frame_rx":
            report.checks_run += 1
            ftype, device_id, seq = parts[3], int(parts[4]), int(parts[5])
            direction = 0 if entity == "host" else 1
            if (ftype, device_id, seq, direction) not in tx_keys:
                report.failures.append(
                    f"line {lineno}: received frame ({ftype}, dev {device_id}, seq {seq}) "
                    "was never transmitted"
                )

    if event_lines == 0:
        report.warnings.append("trace has no events: vacuous pass")
    report.passed = not report.failures
    return report
