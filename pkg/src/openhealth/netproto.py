"""Device-host wire protocol: authenticated frames, replay protection, sync, alerts.

Frame layout (big-endian, bit-exact):

    offset  size  field
    0       1     version (= 1)
    1       1     frame type (HELLO=1, TIME_SYNC=2, DATA=3, ALERT=4, ACK=5, CONFIG=6)
    2       2     device id
    4       4     sequence number (strictly increasing per device and direction)
    8       2     payload length (ciphertext bytes, <= 1024)
    10      n     ciphertext
    10+n    16    AES-GCM auth tag

The 10-byte header is authenticated as associated data but not encrypted.
The 96-bit nonce is device_id (2) || seq (4) || direction (1) || zeros (5);
the direction byte (0 = device to host, 1 = host to device) keeps the two
directions of a session from ever sharing a nonce under the pre-shared key.
Direction is implied by the frame type, so it needs no wire bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

PROTOCOL_VERSION = 1
HEADER_LEN = 10
TAG_LEN = 16
MAX_PAYLOAD = 1024
KEY_LEN = 16

CONFIDENCE_SCALE = 10000  # fixed-point 0..10000 <-> 0..1


class FrameType(Enum):
    HELLO = 1
    TIME_SYNC = 2
    DATA = 3
    ALERT = 4
    ACK = 5
    CONFIG = 6


class AppId(Enum):
    HAR = 1
    GESTURE = 2


# Direction byte for the nonce, implied by who legitimately sends each type.
DEVICE_TO_HOST = 0
HOST_TO_DEVICE = 1
_DIRECTION = {
    FrameType.HELLO: DEVICE_TO_HOST,
    FrameType.TIME_SYNC: DEVICE_TO_HOST,
    FrameType.DATA: DEVICE_TO_HOST,
    FrameType.ALERT: DEVICE_TO_HOST,
    FrameType.ACK: HOST_TO_DEVICE,
    FrameType.CONFIG: HOST_TO_DEVICE,
}


class ProtocolError(ValueError):
    code = "protocol_error"


class TruncatedFrame(ProtocolError):
    code = "truncated"


class VersionError(ProtocolError):
    code = "bad_version"


class AuthFailure(ProtocolError):
    code = "auth_failure"


class ReplayRejected(ProtocolError):
    code = "replay"


class PayloadTooLong(ProtocolError):
    code = "payload_too_long"


class UnknownDevice(ProtocolError):
    code = "unknown_device"


def frame_nonce(device_id: int, seq: int, direction: int) -> bytes:
    return struct.pack(">HIB", device_id, seq, direction) + b"\x00" * 5


@dataclass(frozen=True)
class DecodedFrame:
    frame_type: FrameType
    device_id: int
    seq: int
    payload: bytes
    direction: int


def encode_frame(
    frame_type: FrameType, device_id: int, seq: int, payload: bytes, key: bytes
) -> bytes:
    """Build an encrypted, authenticated frame around a plaintext payload."""
    if len(key) != KEY_LEN:
        raise ValueError(f"key must be {KEY_LEN} bytes")
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLong(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = struct.pack(
        ">BBHIH", PROTOCOL_VERSION, frame_type.value, device_id, seq, len(payload)
    )
    nonce = frame_nonce(device_id, seq, _DIRECTION[frame_type])
    ct_and_tag = AESGCM(key).encrypt(nonce, payload, header)
    return header + ct_and_tag


class ReplayWindow:
    """Highest accepted sequence number per direction for one device session."""

    def __init__(self) -> None:
        self._highest: dict[int, int] = {}

    def check(self, direction: int, seq: int) -> bool:
        return seq > self._highest.get(direction, -1)

    def accept(self, direction: int, seq: int) -> None:
        if not self.check(direction, seq):
            raise ReplayRejected(f"seq {seq} not above window")
        self._highest[direction] = seq

    def highest(self, direction: int) -> int:
        return self._highest.get(direction, -1)


def peek_header(data: bytes) -> tuple[int, int, int, int, int]:
    """Unauthenticated header fields (version, type, device, seq, payload_len)."""
    if len(data) < HEADER_LEN:
        raise TruncatedFrame(f"frame of {len(data)} bytes is shorter than the header")
    return struct.unpack(">BBHIH", data[:HEADER_LEN])


def decode_frame(data: bytes, key: bytes, replay: ReplayWindow | None = None) -> DecodedFrame:
    """Verify, decrypt and replay-check a frame.

    Raises TruncatedFrame, VersionError, AuthFailure or ReplayRejected;
    each carries a distinct error code. Acceptance advances the replay
    window when one is supplied.
    """
    version, type_value, device_id, seq, payload_len = peek_header(data)
    if len(data) != HEADER_LEN + payload_len + TAG_LEN:
        raise TruncatedFrame(
            f"frame length {len(data)} != {HEADER_LEN + payload_len + TAG_LEN} implied by header"
        )
    if version != PROTOCOL_VERSION:
        raise VersionError(f"unknown protocol version {version}")
    try:
        frame_type = FrameType(type_value)
    except ValueError:
        raise AuthFailure(f"unknown frame type {type_value}") from None
    direction = _DIRECTION[frame_type]
    nonce = frame_nonce(device_id, seq, direction)
    try:
        payload = AESGCM(key).decrypt(nonce, data[HEADER_LEN:], data[:HEADER_LEN])
    except InvalidTag:
        raise AuthFailure("authentication tag mismatch") from None
    if replay is not None:
        if not replay.check(direction, seq):
            raise ReplayRejected(f"seq {seq} already seen for direction {direction}")
        replay.accept(direction, seq)
    return DecodedFrame(
        frame_type=frame_type, device_id=device_id, seq=seq, payload=payload, direction=direction
    )


# ---------------------------------------------------------------------------
# Payload codecs

_DATA_FMT = ">QBHB"  # timestamp_ms, label_index, confidence, app_id


@dataclass(frozen=True)
class DataPayload:
    """Processed observation: the only sensor-derived content ever transmitted."""

    timestamp_ms: int
    label_index: int
    confidence: int  # fixed point, 0..10000
    app_id: AppId

    def __post_init__(self) -> None:
        if not 0 <= self.confidence <= CONFIDENCE_SCALE:
            raise ValueError(f"confidence {self.confidence} outside 0..{CONFIDENCE_SCALE}")
        if not 0 <= self.label_index <= 255:
            raise ValueError("label_index must fit one byte")

    def pack(self) -> bytes:
        return struct.pack(
            _DATA_FMT, self.timestamp_ms, self.label_index, self.confidence, self.app_id.value
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "DataPayload":
        ts, label, conf, app = struct.unpack(_DATA_FMT, raw)
        return cls(timestamp_ms=ts, label_index=label, confidence=conf, app_id=AppId(app))


SYNC_REQUEST = 0
SYNC_REPORT = 1


def pack_sync_request(t1_ms: int) -> bytes:
    return struct.pack(">BQ", SYNC_REQUEST, t1_ms)


def unpack_sync_request(raw: bytes) -> int:
    kind, t1 = struct.unpack(">BQ", raw)
    if kind != SYNC_REQUEST:
        raise ProtocolError("not a sync request")
    return t1


def pack_sync_report(offset_ms: float, rtt_ms: int) -> bytes:
    return struct.pack(">BdI", SYNC_REPORT, offset_ms, rtt_ms)


def unpack_sync_report(raw: bytes) -> tuple[float, int]:
    kind, offset, rtt = struct.unpack(">BdI", raw)
    if kind != SYNC_REPORT:
        raise ProtocolError("not a sync report")
    return offset, rtt


def pack_ack(acked_seq: int, data: bytes = b"") -> bytes:
    return struct.pack(">I", acked_seq) + data


def unpack_ack(raw: bytes) -> tuple[int, bytes]:
    (acked_seq,) = struct.unpack(">I", raw[:4])
    return acked_seq, raw[4:]


def pack_sync_reply(t1_ms: int, t2_ms: int, t3_ms: int) -> bytes:
    return struct.pack(">QQQ", t1_ms, t2_ms, t3_ms)


def unpack_sync_reply(raw: bytes) -> tuple[int, int, int]:
    return struct.unpack(">QQQ", raw)


def estimate_offset(t1: int, t2: int, t3: int, t4: int) -> tuple[float, int]:
    """Two-timestamp clock offset (host minus device) and round-trip time.

    Exact when the up/down latencies are symmetric; otherwise the error is
    half the latency asymmetry.
    """
    offset = ((t2 - t1) + (t3 - t4)) / 2.0
    rtt = (t4 - t1) - (t3 - t2)
    return offset, rtt


@dataclass
class SyncState:
    offset_ms: float = 0.0
    rtt_ms: int = 0
    synced: bool = False


@dataclass(frozen=True)
class RetryPolicy:
    interval_ms: int = 200
    max_attempts: int = 10


@dataclass(frozen=True)
class ChannelModel:
    """Simulated link parameters; randomness comes from the simulator seed."""

    latency_ms: int | tuple[int, int] = 20
    loss_probability: float = 0.0
    corruption_probability: float = 0.0

    def __post_init__(self) -> None:
        # loss may be exactly 1.0 (dead link) so delivery exhaustion is testable
        if not 0.0 <= self.loss_probability <= 1.0 or not 0.0 <= self.corruption_probability < 1.0:
            raise ValueError("loss must lie in [0, 1], corruption in [0, 1)")
        lat = self.latency_ms
        if isinstance(lat, tuple):
            if len(lat) != 2 or lat[0] < 0 or lat[1] < lat[0]:
                raise ValueError("latency range must be (lo, hi) with 0 <= lo <= hi")
        elif lat < 0:
            raise ValueError("latency must be >= 0")


@dataclass(frozen=True)
class DeliveryRecord:
    delivered: bool
    attempts: int
    latency_ms: int | None  # end-to-end, first send to matching ACK


@dataclass(frozen=True)
class Observation:
    device_id: int
    corrected_t_ms: int
    app_id: AppId
    label_index: int
    confidence: int


@dataclass(frozen=True)
class AlertNotification:
    device_id: int
    t_ms: int
    label_index: int
    app_id: AppId
    seq: int


OBSERVATION_HEADER = "device_id,corrected_t_ms,app_id,label,confidence"


def write_observation_log(observations, path: str | Path) -> None:
    lines = [OBSERVATION_HEADER]
    for o in observations:
        lines.append(
            f"{o.device_id},{o.corrected_t_ms},{o.app_id.value},{o.label_index},{o.confidence}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class GatewayResult:
    """Outcome of feeding one batch of frames to the host gateway."""

    acks: list[bytes] = field(default_factory=list)
    observations: list[Observation] = field(default_factory=list)
    notifications: list[AlertNotification] = field(default_factory=list)
    rejects: list[tuple[int, str]] = field(default_factory=list)  # (device_id, error code)


class HostGateway:
    """Receives device frames, stores corrected observations, raises alerts.

    One gateway instance serves many devices; each device session has its
    own key, replay window, clock-offset estimate and ordered observation
    log. Duplicate sequence numbers are never stored twice; replayed ALERT
    frames are re-acknowledged so retransmissions can terminate.
    """

    def __init__(self, keys: dict[int, bytes], clock=lambda: 0):
        self.keys = dict(keys)
        self.clock = clock
        self.replay: dict[int, ReplayWindow] = {d: ReplayWindow() for d in keys}
        self.offsets: dict[int, float] = {d: 0.0 for d in keys}
        self.logs: dict[int, list[Observation]] = {d: [] for d in keys}
        self.notifications: list[AlertNotification] = []
        self.acked_alerts: dict[int, set[int]] = {d: set() for d in keys}
        self._send_seq: dict[int, int] = {d: 0 for d in keys}
        self.reject_counts: dict[str, int] = {}

    def _next_seq(self, device_id: int) -> int:
        self._send_seq[device_id] += 1
        return self._send_seq[device_id]

    def _ack(self, device_id: int, acked_seq: int, data: bytes = b"") -> bytes:
        return encode_frame(
            FrameType.ACK,
            device_id,
            self._next_seq(device_id),
            pack_ack(acked_seq, data),
            self.keys[device_id],
        )

    def step(self, t_ms: int, frames) -> GatewayResult:
        """Process incoming frames; returns ACKs and anything newly stored."""
        result = GatewayResult()
        for raw in frames:
            try:
                _, _, device_id, seq, _ = peek_header(raw)
            except TruncatedFrame as exc:
                self._count_reject(result, -1, exc.code)
                continue
            if device_id not in self.keys:
                self._count_reject(result, device_id, UnknownDevice.code)
                continue
            try:
                frame = decode_frame(raw, self.keys[device_id], self.replay[device_id])
            except ReplayRejected as exc:
                # Retransmitted alerts still deserve an ACK so the sender stops.
                if self._is_replayed_alert(raw, device_id, seq):
                    result.acks.append(self._ack(device_id, seq))
                self._count_reject(result, device_id, exc.code)
                continue
            except ProtocolError as exc:
                self._count_reject(result, device_id, exc.code)
                continue
            self._dispatch(t_ms, frame, result)
        return result

    def _is_replayed_alert(self, raw: bytes, device_id: int, seq: int) -> bool:
        try:
            frame = decode_frame(raw, self.keys[device_id], replay=None)
        except ProtocolError:
            return False
        return frame.frame_type is FrameType.ALERT and seq in self.acked_alerts[device_id]

    def _count_reject(self, result: GatewayResult, device_id: int, code: str) -> None:
        result.rejects.append((device_id, code))
        self.reject_counts[code] = self.reject_counts.get(code, 0) + 1

    def _dispatch(self, t_ms: int, frame: DecodedFrame, result: GatewayResult) -> None:
        device_id = frame.device_id
        if frame.frame_type is FrameType.HELLO:
            result.acks.append(self._ack(device_id, frame.seq))
        elif frame.frame_type is FrameType.TIME_SYNC:
            kind = frame.payload[0]
            if kind == SYNC_REQUEST:
                t1 = unpack_sync_request(frame.payload)
                now = self.clock()
                result.acks.append(
                    self._ack(device_id, frame.seq, pack_sync_reply(t1, now, now))
                )
            else:
                offset, _ = unpack_sync_report(frame.payload)
                self.offsets[device_id] = offset
        elif frame.frame_type is FrameType.DATA:
            data = DataPayload.unpack(frame.payload)
            corrected = round(data.timestamp_ms + self.offsets[device_id])
            obs = Observation(
                device_id=device_id,
                corrected_t_ms=corrected,
                app_id=data.app_id,
                label_index=data.label_index,
                confidence=data.confidence,
            )
            self._insert_ordered(device_id, obs)
            result.observations.append(obs)
        elif frame.frame_type is FrameType.ALERT:
            data = DataPayload.unpack(frame.payload)
            note = AlertNotification(
                device_id=device_id,
                t_ms=t_ms,
                label_index=data.label_index,
                app_id=data.app_id,
                seq=frame.seq,
            )
            self.notifications.append(note)
            result.notifications.append(note)
            self.acked_alerts[device_id].add(frame.seq)
            result.acks.append(self._ack(device_id, frame.seq))

    def _insert_ordered(self, device_id: int, obs: Observation) -> None:
        log = self.logs[device_id]
        if log and obs.corrected_t_ms < log[-1].corrected_t_ms:
            i = len(log)
            while i > 0 and log[i - 1].corrected_t_ms > obs.corrected_t_ms:
                i -= 1
            log.insert(i, obs)
        else:
            log.append(obs)
