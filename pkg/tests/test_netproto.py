from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from openhealth.netproto import (
    AppId,
    AuthFailure,
    DataPayload,
    FrameType,
    HostGateway,
    OBSERVATION_HEADER,
    ReplayRejected,
    ReplayWindow,
    TruncatedFrame,
    VersionError,
    decode_frame,
    encode_frame,
    estimate_offset,
    pack_ack,
    pack_sync_reply,
    pack_sync_request,
    peek_header,
    unpack_ack,
    unpack_sync_reply,
    unpack_sync_request,
    write_observation_log,
)

KEY = bytes(range(16))


def test_round_trip_all_frame_types():
    for ftype in FrameType:
        frame = encode_frame(ftype, 5, 9, b"payload-bytes", KEY)
        decoded = decode_frame(frame, KEY)
        assert decoded.frame_type is ftype
        assert decoded.device_id == 5
        assert decoded.seq == 9
        assert decoded.payload == b"payload-bytes"


@settings(max_examples=80, deadline=None)
@given(
    ftype=st.sampled_from(list(FrameType)),
    device=st.integers(0, 0xFFFF),
    seq=st.integers(0, 0xFFFFFFFF),
    payload=st.binary(max_size=256),
)
def test_round_trip_random_frames(ftype, device, seq, payload):
    frame = encode_frame(ftype, device, seq, payload, KEY)
    decoded = decode_frame(frame, KEY)
    assert (decoded.frame_type, decoded.device_id, decoded.seq, decoded.payload) == (
        ftype, device, seq, payload,
    )


def test_empty_payload_frame_is_26_bytes():
    frame = encode_frame(FrameType.HELLO, 1, 1, b"", KEY)
    assert len(frame) == 26


def test_same_seq_different_payloads_distinct_ciphertexts():
    a = encode_frame(FrameType.DATA, 2, 7, b"payload-a", KEY)
    b = encode_frame(FrameType.DATA, 2, 7, b"payload-b", KEY)
    assert a != b
    assert decode_frame(a, KEY).payload == b"payload-a"
    assert decode_frame(b, KEY).payload == b"payload-b"


def test_any_single_bit_flip_is_rejected():
    import random

    rng = random.Random(1234)
    frame = bytearray(encode_frame(FrameType.DATA, 3, 40, b"sensitive-observation", KEY))
    for _ in range(100):
        bit = rng.randrange(len(frame) * 8)
        tampered = bytearray(frame)
        tampered[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises((AuthFailure, TruncatedFrame, VersionError)):
            decode_frame(bytes(tampered), KEY)


def test_truncated_frame_rejected():
    frame = encode_frame(FrameType.DATA, 3, 1, b"abc", KEY)
    with pytest.raises(TruncatedFrame):
        decode_frame(frame[:-1], KEY)
    with pytest.raises(TruncatedFrame):
        decode_frame(frame[:8], KEY)


def test_unknown_version_rejected():
    frame = bytearray(encode_frame(FrameType.DATA, 3, 1, b"abc", KEY))
    frame[0] = 2
    with pytest.raises(VersionError):
        decode_frame(bytes(frame), KEY)


def test_replay_rejected_and_window_advances():
    replay = ReplayWindow()
    f1 = encode_frame(FrameType.DATA, 3, 1, b"a", KEY)
    f2 = encode_frame(FrameType.DATA, 3, 2, b"b", KEY)
    decode_frame(f1, KEY, replay)
    decode_frame(f2, KEY, replay)
    with pytest.raises(ReplayRejected):
        decode_frame(f1, KEY, replay)
    with pytest.raises(ReplayRejected):
        decode_frame(f2, KEY, replay)
    assert replay.highest(0) == 2


def test_stale_seq_rejected_even_if_unseen():
    replay = ReplayWindow()
    decode_frame(encode_frame(FrameType.DATA, 3, 10, b"a", KEY), KEY, replay)
    with pytest.raises(ReplayRejected):
        decode_frame(encode_frame(FrameType.DATA, 3, 9, b"b", KEY), KEY, replay)


def test_payload_too_long():
    from openhealth.netproto import PayloadTooLong

    with pytest.raises(PayloadTooLong):
        encode_frame(FrameType.DATA, 1, 1, b"x" * 1025, KEY)


def test_bad_key_length():
    with pytest.raises(ValueError, match="16 bytes"):
        encode_frame(FrameType.DATA, 1, 1, b"", b"short")


def test_data_payload_round_trip():
    p = DataPayload(timestamp_ms=123456789, label_index=5, confidence=9876, app_id=AppId.HAR)
    assert DataPayload.unpack(p.pack()) == p
    assert len(p.pack()) == 12


def test_data_payload_validation():
    with pytest.raises(ValueError):
        DataPayload(0, 1, 10001, AppId.HAR)
    with pytest.raises(ValueError):
        DataPayload(0, 300, 0, AppId.GESTURE)


def test_sync_payload_codecs():
    assert unpack_sync_request(pack_sync_request(42)) == 42
    assert unpack_sync_reply(pack_sync_reply(1, 2, 3)) == (1, 2, 3)
    seq, data = unpack_ack(pack_ack(17, b"extra"))
    assert seq == 17 and data == b"extra"


def test_offset_estimate_symmetric_exact():
    # device clock = host + 500; symmetric 20 ms latency
    t1 = 1000 + 500
    t2 = 1000 + 20
    t3 = 1000 + 20
    t4 = 1000 + 40 + 500
    offset, rtt = estimate_offset(t1, t2, t3, t4)
    assert offset == -500.0  # host minus device
    assert rtt == 40


def test_offset_estimate_zero_case():
    offset, rtt = estimate_offset(0, 0, 0, 0)
    assert offset == 0.0 and rtt == 0


def test_offset_estimate_asymmetric_error_is_half_asymmetry():
    # true offset 0; 10 ms up, 30 ms down
    t1, t2, t3, t4 = 0, 10, 10, 40
    offset, _ = estimate_offset(t1, t2, t3, t4)
    assert offset == -10.0  # error is exactly (down-up)/2 = 10 ms


def gateway_with(devices=(1, 2), clock=lambda: 5000):
    return HostGateway({d: KEY for d in devices}, clock=clock)


def data_frame(device, seq, ts, label=3, conf=9000):
    payload = DataPayload(ts, label, conf, AppId.HAR).pack()
    return encode_frame(FrameType.DATA, device, seq, payload, KEY)


def test_gateway_keeps_independent_ordered_logs():
    gw = gateway_with()
    frames = [
        data_frame(1, 1, 100),
        data_frame(2, 1, 50),
        data_frame(1, 2, 200),
        data_frame(2, 2, 150),
    ]
    result = gw.step(0, frames)
    assert len(result.observations) == 4
    assert [o.corrected_t_ms for o in gw.logs[1]] == [100, 200]
    assert [o.corrected_t_ms for o in gw.logs[2]] == [50, 150]


def test_gateway_stores_replayed_data_once():
    gw = gateway_with()
    frame = data_frame(1, 1, 100)
    gw.step(0, [frame])
    result = gw.step(10, [frame])
    assert result.observations == []
    assert len(gw.logs[1]) == 1
    assert gw.reject_counts.get("replay") == 1


def test_gateway_applies_offset_correction():
    gw = gateway_with()
    # device reports its measured offset (host - device = -500)
    from openhealth.netproto import pack_sync_report

    report = encode_frame(FrameType.TIME_SYNC, 1, 1, pack_sync_report(-500.0, 40), KEY)
    gw.step(0, [report])
    gw.step(0, [data_frame(1, 2, 10_000)])
    uncorrected = 10_000
    assert gw.logs[1][0].corrected_t_ms == uncorrected - 500


def test_gateway_drops_unknown_device():
    gw = gateway_with(devices=(1,))
    frame = data_frame(9, 1, 100)
    result = gw.step(0, [frame])
    assert result.observations == []
    assert result.rejects == [(9, "unknown_device")]


def test_gateway_acks_and_notifies_alerts():
    gw = gateway_with()
    payload = DataPayload(777, 1, 10000, AppId.HAR).pack()
    alert = encode_frame(FrameType.ALERT, 1, 3, payload, KEY)
    result = gw.step(123, [alert])
    assert len(result.notifications) == 1
    assert result.notifications[0].seq == 3
    assert len(result.acks) == 1
    ack = decode_frame(result.acks[0], KEY)
    assert ack.frame_type is FrameType.ACK
    acked_seq, _ = unpack_ack(ack.payload)
    assert acked_seq == 3


def test_gateway_reacks_replayed_alert_without_duplicate_notification():
    gw = gateway_with()
    payload = DataPayload(777, 1, 10000, AppId.HAR).pack()
    alert = encode_frame(FrameType.ALERT, 1, 3, payload, KEY)
    gw.step(0, [alert])
    result = gw.step(200, [alert])  # retransmission of the same frame
    assert result.notifications == []
    assert len(gw.notifications) == 1
    assert len(result.acks) == 1  # re-ACK so the sender can stop


def test_gateway_sync_request_reply():
    gw = gateway_with(clock=lambda: 9999)
    req = encode_frame(FrameType.TIME_SYNC, 1, 1, pack_sync_request(1234), KEY)
    result = gw.step(0, [req])
    assert len(result.acks) == 1
    ack = decode_frame(result.acks[0], KEY)
    acked_seq, data = unpack_ack(ack.payload)
    assert acked_seq == 1
    assert unpack_sync_reply(data) == (1234, 9999, 9999)


def test_gateway_host_seq_strictly_increases():
    gw = gateway_with()
    seqs = []
    for i in range(1, 4):
        payload = DataPayload(0, 1, 0, AppId.HAR).pack()
        alert = encode_frame(FrameType.ALERT, 1, i, payload, KEY)
        result = gw.step(0, [alert])
        seqs.append(peek_header(result.acks[0])[3])
    assert seqs == sorted(seqs) and len(set(seqs)) == 3


def test_observation_log_format(tmp_path):
    from openhealth.netproto import Observation

    path = tmp_path / "obs.csv"
    write_observation_log(
        [Observation(1, 1000, AppId.HAR, 5, 9500)], path
    )
    lines = path.read_text().splitlines()
    assert lines[0] == OBSERVATION_HEADER
    assert lines[1] == "1,1000,1,5,9500"
