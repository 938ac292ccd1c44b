import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiosockets import wireproto as wp


# -- header frames -----------------------------------------------------------


def test_header_paper_example():
    block = wp.encode_header(2048, 64)
    assert block == b"2048" + b" " * 60
    assert wp.decode_header(block) == 2048


def test_header_zero():
    assert wp.encode_header(0, 64) == b"0" + b" " * 63


def test_header_roundtrip_500_random():
    rng = random.Random(42)
    for _ in range(500):
        n = rng.randrange(0, 10**12)
        block = wp.encode_header(n, 64)
        assert len(block) == 64
        assert wp.decode_header(block) == n


@given(st.integers(min_value=0, max_value=10**63 - 1))
def test_header_roundtrip_property(n):
    block = wp.encode_header(n, 64)
    assert len(block) == 64
    assert wp.decode_header(block) == n


def test_header_overflow():
    with pytest.raises(OverflowError):
        wp.encode_header(10**64, 64)
    with pytest.raises(ValueError):
        wp.encode_header(-1, 64)


@pytest.mark.parametrize(
    "bad",
    [
        b" " * 64,
        b"ACK" + b" " * 61,
        b"-5" + b" " * 62,
        b"+5" + b" " * 62,
        b"12 34" + b" " * 59,
        b"\xff" * 64,
    ],
)
def test_header_malformed(bad):
    with pytest.raises(wp.MalformedHeader):
        wp.decode_header(bad)


def test_header_wrong_length():
    with pytest.raises(wp.MalformedHeader):
        wp.decode_header(b"12")


# -- ack / err frames ----------------------------------------------------------


def test_ack_frame():
    assert wp.ack_frame(64) == b"ACK" + b" " * 61


def test_error_frame():
    frame = wp.error_frame("UNKNOWN_TYPE", 64)
    assert frame == b"ERR UNKNOWN_TYPE" + b" " * 48


def test_error_frame_overflow():
    with pytest.raises(OverflowError):
        wp.error_frame("X" * 65, 64)
    # boundary: exactly fits
    assert len(wp.error_frame("X" * 60, 64)) == 64


# -- envelopes -----------------------------------------------------------------


def test_control_envelope_layout():
    env = wp.Envelope.control("recorder", "rec0", "DISCONNECT", 1700000000.5)
    raw = wp.encode_envelope(env)
    assert raw[:4] == b"ASKT"
    assert raw[4] == 1
    assert raw[5] == int(wp.MessageKind.CONTROL)
    meta_len = int.from_bytes(raw[6:10], "big")
    assert len(raw) == 10 + meta_len  # zero audio bytes
    meta = json.loads(raw[10:].decode("utf-8"))
    assert meta == {
        "msg": "DISCONNECT",
        "name": "rec0",
        "timestamp": 1700000000.5,
        "type": "recorder",
    }
    # keys appear in sorted order in the raw bytes
    positions = [raw.index(k.encode()) for k in sorted(meta)]
    assert positions == sorted(positions)


def test_empty_data_envelope():
    env = wp.Envelope.data("rec0", 1.0, 16000, 1, 0, np.zeros(0, dtype="<f4"))
    raw = wp.encode_envelope(env)
    meta_len = int.from_bytes(raw[6:10], "big")
    assert len(raw) == 10 + meta_len
    back = wp.decode_envelope(raw)
    assert back == env
    assert len(back.audio) == 0


def test_encode_deterministic():
    env = wp.Envelope.data(
        "rec0", 123.456, 16000, 2, 7, np.array([0.1, -0.1, 0.2, -0.2], dtype="<f4")
    )
    assert wp.encode_envelope(env) == wp.encode_envelope(env)


names = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12
)
timestamps = st.floats(
    min_value=-1e12, max_value=1e12, allow_nan=False, allow_infinity=False
)
samples_arrays = st.lists(
    st.floats(min_value=-1.0, max_value=1.0, width=32), min_size=0, max_size=64
).map(lambda xs: np.array(xs, dtype="<f4"))


@st.composite
def envelopes(draw):
    kind = draw(st.sampled_from(list(wp.MessageKind)))
    name = draw(names)
    ts = draw(timestamps)
    if kind is wp.MessageKind.DATA:
        channels = draw(st.integers(min_value=1, max_value=4))
        nframes = draw(st.integers(min_value=0, max_value=32))
        data = draw(
            st.lists(
                st.floats(min_value=-1.0, max_value=1.0, width=32),
                min_size=nframes * channels,
                max_size=nframes * channels,
            )
        )
        return wp.Envelope.data(
            name,
            ts,
            draw(st.integers(min_value=1, max_value=192000)),
            channels,
            draw(st.integers(min_value=0, max_value=2**40)),
            np.array(data, dtype="<f4"),
        )
    if kind is wp.MessageKind.REGISTER:
        return wp.Envelope.register(name, ts)
    return wp.Envelope.control(
        draw(st.sampled_from(["recorder", "processor"])), name, draw(names), ts
    )


@settings(max_examples=300, deadline=None)
@given(envelopes())
def test_envelope_roundtrip_property(env):
    raw = wp.encode_envelope(env)
    assert wp.decode_envelope(raw) == env
    # bit-exact: re-encoding the decoded envelope gives identical bytes
    assert wp.encode_envelope(wp.decode_envelope(raw)) == raw


def test_envelope_roundtrip_1000_random():
    rng = random.Random(7)
    for _ in range(1000):
        channels = rng.randint(1, 3)
        nframes = rng.randint(0, 40)
        data = np.array(
            [rng.uniform(-1, 1) for _ in range(nframes * channels)], dtype="<f4"
        )
        env = wp.Envelope.data(
            f"rec{rng.randint(0, 9)}",
            rng.uniform(0, 2e9),
            rng.choice([8000, 16000, 44100]),
            channels,
            rng.randint(0, 10**6),
            data,
        )
        assert wp.decode_envelope(wp.encode_envelope(env)) == env


def test_decode_truncated_prefix():
    for i in range(10):
        raw = wp.encode_envelope(wp.Envelope.register("p", 1.0))[:i]
        with pytest.raises((wp.BadMagic, wp.MetadataError)):
            wp.decode_envelope(raw)


def test_decode_length_mismatch():
    env = wp.Envelope.data("r", 1.0, 16000, 1, 0, np.zeros(100, dtype="<f4"))
    raw = wp.encode_envelope(env)
    with pytest.raises(wp.LengthMismatch):
        wp.decode_envelope(raw[:-4])  # 396 audio bytes for nframes=100


def test_decode_bad_magic():
    with pytest.raises(wp.BadMagic):
        wp.decode_envelope(b"NOPE" + b"\x00" * 20)


def test_decode_bad_version():
    raw = bytearray(wp.encode_envelope(wp.Envelope.register("p", 1.0)))
    raw[4] = 2
    with pytest.raises(wp.UnsupportedVersion):
        wp.decode_envelope(bytes(raw))


def test_decode_unknown_kind():
    raw = bytearray(wp.encode_envelope(wp.Envelope.register("p", 1.0)))
    raw[5] = 9
    with pytest.raises(wp.MetadataError):
        wp.decode_envelope(bytes(raw))


def test_decode_unknown_client_type_is_lenient():
    # The broker must see these and reject them itself with UNKNOWN_TYPE.
    meta = json.dumps(
        {"name": "x", "timestamp": 1.0, "type": "banana", "msg": "hi"},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    raw = b"ASKT\x01\x03" + len(meta).to_bytes(4, "big") + meta
    env = wp.decode_envelope(raw)
    assert env.client_type == "banana"


def test_decode_meta_len_beyond_buffer():
    raw = b"ASKT\x01\x02" + (2**31).to_bytes(4, "big") + b"{}"
    with pytest.raises(wp.MetadataError):
        wp.decode_envelope(raw)


def test_encode_invalid_envelopes():
    with pytest.raises(wp.InvalidEnvelope):
        wp.encode_envelope(wp.Envelope(wp.MessageKind.REGISTER, "processor", "", 1.0))
    with pytest.raises(wp.InvalidEnvelope):
        wp.encode_envelope(
            wp.Envelope(wp.MessageKind.CONTROL, "recorder", "r", 1.0)  # no msg
        )
    with pytest.raises(wp.InvalidEnvelope):
        wp.encode_envelope(
            wp.Envelope(wp.MessageKind.DATA, "recorder", "r", 1.0)  # no audio
        )
    with pytest.raises(wp.InvalidEnvelope):
        wp.encode_envelope(
            wp.Envelope(wp.MessageKind.REGISTER, "banana", "p", 1.0)
        )
    with pytest.raises(wp.InvalidEnvelope):
        wp.encode_envelope(
            wp.Envelope(wp.MessageKind.CONTROL, "recorder", "r", float("nan"), msg="m")
        )


def test_data_sample_count_must_match_channels():
    with pytest.raises(wp.InvalidEnvelope):
        wp.Envelope.data("r", 1.0, 16000, 2, 0, np.zeros(3, dtype="<f4"))


@settings(max_examples=400, deadline=None)
@given(st.binary(min_size=0, max_size=200))
def test_decode_fuzz_only_typed_errors(blob):
    try:
        wp.decode_envelope(blob)
    except wp.WireError:
        pass


def test_decode_fuzz_mutated_valid_prefix():
    # Flip bytes inside an otherwise valid envelope: still only typed errors.
    rng = random.Random(3)
    base = wp.encode_envelope(
        wp.Envelope.data("rec0", 5.0, 16000, 1, 3, np.zeros(8, dtype="<f4"))
    )
    for _ in range(2000):
        raw = bytearray(base)
        for _ in range(rng.randint(1, 6)):
            raw[rng.randrange(len(raw))] = rng.randrange(256)
        try:
            wp.decode_envelope(bytes(raw))
        except wp.WireError:
            pass
