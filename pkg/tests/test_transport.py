import random
import threading
import time

import pytest

from audiosockets import wireproto as wp
from audiosockets.netharness import FaultSchedule, make_pipe
from audiosockets.transport import (
    AckTimeout,
    FramedConnection,
    NackReceived,
    PeerClosed,
    ProtocolViolation,
)


def pair(schedule=None, reverse=None, ack_timeout=2.0):
    a, b = make_pipe(schedule, reverse_schedule=reverse)
    return (
        FramedConnection(a, ack_timeout=ack_timeout),
        FramedConnection(b, ack_timeout=ack_timeout),
    )


class RecordingStream:
    """Wraps a pipe endpoint and keeps everything it sends."""

    def __init__(self, inner):
        self.inner = inner
        self.sent = bytearray()

    def sendall(self, data):
        self.sent += data
        self.inner.sendall(data)

    def __getattr__(self, item):
        return getattr(self.inner, item)


# -- recv_exact ----------------------------------------------------------------


def test_recv_exact_zero_bytes_no_read():
    a, b = pair()
    assert a.recv_exact(0) == b""


def test_recv_exact_one_byte_fragments():
    a, b = pair(schedule=FaultSchedule(fragment_sizes=[1]))
    blob = bytes(random.Random(0).randrange(256) for _ in range(2048))
    t = threading.Thread(target=a.stream.sendall, args=(blob,))
    t.start()
    assert b.recv_exact(2048) == blob
    t.join()


def test_recv_exact_peer_close_truncates():
    a, b = pair(schedule=FaultSchedule(drop_after=100))
    threading.Thread(target=a.stream.sendall, args=(b"x" * 100,)).start()
    time.sleep(0.05)
    a.close()
    with pytest.raises(PeerClosed):
        b.recv_exact(2048)


# -- send_message / recv_message --------------------------------------------------


def echo_server(conn, count):
    def run():
        for _ in range(count):
            payload = conn.recv_message()
            conn.send_message(payload)

    t = threading.Thread(target=run, daemon=True)
    t.start()
    return t


def test_loopback_identity_random_sizes():
    a, b = pair()
    t = echo_server(b, 10)
    rng = random.Random(1)
    for _ in range(10):
        payload = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 5000)))
        a.send_message(payload)
        assert a.recv_message() == payload
    t.join()


def test_empty_payload_exact_wire_bytes():
    a, b = pair()
    rec = RecordingStream(a.stream)
    a = FramedConnection(rec, ack_timeout=2.0)

    received = {}

    def server():
        received["payload"] = b.recv_message()

    t = threading.Thread(target=server)
    t.start()
    a.send_message(b"")
    t.join()
    assert received["payload"] == b""
    assert rec.sent == b"0" + b" " * 63  # header only, no payload bytes


def test_two_acks_per_message_in_order():
    a, b = pair()
    rec = RecordingStream(b.stream)
    b = FramedConnection(rec, ack_timeout=2.0)

    def server():
        b.recv_message()

    t = threading.Thread(target=server)
    t.start()
    a.send_message(b"hello world")
    t.join()
    ack = wp.ack_frame(64)
    assert bytes(rec.sent) == ack + ack


def test_fragmented_both_directions():
    sched = FaultSchedule(fragment_range=(1, 7), seed=5)
    rev = FaultSchedule(fragment_range=(1, 7), seed=6)
    a, b = pair(schedule=sched, reverse=rev)
    t = echo_server(b, 20)
    rng = random.Random(2)
    for _ in range(20):
        payload = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 1500)))
        a.send_message(payload)
        assert a.recv_message() == payload
    t.join()


def test_nack_after_payload():
    a, b = pair()

    def server():
        b.recv_message(auto_ack=False)
        b.reply_error("UNKNOWN_TYPE")

    t = threading.Thread(target=server)
    t.start()
    with pytest.raises(NackReceived) as exc:
        a.send_message(b"data")
    assert exc.value.code == "UNKNOWN_TYPE"
    t.join()


def test_nack_on_header():
    a, b = pair()

    def server():
        b.recv_exact(64)
        b.reply_error("BAD_HEADER")

    t = threading.Thread(target=server)
    t.start()
    with pytest.raises(NackReceived) as exc:
        a.send_message(b"data")
    assert exc.value.code == "BAD_HEADER"
    t.join()


def test_malformed_header_sends_err_frame():
    a, b = pair()

    result = {}

    def server():
        try:
            b.recv_message()
        except wp.MalformedHeader as exc:
            result["error"] = exc

    t = threading.Thread(target=server)
    t.start()
    a.stream.sendall(b"NOT A NUMBER".ljust(64))
    frame = a.recv_exact(64)
    t.join()
    assert frame.rstrip(b" ") == b"ERR BAD_HEADER"
    assert isinstance(result["error"], wp.MalformedHeader)


def test_reply_error_oversized_code_writes_nothing():
    a, b = pair()
    rec = RecordingStream(a.stream)
    a = FramedConnection(rec)
    with pytest.raises(OverflowError):
        a.reply_error("X" * 100)
    assert rec.sent == b""


def test_ack_timeout_bounded():
    a, b = pair(ack_timeout=0.2)
    started = time.monotonic()
    with pytest.raises(AckTimeout):
        a.send_message(b"payload")
    assert time.monotonic() - started < 1.0


def test_header_in_ack_position_raises_by_default():
    a, b = pair()

    def server():
        b.recv_exact(64)
        b.stream.sendall(wp.encode_header(5, 64))  # a header, not an ack

    t = threading.Thread(target=server)
    t.start()
    with pytest.raises(ProtocolViolation):
        a.send_message(b"data")
    t.join()


def test_send_abortable_detects_crossing():
    a, b = pair()

    def client_disconnects():
        # b plays a client that fires its own message instead of acking.
        b.stream.sendall(wp.encode_header(4, 64))
        # it sees a's abandoned header frame and skips it, then a's ack
        frame = b.recv_exact(64)
        assert frame.rstrip(b" ").isdigit()
        frame = b.recv_exact(64)
        assert frame.rstrip(b" ") == b"ACK"
        b.stream.sendall(b"stop")

    t = threading.Thread(target=client_disconnects)
    t.start()
    time.sleep(0.05)
    pending = a.send_message_abortable(b"chunk-to-abandon")
    assert pending == 4
    payload = a.finish_incoming(pending)
    assert payload == b"stop"
    t.join()


def test_ignore_crossing_skips_header_frames():
    a, b = pair()

    def broker_side():
        # reads client's header, but first has its own abandoned delivery
        b.stream.sendall(wp.encode_header(99, 64))  # crossed delivery header
        b.recv_exact(64)  # client's header
        b.stream.sendall(wp.ack_frame(64))
        assert b.recv_exact(7) == b"goodbye"
        b.stream.sendall(wp.ack_frame(64))

    t = threading.Thread(target=broker_side)
    t.start()
    time.sleep(0.05)
    a.send_message(b"goodbye", ignore_crossing=True)
    t.join()


def test_recv_message_both_acks_on_empty():
    a, b = pair()
    rec = RecordingStream(b.stream)
    b = FramedConnection(rec)

    def server():
        assert b.recv_message() == b""

    t = threading.Thread(target=server)
    t.start()
    a.send_message(b"")
    t.join()
    assert bytes(rec.sent) == wp.ack_frame(64) * 2
