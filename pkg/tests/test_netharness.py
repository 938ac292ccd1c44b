import threading
import time

import pytest

from audiosockets.netharness import (
    ChunkRecord,
    FaultSchedule,
    MemoryNetwork,
    ScenarioEvent,
    ScriptError,
    integrity_report,
    make_pipe,
    run_scenario,
)
from audiosockets.transport import BindError, FramedConnection, PeerClosed


# -- pipes -------------------------------------------------------------------------


def test_default_pipe_is_lossless_ordered():
    a, b = make_pipe()
    a.sendall(b"hello ")
    a.sendall(b"world")
    got = b""
    while len(got) < 11:
        got += b.recv(11 - len(got))
    assert got == b"hello world"


def test_single_byte_fragments_reassemble():
    a, b = make_pipe(FaultSchedule(fragment_sizes=[1]))
    conn_a, conn_b = FramedConnection(a), FramedConnection(b)
    blob = bytes(range(256)) * 8
    t = threading.Thread(target=conn_a.send_message, args=(blob,))
    t.start()
    assert conn_b.recv_message() == blob
    t.join()


def test_drop_after_truncates_connection():
    a, b = make_pipe(FaultSchedule(drop_after=100))
    a.sendall(b"x" * 2048)  # only 100 bytes survive
    conn_b = FramedConnection(b)
    with pytest.raises(PeerClosed):
        conn_b.recv_exact(2048)


def test_fragment_schedule_deterministic():
    def reads(seed):
        a, b = make_pipe(FaultSchedule(fragment_range=(1, 7), seed=seed))
        a.sendall(bytes(100))
        sizes = []
        got = 0
        while got < 100:
            piece = b.recv(100)
            sizes.append(len(piece))
            got += len(piece)
        return sizes

    assert reads(9) == reads(9)
    assert reads(9) != reads(10)


def test_pipe_poll_readable_sees_eof():
    a, b = make_pipe()
    assert not b.poll_readable(0.05)
    a.close()
    assert b.poll_readable(0.5)


def test_write_delay_applied():
    a, b = make_pipe(FaultSchedule(delay=0.2))
    started = time.monotonic()
    a.sendall(b"x")
    assert time.monotonic() - started >= 0.2


# -- memory network ------------------------------------------------------------------


def test_memory_network_refuses_unknown_address():
    net = MemoryNetwork()
    with pytest.raises(ConnectionRefusedError):
        net.connect(("127.0.0.1", 1234))


def test_memory_network_rejects_double_listen():
    net = MemoryNetwork()
    net.listen(("127.0.0.1", 5050))
    with pytest.raises(BindError):
        net.listen(("127.0.0.1", 5050))


def test_memory_network_relisten_after_close():
    net = MemoryNetwork()
    listener = net.listen(("127.0.0.1", 5050))
    listener.close()
    net.listen(("127.0.0.1", 5050))  # no error


# -- integrity report -----------------------------------------------------------------


def log_of(*seqs, digest="d0"):
    return [ChunkRecord(s, digest) for s in seqs]


def test_identical_logs_empty_report():
    sent = log_of(0, 1, 2, 3)
    report = integrity_report(sent, {"P": list(sent)})
    assert report.ok
    assert str(report) == "integrity: ok"


def test_missing_seq_named_exactly():
    sent = log_of(*range(10))
    received = log_of(*(s for s in range(10) if s != 7))
    report = integrity_report(sent, {"P": received})
    assert report.per_processor["P"].missing == [7]
    assert not report.ok


def test_duplicate_detected():
    sent = log_of(0, 1)
    report = integrity_report(sent, {"P": log_of(0, 1, 1)})
    assert report.per_processor["P"].duplicates == [1]


def test_out_of_order_detected():
    sent = log_of(0, 1, 2)
    report = integrity_report(sent, {"P": log_of(0, 2, 1)})
    assert report.per_processor["P"].out_of_order == [(2, 1)]


def test_hash_mismatch_detected():
    sent = log_of(0, 1)
    received = [ChunkRecord(0, "d0"), ChunkRecord(1, "CORRUPT")]
    report = integrity_report(sent, {"P": received})
    assert report.per_processor["P"].hash_mismatches == [1]


# -- scenarios ---------------------------------------------------------------------------


def test_empty_script_empty_transcript():
    transcript = run_scenario([])
    assert transcript.sent == []
    assert transcript.received == {}
    assert transcript.registry_events == []


def test_script_error_on_unknown_action():
    with pytest.raises(ScriptError):
        run_scenario([ScenarioEvent(0.0, "explode_broker")])


def test_script_error_on_negative_time():
    with pytest.raises(ScriptError):
        run_scenario([ScenarioEvent(-1.0, "start_broker")])


def test_script_error_on_non_event():
    with pytest.raises(ScriptError):
        run_scenario(["start_broker"])


# send_period leaves ample room between chunks for A's disconnect to
# complete, so "exactly seqs 0..9" is deterministic
DETACH_SCRIPT = [
    ScenarioEvent(0.0, "start_broker"),
    ScenarioEvent(0.05, "start_processor", "A"),
    ScenarioEvent(0.05, "start_processor", "B"),
    ScenarioEvent(0.25, "start_recorder", "rec0", {"send_period": 0.15}),
    ScenarioEvent(0.3, "stop_processor", "A", {"after_chunks": 10}),
    ScenarioEvent(0.35, "stop_recorder", "rec0", {"after_chunks": 20}),
]


@pytest.mark.slow
def test_detach_scenario_memory():
    transcript = run_scenario(DETACH_SCRIPT, transport="memory")
    assert [r.seq for r in transcript.received["A"]] == list(range(10))
    assert [r.seq for r in transcript.received["B"]] == list(
        range(len(transcript.sent))
    )
    report = integrity_report(
        [r for r in transcript.sent if r.seq <= 9], {"A": transcript.received["A"]}
    )
    assert report.ok


@pytest.mark.slow
def test_transport_substitutability():
    """Identical scripts over memory pipes and TCP loopback produce
    identical integrity verdicts."""
    script = [
        ScenarioEvent(0.0, "start_broker"),
        ScenarioEvent(0.05, "start_processor", "A"),
        ScenarioEvent(0.2, "start_recorder", "rec0", {"send_period": 0.05}),
        ScenarioEvent(0.3, "stop_recorder", "rec0", {"after_chunks": 8}),
    ]
    mem = run_scenario(script, transport="memory")
    tcp = run_scenario(script, transport="tcp")
    mem_report = integrity_report(mem.sent, mem.received)
    tcp_report = integrity_report(tcp.sent, tcp.received)
    assert mem_report.ok and tcp_report.ok
    assert mem.registry_events == tcp.registry_events


@pytest.mark.slow
def test_scenario_reproducible():
    script = [
        ScenarioEvent(0.0, "start_broker"),
        ScenarioEvent(0.05, "start_processor", "A"),
        ScenarioEvent(0.2, "start_recorder", "rec0", {"send_period": 0.05, "freq": 100.0}),
        ScenarioEvent(0.3, "stop_recorder", "rec0", {"after_chunks": 6}),
    ]
    first = run_scenario(script, seed=1)
    second = run_scenario(script, seed=1)
    # identical deliveries: same seqs in the same order with equal hashes is
    # not required bit-for-bit across runs (chunk boundaries are timing
    # dependent); the reproducible part is the verdict and event structure
    assert integrity_report(first.sent, first.received).ok
    assert integrity_report(second.sent, second.received).ok
    assert first.registry_events == second.registry_events


@pytest.mark.slow
def test_recorder_before_broker_no_loss():
    script = [
        ScenarioEvent(0.0, "start_recorder", "rec0", {"send_period": 0.05}),
        ScenarioEvent(0.4, "start_broker"),
        ScenarioEvent(0.45, "start_processor", "A"),
        ScenarioEvent(0.5, "stop_recorder", "rec0", {"after_chunks": 5}),
    ]
    transcript = run_scenario(script)
    assert len(transcript.sent) >= 5
    report = integrity_report(transcript.sent, transcript.received)
    assert report.ok, str(report)
