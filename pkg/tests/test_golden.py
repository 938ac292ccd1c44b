"""The golden corpus pins the wire format; these tests catch any drift."""

import json
import pathlib

import numpy as np

from audiosockets import wireproto as wp

GOLDEN = pathlib.Path(__file__).resolve().parent.parent / "golden" / "envelopes.jsonl"


def load_corpus():
    with GOLDEN.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


def envelope_from_fields(fields: dict) -> wp.Envelope:
    kind = wp.MessageKind[fields["kind"]]
    if kind is wp.MessageKind.DATA:
        return wp.Envelope.data(
            fields["name"],
            fields["timestamp"],
            fields["fs"],
            fields["channels"],
            fields["seq"],
            np.array(fields["samples"], dtype="<f4"),
        )
    if kind is wp.MessageKind.REGISTER:
        return wp.Envelope.register(fields["name"], fields["timestamp"])
    return wp.Envelope.control(
        fields["type"], fields["name"], fields["msg"], fields["timestamp"]
    )


def test_corpus_present_and_sized():
    corpus = load_corpus()
    assert len(corpus) == 100
    assert corpus[0]["fields"]["msg"] == "DISCONNECT"


def test_encode_matches_golden_bytes():
    for record in load_corpus():
        env = envelope_from_fields(record["fields"])
        assert wp.encode_envelope(env).hex() == record["hex"], (
            f"envelope {record['id']} drifted from the golden bytes"
        )


def test_decode_matches_golden_fields():
    for record in load_corpus():
        env = wp.decode_envelope(bytes.fromhex(record["hex"]))
        expected = envelope_from_fields(record["fields"])
        assert env == expected, f"envelope {record['id']} decoded differently"
