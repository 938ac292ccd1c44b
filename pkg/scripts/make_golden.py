#!/usr/bin/env python3
"""Regenerate the golden envelope corpus at golden/envelopes.jsonl.

The corpus pins the wire format: 100 deterministic envelopes covering all
three kinds, multi-channel audio, empty chunks, and unicode names, plus
the reference CONTROL envelope as entry 0. Each line holds the envelope's
fields and the exact encoded bytes in hex. Independent implementations
must reproduce every byte.
"""

import json
import pathlib
import random
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from audiosockets import wireproto as wp  # noqa: E402

OUT = pathlib.Path(__file__).resolve().parent.parent / "golden" / "envelopes.jsonl"


def field_view(env: wp.Envelope) -> dict:
    view = {
        "kind": env.kind.name,
        "type": env.client_type,
        "name": env.name,
        "timestamp": env.timestamp,
    }
    if env.kind is wp.MessageKind.DATA:
        view.update(
            fs=env.fs,
            channels=env.channels,
            seq=env.seq,
            nframes=env.audio.nframes,
            samples=[float(x) for x in env.audio.samples],
        )
    if env.kind is wp.MessageKind.CONTROL:
        view["msg"] = env.msg
    return view


def corpus() -> list[wp.Envelope]:
    rng = random.Random(20240901)
    nprng = np.random.default_rng(20240901)
    envelopes = [
        # entry 0: the reference disconnect message
        wp.Envelope.control("recorder", "rec0", "DISCONNECT", 1700000000.5),
    ]
    names = ["rec0", "VAD", "LMS", "dump-A", "नमस्ते", "Ω-proc", "p_01"]
    while len(envelopes) < 100:
        kind = rng.randrange(3)
        name = rng.choice(names)
        ts = round(rng.uniform(1.5e9, 1.8e9), 6)
        if kind == 0:
            channels = rng.randint(1, 3)
            nframes = rng.choice([0, 1, 7, 16, 50])
            samples = nprng.uniform(-1, 1, nframes * channels).astype("<f4")
            envelopes.append(
                wp.Envelope.data(
                    name,
                    ts,
                    rng.choice([8000, 16000, 44100, 48000]),
                    channels,
                    rng.randint(0, 10**6),
                    samples,
                )
            )
        elif kind == 1:
            envelopes.append(wp.Envelope.register(name, ts))
        else:
            envelopes.append(
                wp.Envelope.control(
                    rng.choice(["recorder", "processor"]),
                    name,
                    rng.choice(["DISCONNECT", "GOODBYE"]),
                    ts,
                )
            )
    return envelopes


def main() -> None:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w", encoding="utf-8") as fh:
        for i, env in enumerate(corpus()):
            raw = wp.encode_envelope(env)
            assert wp.decode_envelope(raw) == env
            record = {"id": i, "fields": field_view(env), "hex": raw.hex()}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes, 100 envelopes)")


if __name__ == "__main__":
    main()
