#!/usr/bin/env python3
"""Spin up the whole system in one process for a quick look.

Starts a broker on an ephemeral loopback port, attaches two processors
(a chunk counter and the log-mel printer), streams five seconds of a
440 Hz tone through a recorder, then tears everything down cleanly.
"""

import logging
import pathlib
import socket
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from audiosockets.appcli import Config  # noqa: E402
from audiosockets.mailman import Mailman  # noqa: E402
from audiosockets.processor import LogMelHook, ProcessorClient  # noqa: E402
from audiosockets.recorder import Recorder, SineSource  # noqa: E402


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()

    config = Config(SERVER="127.0.0.1", PORT=port)
    broker = Mailman(config, stats_interval=2.0).start()

    counted = []
    counter = ProcessorClient("counter", config, lambda d: counted.append(len(d["data"])))
    logmel = ProcessorClient("logmel", config, LogMelHook())
    counter.start_background()
    logmel.start_background()
    time.sleep(0.5)

    recorder = Recorder(
        config,
        SineSource(freq=440.0, fs=16000, max_frames=5 * 16000),
        send_period=0.25,
    )
    recorder.run()

    time.sleep(0.5)
    counter.disconnect()
    logmel.disconnect()
    broker.stop()
    print(
        f"\nstreamed {recorder.samples_sent} samples in {len(counted)} chunks; "
        f"counter saw {sum(counted)} samples"
    )


if __name__ == "__main__":
    main()
