"""Configuration loading and the command-line entry points.

The network is described by a small JSON document::

    {
      "SERVER": "172.16.12.10",
      "PORT": 5050,
      "HEADER": 64,
      "FORMAT": "utf-8",
      "DISCONNECT_MSG": "DISCONNECT",
      "logging_format": "%(asctime)s %(levelname)s %(message)s",
      "logging_level": "info"
    }

``HEADER`` is the fixed frame size in bytes, ``FORMAT`` the text encoding
(only utf-8 is supported: the wire format pins it so implementations in
other languages agree byte-for-byte), ``DISCONNECT_MSG`` the control token
clients send to leave. Optional keys ``send_period`` and
``max_queue_chunks`` tune the recorder and broker queues.

Subcommands: ``serve``, ``record``, ``process``. Each runs until
interrupted, then performs the protocol's clean disconnect.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from typing import Optional

log = logging.getLogger("audiosockets.appcli")

DEFAULT_LOGGING_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


class ConfigError(Exception):
    """Base class for configuration problems; carries the offending key."""

    def __init__(self, key: str, detail: str = ""):
        self.key = key
        super().__init__(f"{key}: {detail}" if detail else key)


class MissingKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(key, "required key missing")


class BadValue(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, detail: str):
        super().__init__("<file>", detail)


@dataclass
class Config:
    SERVER: str
    PORT: int
    HEADER: int = 64
    FORMAT: str = "utf-8"
    DISCONNECT_MSG: str = "DISCONNECT"
    logging_format: str = DEFAULT_LOGGING_FORMAT
    logging_level: str = "info"
    send_period: float = 0.25
    max_queue_chunks: Optional[int] = None

    @property
    def address(self) -> tuple[str, int]:
        return (self.SERVER, self.PORT)


_REQUIRED_KEYS = (
    "SERVER",
    "PORT",
    "HEADER",
    "FORMAT",
    "DISCONNECT_MSG",
    "logging_format",
    "logging_level",
)
_OPTIONAL_KEYS = ("send_period", "max_queue_chunks")


def load_config(path: str) -> Config:
    """Read and validate a config file. Unknown keys warn, bad values raise."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path} must hold a JSON object")

    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise MissingKey(key)
    for key in raw:
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            log.warning("ignoring unknown config key %r", key)

    server = raw["SERVER"]
    if not isinstance(server, str) or not server:
        raise BadValue("SERVER", "must be a non-empty address string")
    port = raw["PORT"]
    if not isinstance(port, int) or isinstance(port, bool) or not 1 <= port <= 65535:
        raise BadValue("PORT", "must be an integer in 1..65535")
    header = raw["HEADER"]
    if not isinstance(header, int) or isinstance(header, bool) or header < 8:
        raise BadValue("HEADER", "must be an integer >= 8")
    fmt = raw["FORMAT"]
    if not isinstance(fmt, str) or fmt.lower().replace("_", "-") != "utf-8":
        raise BadValue("FORMAT", "only utf-8 is supported")
    token = raw["DISCONNECT_MSG"]
    if not isinstance(token, str) or not token:
        raise BadValue("DISCONNECT_MSG", "must be non-empty text")
    logfmt = raw["logging_format"]
    if not isinstance(logfmt, str) or not logfmt:
        raise BadValue("logging_format", "must be a format string")
    loglevel = raw["logging_level"]
    if not isinstance(loglevel, str) or loglevel.lower() not in _LEVELS:
        raise BadValue("logging_level", "must be one of debug/info/warning/error")

    send_period = raw.get("send_period", 0.25)
    if not isinstance(send_period, (int, float)) or send_period <= 0:
        raise BadValue("send_period", "must be a positive number of seconds")
    max_queue = raw.get("max_queue_chunks")
    if max_queue is not None and (
        not isinstance(max_queue, int) or isinstance(max_queue, bool) or max_queue < 1
    ):
        raise BadValue("max_queue_chunks", "must be a positive integer or absent")

    return Config(
        SERVER=server,
        PORT=port,
        HEADER=header,
        FORMAT="utf-8",
        DISCONNECT_MSG=token,
        logging_format=logfmt,
        logging_level=loglevel.lower(),
        send_period=float(send_period),
        max_queue_chunks=max_queue,
    )


def setup_logging(config: Config) -> None:
    logging.basicConfig(
        level=_LEVELS[config.logging_level],
        format=config.logging_format,
        stream=sys.stderr,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiosockets",
        description="Stream audio from a recorder through a broker to named processors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the broker")
    serve.add_argument("--config", required=True, help="path to the network JSON file")
    serve.add_argument(
        "--stats-interval",
        type=float,
        default=None,
        metavar="S",
        help="log counter snapshots every S seconds",
    )

    record = sub.add_parser("record", help="run the recorder client")
    record.add_argument("--config", required=True)
    record.add_argument(
        "--source",
        required=True,
        help="sine[:FREQ] | wav:PATH | device (needs sounddevice)",
    )
    record.add_argument("--fs", type=int, default=16000, help="sample rate for sine")
    record.add_argument(
        "--period", type=float, default=None, help="send period override in seconds"
    )
    record.add_argument("--name", default="rec0", help="stream name in envelopes")

    process = sub.add_parser("process", help="run a processor client")
    process.add_argument("--config", required=True)
    process.add_argument("--name", required=True, help="registration name")
    process.add_argument(
        "--kind",
        required=True,
        help="null | dump[:PATH] | logmel",
    )
    return parser


def _make_source(spec: str, fs: int):
    from . import recorder as rec

    if spec == "sine" or spec.startswith("sine:"):
        freq = 440.0
        if ":" in spec:
            try:
                freq = float(spec.split(":", 1)[1])
            except ValueError:
                raise BadValue("--source", f"bad sine frequency in {spec!r}")
        return rec.SineSource(freq=freq, fs=fs)
    if spec.startswith("wav:"):
        return rec.WavSource(spec.split(":", 1)[1])
    if spec == "device":
        return rec.MicrophoneSource(fs=fs)
    raise BadValue("--source", f"unknown source {spec!r}")


def _make_hook(spec: str, config: Config):
    from . import processor as proc

    if spec == "null":
        return proc.null_hook
    if spec == "dump" or spec.startswith("dump:"):
        path = spec.split(":", 1)[1] if ":" in spec else "dump.wav"
        return proc.DumpHook(path)
    if spec == "logmel":
        return proc.LogMelHook()
    raise BadValue("--kind", f"unknown processor kind {spec!r}")


def cli(argv: Optional[list[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    setup_logging(config)

    try:
        if args.command == "serve":
            return _run_serve(config, args)
        if args.command == "record":
            return _run_record(config, args)
        if args.command == "process":
            return _run_process(config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def _run_serve(config: Config, args) -> int:
    from .mailman import Mailman
    from .transport import BindError

    try:
        server = Mailman(config, stats_interval=args.stats_interval)
        server.start()
    except BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    log.info("broker listening on %s:%d", config.SERVER, server.port)
    try:
        server.wait()
    except KeyboardInterrupt:
        log.info("interrupt: shutting down broker")
    finally:
        server.stop()
    return 0


def _run_record(config: Config, args) -> int:
    from .recorder import Recorder

    try:
        source = _make_source(args.source, args.fs)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    recorder = Recorder(
        config, source, name=args.name, send_period=args.period
    )
    try:
        recorder.run()
    except KeyboardInterrupt:
        log.info("interrupt: stopping recorder")
        recorder.shutdown()
    return 0


def _run_process(config: Config, args) -> int:
    from .processor import ProcessorClient, RegistrationRejected

    hook = _make_hook(args.kind, config)
    client = ProcessorClient(args.name, config, hook)
    try:
        client.start()
    except RegistrationRejected as exc:
        print(f"error: registration rejected: {exc.code}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        log.info("interrupt: disconnecting processor")
        client.shutdown()
    finally:
        closer = getattr(hook, "close", None)
        if closer is not None:
            closer()
    return 0


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
