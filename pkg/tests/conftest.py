import socket

import pytest

from audiosockets.appcli import Config


def free_port() -> int:
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


@pytest.fixture
def tcp_config() -> Config:
    return Config(SERVER="127.0.0.1", PORT=free_port())


@pytest.fixture
def mem_config() -> Config:
    return Config(SERVER="127.0.0.1", PORT=5050)
