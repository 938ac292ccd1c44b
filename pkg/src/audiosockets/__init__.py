"""Real-time audio fan-out over sockets.

One broker (the mailman) relays framed audio chunks from a recorder client
to any number of named processor clients. See docs/protocol.md for the
wire format.
"""

from .appcli import Config, load_config
from .mailman import Mailman
from .processor import ProcessorClient
from .recorder import Recorder

__all__ = ["Config", "load_config", "Mailman", "ProcessorClient", "Recorder"]

__version__ = "0.1.0"
