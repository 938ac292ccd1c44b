"""Standalone processor client for the audiosockets broker.

Standard library only. Subclass :class:`BaseProcessor`, override
``process_data(data)``, call ``start()``.
"""

from .client import (
    BaseProcessor,
    ConfigError,
    ConnectionLost,
    ErrorReply,
    ProcessorError,
    RegistrationRejected,
    load_config,
)

__all__ = [
    "BaseProcessor",
    "ConfigError",
    "ConnectionLost",
    "ErrorReply",
    "ProcessorError",
    "RegistrationRejected",
    "load_config",
]

__version__ = "0.1.0"
