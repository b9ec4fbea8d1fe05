"""Exception types shared across the engine."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or workload description."""


class CapacityError(RuntimeError):
    """The KV store cannot free enough tokens to satisfy a request."""


class CompileError(ConfigError):
    """A workflow description failed to compile; message names the states."""


class DeadlockError(RuntimeError):
    """Every live agent is sleeping with no pending wake."""


class ProtocolError(ValueError):
    """Malformed or unserviceable protocol message."""
