"""Deterministic synthetic next-token model.

Stands in for a transformer forward pass: logits are a pure function of
``(seed, prefix)`` built from the documented 64-bit mix, so decode results
are bit-reproducible across runs, processes, and backends. The forward-pass
meters (:class:`CostReport`) are the throughput currency of the whole
engine: every prefill/decode accounts here.

Construction of a logits vector for a prefix:

1. ``h = hash_tokens(prefix)`` (rolling 64-bit hash),
2. ``state = mix2(seed, h)``,
3. ``base[v] = float32((2 * unit_float(stream_u64(state, v)) - 1) * logit_range)``,
4. one peak index ``avalanche64(state ^ PEAK_SALT) % vocab_size`` gets
   ``float32(concentration * logit_range)`` added (in float32),

so ``concentration`` tunes the typical top-1 confidence while the base noise
keeps a controllable fraction of genuinely uncertain steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kernels import fill_logits
from .mixing import MASK64, hash_tokens, mix2


@dataclass(frozen=True)
class ModelConfig:
    seed: int
    vocab_size: int = 256
    concentration: float = 2.0
    logit_range: float = 5.0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.concentration < 0:
            raise ConfigError(f"concentration must be >= 0, got {self.concentration}")
        if self.logit_range <= 0:
            raise ConfigError(f"logit_range must be > 0, got {self.logit_range}")


@dataclass
class CostReport:
    """Monotone forward-pass counters for one engine instance."""

    prefill_passes: int = 0
    prefill_tokens: int = 0
    decode_passes: int = 0
    #: Tokens re-materialized because their KV state had been evicted.
    reprefill_tokens: int = 0

    def snapshot(self) -> "CostReport":
        return CostReport(
            self.prefill_passes,
            self.prefill_tokens,
            self.decode_passes,
            self.reprefill_tokens,
        )


def logits_state(config: ModelConfig, prefix_hash: int) -> int:
    """Stream root for a given prefix hash under ``config.seed``."""
    return mix2(config.seed & MASK64, prefix_hash)


def logits_from_state(config: ModelConfig, state: int) -> np.ndarray:
    return fill_logits(state, config.vocab_size, config.concentration, config.logit_range)


def model_logits(config: ModelConfig, prefix) -> np.ndarray:
    """Next-token logits for ``prefix``; pure in ``(config.seed, prefix)``.

    Raises ``ConfigError`` for an empty prefix.
    """
    if len(prefix) == 0:
        raise ConfigError("prefix must be non-empty")
    return logits_from_state(config, logits_state(config, hash_tokens(prefix)))
