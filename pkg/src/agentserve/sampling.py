"""Temperature/top-k/top-p sampling and the uncertainty scores that pick
replay hotspots.

All randomness flows through an explicit :class:`~agentserve.mixing.RngStream`
so draws are reproducible and position-aligned between a replayed request and
a from-scratch rerun.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mixing import RngStream


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0
    top_k: int | None = None
    top_p: float = 1.0
    max_tokens: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if not (0 < self.top_p <= 1):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1 when set, got {self.top_k}")


@dataclass(frozen=True)
class HotspotParams:
    """Uncertainty scoring knobs: ``decay`` biases early positions, positions
    whose min-max normalized score exceeds ``threshold`` are resampled."""

    decay: float = 0.01
    threshold: float = 0.6
    max_hotspots: int | None = None

    def __post_init__(self):
        if self.decay < 0:
            raise ConfigError(f"decay must be >= 0, got {self.decay}")
        if not (0 <= self.threshold <= 1):
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")

    def cache_key(self, temperature: float) -> tuple:
        return (temperature, self.decay, self.threshold, self.max_hotspots)


def softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Token distribution at ``temperature``; 0 means greedy one-hot with
    lowest-index tie-break."""
    n = len(logits)
    if temperature == 0.0:
        probs = np.zeros(n, dtype=np.float64)
        probs[int(np.argmax(logits))] = 1.0
        return probs
    scaled = logits.astype(np.float64) / temperature
    scaled -= scaled.max()
    e = np.exp(scaled)
    return e / e.sum()


def truncate(probs: np.ndarray, top_k: int | None = None, top_p: float = 1.0) -> np.ndarray:
    """Apply top-k then nucleus truncation and renormalize.

    The nucleus keeps the smallest descending-probability prefix whose
    cumulative mass reaches ``top_p``; ties order by lower token id. With
    ``top_k`` unset and ``top_p == 1`` the input is returned unchanged.
    """
    if top_k is None and top_p == 1.0:
        return probs
    n = len(probs)
    # Descending probability, ascending token id among ties.
    order = np.lexsort((np.arange(n), -probs))
    if top_k is not None and top_k < n:
        order = order[:top_k]
    if top_p < 1.0:
        csum = np.cumsum(probs[order])
        # First index whose cumulative reaches top_p; if the kept mass never
        # does (possible after top_k), keep everything that survived.
        cut = int(np.searchsorted(csum, top_p, side="left"))
        order = order[: cut + 1]
    out = np.zeros(n, dtype=np.float64)
    kept = probs[order]
    out[order] = kept / kept.sum()
    return out


def sample(probs: np.ndarray, stream: RngStream) -> int:
    """Inverse-CDF draw; consumes exactly one stream value."""
    u = stream.next_float()
    total = float(probs.sum())
    if total <= 0.0:
        raise RuntimeError("sample() called with no probability mass")
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * total, side="right"))
    if idx >= len(probs):
        idx = len(probs) - 1
    while idx > 0 and probs[idx] == 0.0:
        idx -= 1
    return idx


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats, with 0 * log 0 := 0."""
    nz = probs[probs > 0]
    return float(-(nz * np.log(nz)).sum())


def max_prob(probs: np.ndarray) -> float:
    return float(probs.max())


def hotspot_score(probs: np.ndarray, step: int, params: HotspotParams) -> float:
    """Uncertainty score: entropy times (1 - top-1 confidence), discounted by
    1 / (1 + decay * step)."""
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    return entropy(probs) * (1.0 - max_prob(probs)) / (1.0 + params.decay * step)


def select_hotspots(scores: np.ndarray, params: HotspotParams) -> tuple[int, ...]:
    """Positions whose min-max normalized score exceeds the threshold.

    A constant score sequence normalizes to all zeros (no hotspots). The
    optional cap keeps the highest-scoring positions, ties resolved toward
    earlier positions; the result is ascending.
    """
    span = scores.max() - scores.min()
    if span == 0.0:
        return ()
    norm = (scores - scores.min()) / span
    positions = np.nonzero(norm > params.threshold)[0]
    if params.max_hotspots is not None and len(positions) > params.max_hotspots:
        ranked = sorted(positions, key=lambda t: (-norm[t], t))
        positions = ranked[: params.max_hotspots]
    return tuple(sorted(int(t) for t in positions))


def identify_hotspots(
    logits_seq, cfg: SamplingConfig, params: HotspotParams
) -> tuple[int, ...]:
    """Score every position at the request temperature and select hotspots."""
    if len(logits_seq) == 0:
        raise ConfigError("logits_seq must be non-empty")
    scores = np.array(
        [
            hotspot_score(softmax(z, cfg.temperature), t, params)
            for t, z in enumerate(logits_seq)
        ]
    )
    return select_hotspots(scores, params)
