"""agentserve: a deterministic desk-scale multi-agent serving engine.

Implements replay of cached logits trajectories for resampling workloads and
contribution-aware KV cache eviction for multi-agent workloads, on top of a
bit-reproducible hash-based stand-in for the model forward pass.
"""

from .engine import GenerateRequest, GenerateResult, InferenceEngine
from .kv_cache import EvictionPolicy, PrefixTrie
from .logits_cache import LogitsCache, ReplayOutcome, ReplayPolicy, StateKey
from .model import CostReport, ModelConfig, model_logits
from .sampling import HotspotParams, SamplingConfig

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "EvictionPolicy",
    "GenerateRequest",
    "GenerateResult",
    "HotspotParams",
    "InferenceEngine",
    "LogitsCache",
    "ModelConfig",
    "PrefixTrie",
    "ReplayOutcome",
    "ReplayPolicy",
    "SamplingConfig",
    "StateKey",
    "model_logits",
    "__version__",
]
