"""Benchmark the compiled logits kernel against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--vocab 256] [--steps 20000]

The fill kernel dominates decode cost, so this also reports an end-to-end
decode-loop rate for both backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from agentserve import kernels
from agentserve.engine import GenerateRequest, InferenceEngine
from agentserve.logits_cache import ReplayPolicy
from agentserve.mixing import mix2
from agentserve.model import ModelConfig
from agentserve.sampling import SamplingConfig


def bench_fill(fill, vocab: int, steps: int) -> float:
    # warmup
    for i in range(100):
        fill(mix2(1, i), vocab, 2.5, 5.0)
    t0 = time.perf_counter()
    for i in range(steps):
        fill(mix2(1, i), vocab, 2.5, 5.0)
    return steps / (time.perf_counter() - t0)


def bench_decode(backend_name: str, vocab: int, tokens: int) -> float:
    engine = InferenceEngine(ModelConfig(seed=3, vocab_size=vocab, concentration=2.5))
    engine.register_agent("bench")
    t0 = time.perf_counter()
    engine.generate(
        GenerateRequest(
            "bench",
            [1, 2, 3, 4],
            SamplingConfig(temperature=0.6, max_tokens=tokens, seed=7),
            ReplayPolicy.NONE,
        )
    )
    return tokens / (time.perf_counter() - t0)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--vocab", type=int, default=256)
    parser.add_argument("--steps", type=int, default=20000)
    parser.add_argument("--decode-tokens", type=int, default=5000)
    args = parser.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    rows = [("numpy", kernels.fill_logits_numpy)]
    if kernels.BACKEND == "compiled":
        rows.append(("compiled", kernels.fill_logits_compiled))
        a = kernels.fill_logits_numpy(123, args.vocab, 2.5, 5.0)
        b = kernels.fill_logits_compiled(123, args.vocab, 2.5, 5.0)
        print(f"backends bit-identical: {np.array_equal(a, b)}")

    print(f"\nlogits fill, vocab={args.vocab}:")
    rates = {}
    for name, fill in rows:
        rate = bench_fill(fill, args.vocab, args.steps)
        rates[name] = rate
        print(f"  {name:>9}: {rate:12.0f} fills/s")
    if len(rates) == 2:
        print(f"  speedup: {rates['compiled'] / rates['numpy']:.2f}x")

    print(f"\nend-to-end decode loop ({args.decode_tokens} tokens, active backend):")
    rate = bench_decode(kernels.BACKEND, args.vocab, args.decode_tokens)
    print(f"  {kernels.BACKEND:>9}: {rate:12.0f} tokens/s")
    print("\nset AGENTSERVE_PURE=1 to force the numpy fallback at import time")


if __name__ == "__main__":
    main()
