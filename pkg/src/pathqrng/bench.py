"""Extractor throughput measurement.

Reference rates are the published desktop figures for the two-bit setup
(XOR) and the one- and two-bit Toeplitz runs; floors are multiples of them.
"""

from __future__ import annotations

import os
import platform
import time

import numpy as np

from .bitstream import BitBuffer
from .extractors import ExtractorConfig, SizingMode, ToeplitzSeed, toeplitz_stream, xor_extract

REFERENCE_XOR_MBPS = 8.348
REFERENCE_TOEPLITZ_MBPS = 6.42
XOR_FLOOR = 100 * REFERENCE_XOR_MBPS
TOEPLITZ_FLOOR = 10 * REFERENCE_TOEPLITZ_MBPS


def _best_rate(fn, n_bits: int, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return n_bits / best / 1e6


def run_benchmarks(n_bits: int = 50_000_000, repeats: int = 3, workers: int | None = None, seed: int = 0) -> dict:
    """Input megabits per second for both extractors (best of ``repeats``)."""
    rng = np.random.default_rng(seed)
    bits = BitBuffer(rng.integers(0, 256, n_bits // 8, dtype=np.uint8), n_bits // 8 * 8)
    key = ToeplitzSeed.generate(rng)
    workers = workers or os.cpu_count() or 1
    config = ExtractorConfig(sizing_mode=SizingMode.PAPER_MATCH)
    xor_mbps = _best_rate(lambda: xor_extract(bits), bits.bit_length, repeats)
    toe_mbps = _best_rate(lambda: toeplitz_stream(bits, key, config, workers=workers), bits.bit_length, repeats)
    return {
        "input_bits": bits.bit_length,
        "workers": workers,
        "machine": {"platform": platform.platform(), "processor": platform.processor(), "cpus": os.cpu_count()},
        "xor": {"mbps": xor_mbps, "floor_mbps": XOR_FLOOR, "ratio_to_reference": xor_mbps / REFERENCE_XOR_MBPS,
                "meets_floor": xor_mbps >= XOR_FLOOR},
        "toeplitz": {"mbps": toe_mbps, "floor_mbps": TOEPLITZ_FLOOR,
                     "ratio_to_reference": toe_mbps / REFERENCE_TOEPLITZ_MBPS, "meets_floor": toe_mbps >= TOEPLITZ_FLOOR},
    }
