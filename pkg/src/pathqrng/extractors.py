"""Min-entropy estimation, XOR folding and seeded Toeplitz hashing."""

from __future__ import annotations

import enum
import math
import secrets
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitstream import BitBuffer

KEY_BITS = 511
DEFAULT_BLOCK = 256
DEFAULT_EPSILON = 2.0**-50


class SizingMode(str, enum.Enum):
    LHL = "lhl"
    PAPER_MATCH = "paper"


class EntropyFormula(str, enum.Enum):
    STANDARD = "standard"  # -log2(p_g)
    PAPER = "paper"  # -2 log2(p_g), reproduces the published arithmetic


class NonExtractableError(ValueError):
    """The sizing rule left no extractable bits."""


@dataclass(frozen=True)
class MinEntropyEstimate:
    p_g: float
    h_per_symbol: float
    symbol_width: int
    sample_count: int

    @property
    def h_per_bit(self) -> float:
        return self.h_per_symbol / self.symbol_width


def min_entropy(bits: BitBuffer, symbol_width: int = 1,
                formula: EntropyFormula = EntropyFormula.STANDARD) -> MinEntropyEstimate:
    """Most-frequent-symbol estimate over non-overlapping ``symbol_width``-bit symbols."""
    if symbol_width not in (1, 8):
        raise ValueError(f"symbol width must be 1 or 8, got {symbol_width}")
    if bits.bit_length < 100 * symbol_width:
        raise ValueError(f"too few samples: need at least {100 * symbol_width} bits, got {bits.bit_length}")
    if symbol_width == 1:
        n = bits.bit_length
        ones = int(np.unpackbits(bits.data, count=n).sum()) if n % 8 else int(np.bitwise_count(bits.data).sum())
        top = max(ones, n - ones)
    else:
        n = bits.bit_length // 8
        top = int(np.bincount(bits.data[:n], minlength=256).max())
    p_g = top / n
    h = -math.log2(p_g)
    if EntropyFormula(formula) is EntropyFormula.PAPER:
        h *= 2.0
    return MinEntropyEstimate(p_g, h + 0.0, symbol_width, n)


@dataclass(frozen=True)
class ExtractorConfig:
    n: int = DEFAULT_BLOCK
    epsilon_hash: float = DEFAULT_EPSILON
    sizing_mode: SizingMode = SizingMode.LHL
    entropy_formula: EntropyFormula = EntropyFormula.STANDARD

    def __post_init__(self):
        object.__setattr__(self, "sizing_mode", SizingMode(self.sizing_mode))
        object.__setattr__(self, "entropy_formula", EntropyFormula(self.entropy_formula))
        if self.n < 2:
            raise ValueError("block size n must be at least 2")
        if not 0.0 < self.epsilon_hash < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")


def output_length(config: ExtractorConfig, h_per_bit: float) -> int:
    """Output bits per ``config.n``-bit block.

    LHL: ``floor(n h - 2 log2(1/eps))``; paper-match: ``floor(n h)``.
    Both clamped to ``[0, n]``.
    """
    if not 0.0 <= h_per_bit <= 1.0:
        raise ValueError(f"per-bit entropy must lie in [0, 1], got {h_per_bit}")
    raw = config.n * h_per_bit
    if config.sizing_mode is SizingMode.LHL:
        raw -= 2.0 * math.log2(1.0 / config.epsilon_hash)
    return int(min(max(math.floor(raw), 0), config.n))


_BIT_REVERSE = np.array([int(f"{b:08b}"[::-1], 2) for b in range(256)], dtype=np.uint8)


def xor_extract(bits: BitBuffer) -> BitBuffer:
    """``out[i] = in[i] ^ in[N-1-i]`` for the first half; an odd final bit is dropped first."""
    n = bits.bit_length - (bits.bit_length % 2)
    if bits.bit_length == 0:
        raise ValueError("cannot extract from an empty input")
    half = n // 2
    if n % 8 == 0 and half % 8 == 0:
        data = bits.data[: n // 8]
        rev = _BIT_REVERSE[data[::-1]]
        return BitBuffer(data[: half // 8] ^ rev[: half // 8], half)
    b = np.unpackbits(bits.data, count=n)
    return BitBuffer.from_bits(b[:half] ^ b[::-1][:half])


@dataclass(frozen=True, eq=False)
class ToeplitzSeed:
    """Fixed 511-bit master key; blocks use its first ``n - 1 + m`` bits."""

    key_bits: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.key_bits, dtype=np.uint8).reshape(-1)
        if k.size != KEY_BITS:
            raise ValueError(f"master key must be exactly {KEY_BITS} bits, got {k.size}")
        if k.size and int(k.max()) > 1:
            raise ValueError("key bits must be 0 or 1")
        k = k.copy()
        k.setflags(write=False)
        object.__setattr__(self, "key_bits", k)

    def __eq__(self, other):
        return isinstance(other, ToeplitzSeed) and np.array_equal(self.key_bits, other.key_bits)

    def prefix(self, n: int, m: int) -> np.ndarray:
        need = n - 1 + m
        if need > KEY_BITS:
            raise ValueError(f"n={n}, m={m} needs {need} key bits but the key has {KEY_BITS}")
        return self.key_bits[:need]

    def to_hex(self) -> str:
        """128 hex digits, MSB first; the 512th (pad) bit is zero."""
        return np.packbits(np.append(self.key_bits, 0)).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str) -> "ToeplitzSeed":
        text = text.strip()
        if len(text) != 128:
            raise ValueError(f"key must be 128 hex digits, got {len(text)}")
        try:
            raw = bytes.fromhex(text)
        except ValueError:
            raise ValueError("key is not valid hex") from None
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        if bits[-1]:
            raise ValueError("the final pad bit of the key must be zero")
        return cls(bits[:KEY_BITS])

    @classmethod
    def generate(cls, rng: np.random.Generator | None = None) -> "ToeplitzSeed":
        if rng is None:
            raw = np.frombuffer(secrets.token_bytes(64), dtype=np.uint8)
            return cls(np.unpackbits(raw)[:KEY_BITS])
        return cls(rng.integers(0, 2, KEY_BITS, dtype=np.uint8))

    @classmethod
    def load(cls, path: str | Path) -> "ToeplitzSeed":
        return cls.from_hex(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_hex() + "\n")


def toeplitz_matrix(seed: np.ndarray, n: int, m: int) -> np.ndarray:
    """``T[i, j] = seed[n - 1 + i - j]`` (m x n)."""
    seed = np.asarray(seed, dtype=np.uint8)
    if seed.size != n + m - 1:
        raise ValueError(f"seed must have n + m - 1 = {n + m - 1} bits, got {seed.size}")
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    return seed[n - 1 + i - j]


def toeplitz_extract(block, seed, m: int) -> np.ndarray:
    """Reference GF(2) product of the explicit Toeplitz matrix with one block."""
    block = np.asarray(block, dtype=np.uint8).reshape(-1)
    n = block.size
    if m > n:
        raise ValueError(f"m={m} exceeds the block length {n}")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    t = toeplitz_matrix(seed, n, m)
    return ((t.astype(np.int64) @ block.astype(np.int64)) & 1).astype(np.uint8)


class ToeplitzHasher:
    """Batched Toeplitz hashing for a fixed seed.

    Every column of a Toeplitz matrix is a window of the seed, so the
    product with a block is a window of the carry-less product of seed
    and block.  That product is assembled byte by byte: for each input
    byte position a 256-entry table holds the (windowed, packed) carry-less
    product of the seed with every possible byte, and the output is the
    XOR of one table row per input byte.
    """

    def __init__(self, seed, n: int, m: int):
        if not 0 < m <= n:
            raise ValueError(f"need 0 < m <= n, got m={m}, n={n}")
        t = toeplitz_matrix(seed, n, m)
        self.n, self.m = n, m
        self.n_bytes = (n + 7) // 8
        self.words = (m + 63) // 64
        cols = np.zeros((self.n_bytes * 8, self.words * 64), dtype=np.uint8)
        cols[:n, :m] = t.T
        byte_bits = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1)  # (256, 8), MSB first
        per_byte = cols.reshape(self.n_bytes, 8, self.words * 64).astype(np.float32)
        prod = np.matmul(byte_bits.astype(np.float32), per_byte).astype(np.uint8) & 1  # (n_bytes, 256, bits)
        self._tables = np.ascontiguousarray(np.packbits(prod, axis=2).view(np.uint64))
        self._k = np.arange(self.n_bytes)[None, :]

    def hash_packed(self, blocks: np.ndarray) -> np.ndarray:
        """Hash ``(B, n_bytes)`` packed blocks into ``(B, m)`` output bits."""
        rows = self._tables[self._k, blocks]  # (B, n_bytes, words)
        acc = np.bitwise_xor.reduce(rows, axis=1)
        out = np.unpackbits(acc.view(np.uint8), axis=1)
        return out[:, : self.m]

    def hash_bits(self, blocks: np.ndarray) -> np.ndarray:
        """Hash ``(B, n)`` unpacked blocks."""
        blocks = np.asarray(blocks, dtype=np.uint8)
        return self.hash_packed(np.packbits(blocks, axis=1))


def toeplitz_extract_fast(block, seed, m: int) -> np.ndarray:
    block = np.asarray(block, dtype=np.uint8).reshape(-1)
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    return ToeplitzHasher(seed, block.size, m).hash_bits(block[None, :])[0]


def _packed_blocks(bits: BitBuffer, n: int) -> np.ndarray:
    nblocks = bits.bit_length // n
    if n % 8 == 0:
        return bits.data[: nblocks * n // 8].reshape(nblocks, n // 8)
    raw = np.unpackbits(bits.data, count=nblocks * n).reshape(nblocks, n)
    return np.packbits(raw, axis=1)


def toeplitz_stream(bits: BitBuffer, master: ToeplitzSeed, config: ExtractorConfig = ExtractorConfig(),
                    m: int | None = None, workers: int = 1, chunk_blocks: int = 8192) -> BitBuffer:
    """Hash every complete ``n``-bit block with the same seed prefix.

    ``m`` defaults to the sizing rule applied to the stream's per-bit
    min-entropy; a trailing partial block is discarded.
    """
    n = config.n
    if m is None:
        est = min_entropy(bits, 1, config.entropy_formula)
        m = output_length(config, min(est.h_per_bit, 1.0))
    if m <= 0:
        raise NonExtractableError("min-entropy too low: the sizing rule leaves no extractable bits")
    if m > n:
        raise ValueError(f"m={m} exceeds n={n}")
    hasher = ToeplitzHasher(master.prefix(n, m), n, m)
    blocks = _packed_blocks(bits, n)
    chunks = [blocks[i:i + chunk_blocks] for i in range(0, blocks.shape[0], chunk_blocks)]
    if not chunks:
        return BitBuffer(b"", 0)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(hasher.hash_packed, chunks))
    else:
        outs = [hasher.hash_packed(c) for c in chunks]
    return BitBuffer.from_bits(np.concatenate(outs).reshape(-1))
