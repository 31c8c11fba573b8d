import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathqrng.bitstream import BitBuffer
from pathqrng.extractors import (
    KEY_BITS,
    EntropyFormula,
    ExtractorConfig,
    NonExtractableError,
    SizingMode,
    ToeplitzHasher,
    ToeplitzSeed,
    min_entropy,
    output_length,
    toeplitz_extract,
    toeplitz_extract_fast,
    toeplitz_matrix,
    toeplitz_stream,
    xor_extract,
)


def biased(p1, n, seed=0):
    return BitBuffer.from_bits((np.random.default_rng(seed).random(n) < p1).astype(np.uint8))


def bits_of(text):
    return np.array([int(c) for c in text], dtype=np.uint8)


class TestMinEntropy:
    def test_all_zero(self):
        est = min_entropy(BitBuffer.from_bits(np.zeros(1000)))
        assert est.p_g == 1.0 and est.h_per_symbol == 0.0

    def test_unbiased(self):
        est = min_entropy(biased(0.5, 10**7, 1))
        assert est.h_per_bit == pytest.approx(1.0, abs=1e-3)

    def test_biased(self):
        est = min_entropy(biased(0.75, 10**6, 2))
        assert est.h_per_bit == pytest.approx(-math.log2(0.75), abs=5e-3)

    def test_byte_symbols(self):
        est = min_entropy(BitBuffer(bytes([7]) * 200), 8)
        assert est.p_g == 1.0 and est.symbol_width == 8

    def test_paper_formula_doubles(self):
        buf = biased(0.75, 10**5, 3)
        std = min_entropy(buf)
        assert min_entropy(buf, 1, EntropyFormula.PAPER).h_per_symbol == pytest.approx(2 * std.h_per_symbol)

    def test_too_few(self):
        with pytest.raises(ValueError, match="too few"):
            min_entropy(BitBuffer.from_bits(np.zeros(99)))

    def test_bad_width(self):
        with pytest.raises(ValueError):
            min_entropy(BitBuffer.from_bits(np.zeros(1000)), 4)

    def test_convergence(self):
        rng = np.random.default_rng(4)
        p, n, inside = 0.7, 2000, 0
        for _ in range(1000):
            est = min_entropy(BitBuffer.from_bits((rng.random(n) < p).astype(np.uint8)))
            inside += abs(est.p_g - p) <= 3 * math.sqrt(p * (1 - p) / n)
        assert inside >= 990

    @given(st.lists(st.integers(0, 1), min_size=100, max_size=400))
    def test_invariants(self, bits):
        est = min_entropy(BitBuffer.from_bits(bits))
        assert 0 < est.p_g <= 1
        assert est.h_per_symbol == pytest.approx(-math.log2(est.p_g))
        assert est.h_per_symbol <= 1


class TestOutputLength:
    @pytest.mark.parametrize("mode, h, expected", [
        (SizingMode.PAPER_MATCH, 1.0, 256),
        (SizingMode.LHL, 1.0, 156),
        (SizingMode.LHL, 0.5, 28),
        (SizingMode.LHL, 0.0, 0),
        (SizingMode.PAPER_MATCH, 0.0, 0),
    ])
    def test_values(self, mode, h, expected):
        assert output_length(ExtractorConfig(sizing_mode=mode), h) == expected

    def test_range(self):
        with pytest.raises(ValueError):
            output_length(ExtractorConfig(), 1.5)

    @pytest.mark.parametrize("kwargs", [{"n": 1}, {"epsilon_hash": 0.0}, {"epsilon_hash": 1.0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            ExtractorConfig(**kwargs)

    @given(h1=st.floats(0, 1), h2=st.floats(0, 1), e1=st.integers(1, 60), e2=st.integers(1, 60),
           mode=st.sampled_from(list(SizingMode)))
    def test_monotone(self, h1, h2, e1, e2, mode):
        lo, hi = sorted((h1, h2))
        cfg = ExtractorConfig(sizing_mode=mode)
        assert output_length(cfg, lo) <= output_length(cfg, hi)
        tight, loose = sorted((e1, e2))
        m_loose = output_length(ExtractorConfig(epsilon_hash=2.0**-tight, sizing_mode=mode), hi)
        m_tight = output_length(ExtractorConfig(epsilon_hash=2.0**-loose, sizing_mode=mode), hi)
        assert m_tight <= m_loose
        assert 0 <= m_tight <= 256


class TestXor:
    def test_hand_example(self):
        assert xor_extract(BitBuffer.from_string("1100")).to_string() == "11"

    def test_odd_drops_last(self):
        assert xor_extract(BitBuffer.from_string("11001")).to_string() == "11"

    @given(st.text("01", min_size=1, max_size=64))
    def test_palindrome(self, half):
        assert set(xor_extract(BitBuffer.from_string(half + half[::-1])).to_string()) == {"0"}

    def test_empty(self):
        with pytest.raises(ValueError):
            xor_extract(BitBuffer())

    @given(st.lists(st.integers(0, 1), min_size=2, max_size=300))
    def test_fast_path_matches_rule(self, bits):
        b = np.array(bits, dtype=np.uint8)
        n = b.size - b.size % 2
        expected = b[: n // 2] ^ b[:n][::-1][: n // 2]
        assert np.array_equal(xor_extract(BitBuffer.from_bits(b)).to_bits(), expected)

    @pytest.mark.parametrize("delta", [0.05, 0.1, 0.2])
    def test_bias_law(self, delta):
        out = xor_extract(biased(0.5 + delta, 10**7, int(delta * 100))).to_bits()
        # XOR of two bits with p(1) = 1/2 + d has p(1) = 1/2 - 2 d^2
        assert abs(0.5 - out.mean()) == pytest.approx(2 * delta**2, abs=0.005)


class TestToeplitzMatrix:
    def test_hand_example(self):
        t = toeplitz_matrix(bits_of("10110"), 4, 2)
        assert t.tolist() == [[1, 1, 0, 1], [0, 1, 1, 0]]
        assert toeplitz_extract(bits_of("1010"), bits_of("10110"), 2).tolist() == [1, 1]

    def test_zero_seed(self):
        block = np.random.default_rng(0).integers(0, 2, 64)
        assert not toeplitz_extract(block, np.zeros(64 + 40 - 1, np.uint8), 40).any()

    def test_identity_seed(self):
        n = 16
        seed = np.zeros(2 * n - 1, np.uint8)
        seed[n - 1] = 1
        block = np.random.default_rng(1).integers(0, 2, n).astype(np.uint8)
        assert np.array_equal(toeplitz_extract(block, seed, n), block)

    def test_wrong_seed_length(self):
        with pytest.raises(ValueError):
            toeplitz_extract(np.zeros(8), np.zeros(8), 2)

    def test_constant_diagonals(self):
        t = toeplitz_matrix(np.random.default_rng(2).integers(0, 2, 300), 256, 45)
        assert np.array_equal(t[1:, 1:], t[:-1, :-1])

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 80), data=st.data())
    def test_fast_matches_naive(self, seed, n, data):
        m = data.draw(st.integers(1, n))
        rng = np.random.default_rng(seed)
        key = rng.integers(0, 2, n + m - 1).astype(np.uint8)
        block = rng.integers(0, 2, n).astype(np.uint8)
        assert np.array_equal(toeplitz_extract_fast(block, key, m), toeplitz_extract(block, key, m))

    def test_linearity(self):
        rng = np.random.default_rng(3)
        key = rng.integers(0, 2, 256 + 200 - 1).astype(np.uint8)
        h = ToeplitzHasher(key, 256, 200)
        a = rng.integers(0, 2, (10_000, 256)).astype(np.uint8)
        b = rng.integers(0, 2, (10_000, 256)).astype(np.uint8)
        assert np.array_equal(h.hash_bits(a ^ b), h.hash_bits(a) ^ h.hash_bits(b))


class TestSeed:
    def test_hex_round_trip(self, tmp_path):
        key = ToeplitzSeed.generate(np.random.default_rng(0))
        assert len(key.to_hex()) == 128
        key.save(tmp_path / "k.hex")
        assert ToeplitzSeed.load(tmp_path / "k.hex") == key

    def test_length(self):
        with pytest.raises(ValueError):
            ToeplitzSeed(np.zeros(510, np.uint8))

    def test_pad_bit(self):
        with pytest.raises(ValueError, match="pad"):
            ToeplitzSeed.from_hex("0" * 127 + "1")

    def test_bad_hex(self):
        with pytest.raises(ValueError):
            ToeplitzSeed.from_hex("zz" * 64)

    def test_prefix(self):
        key = ToeplitzSeed.generate(np.random.default_rng(1))
        assert key.prefix(256, 200).size == 455
        assert np.array_equal(key.prefix(256, 256), key.key_bits[:KEY_BITS])
        with pytest.raises(ValueError):
            key.prefix(256, 257)

    def test_system_entropy(self):
        assert ToeplitzSeed.generate() != ToeplitzSeed.generate()


class TestToeplitzStream:
    key = ToeplitzSeed.generate(np.random.default_rng(9))

    def test_paper_match_loss(self):
        src = biased(0.5, 10**6, 5)
        out = toeplitz_stream(src, self.key, ExtractorConfig(sizing_mode=SizingMode.PAPER_MATCH))
        assert out.bit_length >= 0.99 * src.bit_length

    def test_lhl_half_entropy_ratio(self):
        src = biased(2**-0.5, 10**6, 6)
        out = toeplitz_stream(src, self.key, ExtractorConfig())
        blocks = src.bit_length // 256
        est = min_entropy(src)
        m = output_length(ExtractorConfig(), est.h_per_bit)
        assert out.bit_length == blocks * m
        assert out.bit_length / src.bit_length == pytest.approx(28 / 256, abs=0.01)

    def test_blocks_use_same_prefix(self):
        src = biased(0.5, 256 * 50 + 17, 7)
        out = toeplitz_stream(src, self.key, m=100).to_bits().reshape(50, 100)
        blocks = src.to_bits()[: 256 * 50].reshape(50, 256)
        prefix = self.key.prefix(256, 100)
        for i in (0, 17, 49):
            assert np.array_equal(out[i], toeplitz_extract(blocks[i], prefix, 100))

    def test_workers_match_serial(self):
        src = biased(0.5, 256 * 5000, 8)
        a = toeplitz_stream(src, self.key, m=150, chunk_blocks=512)
        b = toeplitz_stream(src, self.key, m=150, chunk_blocks=512, workers=4)
        assert a == b

    def test_deterministic(self):
        src = biased(0.5, 10**5, 10)
        assert toeplitz_stream(src, self.key) == toeplitz_stream(src, self.key)

    def test_non_extractable(self):
        with pytest.raises(NonExtractableError):
            toeplitz_stream(BitBuffer.from_bits(np.zeros(10_000)), self.key)

    def test_unaligned_block_size(self):
        src = biased(0.5, 10_000, 11)
        cfg = ExtractorConfig(n=100, sizing_mode=SizingMode.PAPER_MATCH)
        out = toeplitz_stream(src, self.key, cfg, m=60).to_bits().reshape(100, 60)
        block = src.to_bits()[300:400]
        assert np.array_equal(out[3], toeplitz_extract(block, self.key.prefix(100, 60), 60))
