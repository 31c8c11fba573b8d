import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathqrng.bitstream import BitBuffer
from pathqrng.stats import (
    FAIL,
    MIN_BITS,
    PASS,
    SKIPPED,
    TESTS,
    approximate_entropy,
    autocorrelation,
    block_frequency,
    cumulative_sums,
    frequency,
    gf2_rank,
    longest_run,
    matrix_rank,
    maurer_statistic,
    run_battery,
    run_test,
    runs,
    serial,
    spectral,
)


def _arctan_inv(x: int, one: int) -> int:
    total, term, k, sign = 0, one // x, 1, 1
    while term:
        total += sign * (term // k)
        term //= x * x
        k += 2
        sign = -sign
    return total


def pi_bits(n: int) -> np.ndarray:
    """First ``n`` bits of the binary expansion of pi (11.0010...), via Machin's formula."""
    guard = 64
    one = 1 << (n + guard)
    pi = 16 * _arctan_inv(5, one) - 4 * _arctan_inv(239, one)
    value = pi >> (guard + 2)
    return np.array([int(c) for c in bin(value)[2:][:n]], dtype=np.uint8)


def bits_of(text):
    return np.array([int(c) for c in text], dtype=np.uint8)


PI100 = pi_bits(100)


def naive_dft_p(bits):
    """Spectral test p-value from an explicit O(n^2) DFT."""
    n = bits.size
    x = 2.0 * bits - 1.0
    k = np.arange(n // 2)[:, None]
    j = np.arange(n)[None, :]
    mod = np.abs((x * np.exp(-2j * np.pi * k * j / n)).sum(axis=1))
    t = math.sqrt(math.log(20) * n)
    d = (np.count_nonzero(mod < t) - 0.95 * n / 2) / math.sqrt(n * 0.95 * 0.05 / 4)
    return math.erfc(abs(d) / math.sqrt(2))


class TestPublishedExamples:
    def test_pi_prefix(self):
        assert "".join(map(str, PI100[:16])) == "1100100100001111"

    @pytest.mark.parametrize("fn, args, expected", [
        (frequency, (bits_of("1011010101"),), [0.527089]),
        (frequency, (PI100,), [0.109599]),
        (block_frequency, (bits_of("0110011010"), 3), [0.801252]),
        (block_frequency, (PI100, 10), [0.706438]),
        (runs, (bits_of("1001101011"),), [0.147232]),
        (runs, (PI100,), [0.500798]),
        (cumulative_sums, (bits_of("1011010111"),), [0.4116588, None]),
        (cumulative_sums, (PI100,), [0.219194, 0.114866]),
        (approximate_entropy, (bits_of("0100110101"), 3), [0.261961]),
        (approximate_entropy, (PI100, 2), [0.235301]),
        (serial, (bits_of("0011011101"), 3), [0.808792, 0.670320]),
    ])
    def test_p_values(self, fn, args, expected):
        got = fn(*args)
        for g, e in zip(got, expected):
            if e is not None:
                assert g == pytest.approx(e, abs=1e-6)

    def test_longest_run_example(self):
        eps = ("11001100000101010110110001001100111000000000001001"
               "00110101010001000100111101011010000000110101111100"
               "1100111001101101100010110010")
        assert longest_run(bits_of(eps))[0] == pytest.approx(0.180609, abs=1e-4)

    def test_maurer_statistic_example(self):
        assert maurer_statistic(bits_of("01011010011101010111"), 2, 4) == pytest.approx(1.1949875, abs=1e-7)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_spectral_matches_explicit_dft(self, seed):
        bits = np.random.default_rng(seed).integers(0, 2, 1000).astype(np.uint8)
        assert spectral(bits)[0] == pytest.approx(naive_dft_p(bits), abs=1e-12)


class TestRank:
    def test_examples(self):
        assert gf2_rank(np.eye(5, dtype=np.uint8)) == 5
        assert gf2_rank(np.ones((4, 4), dtype=np.uint8)) == 1
        assert gf2_rank(bits_of("110011101").reshape(3, 3)) == 2

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 32), st.integers(1, 32))
    def test_matches_elimination(self, seed, r, c):
        m = np.random.default_rng(seed).integers(0, 2, (r, c)).astype(np.uint8)
        a = m.copy()
        rank = 0
        for col in range(c):
            piv = next((i for i in range(rank, r) if a[i, col]), None)
            if piv is None:
                continue
            a[[rank, piv]] = a[[piv, rank]]
            for i in range(r):
                if i != rank and a[i, col]:
                    a[i] ^= a[rank]
            rank += 1
        assert gf2_rank(m) == rank

    def test_full_rank_frequency(self):
        # a random 32x32 GF(2) matrix is full rank with probability ~0.2888
        bits = np.random.default_rng(5).integers(0, 2, 32 * 32 * 2000).astype(np.uint8)
        assert matrix_rank(bits)[0] > 0.001


class TestBattery:
    def test_zeros_fail_monobit(self):
        r = run_test("frequency", np.zeros(10**6, np.uint8))
        assert r.p_value < 1e-10 and r.status == FAIL

    def test_alternating(self):
        bits = np.tile(np.array([0, 1], np.uint8), 500_000)
        assert frequency(bits) == [1.0]
        assert run_test("runs", bits).status == FAIL

    def test_unbiased_passes(self):
        bits = np.random.default_rng(12).integers(0, 2, 10**6).astype(np.uint8)
        report = run_battery(BitBuffer.from_bits(bits))
        assert report.total == 10
        assert report.passed >= 9

    def test_short_input_skips(self):
        report = run_battery(np.random.default_rng(0).integers(0, 2, 5000).astype(np.uint8))
        status = {r.name: r.status for r in report.results}
        for name in ("matrix_rank", "approximate_entropy", "serial", "universal"):
            assert status[name] == SKIPPED
        assert status["frequency"] != SKIPPED
        assert report.total == sum(s != SKIPPED for s in status.values())

    def test_empty(self):
        with pytest.raises(ValueError):
            run_battery(np.zeros(0, np.uint8))

    def test_unknown_test(self):
        with pytest.raises(KeyError):
            run_test("nope", np.zeros(100, np.uint8))

    def test_json_schema(self):
        report = run_battery(np.random.default_rng(1).integers(0, 2, 2000).astype(np.uint8))
        d = report.to_dict()
        assert set(d) == {"alpha", "bit_length", "results", "passed", "total"}
        assert [r["name"] for r in d["results"]] == list(TESTS)
        assert all(r["status"] in (PASS, FAIL, SKIPPED) for r in d["results"])
        assert d["passed"] == sum(r["status"] == PASS for r in d["results"])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.2))
    def test_pass_iff_min_p_above_alpha(self, seed, alpha):
        bits = np.random.default_rng(seed).integers(0, 2, 4000).astype(np.uint8)
        for r in run_battery(bits, alpha).results:
            if r.status != SKIPPED:
                assert (r.status == PASS) == (min(r.p_values) >= alpha)
                assert all(0.0 <= p <= 1.0 for p in r.p_values)

    def test_minimums_cover_all_tests(self):
        assert set(MIN_BITS) == set(TESTS)


class TestAutocorrelation:
    def test_reference_std(self):
        res = autocorrelation(np.random.default_rng(3).integers(0, 2, 10**6).astype(np.uint8))
        assert res.expected_std == pytest.approx(1e-3)
        assert res.std == pytest.approx(1e-3, rel=0.2)
        assert abs(res.mean) <= 3 * res.expected_std / math.sqrt(100)

    def test_period_two_copy(self):
        # bit i = bit i - 2 with a non-constant start is the period-2 sequence 0101...
        bits = np.tile(np.array([0, 1], np.uint8), 5000)
        res = autocorrelation(bits, 10)
        assert res.coefficients[1] == pytest.approx(1.0, abs=1e-3)
        assert res.coefficients[0] == pytest.approx(-1.0, abs=1e-3)

    def test_matches_direct_sum(self):
        b = np.random.default_rng(5).integers(0, 2, 3000).astype(np.uint8)
        res = autocorrelation(b, 20)
        x = 2.0 * b - 1
        x -= x.mean()
        var = (x @ x) / x.size
        direct = [(x[:-k] @ x[k:]) / x.size / var for k in range(1, 21)]
        assert np.allclose(res.coefficients, direct, atol=1e-12)

    def test_constant(self):
        with pytest.raises(ValueError, match="constant"):
            autocorrelation(np.ones(10_000, np.uint8))

    def test_too_short(self):
        with pytest.raises(ValueError):
            autocorrelation(np.zeros(999, np.uint8), 100)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
    def test_bounded(self, seed, p):
        b = (np.random.default_rng(seed).random(2000) < p).astype(np.uint8)
        if b.min() == b.max():
            return
        assert np.all(np.abs(autocorrelation(b, 50).coefficients) <= 1 + 1e-12)
