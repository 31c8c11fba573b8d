"""Statistical evidence: ten NIST SP 800-22 tests and bit autocorrelation.

Parameters follow the SP 800-22 rev. 1a defaults.  A test whose input is
shorter than its recommended minimum is reported as SKIPPED, never FAILED.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from scipy import fft as sp_fft
from scipy.special import erfc, gammaincc
from scipy.stats import norm

from .bitstream import BitBuffer

DEFAULT_ALPHA = 0.01
PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"


class InsufficientData(ValueError):
    pass


@dataclass
class TestResult:
    name: str
    p_values: list[float]
    status: str
    alpha: float = DEFAULT_ALPHA
    reason: str = ""

    __test__ = False  # keep pytest from collecting this class

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def p_value(self) -> float:
        return min(self.p_values) if self.p_values else float("nan")

    def to_dict(self) -> dict:
        d = {"name": self.name, "p_values": [float(p) for p in self.p_values], "status": self.status}
        if self.reason:
            d["reason"] = self.reason
        return d


@dataclass
class TestReport:
    alpha: float
    bit_length: int
    results: list[TestResult] = field(default_factory=list)

    __test__ = False

    @property
    def passed(self) -> int:
        return sum(r.status == PASS for r in self.results)

    @property
    def total(self) -> int:
        """Tests that actually ran (skipped ones excluded)."""
        return sum(r.status != SKIPPED for r in self.results)

    def by_name(self, name: str) -> TestResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "bit_length": self.bit_length,
            "results": [r.to_dict() for r in self.results],
            "passed": self.passed,
            "total": self.total,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _bits(data) -> np.ndarray:
    if isinstance(data, BitBuffer):
        return data.to_bits()
    return np.asarray(data, dtype=np.uint8).reshape(-1)


def _require(n: int, minimum: int, name: str):
    if n < minimum:
        raise InsufficientData(f"{name} needs at least {minimum} bits, got {n}")


def _igamc(a, x) -> float:
    return float(gammaincc(a, x))


# ---------------------------------------------------------------- tests


def frequency(bits: np.ndarray) -> list[float]:
    n = bits.size
    s = 2 * int(bits.sum()) - n
    return [float(erfc(abs(s) / math.sqrt(2 * n)))]


def block_frequency(bits: np.ndarray, M: int = 128) -> list[float]:
    n = bits.size
    N = n // M
    if N < 1:
        raise InsufficientData("block frequency needs at least one full block")
    pi = bits[: N * M].reshape(N, M).mean(axis=1)
    chi2 = 4.0 * M * float(((pi - 0.5) ** 2).sum())
    return [_igamc(N / 2.0, chi2 / 2.0)]


def runs(bits: np.ndarray) -> list[float]:
    n = bits.size
    pi = float(bits.mean())
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return [0.0]
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v - 2.0 * n * pi * (1 - pi))
    return [float(erfc(num / (2.0 * math.sqrt(2.0 * n) * pi * (1 - pi))))]


_LONGEST_RUN = (
    # (min n, M, category lower bound, probabilities)
    (750_000, 10_000, 10, (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6_272, 128, 4, (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, 1, (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    nb, M = blocks.shape
    padded = np.zeros((nb, M + 2), dtype=np.int8)
    padded[:, 1:-1] = blocks
    d = np.diff(padded.reshape(-1))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    longest = np.zeros(nb, dtype=np.int64)
    np.maximum.at(longest, starts // (M + 2), ends - starts)
    return longest


def longest_run(bits: np.ndarray) -> list[float]:
    n = bits.size
    _require(n, 128, "longest run of ones")
    for min_n, M, lo, probs in _LONGEST_RUN:
        if n >= min_n:
            break
    K = len(probs) - 1
    N = n // M
    longest = _longest_runs(bits[: N * M].reshape(N, M))
    cat = np.clip(longest - lo, 0, K)
    nu = np.bincount(cat, minlength=K + 1)
    expected = N * np.asarray(probs)
    chi2 = float(((nu - expected) ** 2 / expected).sum())
    return [_igamc(K / 2.0, chi2 / 2.0)]


@njit(cache=True)
def _gf2_ranks(rows):
    nmat, q = rows.shape
    ranks = np.zeros(nmat, dtype=np.int64)
    for k in range(nmat):
        r = rows[k].copy()
        rank = 0
        for bit in range(31, -1, -1):
            mask = np.uint32(1) << np.uint32(bit)
            pivot = -1
            for i in range(rank, q):
                if r[i] & mask:
                    pivot = i
                    break
            if pivot < 0:
                continue
            tmp = r[rank]
            r[rank] = r[pivot]
            r[pivot] = tmp
            for i in range(q):
                if i != rank and (r[i] & mask):
                    r[i] ^= r[rank]
            rank += 1
        ranks[k] = rank
    return ranks


def _rank_probability(r: int, M: int, Q: int) -> float:
    p = 2.0 ** (r * (Q + M - r) - M * Q)
    for i in range(r):
        p *= (1 - 2.0 ** (i - Q)) * (1 - 2.0 ** (i - M)) / (1 - 2.0 ** (i - r))
    return p


def gf2_rank(matrix: np.ndarray) -> int:
    """Rank over GF(2) of a 0/1 matrix with at most 32 columns."""
    m = np.asarray(matrix, dtype=np.uint8)
    if m.shape[1] > 32:
        raise ValueError("at most 32 columns")
    padded = np.zeros((m.shape[0], 32), dtype=np.uint8)
    padded[:, 32 - m.shape[1]:] = m
    rows = np.packbits(padded, axis=1).view(">u4").astype(np.uint32).reshape(1, -1)
    return int(_gf2_ranks(rows)[0])


def matrix_rank(bits: np.ndarray, M: int = 32, Q: int = 32) -> list[float]:
    n = bits.size
    N = n // (M * Q)
    if N < 1:
        raise InsufficientData("binary matrix rank needs at least one full matrix")
    rows = np.packbits(bits[: N * M * Q].reshape(N * M, Q), axis=1).view(">u4").astype(np.uint32)
    ranks = _gf2_ranks(rows.reshape(N, M))
    p_full = _rank_probability(M, M, Q)
    p_minus = _rank_probability(M - 1, M, Q)
    p_rest = 1.0 - p_full - p_minus
    f_full = int(np.count_nonzero(ranks == M))
    f_minus = int(np.count_nonzero(ranks == M - 1))
    f_rest = N - f_full - f_minus
    chi2 = ((f_full - p_full * N) ** 2 / (p_full * N) + (f_minus - p_minus * N) ** 2 / (p_minus * N)
            + (f_rest - p_rest * N) ** 2 / (p_rest * N))
    return [math.exp(-chi2 / 2.0)]


def spectral(bits: np.ndarray) -> list[float]:
    n = bits.size
    x = 2.0 * bits - 1.0
    mod = np.abs(sp_fft.rfft(x)[: n // 2])
    threshold = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = int(np.count_nonzero(mod < threshold))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return [float(erfc(abs(d) / math.sqrt(2)))]


def _cusum_p(z: int, n: int) -> float:
    sq = math.sqrt(n)
    # C integer division (truncation toward zero), as in the reference code
    def tdiv(a, b):
        return int(a / b)

    k = np.arange(tdiv(tdiv(-n, z) + 1, 4), tdiv(tdiv(n, z) - 1, 4) + 1)
    s1 = float((norm.cdf((4 * k + 1) * z / sq) - norm.cdf((4 * k - 1) * z / sq)).sum())
    k = np.arange(tdiv(tdiv(-n, z) - 3, 4), tdiv(tdiv(n, z) - 1, 4) + 1)
    s2 = float((norm.cdf((4 * k + 3) * z / sq) - norm.cdf((4 * k + 1) * z / sq)).sum())
    return min(max(1.0 - s1 + s2, 0.0), 1.0)


def cumulative_sums(bits: np.ndarray) -> list[float]:
    n = bits.size
    x = 2 * bits.astype(np.int64) - 1
    s = np.cumsum(x)
    z_fwd = int(np.abs(s).max())
    z_bwd = int(np.abs(s[-1] - np.concatenate(([0], s[:-1]))).max())
    return [_cusum_p(z_fwd, n), _cusum_p(z_bwd, n)]


def _pattern_counts(bits: np.ndarray, m: int) -> np.ndarray:
    """Counts of all overlapping (cyclic) m-bit patterns."""
    n = bits.size
    ext = np.concatenate([bits, bits[: m - 1]]).astype(np.int32)
    v = np.zeros(n, dtype=np.int32)
    for k in range(m):
        v <<= 1
        v |= ext[k:k + n]
    return np.bincount(v, minlength=1 << m)


def _marginal(counts: np.ndarray) -> np.ndarray:
    return counts.reshape(-1, 2).sum(axis=1)


def approximate_entropy(bits: np.ndarray, m: int = 10) -> list[float]:
    n = bits.size
    c_m1 = _pattern_counts(bits, m + 1)
    c_m = _marginal(c_m1)

    def phi(c):
        c = c[c > 0] / n
        return float((c * np.log(c)).sum())

    apen = phi(c_m) - phi(c_m1)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return [_igamc(2 ** (m - 1), chi2 / 2.0)]


def serial(bits: np.ndarray, m: int = 16) -> list[float]:
    n = bits.size
    c_m = _pattern_counts(bits, m)
    c_m1 = _marginal(c_m)
    c_m2 = _marginal(c_m1)

    def psi(c, k):
        return (2.0**k / n) * float((c.astype(np.float64) ** 2).sum()) - n

    p0, p1, p2 = psi(c_m, m), psi(c_m1, m - 1), psi(c_m2, m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    return [_igamc(2 ** (m - 2), d1 / 2.0), _igamc(2 ** (m - 3), d2 / 2.0)]


_UNIVERSAL_L = ((1_059_061_760, 16), (496_435_200, 15), (231_669_760, 14), (107_560_960, 13),
                (49_643_520, 12), (22_753_280, 11), (10_342_400, 10), (4_654_080, 9), (2_068_480, 8),
                (904_960, 7), (387_840, 6))
_UNIVERSAL_EXPECTED = {6: 5.2177052, 7: 6.1962507, 8: 7.1836656, 9: 8.1764248, 10: 9.1723243,
                       11: 10.170032, 12: 11.168765, 13: 12.168070, 14: 13.167693, 15: 14.167488,
                       16: 15.167379}
_UNIVERSAL_VARIANCE = {6: 2.954, 7: 3.125, 8: 3.238, 9: 3.311, 10: 3.356, 11: 3.384, 12: 3.401,
                       13: 3.410, 14: 3.416, 15: 3.419, 16: 3.421}


def maurer_statistic(bits: np.ndarray, L: int, Q: int) -> float:
    """Mean log2 distance to the previous occurrence of each test-segment block."""
    K = bits.size // L - Q
    if K < 1:
        raise InsufficientData("no test blocks after the initialization segment")
    blocks = bits[: (Q + K) * L].reshape(Q + K, L).astype(np.int64)
    values = blocks @ (1 << np.arange(L - 1, -1, -1, dtype=np.int64))
    pos = np.arange(1, Q + K + 1)
    order = np.argsort(values, kind="stable")
    sv, sp = values[order], pos[order]
    prev = np.zeros_like(sp)
    same = sv[1:] == sv[:-1]
    prev[1:][same] = sp[:-1][same]
    test = sp > Q
    return float(np.log2(sp[test] - prev[test]).sum()) / K


def universal(bits: np.ndarray) -> list[float]:
    n = bits.size
    _require(n, _UNIVERSAL_L[-1][0], "Maurer's universal")
    L = next(L for min_n, L in _UNIVERSAL_L if n >= min_n)
    Q = 10 * 2**L
    K = n // L - Q
    fn = maurer_statistic(bits, L, Q)
    c = 0.7 - 0.8 / L + (4 + 32 / L) * K ** (-3 / L) / 15
    sigma = c * math.sqrt(_UNIVERSAL_VARIANCE[L] / K)
    return [float(erfc(abs(fn - _UNIVERSAL_EXPECTED[L]) / (math.sqrt(2) * sigma)))]


TESTS: dict[str, Callable[[np.ndarray], list[float]]] = {
    "frequency": frequency,
    "block_frequency": block_frequency,
    "runs": runs,
    "longest_run": longest_run,
    "matrix_rank": matrix_rank,
    "spectral": spectral,
    "cumulative_sums": cumulative_sums,
    "approximate_entropy": approximate_entropy,
    "serial": serial,
    "universal": universal,
}


# recommended minimum input lengths at the default parameters
MIN_BITS = {
    "frequency": 100,
    "block_frequency": 100,
    "runs": 100,
    "longest_run": 128,
    "matrix_rank": 38 * 32 * 32,
    "spectral": 1000,
    "cumulative_sums": 100,
    "approximate_entropy": 1 << 16,  # m=10 < floor(log2 n) - 5
    "serial": 1 << 19,  # m=16 < floor(log2 n) - 2
    "universal": _UNIVERSAL_L[-1][0],
}


def run_test(name: str, bits, alpha: float = DEFAULT_ALPHA) -> TestResult:
    if name not in TESTS:
        raise KeyError(f"unknown test {name!r}; choose from {sorted(TESTS)}")
    b = _bits(bits)
    try:
        _require(b.size, MIN_BITS[name], name)
        ps = TESTS[name](b)
    except InsufficientData as exc:
        return TestResult(name, [], SKIPPED, alpha, str(exc))
    status = PASS if min(ps) >= alpha else FAIL
    return TestResult(name, ps, status, alpha)


def run_battery(bits, alpha: float = DEFAULT_ALPHA) -> TestReport:
    b = _bits(bits)
    if b.size == 0:
        raise ValueError("cannot test an empty sequence")
    report = TestReport(alpha, int(b.size))
    for name in TESTS:
        report.results.append(run_test(name, b, alpha))
    return report


# ---------------------------------------------------------------- autocorrelation


@dataclass
class AutocorrResult:
    coefficients: np.ndarray
    mean: float
    std: float
    expected_std: float
    bit_length: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = [float(c) for c in self.coefficients]
        d["lags"] = list(range(1, len(self.coefficients) + 1))
        return d


def autocorrelation(bits, max_lag: int = 100) -> AutocorrResult:
    """Lag 1..max_lag autocorrelation of the +-1 mapped, mean-removed sequence.

    Each lag sum is divided by ``N`` times the (biased) lag-0 variance.
    """
    b = _bits(bits)
    n = b.size
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    if n < 10 * max_lag:
        raise ValueError(f"need at least {10 * max_lag} bits for max_lag={max_lag}, got {n}")
    x = 2.0 * b - 1.0
    x -= x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        raise ValueError("constant input: variance is zero, autocorrelation undefined")
    size = sp_fft.next_fast_len(n + max_lag, real=True)
    f = sp_fft.rfft(x, size)
    acov = sp_fft.irfft(f * np.conj(f), size)[1: max_lag + 1] / n
    coef = acov / var
    return AutocorrResult(coef, float(coef.mean()), float(coef.std()), 1.0 / math.sqrt(n), n)
