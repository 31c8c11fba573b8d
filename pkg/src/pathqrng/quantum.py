"""Single-photon path states, beam splitters and CHSH certification.

A photon split over ``m`` optical paths is a vector of ``m`` complex
amplitudes.  For the CHSH machinery the two paths of a dual-rail photon are
treated as two mode qubits restricted to the single-photon sector
``{|01>, |10>}``: path 0 carries the ``|01>`` amplitude and path 1 the
``|10>`` amplitude, so that ``[1/sqrt2, i/sqrt2]`` is exactly
``(|01> + i|10>)/sqrt2``.  Each side measures ``M(phi) = cos(phi) X + sin(phi) Y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize

NORM_TOL = 1e-12
SUM_TOL = 1e-10
TSIRELSON = 2.0 * math.sqrt(2.0)

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
# computational-basis index of the sector kets: path 0 -> |01>, path 1 -> |10>
_SECTOR = (1, 2)


@dataclass(frozen=True, eq=False)
class PathState:
    """Pure single-photon state over ``m >= 2`` paths."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size < 2:
            raise ValueError(f"a path state needs m >= 2 paths, got {amps.size}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"amplitudes are not normalized (sum |a|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def m(self) -> int:
        return self.amplitudes.size

    def __eq__(self, other):
        if not isinstance(other, PathState):
            return NotImplemented
        return self.m == other.m and bool(np.allclose(self.amplitudes, other.amplitudes, atol=NORM_TOL))


@dataclass(frozen=True, eq=False)
class DensityState:
    """Mixed single-photon state as an ``m x m`` density matrix."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] < 2:
            raise ValueError(f"density matrix must be square with m >= 2, got shape {rho.shape}")
        if not np.allclose(rho, rho.conj().T, atol=NORM_TOL, rtol=0):
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(rho)
        if abs(tr - 1.0) > NORM_TOL:
            raise ValueError(f"density matrix trace is {tr!r}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValueError("density matrix has a negative eigenvalue")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def m(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def from_pure(cls, state: PathState) -> "DensityState":
        a = state.amplitudes
        return cls(np.outer(a, a.conj()))


State = Union[PathState, DensityState]


@dataclass(frozen=True)
class BeamSplitterSetting:
    """``B(theta)`` acting on the ordered pair ``input_paths``."""

    theta: float
    input_paths: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi / 2 + 1e-15):
            raise ValueError(f"beam splitter angle must lie in [0, pi/2], got {self.theta}")
        p, q = self.input_paths
        if p == q:
            raise ValueError("beam splitter input paths must be distinct")
        if p < 0 or q < 0:
            raise ValueError("beam splitter path indices must be non-negative")
        object.__setattr__(self, "input_paths", (int(p), int(q)))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, 1j * s], [1j * s, c]])


@dataclass(frozen=True)
class MeasurementSettings:
    """Analyzer angles (radians) for the two mode qubits."""

    a: float
    a_prime: float
    b: float
    b_prime: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.a, self.a_prime, self.b, self.b_prime)):
            raise ValueError("measurement angles must be finite")


# settings that reach 2*sqrt(2) on the 50:50 state, where E(a, b) = sin(a - b)
OPTIMAL_SETTINGS = MeasurementSettings(0.0, math.pi / 2, -math.pi / 4, math.pi / 4)


@dataclass(frozen=True, eq=False)
class PolarizedPathState:
    """Path state tensored with a polarization qubit."""

    amplitudes_H: np.ndarray
    amplitudes_V: np.ndarray

    def __post_init__(self):
        h = np.array(self.amplitudes_H, dtype=complex).reshape(-1)
        v = np.array(self.amplitudes_V, dtype=complex).reshape(-1)
        if h.shape != v.shape:
            raise ValueError("H and V amplitude vectors must have the same length")
        norm = float(np.vdot(h, h).real + np.vdot(v, v).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"joint norm is {norm!r}, expected 1")
        h.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "amplitudes_H", h)
        object.__setattr__(self, "amplitudes_V", v)

    def probabilities(self) -> np.ndarray:
        """Outcome probabilities, shape ``(2, m)``: row 0 is H, row 1 is V."""
        return np.vstack([np.abs(self.amplitudes_H) ** 2, np.abs(self.amplitudes_V) ** 2])


def new_single_path_state(m: int, occupied: int) -> PathState:
    if m < 2:
        raise ValueError(f"a path state needs m >= 2 paths, got {m}")
    if not 0 <= occupied < m:
        raise IndexError(f"path index {occupied} out of range for m={m}")
    amps = np.zeros(m, dtype=complex)
    amps[occupied] = 1.0
    return PathState(amps)


def apply_beam_splitter(state: PathState, bs: BeamSplitterSetting) -> PathState:
    p, q = bs.input_paths
    if max(p, q) >= state.m:
        raise IndexError(f"beam splitter paths {bs.input_paths} out of range for m={state.m}")
    amps = state.amplitudes.copy()
    amps[[p, q]] = bs.matrix() @ amps[[p, q]]
    # re-normalize away rounding drift so chained splitters stay valid
    amps /= math.sqrt(float(np.vdot(amps, amps).real))
    return PathState(amps)


def two_qubit_commitment_state(theta: float) -> PathState:
    """Two-qubit state over ``|00>, |01>, |10>, |11>`` after the splitter tree."""
    if not 0.0 <= theta <= math.pi / 2 + 1e-15:
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")
    c, s = math.cos(theta), math.sin(theta)
    return PathState(np.array([c, 1j * s, 1j * s, c]) / math.sqrt(2.0))


def born_probabilities(state: State) -> np.ndarray:
    if isinstance(state, PathState):
        p = np.abs(state.amplitudes) ** 2
    else:
        p = np.clip(np.real(np.diag(state.rho)), 0.0, None)
    return p / p.sum()


def sample_path(state: State, randomness) -> int:
    """Inverse-CDF draw of a path index.

    ``randomness`` is either a float in [0, 1) or anything with a
    ``random()`` method returning one.
    """
    u = float(randomness) if isinstance(randomness, (float, int)) else float(randomness.random())
    cdf = np.cumsum(born_probabilities(state))
    return int(min(np.searchsorted(cdf, u, side="right"), cdf.size - 1))


def sample_paths(state: State, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized :func:`sample_path` for ``size`` independent draws."""
    cdf = np.cumsum(born_probabilities(state))
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, cdf.size - 1)


def visibility_from_counts(c1: int, c2: int) -> float:
    if c1 < 0 or c2 < 0:
        raise ValueError("counts must be non-negative")
    total = c1 + c2
    if total == 0:
        raise ValueError("visibility is undefined when both counts are zero")
    diff = abs(c1 - c2)
    return (total - diff) / (total + diff)


def depolarize(state: PathState, P: float) -> DensityState:
    """Mix ``state`` with the maximally mixed single-photon sector state."""
    if not 0.0 <= P <= 1.0:
        raise ValueError(f"mixing parameter must lie in [0, 1], got {P}")
    a = state.amplitudes
    rho = P * np.outer(a, a.conj()) + (1.0 - P) * np.eye(state.m) / state.m
    return DensityState(rho)


def _as_density(state: State) -> np.ndarray:
    if isinstance(state, PathState):
        a = state.amplitudes
        return np.outer(a, a.conj())
    return np.asarray(state.rho)


def _two_mode_rho(state: State) -> np.ndarray:
    """Embed a 2-path state into the 4-dimensional two-mode-qubit space."""
    if state.m != 2:
        raise ValueError(f"CHSH needs a two-path state, got m={state.m}")
    sector = _as_density(state)
    rho = np.zeros((4, 4), dtype=complex)
    rho[np.ix_(_SECTOR, _SECTOR)] = sector
    return rho


def correlation_matrix(state: State) -> np.ndarray:
    """Real 2x2 matrix ``T[i, j] = <s_i (x) s_j>`` with ``s = (X, Y)``."""
    rho = _two_mode_rho(state)
    paulis = (_X, _Y)
    return np.array([[np.trace(rho @ np.kron(si, sj)).real for sj in paulis] for si in paulis])


def correlator(state: State, phi_a: float, phi_b: float) -> float:
    """Expectation of ``M(phi_a) (x) M(phi_b)``."""
    t = correlation_matrix(state)
    na = np.array([math.cos(phi_a), math.sin(phi_a)])
    nb = np.array([math.cos(phi_b), math.sin(phi_b)])
    return float(na @ t @ nb)


def _chsh_from_t(t: np.ndarray, s: MeasurementSettings) -> float:
    def e(x, y):
        return math.cos(x) * (t[0, 0] * math.cos(y) + t[0, 1] * math.sin(y)) + math.sin(x) * (
            t[1, 0] * math.cos(y) + t[1, 1] * math.sin(y)
        )

    return e(s.a, s.b) - e(s.a, s.b_prime) + e(s.a_prime, s.b) + e(s.a_prime, s.b_prime)


def chsh_parameter(state: State, settings: MeasurementSettings) -> float:
    return float(_chsh_from_t(correlation_matrix(state), settings))


def max_chsh(state: State) -> tuple[float, MeasurementSettings]:
    """Maximize S over analyzer angles.

    For fixed ``(b, b')`` the best ``a`` and ``a'`` are closed form, so the
    1-degree grid runs over ``(b, b')`` only; the best grid point is then
    refined to 1e-4 rad.
    """
    t = correlation_matrix(state)
    grid = np.deg2rad(np.arange(360.0))
    nb = np.stack([np.cos(grid), np.sin(grid)])  # (2, G)
    tb = t @ nb  # (2, G): T n(b)
    diff = tb[:, :, None] - tb[:, None, :]
    summ = tb[:, :, None] + tb[:, None, :]
    score = np.hypot(diff[0], diff[1]) + np.hypot(summ[0], summ[1])
    i, j = np.unravel_index(int(np.argmax(score)), score.shape)

    def neg_s(x):
        b, bp = x
        vb = t @ np.array([math.cos(b), math.sin(b)])
        vbp = t @ np.array([math.cos(bp), math.sin(bp)])
        return -(np.hypot(*(vb - vbp)) + np.hypot(*(vb + vbp)))

    res = optimize.minimize(
        neg_s, x0=[grid[i], grid[j]], method="Nelder-Mead",
        options={"xatol": 1e-4, "fatol": 1e-12},
    )
    b, bp = (float(v) for v in res.x)
    if -res.fun < score[i, j]:
        b, bp = float(grid[i]), float(grid[j])
    vb = t @ np.array([math.cos(b), math.sin(b)])
    vbp = t @ np.array([math.cos(bp), math.sin(bp)])
    u, w = vb - vbp, vb + vbp
    a = math.atan2(u[1], u[0]) if np.hypot(*u) > 0 else 0.0
    ap = math.atan2(w[1], w[0]) if np.hypot(*w) > 0 else 0.0
    settings = MeasurementSettings(a, ap, b, bp)
    return float(_chsh_from_t(t, settings)), settings


def _projectors(phi: float) -> tuple[np.ndarray, np.ndarray]:
    plus = np.array([1.0, np.exp(1j * phi)]) / math.sqrt(2.0)
    minus = np.array([1.0, -np.exp(1j * phi)]) / math.sqrt(2.0)
    return np.outer(plus, plus.conj()), np.outer(minus, minus.conj())


def outcome_probabilities(state: State, phi_a: float, phi_b: float) -> np.ndarray:
    """Joint probabilities of ``(++, +-, -+, --)`` for the two analyzers."""
    rho = _two_mode_rho(state)
    pa, pb = _projectors(phi_a), _projectors(phi_b)
    probs = np.array([np.trace(rho @ np.kron(x, y)).real for x in pa for y in pb])
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def sample_chsh(state: State, settings: MeasurementSettings, rounds: int, rng: np.random.Generator) -> float:
    """Empirical S from ``rounds`` simulated measurement rounds per setting pair."""
    if rounds <= 0:
        raise ValueError("rounds must be positive")
    sign = np.array([1, -1, -1, 1])
    pairs = [(settings.a, settings.b, 1), (settings.a, settings.b_prime, -1),
             (settings.a_prime, settings.b, 1), (settings.a_prime, settings.b_prime, 1)]
    s = 0.0
    for x, y, coef in pairs:
        counts = rng.multinomial(rounds, outcome_probabilities(state, x, y))
        s += coef * float(sign @ counts) / rounds
    return s


def extend_with_polarization(state: PathState, h_weight: complex, v_weight: complex) -> PolarizedPathState:
    if abs(abs(h_weight) ** 2 + abs(v_weight) ** 2 - 1.0) > NORM_TOL:
        raise ValueError("polarization weights must satisfy |h|^2 + |v|^2 = 1")
    a = state.amplitudes
    return PolarizedPathState(h_weight * a, v_weight * a)
