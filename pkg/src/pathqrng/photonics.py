"""Monte Carlo of the source -> splitter tree -> detector -> time tagger chain.

Photons leave a Poisson source, are routed independently through the
beam-splitter network according to the Born rule, thinned by arm
transmission and detector efficiency, joined by dark counts and then
filtered by a non-paralyzable dead time before being quantized by the
time tagger.  Every stochastic stage draws from its own generator derived
from the run seed (see :func:`derive_rng`).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .bitstream import TimeTagStream
from .quantum import (
    BeamSplitterSetting,
    DensityState,
    PathState,
    apply_beam_splitter,
    born_probabilities,
    depolarize,
    new_single_path_state,
    sample_path,
    sample_paths,
)

FIFTY_FIFTY = math.pi / 4


class Coupling(str, enum.Enum):
    SMF = "SMF"
    MMF = "MMF"


# calibration knobs, not measured values
DEFAULT_COUPLING_EFFICIENCY = {Coupling.SMF: 0.25, Coupling.MMF: 0.8}
# puts the MMF single-detector curve near 28 Mcps at 30 mW
DEFAULT_RATE_COEFFICIENT = 4.7e6


class VisibilityModel(str, enum.Enum):
    DEPOLARIZING = "depolarizing"
    SPLITTING = "splitting"


@dataclass(frozen=True)
class SourceConfig:
    pump_power: float = 1.0  # mW
    rate_coefficient: float = DEFAULT_RATE_COEFFICIENT  # photons s^-1 mW^-1
    coupling: Coupling = Coupling.MMF
    coupling_efficiency: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "coupling", Coupling(self.coupling))
        if self.coupling_efficiency is None:
            object.__setattr__(self, "coupling_efficiency", DEFAULT_COUPLING_EFFICIENCY[self.coupling])
        if self.pump_power < 0:
            raise ValueError("pump power must be non-negative")
        if self.rate_coefficient <= 0:
            raise ValueError("rate coefficient must be positive")
        if not 0.0 <= self.coupling_efficiency <= 1.0:
            raise ValueError("coupling efficiency must lie in [0, 1]")

    @property
    def photon_rate(self) -> float:
        """Photons per second delivered into the fiber."""
        return self.rate_coefficient * self.pump_power * self.coupling_efficiency


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.65
    dead_time: float = 22.0  # ns
    dark_rate: float = 100.0  # counts/s
    timestamp_resolution: float = 4.0  # ps

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("detector efficiency must lie in [0, 1]")
        if self.dead_time < 0:
            raise ValueError("dead time must be non-negative")
        if self.dark_rate < 0:
            raise ValueError("dark rate must be non-negative")
        if self.timestamp_resolution <= 0:
            raise ValueError("timestamp resolution must be positive")


@dataclass(frozen=True)
class NetworkTopology:
    """Beam splitters applied in order to a photon entering ``input_path``.

    ``detector_map`` sends each leaf path to a detector channel.
    ``arm_transmission`` is the fraction of photons that survive coupling
    from the splitter outputs into the detectors.
    """

    m: int
    splitters: tuple[BeamSplitterSetting, ...]
    detector_map: dict[int, int]
    input_path: int = 0
    arm_transmission: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "splitters", tuple(self.splitters))
        object.__setattr__(self, "detector_map", {int(k): int(v) for k, v in self.detector_map.items()})
        if self.m < 2:
            raise ValueError("a network needs at least two paths")
        if not 0 <= self.input_path < self.m:
            raise ValueError("input path out of range")
        if not self.splitters:
            raise ValueError("a network needs at least one beam splitter")
        reached = {self.input_path}
        for bs in self.splitters:
            p, q = bs.input_paths
            if max(p, q) >= self.m:
                raise ValueError(f"splitter paths {bs.input_paths} out of range for m={self.m}")
            if p not in reached and q not in reached:
                raise ValueError(f"splitter on {bs.input_paths} is not fed by any earlier stage")
            reached |= {p, q}
        if set(self.detector_map) != set(range(self.m)):
            raise ValueError("every leaf path must map to exactly one detector channel")
        channels = list(self.detector_map.values())
        if len(set(channels)) != len(channels) or min(channels) < 0:
            raise ValueError("detector channels must be distinct and non-negative")
        if not 0.0 <= self.arm_transmission <= 1.0:
            raise ValueError("arm transmission must lie in [0, 1]")

    @property
    def channel_count(self) -> int:
        return max(self.detector_map.values()) + 1

    def channel_of_leaf(self) -> np.ndarray:
        return np.array([self.detector_map[i] for i in range(self.m)], dtype=np.uint8)

    def with_first_splitter(self, theta: float) -> "NetworkTopology":
        first = replace(self.splitters[0], theta=theta)
        return replace(self, splitters=(first,) + self.splitters[1:])


def one_bit_network(theta: float = FIFTY_FIFTY, arm_transmission: float = 1.0) -> NetworkTopology:
    """A single splitter feeding two detectors (channel 0 -> bit 0)."""
    return NetworkTopology(2, (BeamSplitterSetting(theta, (0, 1)),), {0: 0, 1: 1},
                           arm_transmission=arm_transmission)


def two_bit_network(theta1: float = FIFTY_FIFTY, theta2: float = FIFTY_FIFTY, theta3: float = FIFTY_FIFTY,
                    arm_transmission: float = 1.0) -> NetworkTopology:
    """First splitter feeding a pair of second-stage splitters.

    The first splitter sends the photon to path 0 or 3; the second stage
    splits 0 -> (0, 1) and 3 -> (3, 2).  Leaf ``k`` goes to channel ``k``, so
    with the two-bit commitment the first bit names the second-stage splitter
    and the second bit its output.  Path probabilities are
    ``(c2^2 p, s2^2 p, s3^2 q, c3^2 q)`` with ``p, q`` the first-stage split.
    """
    splitters = (
        BeamSplitterSetting(theta1, (0, 3)),
        BeamSplitterSetting(theta2, (0, 1)),
        BeamSplitterSetting(theta3, (3, 2)),
    )
    return NetworkTopology(4, splitters, {0: 0, 1: 1, 2: 2, 3: 3}, arm_transmission=arm_transmission)


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    detectors: tuple[DetectorConfig, ...] | DetectorConfig = field(default_factory=DetectorConfig)
    topology: NetworkTopology = field(default_factory=two_bit_network)
    duration: float = 1.0  # s
    visibility_P: float = 1.0
    visibility_model: VisibilityModel = VisibilityModel.DEPOLARIZING
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "visibility_model", VisibilityModel(self.visibility_model))
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0.0 <= self.visibility_P <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility_P}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        dets = self.detectors
        if isinstance(dets, DetectorConfig):
            dets = (dets,) * self.topology.channel_count
        dets = tuple(dets)
        if len(dets) != self.topology.channel_count:
            raise ValueError(f"need {self.topology.channel_count} detector configs, got {len(dets)}")
        object.__setattr__(self, "detectors", dets)


def derive_rng(seed: int, stage: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one stage/channel of a run.

    The sub-seed is the first 8 bytes of BLAKE2b over ``"seed:stage:index"``.
    """
    digest = hashlib.blake2b(f"{seed}:{stage}:{index}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def splitting_angle(visibility: float) -> float:
    """First-splitter angle whose count visibility (two-detector formula) is ``visibility``."""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    return math.acos(math.sqrt(1.0 / (1.0 + visibility)))


def network_state(topology: NetworkTopology) -> PathState:
    state = new_single_path_state(topology.m, topology.input_path)
    for bs in topology.splitters:
        state = apply_beam_splitter(state, bs)
    return state


def effective_topology(topology: NetworkTopology, visibility: float, model: VisibilityModel) -> NetworkTopology:
    if VisibilityModel(model) is VisibilityModel.SPLITTING:
        return topology.with_first_splitter(splitting_angle(visibility))
    return topology


def output_state(topology: NetworkTopology, visibility: float = 1.0,
                 model: VisibilityModel = VisibilityModel.DEPOLARIZING) -> PathState | DensityState:
    """State reaching the detectors.

    Depolarizing model: mix with the maximally mixed sector state.
    Splitting model: stay pure but unbalance the first splitter.
    """
    topo = effective_topology(topology, visibility, model)
    state = network_state(topo)
    if VisibilityModel(model) is VisibilityModel.DEPOLARIZING and visibility < 1.0:
        return depolarize(state, visibility)
    return state


def leaf_probabilities(topology: NetworkTopology, visibility: float = 1.0,
                       model: VisibilityModel = VisibilityModel.DEPOLARIZING) -> np.ndarray:
    return born_probabilities(output_state(topology, visibility, model))


def route_photon(topology: NetworkTopology, state: PathState | DensityState, rng) -> int:
    if state.m != topology.m:
        raise ValueError(f"state has {state.m} paths but the network has {topology.m}")
    return sample_path(state, rng)


def route_photons(topology: NetworkTopology, state: PathState | DensityState, rng: np.random.Generator,
                  size: int) -> np.ndarray:
    if state.m != topology.m:
        raise ValueError(f"state has {state.m} paths but the network has {topology.m}")
    return sample_paths(state, rng, size)


def generate_arrivals(rate: float, duration: float, rng: np.random.Generator, start: float = 0.0) -> np.ndarray:
    """Poisson arrival times (seconds) on ``[start, start + duration)``."""
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if rate == 0 or duration <= 0:
        return np.empty(0)
    expected = rate * duration
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    parts = []
    t = start
    end = start + duration
    while True:
        times = t + np.cumsum(rng.exponential(1.0 / rate, chunk))
        if times[-1] >= end:
            parts.append(times[: np.searchsorted(times, end, side="left")])
            break
        parts.append(times)
        t = times[-1]
        chunk = max(1024, chunk // 4)
    return np.concatenate(parts)


@njit(cache=True)
def _nonparalyzable(times, tau, last):
    keep = np.zeros(times.size, dtype=np.bool_)
    for i in range(times.size):
        if times[i] - last >= tau:
            keep[i] = True
            last = times[i]
    return keep, last


def _dead_time_filter(times: np.ndarray, tau: float, last: float = -np.inf) -> tuple[np.ndarray, float]:
    if tau <= 0:
        return np.ones(times.size, dtype=bool), (times[-1] if times.size else last)
    return _nonparalyzable(np.ascontiguousarray(times, dtype=np.float64), float(tau), float(last))


def detect_times(arrivals: np.ndarray, config: DetectorConfig, rng: np.random.Generator,
                 duration: float | None = None, start: float = 0.0, last: float = -np.inf):
    """Unquantized detection times plus the last accepted time (for chaining)."""
    arrivals = np.asarray(arrivals, dtype=np.float64)
    if arrivals.size > 1 and np.any(np.diff(arrivals) < 0):
        raise ValueError("arrivals must be sorted")
    if duration is None:
        duration = (arrivals[-1] - start) if arrivals.size else 0.0
    kept = arrivals[rng.random(arrivals.size) < config.efficiency]
    dark = generate_arrivals(config.dark_rate, duration, rng, start)
    if dark.size:
        kept = np.sort(np.concatenate([kept, dark]), kind="mergesort")
    mask, last = _dead_time_filter(kept, config.dead_time * 1e-9, last)
    return kept[mask], last


def quantize(times: np.ndarray, resolution_ps: float) -> np.ndarray:
    # the small slack keeps exact tick multiples (30 ns -> 7500) from flooring down
    return np.floor(times * (1e12 / resolution_ps) + 1e-6).astype(np.int64)


def detect(arrivals: np.ndarray, config: DetectorConfig, rng: np.random.Generator,
           duration: float | None = None) -> np.ndarray:
    """Detected timestamps, in units of ``config.timestamp_resolution``.

    Efficiency thinning, then dark counts merged in, then the
    non-paralyzable dead time (measured from the last accepted click),
    then quantization.  ``duration`` bounds the dark-count window and
    defaults to the last arrival time.
    """
    times, _ = detect_times(arrivals, config, rng, duration)
    return quantize(times, config.timestamp_resolution)


def count_detections(rate: float, duration: float, config: DetectorConfig, rng: np.random.Generator,
                     chunk_events: int = 2_000_000) -> int:
    """Number of clicks for a Poisson stream, generated in bounded-memory chunks."""
    if rate <= 0:
        arrivals = np.empty(0)
        return int(detect_times(arrivals, config, rng, duration)[0].size)
    step = max(chunk_events / rate, 1e-9)
    total, t, last = 0, 0.0, -np.inf
    while t < duration:
        span = min(step, duration - t)
        arrivals = generate_arrivals(rate, span, rng, start=t)
        times, last = detect_times(arrivals, config, rng, span, start=t, last=last)
        total += times.size
        t += span
    return total


def nonparalyzable_rate(incident: float, efficiency: float, dead_time_s: float) -> float:
    """Expected click rate ``eta R / (1 + eta R tau)``."""
    r = efficiency * incident
    return r / (1.0 + r * dead_time_s)


def simulate_experiment(config: RunConfig) -> TimeTagStream:
    """Merged, time-sorted clicks of every detector for one run."""
    topo = effective_topology(config.topology, config.visibility_P, config.visibility_model)
    state = output_state(config.topology, config.visibility_P, config.visibility_model)
    seed = config.rng_seed

    photons = generate_arrivals(config.source.photon_rate, config.duration, derive_rng(seed, "source"))
    route_rng = derive_rng(seed, "route")
    leaves = route_photons(topo, state, route_rng, photons.size)
    if topo.arm_transmission < 1.0:
        survive = route_rng.random(photons.size) < topo.arm_transmission
        photons, leaves = photons[survive], leaves[survive]
    leaf_channel = topo.channel_of_leaf()
    channels = leaf_channel[leaves]

    resolutions = {d.timestamp_resolution for d in config.detectors}
    if len(resolutions) != 1:
        raise ValueError("all detectors must share one time-tagger resolution")
    (resolution,) = resolutions

    chan_parts, ts_parts = [], []
    for ch in range(topo.channel_count):
        arrivals = photons[channels == ch]
        ts = detect(arrivals, config.detectors[ch], derive_rng(seed, "detector", ch), config.duration)
        ts_parts.append(ts)
        chan_parts.append(np.full(ts.size, ch, dtype=np.uint8))
    ts = np.concatenate(ts_parts) if ts_parts else np.empty(0, np.int64)
    ch = np.concatenate(chan_parts) if chan_parts else np.empty(0, np.uint8)
    order = np.lexsort((ch, ts))
    return TimeTagStream(ch[order], ts[order], topo.channel_count, resolution)


AGGREGATIONS = (("single", 1), ("two", 2), ("four", 4))


def saturation_curve(template: RunConfig, powers: Sequence[float] | Iterable[float],
                     duration: float | None = None, chunk_events: int = 2_000_000) -> list[dict]:
    """Detected counts/s and bits/s against pump power for 1, 2 and 4 detectors.

    The single detector sees the whole fiber output.  Two and four
    detectors sit behind the one- and two-bit networks; a thinned Poisson
    stream is again Poisson, so each detector gets an independent stream at
    its leaf rate.  Bits per click are ``log2(detector count)``.
    """
    powers = [float(p) for p in powers]
    if not powers:
        raise ValueError("power grid is empty")
    duration = template.duration if duration is None else duration
    det = template.detectors[0]
    arm = template.topology.arm_transmission
    P, model = template.visibility_P, template.visibility_model
    networks = {
        "two": leaf_probabilities(one_bit_network(arm_transmission=arm), P, model),
        "four": leaf_probabilities(two_bit_network(arm_transmission=arm), P, model),
    }
    rows = []
    for k, power in enumerate(powers):
        rate = replace(template.source, pump_power=power).photon_rate
        row = {"power_mw": power}
        for name, ndet in AGGREGATIONS:
            if ndet == 1:
                rates = [rate]
            else:
                rates = [rate * arm * p for p in networks[name]]
            counts = sum(
                count_detections(r, duration, det, derive_rng(template.rng_seed, f"curve-{name}-{k}", i),
                                 chunk_events)
                for i, r in enumerate(rates)
            )
            cps = counts / duration
            row[f"{name}_cps"] = cps
            row[f"{name}_bps"] = cps * math.log2(ndet)
        rows.append(row)
    return rows
