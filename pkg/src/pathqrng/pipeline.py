"""End-to-end orchestration: simulate, commit bits, extract, test, certify."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import photonics
from .bitstream import BitBuffer, CommitmentMap, TimeTagStream, assign_bits, write_bits, write_timetags
from .config import PipelineConfig
from .extractors import (
    ExtractorConfig,
    ToeplitzSeed,
    min_entropy,
    output_length,
    toeplitz_stream,
    xor_extract,
)
from .quantum import (
    BeamSplitterSetting,
    MeasurementSettings,
    apply_beam_splitter,
    depolarize,
    max_chsh,
    new_single_path_state,
    visibility_from_counts,
)
from .stats import run_battery

QUANTUM_CERTIFIED = "QUANTUM_CERTIFIED"
UNCERTIFIED = "UNCERTIFIED"


@dataclass
class CertificationReport:
    s_max: float | None
    settings: MeasurementSettings | None
    visibility_eq8: float | None
    depolarization_P: float | None
    min_entropy: float | None

    @property
    def verdict(self) -> str:
        return QUANTUM_CERTIFIED if self.s_max is not None and self.s_max > 2.0 else UNCERTIFIED

    def to_dict(self) -> dict:
        s = self.settings
        return {
            "S_max": self.s_max,
            "settings": None if s is None else {"a": s.a, "a_prime": s.a_prime, "b": s.b, "b_prime": s.b_prime},
            "visibility_eq8": self.visibility_eq8,
            "depolarization_P": self.depolarization_P,
            "min_entropy": self.min_entropy,
            "verdict": self.verdict,
        }


def first_stage_counts(stream: TimeTagStream) -> tuple[int, int]:
    """Clicks behind each output of the first splitter."""
    c = stream.counts()
    if stream.channel_count == 2:
        return int(c[0]), int(c[1])
    if stream.channel_count == 4:
        return int(c[0] + c[1]), int(c[2] + c[3])
    raise ValueError(f"cannot group {stream.channel_count} channels into two first-stage outputs")


def first_stage_state(run: photonics.RunConfig):
    """Two-path state after the first splitter, with the run's visibility applied."""
    topo = photonics.effective_topology(run.topology, run.visibility_P, run.visibility_model)
    theta = topo.splitters[0].theta
    state = apply_beam_splitter(new_single_path_state(2, 0), BeamSplitterSetting(theta, (0, 1)))
    if run.visibility_model is photonics.VisibilityModel.DEPOLARIZING and run.visibility_P < 1.0:
        return depolarize(state, run.visibility_P)
    return state


def _stream_entropy(stream: TimeTagStream, mapping: CommitmentMap) -> float | None:
    bits = assign_bits(stream, mapping)
    if bits.bit_length < 100:
        return None
    return min_entropy(bits).h_per_bit


def certify_simulated(cfg: PipelineConfig) -> CertificationReport:
    run = cfg.run_config()
    s_max, settings = max_chsh(first_stage_state(run))
    stream = photonics.simulate_experiment(run)
    c1, c2 = first_stage_counts(stream)
    vis = visibility_from_counts(c1, c2) if c1 + c2 else None
    dep = run.visibility_P if run.visibility_model is photonics.VisibilityModel.DEPOLARIZING else None
    return CertificationReport(s_max, settings, vis, dep, _stream_entropy(stream, cfg.commitment_map()))


def certify_stream(stream: TimeTagStream, mapping: CommitmentMap | None = None) -> CertificationReport:
    """Ingest mode: time tags carry no analyzer sweep, so S is not reported."""
    if mapping is None:
        mapping = CommitmentMap.one_bit() if stream.channel_count == 2 else CommitmentMap.two_bit()
    c1, c2 = first_stage_counts(stream)
    vis = visibility_from_counts(c1, c2) if c1 + c2 else None
    return CertificationReport(None, None, vis, None, _stream_entropy(stream, mapping))


def certify_counts(c1: int, c2: int) -> CertificationReport:
    return CertificationReport(None, None, visibility_from_counts(c1, c2), None, None)


def visibility_sweep(grid: Sequence[float]) -> list[dict]:
    """Maximal S against depolarizing visibility for the 50:50 state."""
    grid = [float(p) for p in grid]
    if not grid:
        raise ValueError("visibility grid is empty")
    base = apply_beam_splitter(new_single_path_state(2, 0), BeamSplitterSetting(math.pi / 4))
    rows = []
    for p in grid:
        s, _ = max_chsh(depolarize(base, p))
        rows.append({"visibility_P": p, "S_max": s})
    return rows


def fit_slope(rows: list[dict], x: str = "visibility_P", y: str = "S_max") -> tuple[float, float]:
    """Least-squares ``(slope, intercept)``."""
    xs = np.array([r[x] for r in rows])
    ys = np.array([r[y] for r in rows])
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


def power_sweep(cfg: PipelineConfig, grid: Sequence[float], duration: float | None = None) -> list[dict]:
    return photonics.saturation_curve(cfg.run_config(), grid, duration)


def extract(bits: BitBuffer, method: str, config: ExtractorConfig = ExtractorConfig(),
            seed: ToeplitzSeed | None = None, workers: int = 1) -> tuple[BitBuffer, dict]:
    """Run one extractor and describe the sizing."""
    summary = {"method": method, "input_bits": bits.bit_length}
    if method == "xor":
        out = xor_extract(bits)
    elif method == "toeplitz":
        if seed is None:
            raise ValueError("toeplitz extraction needs a master key")
        est = min_entropy(bits, 1, config.entropy_formula)
        h = min(est.h_per_bit, 1.0)
        m = output_length(config, h)
        summary.update(mode=config.sizing_mode.value, n=config.n, epsilon=config.epsilon_hash,
                       p_g=est.p_g, h_per_bit=est.h_per_bit, m=m)
        out = toeplitz_stream(bits, seed, config, m=m, workers=workers)
    else:
        raise ValueError(f"unknown extraction method {method!r}")
    summary["output_bits"] = out.bit_length
    loss = 1.0 - out.bit_length / bits.bit_length if bits.bit_length else 0.0
    summary["loss"] = f"{100.0 * loss:.2f}%"
    return out, summary


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_pipeline(cfg: PipelineConfig, outdir: str | Path, seed: ToeplitzSeed | None = None) -> dict:
    """simulate -> bits -> extract -> test, writing every artifact under ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = cfg.output
    stream = photonics.simulate_experiment(cfg.run_config())
    write_timetags(outdir / names.tags, stream)
    raw = assign_bits(stream, cfg.commitment_map(), cfg.commitment.window_ps)
    write_bits(outdir / names.raw_bits, raw)
    if seed is None and cfg.extractor.method == "toeplitz":
        seed = ToeplitzSeed.generate(photonics.derive_rng(cfg.seeds.seed, "toeplitz-key"))
    out, summary = extract(raw, cfg.extractor.method, cfg.extractor_config(), seed)
    write_bits(outdir / names.extracted_bits, out)
    report = {
        "extraction": summary,
        "raw_tests": run_battery(raw, cfg.tests.alpha).to_dict(),
        "extracted_tests": run_battery(out, cfg.tests.alpha).to_dict(),
    }
    (outdir / names.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    artifacts = [names.tags, names.raw_bits, names.extracted_bits, names.report]
    return {name: sha256_file(outdir / name) for name in artifacts}

