"""Pipeline configuration file (TOML or JSON), validated before any run."""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import photonics
from .bitstream import CommitmentMap
from .extractors import EntropyFormula, ExtractorConfig, SizingMode


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SourceSection(_Section):
    pump_power: float = Field(1.0, ge=0, description="mW")
    rate_coefficient: float = Field(photonics.DEFAULT_RATE_COEFFICIENT, gt=0, description="photons/s/mW")
    coupling: Literal["SMF", "MMF"] = "MMF"
    coupling_efficiency: Optional[float] = Field(None, ge=0, le=1)


class DetectorSection(_Section):
    efficiency: float = Field(0.65, ge=0, le=1)
    dead_time_ns: float = Field(22.0, ge=0)
    dark_rate: float = Field(100.0, ge=0, description="counts/s")
    resolution_ps: float = Field(4.0, gt=0)


class TopologySection(_Section):
    kind: Literal["two_bit", "one_bit"] = "two_bit"
    bs1_theta: float = Field(math.pi / 4, ge=0, le=math.pi / 2)
    bs2_theta: float = Field(math.pi / 4, ge=0, le=math.pi / 2)
    bs3_theta: float = Field(math.pi / 4, ge=0, le=math.pi / 2)
    arm_transmission: float = Field(1.0, ge=0, le=1)


class RunSection(_Section):
    duration: float = Field(1.0, gt=0, description="seconds")
    visibility: float = Field(1.0, ge=0, le=1)
    visibility_model: Literal["depolarizing", "splitting"] = "depolarizing"


class CommitmentSection(_Section):
    width: Literal["one", "two"] = "two"
    window_ps: float = Field(0.0, ge=0)


class ExtractorSection(_Section):
    method: Literal["xor", "toeplitz"] = "toeplitz"
    mode: Literal["lhl", "paper"] = "lhl"
    n: int = Field(256, ge=2)
    epsilon: float = Field(2.0**-50, gt=0, lt=1)
    entropy_formula: Literal["standard", "paper"] = "standard"
    key_file: Optional[str] = None


class TestsSection(_Section):
    alpha: float = Field(0.01, gt=0, lt=1)
    max_lag: int = Field(100, ge=1)


class SeedsSection(_Section):
    seed: int = Field(0, ge=0, lt=2**64)


class OutputSection(_Section):
    directory: str = "."
    tags: str = "tags.pttg"
    raw_bits: str = "raw.qbit"
    extracted_bits: str = "extracted.qbit"
    report: str = "report.json"


class PipelineConfig(_Section):
    source: SourceSection = SourceSection()
    detectors: DetectorSection = DetectorSection()
    topology: TopologySection = TopologySection()
    run: RunSection = RunSection()
    commitment: CommitmentSection = CommitmentSection()
    extractor: ExtractorSection = ExtractorSection()
    tests: TestsSection = TestsSection()
    seeds: SeedsSection = SeedsSection()
    output: OutputSection = OutputSection()

    def network(self) -> photonics.NetworkTopology:
        t = self.topology
        if t.kind == "one_bit":
            return photonics.one_bit_network(t.bs1_theta, t.arm_transmission)
        return photonics.two_bit_network(t.bs1_theta, t.bs2_theta, t.bs3_theta, t.arm_transmission)

    def run_config(self) -> photonics.RunConfig:
        s, d = self.source, self.detectors
        return photonics.RunConfig(
            source=photonics.SourceConfig(s.pump_power, s.rate_coefficient, s.coupling, s.coupling_efficiency),
            detectors=photonics.DetectorConfig(d.efficiency, d.dead_time_ns, d.dark_rate, d.resolution_ps),
            topology=self.network(),
            duration=self.run.duration,
            visibility_P=self.run.visibility,
            visibility_model=self.run.visibility_model,
            rng_seed=self.seeds.seed,
        )

    def commitment_map(self) -> CommitmentMap:
        return CommitmentMap.one_bit() if self.commitment.width == "one" else CommitmentMap.two_bit()

    def extractor_config(self) -> ExtractorConfig:
        e = self.extractor
        return ExtractorConfig(e.n, e.epsilon, SizingMode(e.mode), EntropyFormula(e.entropy_formula))


def load_config(path: str | Path | None) -> PipelineConfig:
    """Parse and validate a config file; ``None`` gives the defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = tomllib.loads(text)
    return PipelineConfig.model_validate(data)
