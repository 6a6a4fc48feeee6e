"""Experiment configuration files.

A config is a YAML document::

    schema_version: 1
    target:
      kind: gaussian          # gaussian | multimode | mixture | bayes_linreg
      mean: [0.0]
      cov: [[1.0]]
      split_count: 1
    sampler:
      kind: SGLD              # SGLD | SVGD | SPOS | SAGA-POS | SVRG-POS | SVRG-POS+
      step_size: 0.01
      total_steps: 1000
      seed: 0
    kernel:
      bandwidth: null         # null selects the median heuristic
    particles: 1
    init: {mean: 0.0, scale: 1.0}
    outputs:
      trace_path: trace.csv
      summary_path: summary.json
      snapshot_every: 1

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import targets
from .kernel import KernelConfig
from .samplers import Kind, SamplerConfig

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianSpec(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    mean: List[float] = [0.0]
    cov: List[List[float]] = [[1.0]]
    split_count: int = Field(1, ge=1)


class MultimodeSpec(_Strict):
    kind: Literal["multimode"] = "multimode"
    coefficients: Optional[List[float]] = None

    @field_validator("coefficients")
    @classmethod
    def _ten(cls, v):
        if v is not None and len(v) != 10:
            raise ValueError("expected exactly 10 coefficients")
        return v


class MixtureComponent(_Strict):
    weight: float = Field(gt=0)
    mean: float
    std: float = Field(gt=0)


class MixtureSpec(_Strict):
    kind: Literal["mixture"] = "mixture"
    components: List[MixtureComponent] = Field(min_length=1)


class BayesLinRegSpec(_Strict):
    kind: Literal["bayes_linreg"] = "bayes_linreg"
    csv_path: str
    noise_std: float = Field(1.0, gt=0)
    prior_std: float = Field(1.0, gt=0)


TargetSpec = Annotated[
    Union[GaussianSpec, MultimodeSpec, MixtureSpec, BayesLinRegSpec], Field(discriminator="kind")
]


class SamplerSpec(_Strict):
    kind: Kind = Kind.SPOS
    step_size: float = Field(1e-2, gt=0)
    step_decay: float = Field(0.0, ge=0)
    beta: float = Field(1.0, gt=0)
    batch_size: int = Field(1, ge=1)
    total_steps: int = Field(1000, ge=0)
    seed: int = Field(0, ge=0, lt=1 << 64)
    epoch_length: int = Field(10, ge=1)
    snapshot_batch: int = Field(1, ge=1)
    svrg_option: Literal["I", "II"] = "II"
    noise_scale: float = Field(1.0, ge=0, le=1)
    shared_batch: bool = False


class KernelSpec(_Strict):
    bandwidth: Optional[float] = Field(None, gt=0)


class InitSpec(_Strict):
    mean: Union[float, List[float]] = 0.0
    scale: float = Field(1.0, ge=0)


class OutputSpec(_Strict):
    trace_path: str = "trace.csv"
    summary_path: str = "summary.json"
    snapshot_every: int = Field(1, ge=1)


class DiagnosticsSpec(_Strict):
    metrics_every: Optional[int] = Field(None, ge=1)
    w1_repeats: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    target: TargetSpec
    sampler: SamplerSpec = SamplerSpec()
    kernel: KernelSpec = KernelSpec()
    particles: int = Field(1, ge=1)
    init: InitSpec = InitSpec()
    outputs: OutputSpec = OutputSpec()
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()

    @model_validator(mode="after")
    def _init_dim(self):
        if isinstance(self.init.mean, list) and isinstance(self.target, GaussianSpec):
            if len(self.init.mean) != len(self.target.mean):
                raise ValueError("init.mean length must match target.mean")
        return self

    # -- builders ----------------------------------------------------------

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(**self.sampler.model_dump())

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.kernel.bandwidth)

    def build_model(self, base_dir: Path = Path(".")) -> targets.PotentialModel:
        t = self.target
        if isinstance(t, GaussianSpec):
            return targets.make_gaussian(np.array(t.mean), np.array(t.cov), t.split_count)
        if isinstance(t, MultimodeSpec):
            params = targets.MultimodeParams() if t.coefficients is None else targets.MultimodeParams(tuple(t.coefficients))
            return targets.MultimodeTarget(params)
        if isinstance(t, MixtureSpec):
            return targets.MixtureTarget(
                [c.weight for c in t.components], [c.mean for c in t.components], [c.std for c in t.components]
            )
        data = targets.load_regression_csv(resolve(base_dir, t.csv_path), t.noise_std, t.prior_std)
        return targets.make_bayes_linreg(data)


def resolve(base_dir: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(base_dir) / p


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML text; raises ``yaml.YAMLError`` or ``pydantic.ValidationError``."""
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("config must be a mapping at top level")
    return ExperimentConfig.model_validate(data)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")
