"""Experiment configuration: a YAML file validated against a strict schema.

Unknown keys anywhere in the document are rejected, and every value is
checked before any computation starts.
"""

import hashlib
import json
import os
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleConfig(_Strict):
    kind: Literal["linear", "cosine"] = "linear"
    T: int = Field(1000, ge=1)
    beta_min: float = Field(1e-4, gt=0, lt=1)
    beta_max: float = Field(0.02, gt=0, lt=1)

    @model_validator(mode="after")
    def _order(self):
        if self.beta_min > self.beta_max:
            raise ValueError("beta_min must not exceed beta_max")
        return self


class ModelConfig(_Strict):
    channels: int = Field(16, ge=1)
    depth: int = Field(4, ge=2, le=6)
    temb_dim: int = Field(16, ge=2)
    activation: Literal["silu", "tanh"] = "silu"
    init_seed: int = 1


class TrainConfig(_Strict):
    iterations: int = Field(2000, ge=0)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(0.05, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    max_grad_norm: Optional[float] = Field(1.0, gt=0)
    crop: int = Field(32, ge=0)
    finetune_iterations: int = Field(300, ge=0)
    finetune_lr: float = Field(0.01, ge=0)
    # training-time auxiliary losses only see steps t <= aux_t_max
    aux_t_max: int = Field(200, ge=1)


class PolicyConfig(_Strict):
    t_start: Optional[int] = Field(None, ge=1)
    t_end: Optional[int] = Field(None, ge=1)
    clip: Optional[float] = Field(1.0, gt=0)
    jacobian_mode: Literal["through_denoiser", "x0_detached"] = "through_denoiser"


class SamplerSection(_Strict):
    num_steps: int = Field(50, ge=1)
    eta: float = Field(0.0, ge=0, le=1)
    init: Literal["pure_noise", "lr_plus_noise"] = "lr_plus_noise"
    # first reverse step; None starts from T
    start_t: Optional[int] = Field(None, ge=1)


class GuidanceConfig(_Strict):
    type: Literal["visual", "perceptual", "data_fidelity"]
    rho: float = Field(ge=0)
    injection: Literal["grad_in_noise", "loss_in_training"] = "grad_in_noise"
    decay: bool = False
    policy: Optional[PolicyConfig] = None


class DegradationConfig(_Strict):
    scale: int = Field(4, ge=1)
    kernel_size: int = Field(5, ge=1)
    kernel_std: float = Field(1.0, gt=0)
    noise_std: float = Field(0.0, ge=0)


class DatasetConfig(_Strict):
    source: Literal["synthetic", "directory"] = "synthetic"
    n_train: int = Field(32, ge=1)
    n_test: int = Field(16, ge=1)
    size: int = Field(64, ge=16)
    train_dir: Optional[str] = None
    test_dir: Optional[str] = None

    @model_validator(mode="after")
    def _dirs(self):
        if self.source == "directory":
            for name in ("train_dir", "test_dir"):
                path = getattr(self, name)
                if path is None:
                    raise ValueError(f"dataset.{name} is required for source 'directory'")
                if not os.path.isdir(path):
                    raise ValueError(f"dataset.{name} {path!r} is not a directory")
        return self


class PerceptualConfig(_Strict):
    extractor_seed: int = 0
    channels: Tuple[int, ...] = (8, 16, 16)
    tap: Optional[int] = None
    weights_file: Optional[str] = None
    classes: int = Field(4, ge=1)
    temperature: float = Field(0.05, gt=0)
    feature_weight: float = Field(1.0, ge=0)
    mask_weight: float = Field(1.0, ge=0)


class SpectralConfig(_Strict):
    eps_std: float = Field(1e-8, gt=0)
    eps_log: float = Field(0.0, ge=0)


class ExperimentConfig(_Strict):
    seed: int = 0
    output_dir: str = "runs/default"
    schedule: ScheduleConfig = ScheduleConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    sampler: SamplerSection = SamplerSection()
    policy: PolicyConfig = PolicyConfig()
    guidance: List[GuidanceConfig] = []
    degradation: DegradationConfig = DegradationConfig()
    dataset: DatasetConfig = DatasetConfig()
    perceptual: PerceptualConfig = PerceptualConfig()
    spectral: SpectralConfig = SpectralConfig()

    @field_validator("guidance")
    @classmethod
    def _unique_types(cls, v):
        types = [g.type for g in v]
        if len(types) != len(set(types)):
            raise ValueError("each guidance type may appear at most once")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        top = self.sampler.start_t or self.schedule.T
        if top > self.schedule.T:
            raise ValueError("sampler.start_t exceeds schedule.T")
        if self.sampler.num_steps > top:
            raise ValueError("sampler.num_steps exceeds the first reverse step")
        if self.dataset.source == "synthetic" and self.dataset.size % self.degradation.scale:
            raise ValueError("dataset.size must be divisible by degradation.scale")
        return self

    def with_overrides(self, seed=None, output_dir=None):
        upd = {}
        if seed is not None:
            upd["seed"] = int(seed)
        if output_dir is not None:
            upd["output_dir"] = str(output_dir)
        return self.model_copy(update=upd) if upd else self

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_config(data):
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(data)
