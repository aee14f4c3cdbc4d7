"""TOML configuration with schema validation, plus toy backbone factories.

Every CLI verb and the service accept ``--config FILE``; unknown keys are
rejected at startup. Model-provider endpoints and the optional API key
come from environment variables only, never from the config file.
"""

import hashlib
import json
import os
import sys
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

API_KEY_ENV = "MMI_API_KEY"


class PipelineSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image_size: int = 512
    n_max: int = Field(5, ge=1)
    min_area_frac: float = Field(0.01, ge=0.0, le=1.0)
    max_area_frac: float = Field(0.65, ge=0.0, le=1.0)
    total_area_cap: float = Field(0.65, ge=0.0, le=1.0)
    caption_token_cap: int = Field(40, ge=1)
    palette: list[str] = ["red", "green", "blue", "yellow", "purple"]


class PromptGenSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    d_model: int = 32
    d_hidden: int = 64
    image_grid: int = 4
    max_len: int = 192
    lora_rank: int = 16
    lora_alpha: int = 16
    lora_dropout: float = 0.05
    lr: float = 2e-4
    warmup_fraction: float = 0.01
    grad_clip: float = 0.5
    batch_size: int = 32
    epochs: int = 1
    loss_reduction: str = "mean"
    temperature: float = 0.5
    num_samples: int = 4
    max_new_tokens: int = 64
    template_version: str = "v1"


class InpaintSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    latent_res: int = 16
    latent_ch: int = 4
    d_model: int = 16
    d_txt: int = 16
    heads: int = 2
    context_len: int = 24
    lora_rank: int = 16
    lora_alpha: int = 16
    lr: float = 1e-4
    warmup_fraction: float = 0.01
    grad_clip: float = 1.0
    batch_size: int = 32
    text_drop: float = 0.1
    n_timesteps: int = 1000
    epochs: int = 1
    steps: int = 50
    guidance_weight: float = 7.5
    scheme: str = "inference_scheme"


class ServiceSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    host: str = "127.0.0.1"
    port: int = 8080
    job_queue_depth: int = 16
    artifacts_dir: str = "artifacts"


class AppConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    seed: int = 0
    backbone_seed: int = 0
    pipeline: PipelineSection = PipelineSection()
    promptgen: PromptGenSection = PromptGenSection()
    inpaint: InpaintSection = InpaintSection()
    service: ServiceSection = ServiceSection()


def load_config(path: str | Path | None = None) -> AppConfig:
    if path is None:
        return AppConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return AppConfig.model_validate(data)


def config_digest(config: AppConfig) -> str:
    payload = json.dumps(config.model_dump(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def api_key_from_env() -> str | None:
    return os.environ.get(API_KEY_ENV) or None


def build_promptgen_backbone(tokenizer, config: AppConfig, seed: int | None = None):
    from .toy_llm import ToyPromptGenBackbone

    pg = config.promptgen
    return ToyPromptGenBackbone(tokenizer, d_model=pg.d_model, d_hidden=pg.d_hidden,
                                image_grid=pg.image_grid, max_len=pg.max_len,
                                seed=config.backbone_seed if seed is None else seed,
                                lora_rank=pg.lora_rank, lora_alpha=pg.lora_alpha,
                                lora_dropout=pg.lora_dropout)


def build_inpaint_backbone(tokenizer, config: AppConfig, seed: int | None = None):
    from .toy_diffusion import ToyInpaintBackbone

    ip = config.inpaint
    return ToyInpaintBackbone(tokenizer, image_size=config.pipeline.image_size,
                              latent_res=ip.latent_res, latent_ch=ip.latent_ch,
                              d_model=ip.d_model, d_txt=ip.d_txt, heads=ip.heads,
                              context_len=ip.context_len,
                              seed=config.backbone_seed if seed is None else seed,
                              lora_rank=ip.lora_rank, lora_alpha=ip.lora_alpha)
