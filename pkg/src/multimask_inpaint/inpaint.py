"""Inpainting engine: input preparation, adapter training under the
multi-mask regime, and guided sampling with rectified cross-attention.

Three modes: one diffusion pass with per-region layouts (rca_single_pass),
one pass with the concatenated prompt and no rectification
(concat_single_pass), and the n-pass baseline that inpaints masks one at a
time (repeated_per_mask). Compositing pastes source pixels back outside
the mask union so untouched regions stay bit-identical.
"""

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .codec import RegionPrompt
from .diffusion import NoiseSchedule, make_sampler
from .layout import ConcatPrompt, LayoutTensor, concat_and_span, layouts_for_resolutions, pool_any
from .masks import Mask, MaskSet
from .palette import DEFAULT_PALETTE
from .rca import install_hooks
from .toynn import AdamW, clip_grad_norm, warmup_constant_lr

log = logging.getLogger(__name__)

MODES = ("rca_single_pass", "concat_single_pass", "repeated_per_mask")
MODE_ALIASES = {"rca": "rca_single_pass", "concat": "concat_single_pass",
                "repeated": "repeated_per_mask"}


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {sorted(MODE_ALIASES)}")
    return mode


@dataclass
class SamplerConfig:
    scheme: str = "inference_scheme"
    steps: int = 50
    guidance_weight: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance_weight < 0:
            raise ValueError("guidance_weight must be >= 0")


@dataclass
class InpaintTrainConfig:
    target_pattern: str = "all cross-attention linear layers"
    lora_rank: int = 16
    lora_alpha: int = 16
    lr: float = 1e-4
    warmup_fraction: float = 0.01
    grad_clip: float = 1.0
    batch_size: int = 32
    text_drop: float = 0.1  # applied only to single-mask examples
    n_timesteps: int = 1000
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    # overfit-smoke mode: draw (t, noise) once per example and reuse them
    fixed_noise: bool = False

    def __post_init__(self):
        if not 0.0 <= self.text_drop <= 1.0:
            raise ValueError("text_drop must be in [0, 1]")
        if self.n_timesteps < 1:
            raise ValueError("n_timesteps must be >= 1")


@dataclass
class InpaintJob:
    image: np.ndarray  # uint8 (S, S, 3)
    mask_set: MaskSet
    prompts: list[str]  # one per mask, in mask order
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    mode: str = "rca_single_pass"
    composite: bool = True
    result_image: np.ndarray | None = None
    manifest: dict | None = None

    def __post_init__(self):
        self.mode = canonical_mode(self.mode)
        if len(self.prompts) != len(self.mask_set):
            raise ValueError(f"{len(self.prompts)} prompts for {len(self.mask_set)} masks")
        for i, p in enumerate(self.prompts):
            if not str(p).strip():
                raise ValueError(f"prompt {i} is empty")


@dataclass
class InpaintExample:
    """Precomputed training example for the diffusion adapter."""

    z0: np.ndarray
    mask_lat: np.ndarray
    masked_lat: np.ndarray
    text_emb: np.ndarray
    layouts: dict[tuple[int, int], LayoutTensor]
    n_masks: int


def resize_and_center_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Shorter side to ``size`` then center crop, the dataset prep rule."""
    h, w = image.shape[:2]
    scale = size / min(h, w)
    new_w, new_h = round(w * scale), round(h * scale)
    resized = np.asarray(Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR))
    top = (new_h - size) // 2
    left = (new_w - size) // 2
    return resized[top:top + size, left:left + size]


def prepare_inputs(image01: np.ndarray, mask_set: MaskSet, codec,
                   rng: np.random.Generator):
    """(masked-image latent, pooled total mask, starting noise) for one job."""
    s = codec.image_size
    if image01.shape != (s, s, 3):
        raise ValueError(f"expected ({s}, {s}, 3) image, got {image01.shape}")
    total = mask_set.union()
    total_lat = pool_any(total, (codec.latent_res, codec.latent_res)).astype(np.float64)
    masked01 = image01 * (1.0 - total)[:, :, None]
    latent_masked = codec.encode(masked01)
    noise = rng.standard_normal((codec.latent_res, codec.latent_res, codec.latent_ch))
    return latent_masked, total_lat, noise


def region_prompts(prompt_texts: list[str]) -> list[RegionPrompt]:
    """Wrap plain texts in RegionPrompt order, colors in palette order."""
    palette = DEFAULT_PALETTE
    return [RegionPrompt(text=t, color_name=palette[i % len(palette)], mask_index=i)
            for i, t in enumerate(prompt_texts)]


def job_layouts(job: InpaintJob, backbone, concat_prompt: ConcatPrompt):
    """Layout bundle for every backbone cross-attention resolution."""
    resolutions = backbone.cross_attention_resolutions
    if job.mode == "rca_single_pass":
        return layouts_for_resolutions(job.mask_set, concat_prompt, resolutions)
    n_tok = len(concat_prompt)
    return {tuple(r): LayoutTensor.all_ones(n_tok, tuple(r)) for r in resolutions}


def should_drop_text(n_masks: int, rng: np.random.Generator, p: float) -> bool:
    """Classifier-free-guidance text drop, single-mask examples only."""
    return n_masks == 1 and rng.random() < p


def make_training_example(image01: np.ndarray, mask_set: MaskSet,
                          prompt_texts: list[str], backbone) -> InpaintExample:
    cp = concat_and_span(region_prompts(prompt_texts), backbone.tokenizer,
                         max_len=backbone.context_len)
    layouts = layouts_for_resolutions(mask_set, cp, backbone.cross_attention_resolutions)
    rng = np.random.default_rng(0)  # noise for training is drawn per step, not here
    latent_masked, mask_lat, _ = prepare_inputs(image01, mask_set, backbone.codec, rng)
    return InpaintExample(z0=backbone.codec.encode(image01), mask_lat=mask_lat,
                          masked_lat=latent_masked,
                          text_emb=backbone.text_encoder.encode_ids(np.array(cp.token_ids)),
                          layouts=layouts, n_masks=len(mask_set))


@dataclass
class InpaintTrainResult:
    artifact_dir: object
    initial_loss: float
    final_loss: float
    losses: list[float]
    grad_norms: list[float]
    lrs: list[float]
    aborted: bool = False


def train_inpainter(dataset: list[InpaintExample], backbone,
                    config: InpaintTrainConfig, out_dir) -> InpaintTrainResult:
    """Noise-prediction MSE over uniform timesteps, adapter-only updates.

    RCA hooks stay installed for every training forward pass; text
    conditioning is dropped (null prompt, all-ones layout) with probability
    text_drop for single-mask examples only.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    schedule = NoiseSchedule(n_timesteps=config.n_timesteps)
    steps_per_epoch = max(1, math.ceil(len(dataset) / config.batch_size))
    total_steps = config.max_steps or config.epochs * steps_per_epoch
    opt = AdamW(backbone.params, lr=config.lr)

    null_ids = np.array(backbone.tokenizer.encode("", pad_to=backbone.context_len).ids)
    null_emb = backbone.text_encoder.encode_ids(null_ids)
    n_tok = backbone.context_len
    all_ones = {tuple(r): LayoutTensor.all_ones(n_tok, tuple(r))
                for r in backbone.cross_attention_resolutions}

    holder: dict = {"layouts": None}

    def provider(resolution):
        layouts = holder["layouts"]
        return None if layouts is None else layouts[tuple(resolution)]

    fixed_draws = None
    if config.fixed_noise:
        draw_rng = np.random.default_rng(config.seed + 1)
        fixed_draws = [(int(draw_rng.integers(config.n_timesteps)),
                        draw_rng.standard_normal(ex.z0.shape)) for ex in dataset]

    losses, grad_norms, lrs = [], [], []
    last_good = backbone.adapter_state()
    aborted = False
    handle = install_hooks(backbone, provider)
    try:
        with open(out_dir / "training_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr", "grad_norm"])
            for step in range(total_steps):
                idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)),
                                 replace=False)
                batch = [dataset[i] for i in idx]
                opt.zero_grad()
                loss = 0.0
                for j, ex in zip(idx, batch):
                    if fixed_draws is not None:
                        t, noise = fixed_draws[j]
                    else:
                        t = int(rng.integers(config.n_timesteps))
                        noise = rng.standard_normal(ex.z0.shape)
                    z_t = schedule.q_sample(ex.z0, t, noise)
                    if should_drop_text(ex.n_masks, rng, config.text_drop):
                        emb, holder["layouts"] = null_emb, all_ones
                    else:
                        emb, holder["layouts"] = ex.text_emb, ex.layouts
                    eps = backbone.forward(z_t, t, emb, ex.mask_lat, ex.masked_lat)
                    diff = eps - noise
                    loss += float((diff ** 2).mean()) / len(batch)
                    backbone.backward(2.0 * diff / (diff.size * len(batch)))
                if not math.isfinite(loss):
                    log.error("loss diverged at step %d; restoring checkpoint", step)
                    backbone.load_adapter_state(last_good)
                    aborted = True
                    break
                _, post_norm = clip_grad_norm(backbone.params, config.grad_clip)
                lr = warmup_constant_lr(step, total_steps, config.lr, config.warmup_fraction)
                opt.step(lr)
                last_good = backbone.adapter_state()
                losses.append(loss)
                grad_norms.append(post_norm)
                lrs.append(lr)
                writer.writerow([step, f"{loss:.6f}", f"{lr:.8f}", f"{post_norm:.6f}"])
    finally:
        handle.remove()

    artifact = backbone.save_adapter(out_dir, extra_manifest={
        "task": "inpaint", "steps": len(losses),
        "final_loss": losses[-1] if losses else None})
    return InpaintTrainResult(artifact_dir=artifact,
                              initial_loss=losses[0] if losses else float("nan"),
                              final_loss=losses[-1] if losses else float("nan"),
                              losses=losses, grad_norms=grad_norms, lrs=lrs, aborted=aborted)


def _denoise(backbone, z, sampler, text_cond, text_null, layouts_cond, layouts_null,
             guidance_weight, mask_lat, masked_lat, rng, cfg_probe=None):
    """CFG loop: conditional branch under the job layouts, unconditional under
    all-ones (mirrors training, where text was dropped only on all-ones
    single-mask examples)."""
    holder: dict = {"layouts": None}

    def provider(resolution):
        layouts = holder["layouts"]
        return None if layouts is None else layouts[tuple(resolution)]

    handle = install_hooks(backbone, provider)
    try:
        ts = sampler.timesteps
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else -1
            holder["layouts"] = layouts_cond
            eps_c = backbone.forward(z, t, text_cond, mask_lat, masked_lat)
            holder["layouts"] = layouts_null
            eps_u = backbone.forward(z, t, text_null, mask_lat, masked_lat)
            eps = eps_u + guidance_weight * (eps_c - eps_u)
            if cfg_probe is not None:
                cfg_probe(i, t, eps_u, eps_c, eps)
            z = sampler.step(z, eps, t, t_prev, rng)
    finally:
        handle.remove()
    return z


def composite_result(source_u8: np.ndarray, decoded01: np.ndarray,
                     union: np.ndarray) -> np.ndarray:
    """Generated pixels inside the mask union, source pixels outside, bit-exact."""
    gen_u8 = np.clip(np.round(decoded01 * 255.0), 0, 255).astype(np.uint8)
    return np.where(union[:, :, None].astype(bool), gen_u8, source_u8)


def inpaint(job: InpaintJob, backbone, cfg_probe=None) -> InpaintJob:
    """Single-pass guided inpainting (rca or concat mode); fills job.result_image."""
    if job.mode == "repeated_per_mask":
        return inpaint_repeated(job, backbone)
    started = time.time()
    s = backbone.codec.image_size
    if job.image.shape[:2] != (s, s):
        raise ValueError(f"job image {job.image.shape[:2]} != backbone size {(s, s)}")

    cp = concat_and_span(region_prompts(job.prompts), backbone.tokenizer,
                         max_len=backbone.context_len)
    layouts_cond = job_layouts(job, backbone, cp)
    for res in backbone.cross_attention_resolutions:
        if tuple(res) not in layouts_cond:
            raise ValueError(f"no layout for cross-attention resolution {res}")
    n_tok = len(cp)
    layouts_null = {tuple(r): LayoutTensor.all_ones(n_tok, tuple(r))
                    for r in backbone.cross_attention_resolutions}

    image01 = np.asarray(job.image, dtype=np.float64) / 255.0
    rng = np.random.default_rng(job.sampler.seed)
    masked_lat, mask_lat, noise = prepare_inputs(image01, job.mask_set, backbone.codec, rng)
    text_cond = backbone.text_encoder.encode_ids(np.array(cp.token_ids))
    null_ids = np.array(backbone.tokenizer.encode("", pad_to=backbone.context_len).ids)
    text_null = backbone.text_encoder.encode_ids(null_ids)

    schedule = NoiseSchedule()
    sampler = make_sampler(job.sampler.scheme, schedule, job.sampler.steps)
    z = _denoise(backbone, noise, sampler, text_cond, text_null, layouts_cond,
                 layouts_null, job.sampler.guidance_weight, mask_lat, masked_lat,
                 rng, cfg_probe)
    decoded = backbone.codec.decode(z)
    if job.composite:
        result = composite_result(job.image, decoded, job.mask_set.union())
    else:
        result = np.clip(np.round(decoded * 255.0), 0, 255).astype(np.uint8)

    job.result_image = result
    job.manifest = build_manifest(job, extra={
        "layout_ids": {f"{r[0]}x{r[1]}": l.layout_id for r, l in layouts_cond.items()},
        "passes": 1, "elapsed_s": round(time.time() - started, 3)})
    return job


def inpaint_repeated(job: InpaintJob, backbone) -> InpaintJob:
    """The n-pass baseline: one single-mask diffusion run per mask,
    largest first, each pass feeding its composited output to the next."""
    if job.mode != "repeated_per_mask":
        raise ValueError("inpaint_repeated requires mode=repeated_per_mask")
    started = time.time()
    order = sorted(range(len(job.mask_set)),
                   key=lambda i: -job.mask_set.masks[i].area_px)
    working = job.image.copy()
    for k, i in enumerate(order):
        sub = InpaintJob(image=working,
                         mask_set=MaskSet([job.mask_set.masks[i]], job.mask_set.image_size),
                         prompts=[job.prompts[i]],
                         sampler=replace(job.sampler, seed=job.sampler.seed + k),
                         mode="concat_single_pass", composite=True)
        working = inpaint(sub, backbone).result_image
    job.result_image = working
    job.manifest = build_manifest(job, extra={
        "passes": len(order), "elapsed_s": round(time.time() - started, 3)})
    return job


def run_job(job: InpaintJob, backbone, cfg_probe=None) -> InpaintJob:
    if job.mode == "repeated_per_mask":
        return inpaint_repeated(job, backbone)
    return inpaint(job, backbone, cfg_probe)


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def build_manifest(job: InpaintJob, extra: dict | None = None) -> dict:
    payload = {"mode": job.mode, "steps": job.sampler.steps,
               "guidance_weight": job.sampler.guidance_weight,
               "scheme": job.sampler.scheme, "composite": job.composite,
               "n_masks": len(job.mask_set)}
    manifest = {**payload, "seed": job.sampler.seed, "config_hash": config_hash(payload),
                "prompts": list(job.prompts)}
    if job.result_image is not None:
        manifest["result_sha256"] = hashlib.sha256(job.result_image.tobytes()).hexdigest()
    manifest.update(extra or {})
    return manifest
