"""Prompt-generator engine: example assembly, label-masked LM loss, adapter
training, and sampled generation for the multi-mask prompt suggestion task.

The backbone is pluggable; anything exposing the ToyPromptGenBackbone
surface (tokenizer, forward/backward, generate, adapter state) works. The
engine owns example construction, the optimizer loop, and parsing of
sampled answers back into per-region prompts.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import (
    InstructionBundle,
    ParseResult,
    RegionPrompt,
    TaggedAnswer,
    build_instruction,
    encode_answer,
    parse_answer,
)
from .masks import ColoredOverlayImage, MaskSet, render_overlay
from .toy_llm import sequence_ids
from .toynn import AdamW, clip_grad_norm, cross_entropy, warmup_constant_lr

log = logging.getLogger(__name__)


@dataclass
class PromptGenExample:
    overlay: ColoredOverlayImage
    system_prompt: str
    instruction: str
    answer: TaggedAnswer
    token_ids: np.ndarray
    label_mask: np.ndarray  # True exactly on answer token positions

    @property
    def answer_token_count(self) -> int:
        return int(self.label_mask.sum())


@dataclass
class PromptGenTrainConfig:
    lora_rank: int = 16
    lora_alpha: int = 16
    lora_dropout: float = 0.05
    target_pattern: str = "all LLM linear layers"
    lr: float = 2e-4
    warmup_fraction: float = 0.01
    grad_clip: float = 0.5
    batch_size: int = 32
    epochs: int = 1
    max_steps: int | None = None
    loss_reduction: str = "mean"  # Eq-style sum also supported
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        for name in ("lora_rank", "lora_alpha", "lr", "grad_clip", "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class GenerationConfig:
    temperature: float = 0.5
    num_samples: int = 4
    max_new_tokens: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")


@dataclass
class TrainResult:
    artifact_dir: Path
    initial_loss: float
    final_loss: float
    losses: list[float]
    grad_norms: list[float]
    lrs: list[float]
    aborted: bool = False


def assemble_example(image: np.ndarray, mask_set: MaskSet, prompt_texts: list[str],
                     palette: list[str] | None, seed: int, tokenizer) -> PromptGenExample:
    """Build one training example: overlay, instruction, tagged answer, label mask.

    Colors follow the seeded overlay assignment; the answer serializes the
    prompts in mask order and the instruction names the colors in that
    same order.
    """
    if len(prompt_texts) != len(mask_set):
        raise ValueError(f"{len(prompt_texts)} prompts for {len(mask_set)} masks")
    overlay = render_overlay(image, mask_set, palette=palette, rng_seed=seed)
    colors = overlay.colors_in_mask_order()
    prompts = [RegionPrompt(text=t, color_name=colors[i], mask_index=i)
               for i, t in enumerate(prompt_texts)]
    answer = encode_answer(prompts)
    bundle = build_instruction(colors, overlay=overlay)
    ids, label_mask = sequence_ids(tokenizer, bundle.system_prompt, bundle.instruction,
                                   answer.raw)
    return PromptGenExample(overlay=overlay, system_prompt=bundle.system_prompt,
                            instruction=bundle.instruction, answer=answer,
                            token_ids=ids, label_mask=label_mask)


def corpus_for_tokenizer(image: np.ndarray, mask_set: MaskSet, prompt_texts: list[str],
                         palette: list[str] | None, seed: int) -> list[str]:
    """The strings assemble_example will tokenize, for fitting a vocabulary.

    Rendering is seeded, so the same (inputs, seed) produce the same color
    assignment here and in assemble_example.
    """
    overlay = render_overlay(image, mask_set, palette=palette, rng_seed=seed)
    colors = overlay.colors_in_mask_order()
    prompts = [RegionPrompt(text=t, color_name=colors[i], mask_index=i)
               for i, t in enumerate(prompt_texts)]
    answer = encode_answer(prompts)
    bundle = build_instruction(colors)
    return [bundle.system_prompt, bundle.instruction, answer.raw]


def lm_loss(logits: np.ndarray, labels: np.ndarray, label_mask: np.ndarray,
            reduction: str = "mean"):
    """Causal LM loss over answer tokens only; returns (loss, dlogits).

    Positions with label_mask False contribute nothing — the loss is
    exactly invariant to their logits.
    """
    return cross_entropy(logits, labels, label_mask, reduction=reduction)


def _batch_arrays(examples: list[PromptGenExample], backbone):
    """Pad a batch to a common length; returns ids, shifted labels/mask, image feats."""
    length = max(len(ex.token_ids) for ex in examples)
    b = len(examples)
    ids = np.zeros((b, length), dtype=int)
    mask = np.zeros((b, length), dtype=bool)
    feats = np.zeros((b, 3 * backbone.image_grid ** 2))
    for i, ex in enumerate(examples):
        n = len(ex.token_ids)
        ids[i, :n] = ex.token_ids
        mask[i, :n] = ex.label_mask
        feats[i] = backbone.image_features(ex.overlay.pixels)
    # logits at position t predict the token at t+1
    inputs = ids[:, :-1]
    labels = ids[:, 1:]
    labels_mask = mask[:, 1:]
    return inputs, labels, labels_mask, feats


def train_promptgen(dataset: list[PromptGenExample], backbone,
                    config: PromptGenTrainConfig, out_dir: str | Path) -> TrainResult:
    """Adapter-only optimizer loop with warmup-then-constant lr and grad clipping.

    Checkpoints the adapter after every finite-loss step; a NaN loss aborts
    and restores the last good state. Emits training_log.csv with
    (step, loss, lr, grad_norm) rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = max(1, math.ceil(len(dataset) / config.batch_size))
    total_steps = config.max_steps or config.epochs * steps_per_epoch
    opt = AdamW(backbone.params, lr=config.lr)
    backbone.set_training(True, rng)

    losses, grad_norms, lrs = [], [], []
    last_good = backbone.adapter_state()
    aborted = False
    log_path = out_dir / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "grad_norm"])
        for step in range(total_steps):
            batch_idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)),
                                   replace=False)
            batch = [dataset[i] for i in batch_idx]
            inputs, labels, labels_mask, feats = _batch_arrays(batch, backbone)
            opt.zero_grad()
            logits = backbone.forward(inputs, feats)
            loss, dlogits = lm_loss(logits, labels, labels_mask, config.loss_reduction)
            if not math.isfinite(loss):
                log.error("loss diverged at step %d; restoring last checkpoint", step)
                backbone.load_adapter_state(last_good)
                aborted = True
                break
            backbone.backward(dlogits)
            _, post_norm = clip_grad_norm(backbone.params, config.grad_clip)
            lr = warmup_constant_lr(step, total_steps, config.lr, config.warmup_fraction)
            opt.step(lr)
            last_good = backbone.adapter_state()
            losses.append(loss)
            grad_norms.append(post_norm)
            lrs.append(lr)
            writer.writerow([step, f"{loss:.6f}", f"{lr:.8f}", f"{post_norm:.6f}"])

    backbone.set_training(False)
    artifact = backbone.save_adapter(out_dir, extra_manifest={
        "task": "promptgen", "loss_reduction": config.loss_reduction,
        "steps": len(losses), "final_loss": losses[-1] if losses else None})
    return TrainResult(artifact_dir=artifact, initial_loss=losses[0] if losses else float("nan"),
                       final_loss=losses[-1] if losses else float("nan"),
                       losses=losses, grad_norms=grad_norms, lrs=lrs, aborted=aborted)


def generate_prompts(overlay: ColoredOverlayImage, instruction: InstructionBundle,
                     gen_config: GenerationConfig, backbone) -> list[ParseResult]:
    """Sample num_samples tagged answers and parse each against the color order.

    Every sample yields a ParseResult with per-color statuses; unparseable
    samples come back as empty prompts with diagnostics rather than errors.
    """
    colors = overlay.colors_in_mask_order()
    prefix_ids, _ = sequence_ids(backbone.tokenizer, instruction.system_prompt,
                                 instruction.instruction, None)
    feat = backbone.image_features(overlay.pixels)
    rng = np.random.default_rng(gen_config.seed)
    results = []
    for _ in range(gen_config.num_samples):
        ids = backbone.generate(list(prefix_ids), feat, gen_config.temperature,
                                gen_config.max_new_tokens, rng)
        text = backbone.tokenizer.decode(ids)
        results.append(parse_answer(text, colors))
    return results
