"""Token-to-region layout construction for rectified cross-attention.

Builds the binary tensor of shape (T_txt, H_lat, W_lat) that says which
spatial cells may attend to which text tokens. The active-token rule per
cell:

* outside every mask       -> all tokens active;
* inside mask i only       -> tokens of span i, plus specials;
* inside an intersection   -> union of the covering masks' spans, plus specials.

Special and padding token rows are all ones so no cell can end up with an
empty token set. Separator tokens between concatenated prompts belong to
no region and are active only where no mask covers.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import RegionPrompt
from .masks import MaskSet
from .tokenizer import WordTokenizer

log = logging.getLogger(__name__)

SEPARATOR = ". "


class LayoutError(RuntimeError):
    """A constructed layout would leave some cell with no active token."""


@dataclass
class ConcatPrompt:
    """Region prompts joined into one text, with per-region token spans."""

    full_text: str
    token_ids: list[int]
    spans: list[tuple[int, int, int]]  # (mask_index, token_start, token_end), half-open
    special_token_positions: list[int]
    separator_positions: list[int] = field(default_factory=list)
    clipped_mask_indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.token_ids)

    def span_of(self, mask_index: int) -> tuple[int, int] | None:
        for i, s, e in self.spans:
            if i == mask_index:
                return (s, e)
        return None


@dataclass
class LayoutTensor:
    bits: np.ndarray  # uint8 (T, H_lat, W_lat)
    resolution: tuple[int, int]

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 3 or self.bits.shape[1:] != tuple(self.resolution):
            raise ValueError(f"layout bits {self.bits.shape} != (T, {self.resolution})")

    @property
    def layout_id(self) -> str:
        return hashlib.sha1(self.bits.tobytes()).hexdigest()[:16]

    @classmethod
    def all_ones(cls, n_tokens: int, resolution: tuple[int, int]) -> "LayoutTensor":
        return cls(bits=np.ones((n_tokens, *resolution), dtype=np.uint8), resolution=resolution)

    def is_all_ones(self) -> bool:
        return bool(self.bits.all())


def concat_and_span(prompts: list[RegionPrompt], tokenizer: WordTokenizer,
                    max_len: int) -> ConcatPrompt:
    """Join prompts with '. ' and record each prompt's token span.

    Spans come from the tokenizer's offset mapping; truncation at max_len
    clips trailing spans, possibly to nothing (logged, and recorded in
    clipped_mask_indices — those regions then rely on special-token rows).
    """
    if not prompts:
        raise ValueError("need at least one prompt")
    texts = [p.validate().text.strip() for p in prompts]
    char_ranges = []
    cursor = 0
    for t in texts:
        char_ranges.append((cursor, cursor + len(t)))
        cursor += len(t) + len(SEPARATOR)
    full_text = SEPARATOR.join(texts)

    enc = tokenizer.encode(full_text, max_len=max_len, pad_to=max_len)
    spans = []
    separator_positions = []
    clipped = []
    for k, p in enumerate(prompts):
        cs, ce = char_ranges[k]
        positions = [t for t, off in enumerate(enc.offsets)
                     if off is not None and off[0] >= cs and off[1] <= ce]
        if positions:
            spans.append((p.mask_index, positions[0], positions[-1] + 1))
        else:
            clipped.append(p.mask_index)
            log.warning("prompt for mask %d fully truncated at max_len=%d", p.mask_index, max_len)
    for t, off in enumerate(enc.offsets):
        if off is None:
            continue
        if not any(off[0] >= cs and off[1] <= ce for cs, ce in char_ranges):
            separator_positions.append(t)

    return ConcatPrompt(full_text=full_text, token_ids=enc.ids, spans=spans,
                        special_token_positions=enc.special_positions,
                        separator_positions=separator_positions,
                        clipped_mask_indices=clipped)


def modified_masks(mask_set: MaskSet) -> list[np.ndarray]:
    """Per-prompt spatial support at image resolution.

    A cell is active for prompt i iff it lies inside M_i or outside every
    mask; overlap cells therefore stay active for all covering prompts,
    and unmasked cells for all prompts. For n=1 this is all ones.
    """
    union = mask_set.union()
    outside_all = (1 - union).astype(np.uint8)
    return [np.maximum(m.grid, outside_all) for m in mask_set.masks]


def pool_any(grid: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Any-coverage (max) downsampling: a cell is 1 iff any covered pixel is 1.

    With evenly dividing shapes this is exact block max pooling; otherwise
    each cell covers the pixel box [floor(i*H/Hl), ceil((i+1)*H/Hl)) so
    every pixel reaches every cell it touches.
    """
    h, w = grid.shape
    ht, wt = target
    if ht > h or wt > w:
        raise ValueError(f"cannot pool {grid.shape} up to {target}")
    if h % ht == 0 and w % wt == 0:
        return grid.reshape(ht, h // ht, wt, w // wt).max(axis=(1, 3)).astype(np.uint8)
    out = np.zeros(target, dtype=np.uint8)
    for i in range(ht):
        r0, r1 = math.floor(i * h / ht), max(math.floor(i * h / ht) + 1, math.ceil((i + 1) * h / ht))
        for j in range(wt):
            c0, c1 = math.floor(j * w / wt), max(math.floor(j * w / wt) + 1, math.ceil((j + 1) * w / wt))
            out[i, j] = grid[r0:r1, c0:c1].max()
    return out


def build_layout(mask_set: MaskSet, concat_prompt: ConcatPrompt,
                 target_resolution: tuple[int, int]) -> LayoutTensor:
    """Assemble the (T, H_lat, W_lat) layout at one cross-attention resolution.

    Span rows repeat that prompt's modified mask (pooled to the target
    resolution), special/pad rows are all ones, separator rows carry the
    outside-all-masks support. Raises LayoutError if any cell would end up
    with no active token — a construction bug, since special rows are ones.
    """
    t_txt = len(concat_prompt)
    supports = [pool_any(m, target_resolution) for m in modified_masks(mask_set)]
    outside_all = pool_any((1 - mask_set.union()).astype(np.uint8), target_resolution)

    bits = np.zeros((t_txt, *target_resolution), dtype=np.uint8)
    for pos in concat_prompt.separator_positions:
        bits[pos] = outside_all
    for mask_index, start, end in concat_prompt.spans:
        if mask_index >= len(mask_set):
            raise ValueError(f"span references mask {mask_index} outside the mask set")
        bits[start:end] = supports[mask_index]
    for pos in concat_prompt.special_token_positions:
        bits[pos] = 1

    if not bits.any(axis=0).all():
        raise LayoutError("layout has a cell with no active token")
    return LayoutTensor(bits=bits, resolution=target_resolution)


def layouts_for_resolutions(mask_set: MaskSet, concat_prompt: ConcatPrompt,
                            resolutions: list[tuple[int, int]]) -> dict[tuple[int, int], LayoutTensor]:
    """One layout per cross-attention resolution (the job's layout bundle)."""
    return {tuple(res): build_layout(mask_set, concat_prompt, tuple(res))
            for res in resolutions}


def dump_layout_debug(layout: LayoutTensor, concat_prompt: ConcatPrompt,
                      out_dir: str | Path) -> Path:
    """Write per-span heatmap PNGs and a JSON manifest of spans for inspection."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"resolution": list(layout.resolution), "layout_id": layout.layout_id,
                "spans": [], "full_text": concat_prompt.full_text}
    for mask_index, start, end in concat_prompt.spans:
        mean = layout.bits[start:end].mean(axis=0)
        img = (mean * 255).astype(np.uint8)
        name = f"span_mask{mask_index}_tokens{start}-{end}.png"
        Image.fromarray(img, mode="L").save(out_dir / name)
        manifest["spans"].append({"mask_index": mask_index, "token_start": start,
                                  "token_end": end, "heatmap": name})
    path = out_dir / "layout_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
