"""
Masks, selection rules, colored overlays, and collages
======================================================

A walk through the geometry layer: how candidate boxes are filtered by
area, how the training-time mask selection enforces the per-example caps,
and how the colored overlay that the prompt generator sees is drawn.

Run from the repository root:

    python3 demos/01_masks_and_overlays.py

Outputs land in demos/output/.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from multimask_inpaint.masks import (
    Mask,
    build_collage,
    filter_bboxes,
    render_overlay,
    save_mask,
    select_training_masks,
)

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# A synthetic "painting": smooth color gradients so the overlay pops.
h = w = 256
yy, xx = np.mgrid[0:h, 0:w]
image = np.stack([
    (xx / w * 255), (yy / h * 255), ((xx + yy) / (h + w) * 255)
], axis=-1).astype(np.uint8)

# Candidate bounding boxes, deliberately including a sliver (too small)
# and a near-full-frame box (too large). Areas are fractions of 256x256.
candidates = [
    (10, 10, 20, 16),        # 0.09% -> below the 1% floor
    (0, 0, 250, 200),        # 76%   -> above the 65% ceiling
    (30, 30, 120, 120),      # 12.4%
    (100, 60, 220, 150),     # 16.5%
    (60, 140, 140, 230),     # 11.0%
    (160, 160, 250, 250),    # 12.4%
]
kept = filter_bboxes(candidates, (h, w))
print(f"{len(candidates)} candidate boxes -> {len(kept)} within the 1%-65% band")

# Selection keeps the largest masks while their pixel UNION stays under
# 65% of the image, at most five, then shuffles for training variety.
masks = [Mask.from_bbox(b, (h, w)) for b in kept]
selected = select_training_masks(masks, rng_seed=7)
union_frac = selected.union().mean()
print(f"selected {len(selected)} masks, union covers {union_frac:.1%} of the image")

# The overlay paints masks fully opaque, largest first, so small masks
# stay visible when boxes overlap. Color order is seeded-random.
overlay = render_overlay(image, selected, rng_seed=7)
print("draw order (mask index, color):", overlay.color_assignment)
Image.fromarray(overlay.pixels).save(out_dir / "overlay.png")

# Masks serialize as 0/255 PNGs plus a JSON sidecar.
save_mask(selected.masks[0], out_dir / "mask0.png")

# Multi-box entities are captioned from a square collage; cells take the
# size of the largest crop, extras stay white.
collage = build_collage(image, kept[:3])
print(f"collage grid {collage.grid_dims}, cell {collage.cell_size}")
Image.fromarray(collage.pixels).save(out_dir / "collage.png")

print(f"wrote overlay.png, mask0.png(+json), collage.png to {out_dir}")
