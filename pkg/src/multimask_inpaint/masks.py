"""Binary mask geometry: filtering, training-set selection, colored overlays, collages.

Masks are numpy uint8 grids of shape (H, W) with values in {0, 1}, where 1
marks the region to inpaint. Bboxes are half-open pixel rectangles
(x0, y0, x1, y1) with x1 > x0 and y1 > y0.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .palette import DEFAULT_PALETTE, rgb_of, validate_palette

log = logging.getLogger(__name__)

Bbox = tuple[int, int, int, int]

# Dataset admission thresholds: bbox area as a fraction of image area.
MIN_AREA_FRAC = 0.01
MAX_AREA_FRAC = 0.65
# At most this many masks per training example.
N_MAX = 5
# Union of selected masks may cover at most this fraction of the image.
TOTAL_AREA_CAP = 0.65


class NoValidMasksError(ValueError):
    """Raised when mask selection yields nothing; the image is dropped."""


@dataclass
class Mask:
    """One inpainting region.

    If source == "bbox" the grid must be exactly the filled rectangle of
    ``bbox``; freehand masks may have any shape.
    """

    grid: np.ndarray
    source: str = "freehand"
    bbox: Bbox | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2:
            raise ValueError(f"mask grid must be 2-D, got shape {grid.shape}")
        if not np.isin(grid, (0, 1)).all():
            raise ValueError("mask grid values must be 0 or 1")
        self.grid = grid.astype(np.uint8)
        if self.source not in ("bbox", "freehand"):
            raise ValueError(f"unknown mask source {self.source!r}")
        if self.source == "bbox":
            if self.bbox is None:
                raise ValueError("bbox-sourced mask needs a bbox")
            expected = np.zeros_like(self.grid)
            x0, y0, x1, y1 = self.bbox
            expected[y0:y1, x0:x1] = 1
            if not np.array_equal(self.grid, expected):
                raise ValueError("bbox-sourced mask grid is not the filled bbox rectangle")

    @property
    def area_px(self) -> int:
        return int(self.grid.sum())

    @classmethod
    def from_bbox(cls, bbox: Bbox, image_size: tuple[int, int]) -> "Mask":
        """Build a rectangular mask for ``bbox`` on an (H, W) canvas."""
        h, w = image_size
        x0, y0, x1, y1 = bbox
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"bbox {bbox} does not fit in image {image_size}")
        grid = np.zeros((h, w), dtype=np.uint8)
        grid[y0:y1, x0:x1] = 1
        return cls(grid=grid, source="bbox", bbox=tuple(int(v) for v in bbox))


@dataclass
class MaskSet:
    """Ordered masks over one image. Order is the prompt order downstream."""

    masks: list[Mask]
    image_size: tuple[int, int]  # (H, W)

    def __post_init__(self):
        if not self.masks:
            raise NoValidMasksError("mask set must contain at least one mask")
        h, w = self.image_size
        for i, m in enumerate(self.masks):
            if m.grid.shape != (h, w):
                raise ValueError(f"mask {i} shape {m.grid.shape} != image size {(h, w)}")

    def __len__(self) -> int:
        return len(self.masks)

    def union(self) -> np.ndarray:
        """Union of all grids as uint8 {0,1}."""
        out = np.zeros(self.image_size, dtype=np.uint8)
        for m in self.masks:
            np.maximum(out, m.grid, out=out)
        return out


@dataclass
class ColoredOverlayImage:
    """Source image with each mask painted opaquely in its assigned color.

    color_assignment lists (mask_index, color_name) in draw order
    (largest mask first), so the last entry covering a pixel is the one
    visible there.
    """

    pixels: np.ndarray
    color_assignment: list[tuple[int, str]]

    def color_of(self, mask_index: int) -> str:
        for idx, name in self.color_assignment:
            if idx == mask_index:
                return name
        raise KeyError(f"mask index {mask_index} has no color assigned")

    def colors_in_mask_order(self) -> list[str]:
        """Colors keyed by mask index 0..n-1 (instruction/answer order)."""
        return [self.color_of(i) for i in range(len(self.color_assignment))]


@dataclass
class Collage:
    """Square grid of bbox crops, cells sized to the largest crop."""

    pixels: np.ndarray
    grid_dims: tuple[int, int]
    cell_size: tuple[int, int]  # (w_max, h_max)
    placements: list[tuple[int, int, int]]  # (bbox_index, row, col)


def bbox_status(bbox, image_size: tuple[int, int],
                min_frac: float = MIN_AREA_FRAC, max_frac: float = MAX_AREA_FRAC) -> str:
    """Classify one bbox: 'ok', 'too-small', 'too-large', or 'malformed'."""
    h, w = image_size
    try:
        x0, y0, x1, y1 = bbox
    except (TypeError, ValueError):
        return "malformed"
    if x1 <= x0 or y1 <= y0:
        return "malformed"
    frac = (x1 - x0) * (y1 - y0) / (h * w)
    if frac < min_frac:
        return "too-small"
    if frac > max_frac:
        return "too-large"
    return "ok"


def filter_bboxes(bboxes: list[Bbox], image_size: tuple[int, int],
                  min_frac: float = MIN_AREA_FRAC, max_frac: float = MAX_AREA_FRAC) -> list[Bbox]:
    """Keep bboxes whose area fraction lies in [min_frac, max_frac], order preserved.

    Malformed boxes (x1 <= x0 or y1 <= y0) are dropped with a logged
    diagnostic instead of failing the batch.
    """
    kept = []
    for i, bbox in enumerate(bboxes):
        status = bbox_status(bbox, image_size, min_frac, max_frac)
        if status == "ok":
            kept.append(tuple(int(v) for v in bbox))
        elif status == "malformed":
            log.warning("bbox %d %r rejected: malformed", i, bbox)
        else:
            log.debug("bbox %d %r rejected: %s", i, bbox, status)
    return kept


def select_training_mask_indices(candidates: list[Mask], rng_seed: int,
                                 n_max: int = N_MAX,
                                 area_cap: float = TOTAL_AREA_CAP) -> list[int]:
    """Indices of the selected masks, in final (shuffled) order.

    Candidates are visited in descending area order (ties keep original
    order); each is admitted if the pixel union of the kept set stays
    within area_cap of the image, up to n_max masks. The kept list is then
    shuffled with the seeded rng so mask order is random in training
    examples.
    """
    if not candidates:
        raise NoValidMasksError("no candidate masks")
    image_size = candidates[0].grid.shape
    cap_px = area_cap * image_size[0] * image_size[1]

    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].area_px)
    kept: list[int] = []
    union = np.zeros(image_size, dtype=np.uint8)
    for i in order:
        if len(kept) == n_max:
            break
        trial = np.maximum(union, candidates[i].grid)
        if trial.sum() <= cap_px:
            kept.append(i)
            union = trial
    if not kept:
        raise NoValidMasksError("no mask fits under the area cap")

    rng = np.random.default_rng(rng_seed)
    return [kept[j] for j in rng.permutation(len(kept))]


def select_training_masks(candidates: list[Mask], rng_seed: int,
                          n_max: int = N_MAX, area_cap: float = TOTAL_AREA_CAP) -> MaskSet:
    """See select_training_mask_indices; returns the masks themselves."""
    indices = select_training_mask_indices(candidates, rng_seed, n_max, area_cap)
    return MaskSet(masks=[candidates[i] for i in indices],
                   image_size=candidates[0].grid.shape)


def render_overlay(image: np.ndarray, mask_set: MaskSet,
                   palette: list[str] | None = None, rng_seed: int = 0) -> ColoredOverlayImage:
    """Paint each mask fully opaque in a randomly assigned palette color.

    Drawing goes from the largest mask to the smallest so small masks stay
    visible on overlap; area ties draw in original index order (the later
    index ends up on top).
    """
    palette = validate_palette(list(palette) if palette is not None else list(DEFAULT_PALETTE))
    n = len(mask_set)
    if n > len(palette):
        raise ValueError(f"{n} masks but palette has only {len(palette)} colors: {palette}")
    if image.shape[:2] != mask_set.image_size:
        raise ValueError(f"image shape {image.shape[:2]} != mask set {mask_set.image_size}")

    rng = np.random.default_rng(rng_seed)
    color_names = [palette[i] for i in rng.permutation(len(palette))[:n]]

    draw_order = sorted(range(n), key=lambda i: -mask_set.masks[i].area_px)
    pixels = np.array(image, dtype=np.uint8, copy=True)
    assignment = []
    for i in draw_order:
        name = color_names[i]
        region = mask_set.masks[i].grid.astype(bool)
        pixels[region] = rgb_of(name)
        assignment.append((i, name))
    return ColoredOverlayImage(pixels=pixels, color_assignment=assignment)


def crop(image: np.ndarray, bbox: Bbox) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    return image[y0:y1, x0:x1]


def build_collage(image: np.ndarray, bboxes: list[Bbox],
                  fill: tuple[int, int, int] = (255, 255, 255)) -> Collage:
    """Arrange bbox crops in a ceil(sqrt(k)) square grid, cells sized to the largest crop.

    Crops sit top-left in their cell, row-major; unused cells keep the
    fill color (white by default).
    """
    k = len(bboxes)
    if k < 2:
        raise ValueError("collage needs at least 2 bboxes; use crop() for one")
    widths = [b[2] - b[0] for b in bboxes]
    heights = [b[3] - b[1] for b in bboxes]
    if min(widths) <= 0 or min(heights) <= 0:
        raise ValueError("malformed bbox in collage input")
    w_max, h_max = max(widths), max(heights)
    side = math.isqrt(k)
    if side * side < k:
        side += 1
    rows = cols = side

    pixels = np.full((rows * h_max, cols * w_max, 3), fill, dtype=np.uint8)
    placements = []
    for i, bbox in enumerate(bboxes):
        r, c = divmod(i, cols)
        patch = crop(image, bbox)
        pixels[r * h_max:r * h_max + patch.shape[0], c * w_max:c * w_max + patch.shape[1]] = patch
        placements.append((i, r, c))
    return Collage(pixels=pixels, grid_dims=(rows, cols), cell_size=(w_max, h_max),
                   placements=placements)


# --- serialization: PNG (0/255) + JSON sidecar ---

def save_mask(mask: Mask, path: str | Path) -> None:
    """Write the grid as an 8-bit PNG (0/255) plus a .json sidecar."""
    path = Path(path)
    Image.fromarray(mask.grid * np.uint8(255), mode="L").save(path)
    sidecar = {"source": mask.source,
               "bbox": list(mask.bbox) if mask.bbox else None,
               "area_px": mask.area_px}
    path.with_suffix(".json").write_text(json.dumps(sidecar))


def load_mask(path: str | Path) -> Mask:
    path = Path(path)
    arr = np.asarray(Image.open(path).convert("L"))
    grid = (arr >= 128).astype(np.uint8)
    source, bbox = "freehand", None
    sidecar_path = path.with_suffix(".json")
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        source = sidecar.get("source", "freehand")
        bbox = tuple(sidecar["bbox"]) if sidecar.get("bbox") else None
    return Mask(grid=grid, source=source, bbox=bbox)


def mask_from_png_bytes(data: bytes) -> Mask:
    """Decode an uploaded binary mask PNG; any value >= 128 counts as masked."""
    import io
    arr = np.asarray(Image.open(io.BytesIO(data)).convert("L"))
    return Mask(grid=(arr >= 128).astype(np.uint8))


def mask_to_png_bytes(mask: Mask) -> bytes:
    import io
    buf = io.BytesIO()
    Image.fromarray(mask.grid * np.uint8(255), mode="L").save(buf, format="PNG")
    return buf.getvalue()
