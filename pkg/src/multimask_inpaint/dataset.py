"""Turn annotation records into training examples for both engines.

Images are resized (shorter side) and center-cropped to the working
resolution; entity bboxes are remapped into the cropped frame, one mask
per bbox carrying its entity's caption. Per image, the largest masks are
kept under the count and union-area caps and shuffled with a seed derived
from the image id, then everything is written to examples.jsonl alongside
a tokenizer vocabulary fit on the corpus.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .annotate import AnnotationRecord, load_image, load_records, validate_record
from .inpaint import resize_and_center_crop
from .masks import (
    MAX_AREA_FRAC,
    MIN_AREA_FRAC,
    N_MAX,
    TOTAL_AREA_CAP,
    Bbox,
    Mask,
    MaskSet,
    NoValidMasksError,
    bbox_status,
    select_training_mask_indices,
)
from .promptgen import corpus_for_tokenizer
from .tokenizer import WordTokenizer

log = logging.getLogger(__name__)


@dataclass
class ExampleSpec:
    image_id: str
    image_path: str
    masks: list[Bbox]  # prepared-image pixel space, final order
    prompts: list[str]  # one per mask, same order
    roots: list[str]  # noun chunk roots, for the accuracy metric
    seed: int


def remap_bbox(bbox: Bbox, orig_size: tuple[int, int], target: int) -> Bbox | None:
    """Map an original-image bbox through resize-shorter-side + center crop.

    Returns None when the box degenerates (falls outside the crop).
    """
    h, w = orig_size
    scale = target / min(h, w)
    new_h, new_w = round(h * scale), round(w * scale)
    top, left = (new_h - target) // 2, (new_w - target) // 2
    x0 = round(bbox[0] * scale) - left
    y0 = round(bbox[1] * scale) - top
    x1 = round(bbox[2] * scale) - left
    y1 = round(bbox[3] * scale) - top
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(target, x1), min(target, y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1, y1)


def _example_seed(image_id: str, base_seed: int) -> int:
    digest = hashlib.sha256(f"{base_seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def mask_set_for_spec(spec: ExampleSpec, image_size: int) -> MaskSet:
    masks = [Mask.from_bbox(tuple(b), (image_size, image_size)) for b in spec.masks]
    return MaskSet(masks, (image_size, image_size))


def prepare_dataset(records_path: str | Path, images_dir: str | Path,
                    out_dir: str | Path, image_size: int = 512, seed: int = 0,
                    n_max: int = N_MAX, area_cap: float = TOTAL_AREA_CAP,
                    min_frac: float = MIN_AREA_FRAC,
                    max_frac: float = MAX_AREA_FRAC,
                    palette: list[str] | None = None) -> dict:
    """Build examples.jsonl + prepared images + tokenizer.json from records."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = load_records(records_path)
    for record in records:
        validate_record(record)
    by_image: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        by_image.setdefault(record.image_id, []).append(record)

    specs: list[ExampleSpec] = []
    corpus: list[str] = []
    n_dropped = 0
    for image_id in sorted(by_image):
        image_path = None
        for ext in (".png", ".jpg", ".jpeg"):
            candidate = Path(images_dir) / f"{image_id}{ext}"
            if candidate.exists():
                image_path = candidate
                break
        if image_path is None:
            log.warning("image %s not found; examples dropped", image_id)
            n_dropped += 1
            continue
        image = load_image(image_path)
        prepared = resize_and_center_crop(image, image_size)
        candidates: list[Mask] = []
        texts: list[str] = []
        roots: list[str] = []
        for record in by_image[image_id]:
            for bbox in record.bboxes:
                mapped = remap_bbox(tuple(bbox), image.shape[:2], image_size)
                if mapped is None:
                    continue
                if bbox_status(mapped, (image_size, image_size), min_frac, max_frac) != "ok":
                    continue
                candidates.append(Mask.from_bbox(mapped, (image_size, image_size)))
                texts.append(record.object_caption)
                roots.append(record.root)
        if not candidates:
            log.info("image %s dropped: no valid masks after remap", image_id)
            n_dropped += 1
            continue
        ex_seed = _example_seed(image_id, seed)
        try:
            chosen = select_training_mask_indices(candidates, ex_seed, n_max, area_cap)
        except NoValidMasksError:
            n_dropped += 1
            continue
        prepared_path = out_dir / "images" / f"{image_id}.png"
        Image.fromarray(prepared).save(prepared_path)
        spec = ExampleSpec(image_id=image_id, image_path=str(prepared_path),
                           masks=[candidates[i].bbox for i in chosen],
                           prompts=[texts[i] for i in chosen],
                           roots=[roots[i] for i in chosen], seed=ex_seed)
        specs.append(spec)
        corpus.extend(corpus_for_tokenizer(prepared, mask_set_for_spec(spec, image_size),
                                           spec.prompts, palette, ex_seed))

    with open(out_dir / "examples.jsonl", "w") as fh:
        for spec in specs:
            fh.write(json.dumps(asdict(spec)) + "\n")
    tokenizer = WordTokenizer.fit(corpus)
    tokenizer.save(out_dir / "tokenizer.json")
    meta = {"image_size": image_size, "seed": seed, "n_examples": len(specs),
            "n_images_dropped": n_dropped, "vocab_size": tokenizer.vocab_size}
    (out_dir / "dataset_meta.json").write_text(json.dumps(meta, indent=2))
    return meta


def load_examples(prepared_dir: str | Path) -> tuple[list[ExampleSpec], WordTokenizer, dict]:
    prepared_dir = Path(prepared_dir)
    meta = json.loads((prepared_dir / "dataset_meta.json").read_text())
    specs = []
    for line in (prepared_dir / "examples.jsonl").read_text().splitlines():
        data = json.loads(line)
        data["masks"] = [tuple(b) for b in data["masks"]]
        specs.append(ExampleSpec(**data))
    tokenizer = WordTokenizer.load(prepared_dir / "tokenizer.json")
    return specs, tokenizer, meta
