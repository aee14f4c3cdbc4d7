"""Object-level annotation from raw images via pluggable model clients.

Two steps per image: a grounded captioner proposes entities with bboxes,
then an object captioner describes each entity from its crop (or, for
multi-bbox entities, from a square collage treated as a single unit).
Records land append-only in records.jsonl, keyed by (image_id,
entity_index), so interrupted runs resume without repeating work.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .masks import MAX_AREA_FRAC, MIN_AREA_FRAC, Bbox, build_collage, crop, filter_bboxes

log = logging.getLogger(__name__)

GROUNDING_PROMPT = "What are the details of this painting?"
OBJECT_PROMPT_TEMPLATE = ("What are the details of this image containing {noun_chunk} "
                          "in a short sentence? Ignore the painting style.")
OBJECT_CAPTION_PREFIX = "The image shows"
CAPTION_TOKEN_CAP = 40
ALIGNMENT_THRESHOLD = 0.28


class EmptyCaptionError(RuntimeError):
    """Captioner returned nothing twice; the record is invalid."""


@dataclass
class Entity:
    noun_chunk: str
    root: str
    bboxes: list[Bbox]


@dataclass
class GroundedDescription:
    caption: str
    entities: list[Entity]


@dataclass
class AnnotationRecord:
    image_id: str
    entity_index: int
    noun_chunk: str
    root: str
    bboxes: list[Bbox]
    object_caption: str
    collage_used: bool
    global_caption: str = ""
    clip_sim: float | None = None
    crop_path: str | None = None

    def key(self) -> tuple[str, int]:
        return (self.image_id, self.entity_index)


def default_root_extractor(noun_chunk: str) -> str:
    """Naive syntactic head: the last alphabetic word token of the chunk.

    Real deployments inject a proper NLP head finder; records store the
    root verbatim either way so downstream metrics need no parser.
    """
    import re

    words = [w for w in re.findall(r"[a-zA-Z]+", noun_chunk)]
    return words[-1].lower() if words else noun_chunk.strip().lower()


def truncate_tokens(text: str, cap: int) -> str:
    """Cut the original string after its cap-th word token, preserving spacing."""
    import re

    spans = [m.span() for m in re.finditer(r"\w+|[^\w\s]", text)]
    if len(spans) <= cap:
        return text
    return text[: spans[cap - 1][1]]


def _to_pixel_bboxes(rel_boxes, image_size) -> list[Bbox]:
    h, w = image_size
    out = []
    for box in rel_boxes:
        x0, y0, x1, y1 = box
        px = (int(round(x0 * w)), int(round(y0 * h)),
              int(round(x1 * w)), int(round(y1 * h)))
        px = (max(0, px[0]), max(0, px[1]), min(w, px[2]), min(h, px[3]))
        out.append(px)
    return out


def ground_image(image: np.ndarray, client, root_extractor=None,
                 min_frac: float = MIN_AREA_FRAC,
                 max_frac: float = MAX_AREA_FRAC) -> GroundedDescription:
    """Normalize a provider grounding into pixel-space entities.

    Bboxes arrive as relative [0,1] floats and are converted at the stored
    resolution before the area filter. Entities whose bboxes all fail the
    filter are dropped; a provider root is kept only if it is a single
    token of the chunk, otherwise the extractor supplies it.
    """
    root_extractor = root_extractor or default_root_extractor
    raw = client.ground(image)
    image_size = image.shape[:2]
    entities = []
    for item in raw.get("entities", []):
        chunk = item["noun_chunk"].strip()
        boxes = filter_bboxes(_to_pixel_bboxes(item.get("bboxes", []), image_size),
                              image_size, min_frac, max_frac)
        if not boxes:
            log.debug("entity %r dropped: no bbox within area limits", chunk)
            continue
        root = (item.get("root") or "").strip().lower()
        if not root or " " in root or root not in chunk.lower().split():
            root = root_extractor(chunk)
        entities.append(Entity(noun_chunk=chunk, root=root, bboxes=boxes))
    return GroundedDescription(caption=raw.get("caption", ""), entities=entities)


def caption_object(image: np.ndarray, entity: Entity, client,
                   token_cap: int = CAPTION_TOKEN_CAP):
    """Describe one entity from its crop (or collage for >= 2 bboxes).

    Returns (caption truncated to token_cap tokens, collage_used,
    crop_pixels). Retries an empty reply once, then raises
    EmptyCaptionError so the pipeline can skip the record.
    """
    if len(entity.bboxes) >= 2:
        pixels = build_collage(image, entity.bboxes).pixels
        collage_used = True
    else:
        pixels = crop(image, entity.bboxes[0])
        collage_used = False
    prompt = OBJECT_PROMPT_TEMPLATE.format(noun_chunk=entity.noun_chunk)
    reply = client.caption(pixels, prompt, OBJECT_CAPTION_PREFIX)
    if not reply or not reply.strip():
        reply = client.caption(pixels, prompt, OBJECT_CAPTION_PREFIX)
    if not reply or not reply.strip():
        raise EmptyCaptionError(f"empty caption for {entity.noun_chunk!r}")
    return truncate_tokens(reply.strip(), token_cap), collage_used, pixels


def load_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _save_content_addressed(pixels: np.ndarray, out_dir: Path) -> str:
    import io

    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    data = buf.getvalue()
    name = hashlib.sha1(data).hexdigest() + ".png"
    path = out_dir / name
    if not path.exists():
        path.write_bytes(data)
    return str(path)


def load_records(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        data["bboxes"] = [tuple(b) for b in data["bboxes"]]
        records.append(AnnotationRecord(**data))
    return records


def validate_record(record: AnnotationRecord, min_frac: float = MIN_AREA_FRAC,
                    max_frac: float = MAX_AREA_FRAC) -> None:
    """Schema check applied on reload: filtered bboxes, non-empty caption."""
    if not record.object_caption.strip():
        raise ValueError(f"record {record.key()} has an empty caption")
    if not record.bboxes:
        raise ValueError(f"record {record.key()} has no bboxes")


def _annotate_one(image_path: Path, grounder, captioner, embedder, crops_dir: Path,
                  min_frac: float, max_frac: float, token_cap: int):
    image = load_image(image_path)
    grounded = ground_image(image, grounder, min_frac=min_frac, max_frac=max_frac)
    records = []
    for idx, entity in enumerate(grounded.entities):
        try:
            caption, collage_used, pixels = caption_object(image, entity, captioner,
                                                           token_cap)
        except EmptyCaptionError as exc:
            log.warning("%s entity %d skipped: %s", image_path.name, idx, exc)
            continue
        clip_sim = None
        if embedder is not None:
            from .metrics import cosine

            clip_sim = cosine(embedder.embed_image(pixels), embedder.embed_text(caption))
        records.append(AnnotationRecord(
            image_id=image_path.stem, entity_index=idx, noun_chunk=entity.noun_chunk,
            root=entity.root, bboxes=entity.bboxes, object_caption=caption,
            collage_used=collage_used, global_caption=grounded.caption,
            clip_sim=clip_sim, crop_path=_save_content_addressed(pixels, crops_dir)))
    return records


def annotate_directory(images_dir: str | Path, out_dir: str | Path, grounder,
                       captioner, embedder=None, workers: int = 4,
                       min_frac: float = MIN_AREA_FRAC, max_frac: float = MAX_AREA_FRAC,
                       token_cap: int = CAPTION_TOKEN_CAP) -> dict:
    """Annotate every image under images_dir into out_dir/records.jsonl.

    Parallel over images with a bounded pool; a single writer appends
    records. Completed (image_id, entity_index) keys are skipped on rerun.
    Images yielding no valid entity are counted as skipped.
    """
    images_dir, out_dir = Path(images_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    crops_dir = out_dir / "crops"
    crops_dir.mkdir(exist_ok=True)
    records_path = out_dir / "records.jsonl"
    done = {r.key()[0] for r in load_records(records_path)}

    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    todo = [p for p in paths if p.stem not in done]
    n_new = n_skipped = 0
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool, \
            open(records_path, "a") as sink:
        futures = [pool.submit(_annotate_one, p, grounder, captioner, embedder,
                               crops_dir, min_frac, max_frac, token_cap)
                   for p in todo]
        for path, future in zip(todo, futures):
            try:
                records = future.result()
            except Exception:
                log.exception("annotation failed for %s; continuing", path.name)
                n_skipped += 1
                continue
            if not records:
                log.info("%s skipped: no valid masks", path.name)
                n_skipped += 1
                continue
            for record in records:
                sink.write(json.dumps(asdict(record)) + "\n")
                n_new += 1
    return {"images_seen": len(paths), "images_done_before": len(done),
            "records_written": n_new, "images_skipped": n_skipped,
            "records_path": str(records_path)}


def audit_alignment(records: list[AnnotationRecord], embedder,
                    images_dir: str | Path | None = None,
                    threshold: float = ALIGNMENT_THRESHOLD) -> dict:
    """Global (image vs caption) and local (crop vs object caption) cosine
    similarities; records under the threshold are flagged for review."""
    if embedder is None:
        return {"enabled": False}
    global_sims, local_sims, flagged = [], [], []
    seen_images = set()
    from .metrics import cosine

    for record in records:
        if images_dir is not None and record.image_id not in seen_images \
                and record.global_caption:
            seen_images.add(record.image_id)
            for ext in (".png", ".jpg", ".jpeg"):
                path = Path(images_dir) / f"{record.image_id}{ext}"
                if path.exists():
                    sim = cosine(embedder.embed_image(load_image(path)),
                                 embedder.embed_text(record.global_caption))
                    global_sims.append(sim)
                    break
        if record.crop_path and Path(record.crop_path).exists():
            sim = cosine(embedder.embed_image(load_image(record.crop_path)),
                         embedder.embed_text(record.object_caption))
            local_sims.append(sim)
            if sim < threshold:
                flagged.append(list(record.key()))
    return {"enabled": True, "threshold": threshold,
            "mean_global": float(np.mean(global_sims)) if global_sims else None,
            "mean_local": float(np.mean(local_sims)) if local_sims else None,
            "n_flagged": len(flagged), "flagged": flagged}
