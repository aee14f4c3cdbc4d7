"""Model-provider interfaces and deterministic in-tree mocks.

Three client roles feed the pipeline: a grounded captioner (caption plus
entity bboxes), an object captioner (describes a crop or collage), and an
image-text embedder (similarity audits and metrics). Providers normalize
their raw output to the fixture schema below so the pipeline and its tests
never depend on a live model.

Grounded response schema (version 1):
    {"caption": str,
     "entities": [{"noun_chunk": str, "root": str | null,
                   "bboxes": [[x0, y0, x1, y1], ...]}]}   # relative [0,1] floats

Mock clients derive everything from a content hash of the image, so reruns
are reproducible and restartable pipelines see stable outputs.
"""

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np

GROUNDED_SCHEMA_VERSION = 1


@runtime_checkable
class GroundedCaptioner(Protocol):
    kind: str

    def ground(self, image: np.ndarray) -> dict: ...


@runtime_checkable
class ObjectCaptioner(Protocol):
    kind: str

    def caption(self, image: np.ndarray, prompt: str, prefix: str) -> str: ...


@runtime_checkable
class ImageTextEmbedder(Protocol):
    kind: str

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def _image_seed(image: np.ndarray, salt: int = 0) -> int:
    digest = hashlib.sha256(np.ascontiguousarray(image).tobytes()).digest()
    return int.from_bytes(digest[:4], "little") ^ salt


_MOCK_OBJECTS = [
    ("a wooden boat", "boat"),
    ("a tall tree", "tree"),
    ("an old stone bridge", "bridge"),
    ("a small red house", "house"),
    ("a white bird", "bird"),
    ("a mountain peak", "peak"),
    ("a woman in a blue dress", "woman"),
    ("a basket of fruit", "basket"),
]


class MockGroundedCaptioner:
    """Deterministic grounding: entities and bboxes seeded by image content."""

    kind = "grounded_captioner"

    def __init__(self, seed: int = 0, max_entities: int = 3):
        self.seed = seed
        self.max_entities = max_entities

    def ground(self, image: np.ndarray) -> dict:
        rng = np.random.default_rng(_image_seed(image, self.seed))
        n = int(rng.integers(1, self.max_entities + 1))
        entities = []
        for _ in range(n):
            chunk, root = _MOCK_OBJECTS[int(rng.integers(len(_MOCK_OBJECTS)))]
            n_boxes = 2 if rng.random() < 0.25 else 1
            boxes = []
            for _ in range(n_boxes):
                w = float(rng.uniform(0.15, 0.55))
                h = float(rng.uniform(0.15, 0.55))
                x0 = float(rng.uniform(0.0, 1.0 - w))
                y0 = float(rng.uniform(0.0, 1.0 - h))
                boxes.append([x0, y0, x0 + w, y0 + h])
            entities.append({"noun_chunk": chunk, "root": root, "bboxes": boxes})
        caption = "a painting showing " + " and ".join(e["noun_chunk"] for e in entities)
        return {"caption": caption, "entities": entities,
                "schema_version": GROUNDED_SCHEMA_VERSION}


class MockObjectCaptioner:
    """Echoes the noun chunk wrapped in a deterministic descriptive sentence."""

    kind = "object_captioner"

    _STYLES = ["in warm evening light", "with soft muted colors",
               "rendered in loose brushstrokes", "against a dark background"]

    def __init__(self, seed: int = 0):
        self.seed = seed

    def caption(self, image: np.ndarray, prompt: str, prefix: str) -> str:
        import re

        match = re.search(r"containing (.+?) in a short sentence", prompt)
        chunk = match.group(1) if match else "an object"
        rng = np.random.default_rng(_image_seed(image, self.seed + 1))
        style = self._STYLES[int(rng.integers(len(self._STYLES)))]
        return f"{prefix} {chunk} {style}"


class MockEmbedder:
    """Image embeddings from pooled pixel statistics; text from token hashes.

    Identical inputs embed identically, which is all the audits and metric
    oracles need.
    """

    kind = "image_text_embedder"
    dim = 16

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.max() > 1.5:
            img = img / 255.0
        h, w = img.shape[:2]
        half_h, half_w = max(1, h // 2), max(1, w // 2)
        quads = [img[:half_h, :half_w], img[:half_h, half_w:],
                 img[half_h:, :half_w], img[half_h:, half_w:]]
        feats = [q.mean(axis=(0, 1)) if q.size else np.zeros(3) for q in quads]
        vec = np.concatenate(feats + [[img.mean(), img.std(), 0.5, 0.5]])
        return vec[: self.dim]

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for word in text.lower().split():
            bucket = int(hashlib.sha256(word.encode()).hexdigest(), 16) % self.dim
            vec[bucket] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec
