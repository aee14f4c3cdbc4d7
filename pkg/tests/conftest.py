import numpy as np
import pytest

from multimask_inpaint.masks import Mask, MaskSet
from multimask_inpaint.promptgen import assemble_example, corpus_for_tokenizer
from multimask_inpaint.tokenizer import WordTokenizer
from multimask_inpaint.toy_llm import ToyPromptGenBackbone

PHRASES = [
    "a wooden boat on the water",
    "a tall green tree",
    "a stone bridge over a river",
    "a small red house",
    "a flock of white birds",
    "a mountain under clouds",
    "an old man with a hat",
    "a basket of ripe fruit",
]


def make_promptgen_items(n_examples: int, seed: int, image_size=(32, 32)):
    """Synthetic (image, mask_set, texts, seed) tuples for promptgen training."""
    rng = np.random.default_rng(seed)
    items = []
    h, w = image_size
    for i in range(n_examples):
        image = rng.integers(0, 255, (h, w, 3)).astype(np.uint8)
        n_masks = int(rng.integers(1, 3))
        masks = []
        for _ in range(n_masks):
            x0, y0 = rng.integers(0, w // 2, 2)
            bw, bh = rng.integers(3, w // 3, 2)
            masks.append(Mask.from_bbox((int(x0), int(y0), int(x0 + bw), int(y0 + bh)),
                                        image_size))
        texts = [PHRASES[int(rng.integers(len(PHRASES)))] for _ in range(n_masks)]
        items.append((image, MaskSet(masks, image_size), texts, seed + i))
    return items


def build_promptgen_fixture(n_examples=8, seed=0, **backbone_kwargs):
    """Tokenizer fit on the corpus, a toy backbone, and assembled examples."""
    items = make_promptgen_items(n_examples, seed)
    corpus = []
    for image, ms, texts, s in items:
        corpus.extend(corpus_for_tokenizer(image, ms, texts, None, s))
    tok = WordTokenizer.fit(corpus)
    backbone = ToyPromptGenBackbone(tok, **backbone_kwargs)
    dataset = [assemble_example(image, ms, texts, None, s, tok)
               for image, ms, texts, s in items]
    return backbone, dataset


@pytest.fixture(scope="module")
def promptgen_setup():
    return build_promptgen_fixture(n_examples=8, seed=0)


def make_inpaint_backbone(image_size=32, latent_res=8, seed=1, **kwargs):
    from multimask_inpaint.toy_diffusion import ToyInpaintBackbone

    tok = WordTokenizer.fit(PHRASES)
    defaults = dict(d_model=8, d_txt=8, heads=2, context_len=12,
                    lora_rank=2, lora_alpha=2)
    defaults.update(kwargs)
    return ToyInpaintBackbone(tok, image_size=image_size, latent_res=latent_res,
                              seed=seed, **defaults)


def make_inpaint_items(n_examples, seed, image_size=32, max_masks=2):
    """(image01, mask_set, texts) tuples for inpainter training."""
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n_examples):
        image = rng.random((image_size, image_size, 3))
        n_masks = int(rng.integers(1, max_masks + 1))
        masks = []
        for _ in range(n_masks):
            x0, y0 = rng.integers(0, image_size // 2, 2)
            bw, bh = rng.integers(image_size // 8, image_size // 3, 2)
            masks.append(Mask.from_bbox(
                (int(x0), int(y0), int(min(image_size, x0 + bw)),
                 int(min(image_size, y0 + bh))), (image_size, image_size)))
        texts = [PHRASES[int(rng.integers(len(PHRASES)))] for _ in range(n_masks)]
        items.append((image, MaskSet(masks, (image_size, image_size)), texts))
    return items
