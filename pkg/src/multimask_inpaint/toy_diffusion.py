"""In-tree toy latent-diffusion inpainting backbone.

Small enough to train on CPU in seconds yet shaped like the real thing:
a latent codec, a frozen text encoder, two cross-attention sites at
different latent resolutions (the hook contract's enumerable sites), LoRA
adapters on every cross-attention linear, and manual backward passes that
reach exactly those adapters. Inputs follow the inpainting convention of
concatenating the noisy latent, the total mask, and the masked-image
latent along channels.
"""

import json
from pathlib import Path

import numpy as np

from .rca import AttentionInputs, rca_attention_backward, rca_attention_with_cache
from .tokenizer import WordTokenizer
from .toynn import (
    Embedding,
    Linear,
    ResidualMLP,
    checksum,
    n_params,
    sinusoidal_embedding,
    trainable_params,
)


class ToyLatentCodec:
    """Block-mean pixels to latent channels through a fixed random projection."""

    def __init__(self, image_size: int = 512, latent_res: int = 16, latent_ch: int = 4,
                 seed: int = 0):
        if image_size % latent_res != 0:
            raise ValueError("latent resolution must divide the image size")
        self.image_size = image_size
        self.latent_res = latent_res
        self.latent_ch = latent_ch
        self.factor = image_size // latent_res
        rng = np.random.default_rng(seed)
        self.proj = rng.normal(0.0, 1.0, size=(3, latent_ch)) / np.sqrt(3)
        self.inv_proj = np.linalg.pinv(self.proj)

    def encode(self, image01: np.ndarray) -> np.ndarray:
        """(H, W, 3) floats in [0,1] -> (h, w, C) roughly unit-scale latents."""
        h = w = self.image_size
        if image01.shape != (h, w, 3):
            raise ValueError(f"expected ({h}, {w}, 3) image, got {image01.shape}")
        f = self.factor
        blocks = image01.reshape(self.latent_res, f, self.latent_res, f, 3).mean(axis=(1, 3))
        return (blocks * 2.0 - 1.0) @ self.proj

    def decode(self, latent: np.ndarray) -> np.ndarray:
        blocks = (latent @ self.inv_proj + 1.0) / 2.0
        up = np.repeat(np.repeat(blocks, self.factor, axis=0), self.factor, axis=1)
        return np.clip(up, 0.0, 1.0)


class ToyTextEncoder:
    """Frozen word embeddings plus positions; fixed context length."""

    def __init__(self, tokenizer: WordTokenizer, d_txt: int, context_len: int,
                 rng: np.random.Generator):
        self.tokenizer = tokenizer
        self.context_len = context_len
        self.embed = Embedding(tokenizer.vocab_size, d_txt, rng, name="txt_embed")
        self.pos = Embedding(context_len, d_txt, rng, name="txt_pos")

    @property
    def params(self):
        return self.embed.params + self.pos.params

    def encode_text(self, text: str) -> np.ndarray:
        ids = self.tokenizer.encode(text, max_len=self.context_len,
                                    pad_to=self.context_len).ids
        return self.encode_ids(np.array(ids))

    def encode_ids(self, ids: np.ndarray) -> np.ndarray:
        if len(ids) != self.context_len:
            raise ValueError(f"expected {self.context_len} token ids, got {len(ids)}")
        return self.embed.forward(ids) + self.pos.forward(np.arange(self.context_len))


class CrossAttnBlock:
    """x + Wo(rca_attention(Wq x, Wk text, Wv text)); a hookable site.

    ``layout_provider`` is consulted once per forward with this block's
    resolution; None means vanilla attention.
    """

    def __init__(self, d_model: int, d_txt: int, heads: int, resolution: tuple[int, int],
                 rng: np.random.Generator, lora_rank: int, lora_alpha: float,
                 name: str):
        if d_model % heads != 0:
            raise ValueError("heads must divide d_model")
        self.heads = heads
        self.d_head = d_model // heads
        self.resolution = tuple(resolution)
        self.layout_provider = None
        lora = dict(lora_rank=lora_rank, lora_alpha=lora_alpha)
        self.wq = Linear(d_model, d_model, rng, name=f"{name}.wq", **lora)
        self.wk = Linear(d_txt, d_model, rng, name=f"{name}.wk", **lora)
        self.wv = Linear(d_txt, d_model, rng, name=f"{name}.wv", **lora)
        self.wo = Linear(d_model, d_model, rng, name=f"{name}.wo", **lora)
        self._cache = None

    @property
    def params(self):
        return self.wq.params + self.wk.params + self.wv.params + self.wo.params

    def _split(self, flat: np.ndarray) -> np.ndarray:
        n = flat.shape[0]
        return flat.reshape(n, self.heads, self.d_head).transpose(1, 0, 2)

    def _merge(self, headed: np.ndarray) -> np.ndarray:
        heads, n, dh = headed.shape
        return headed.transpose(1, 0, 2).reshape(n, heads * dh)

    def forward(self, x: np.ndarray, text: np.ndarray) -> np.ndarray:
        h, w, d = x.shape
        if (h, w) != self.resolution:
            raise ValueError(f"block at {self.resolution} got features {x.shape}")
        flat = x.reshape(h * w, d)
        q = self._split(self.wq.forward(flat))
        k = self._split(self.wk.forward(text))
        v = self._split(self.wv.forward(text))
        layout = self.layout_provider(self.resolution) if self.layout_provider else None
        inputs = AttentionInputs(q=q, k=k, v=v, spatial=(h, w))
        attn, attn_cache = rca_attention_with_cache(inputs, layout)
        merged = self._merge(attn)
        out = self.wo.forward(merged)
        self._cache = (x.shape, attn_cache)
        return x + out.reshape(h, w, d)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        shape, attn_cache = self._cache
        h, w, d = shape
        dflat = dy.reshape(h * w, d)
        d_merged = self.wo.backward(dflat)
        dq, dk, dv = rca_attention_backward(attn_cache, self._split(d_merged))
        dx_flat = self.wq.backward(self._merge(dq))
        self.wk.backward(self._merge(dk))  # text encoder frozen: gradient stops there
        self.wv.backward(self._merge(dv))
        return dy + dx_flat.reshape(h, w, d)


def pool_mean_2x(x: np.ndarray) -> np.ndarray:
    h, w, d = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, d).mean(axis=(1, 3))


def pool_mean_2x_backward(dy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dy, 2, axis=0), 2, axis=1) / 4.0


def upsample_2x(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def upsample_2x_backward(dy: np.ndarray) -> np.ndarray:
    h, w, d = dy.shape
    return dy.reshape(h // 2, 2, w // 2, 2, d).sum(axis=(1, 3))


class ToyInpaintBackbone:
    base_model_id = "toy-inpaint-v1"

    def __init__(self, tokenizer: WordTokenizer, image_size: int = 512,
                 latent_res: int = 16, latent_ch: int = 4, d_model: int = 16,
                 d_txt: int = 16, heads: int = 2, context_len: int = 24,
                 seed: int = 0, lora_rank: int = 4, lora_alpha: int = 4):
        if latent_res % 2 != 0:
            raise ValueError("latent_res must be even (one 2x downsampling stage)")
        rng = np.random.default_rng(seed)
        self.tokenizer = tokenizer
        self.image_size = image_size
        self.latent_res = latent_res
        self.latent_ch = latent_ch
        self.d_model = d_model
        self.context_len = context_len
        self.adapter_spec = {"rank": lora_rank, "alpha": lora_alpha,
                             "target_pattern": "all cross-attention linear layers"}
        self.codec = ToyLatentCodec(image_size, latent_res, latent_ch, seed=seed + 1)
        self.text_encoder = ToyTextEncoder(tokenizer, d_txt, context_len, rng)
        self.in_proj = Linear(2 * latent_ch + 1, d_model, rng, name="in_proj")
        self.time_proj = Linear(d_model, d_model, rng, name="time_proj")
        self.mlp1 = ResidualMLP(d_model, 2 * d_model, rng, name="mlp1")
        self.xattn1 = CrossAttnBlock(d_model, d_txt, heads, (latent_res, latent_res),
                                     rng, lora_rank, lora_alpha, name="xattn1")
        self.mlp2 = ResidualMLP(d_model, 2 * d_model, rng, name="mlp2")
        half = latent_res // 2
        self.xattn2 = CrossAttnBlock(d_model, d_txt, heads, (half, half),
                                     rng, lora_rank, lora_alpha, name="xattn2")
        self.out_proj = Linear(d_model, latent_ch, rng, name="out_proj")

    # --- hook contract ------------------------------------------------------

    def cross_attention_sites(self):
        return [self.xattn1, self.xattn2]

    @property
    def cross_attention_resolutions(self) -> list[tuple[int, int]]:
        return [site.resolution for site in self.cross_attention_sites()]

    # --- parameters ---------------------------------------------------------

    @property
    def params(self):
        layers = [self.text_encoder, self.in_proj, self.time_proj, self.mlp1,
                  self.xattn1, self.mlp2, self.xattn2, self.out_proj]
        return [p for layer in layers for p in layer.params]

    @property
    def adapter_params(self):
        return trainable_params(self.params)

    @property
    def base_params(self):
        return [p for p in self.params if not p.trainable]

    def base_checksum(self) -> str:
        return checksum(self.base_params)

    def n_trainable(self) -> int:
        return n_params(self.adapter_params)

    # --- forward / backward ---------------------------------------------------

    def forward(self, z_t: np.ndarray, t: int, text_emb: np.ndarray,
                mask_lat: np.ndarray, masked_lat: np.ndarray) -> np.ndarray:
        """Predict the noise in z_t given mask, masked-image latent, and text."""
        r = self.latent_res
        x_in = np.concatenate([z_t, mask_lat[..., None], masked_lat], axis=-1)
        t_vec = self.time_proj.forward(sinusoidal_embedding(t, self.d_model)[None])[0]
        f0 = self.in_proj.forward(x_in) + t_vec
        f1 = self.mlp1.forward(f0)
        f2 = self.xattn1.forward(f1, text_emb)
        g1 = self.mlp2.forward(pool_mean_2x(f2))
        g2 = self.xattn2.forward(g1, text_emb)
        h = f2 + upsample_2x(g2)
        return self.out_proj.forward(h)

    def backward(self, d_eps: np.ndarray) -> None:
        """Accumulate adapter grads; stops at the first cross-attention site."""
        dh = self.out_proj.backward(d_eps)
        dg2 = upsample_2x_backward(dh)
        dg1 = self.xattn2.backward(dg2)
        df2 = dh + pool_mean_2x_backward(self.mlp2.backward(dg1))
        self.xattn1.backward(df2)
        # everything upstream of xattn1 is frozen

    # --- adapter io -----------------------------------------------------------

    def adapter_state(self):
        return {p.name: p.value.copy() for p in self.adapter_params}

    def load_adapter_state(self, state):
        for p in self.adapter_params:
            p.value[...] = state[p.name]

    def save_adapter(self, out_dir: str | Path, extra_manifest: dict | None = None) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        np.savez(out_dir / "adapter.npz", **self.adapter_state())
        manifest = {"base_model_id": self.base_model_id, **self.adapter_spec}
        manifest.update(extra_manifest or {})
        (out_dir / "adapter_manifest.json").write_text(json.dumps(manifest, indent=2))
        return out_dir

    def load_adapter(self, adapter_dir: str | Path) -> None:
        with np.load(Path(adapter_dir) / "adapter.npz") as data:
            self.load_adapter_state({k: data[k] for k in data.files})
