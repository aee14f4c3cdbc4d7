"""In-tree toy vision-language backbone for the prompt-generation engine.

A deliberately small causal LM over word tokens, conditioned on the overlay
image through a pooled-pixel projection mixed into a causal prefix mean.
It exposes the same surface a production instruction-following backbone
provider would: tokenization with offsets, frozen base weights, adapter
injection on its linear layers, per-position logits, analytic backward for
the adapter parameters, and seeded sampling. Runs in seconds on CPU.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .tokenizer import BOS_ID, EOS_ID, WordTokenizer
from .toynn import Embedding, Gelu, Linear, checksum, n_params, trainable_params


class ToyPromptGenBackbone:
    base_model_id = "toy-promptgen-v1"

    def __init__(self, tokenizer: WordTokenizer, d_model: int = 32, d_hidden: int = 64,
                 image_grid: int = 4, max_len: int = 192, seed: int = 0,
                 lora_rank: int = 16, lora_alpha: int = 16, lora_dropout: float = 0.05):
        rng = np.random.default_rng(seed)
        self.tokenizer = tokenizer
        self.d_model = d_model
        self.image_grid = image_grid
        self.max_len = max_len
        self.adapter_spec = {"rank": lora_rank, "alpha": lora_alpha,
                             "dropout": lora_dropout, "target_pattern": "all LLM linear layers"}

        v = tokenizer.vocab_size
        self.embed = Embedding(v, d_model, rng, name="embed")
        self.pos = Embedding(max_len, d_model, rng, name="pos")
        # multimodal projector: pooled pixels -> model width (not an LLM linear)
        self.img_proj = Linear(3 * image_grid * image_grid, d_model, rng, name="img_proj")
        lora = dict(lora_rank=lora_rank, lora_alpha=lora_alpha, lora_dropout=lora_dropout)
        self.fc1 = Linear(d_model, d_hidden, rng, name="fc1", **lora)
        self.act = Gelu()
        self.fc2 = Linear(d_hidden, d_model, rng, name="fc2", **lora)
        self.head = Linear(d_model, v, rng, name="head", **lora)

    # --- parameter bookkeeping -------------------------------------------

    @property
    def _layers(self):
        return [self.embed, self.pos, self.img_proj, self.fc1, self.fc2, self.head]

    @property
    def params(self):
        return [p for layer in self._layers for p in layer.params]

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

    def set_training(self, mode: bool, rng=None):
        for layer in (self.fc1, self.fc2, self.head):
            layer.set_training(mode, rng)

    # --- forward / backward ----------------------------------------------

    def image_features(self, pixels: np.ndarray) -> np.ndarray:
        """Pool the overlay to a tiny grid and flatten to [0,1] floats."""
        g = self.image_grid
        img = Image.fromarray(np.asarray(pixels, dtype=np.uint8)).resize((g, g), Image.BILINEAR)
        return np.asarray(img, dtype=np.float64).reshape(-1) / 255.0

    def forward(self, ids: np.ndarray, img_feats: np.ndarray) -> np.ndarray:
        """Per-position vocab logits for batched sequences.

        ids: (B, L) int; img_feats: (B, 3*g*g). The context at position t
        is the mean of the image vector and token embeddings up to t, so
        information flows strictly left to right.
        """
        ids = np.atleast_2d(ids)
        img_feats = np.atleast_2d(img_feats)
        b, length = ids.shape
        if length > self.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.max_len}")
        e = self.embed.forward(ids)  # (B, L, d)
        img_vec = self.img_proj.forward(img_feats)  # (B, d)
        counts = np.arange(1, length + 1, dtype=np.float64) + 1.0  # image + tokens so far
        prefix = (np.cumsum(e, axis=1) + img_vec[:, None, :]) / counts[None, :, None]
        x = e + self.pos.forward(np.arange(length))[None] + prefix
        z = x + self.fc2.forward(self.act.forward(self.fc1.forward(x)))
        logits = self.head.forward(z)
        return logits

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate adapter gradients; base weights are frozen."""
        dz = self.head.backward(dlogits)
        self.fc1.backward(self.act.backward(self.fc2.backward(dz)))
        # embeddings, positions, and the image projector are frozen: stop here

    # --- sampling ----------------------------------------------------------

    def generate(self, prefix_ids: list[int], img_feat: np.ndarray, temperature: float,
                 max_new_tokens: int, rng: np.random.Generator) -> list[int]:
        """Autoregressive decode; temperature 0 is greedy argmax."""
        ids = list(prefix_ids)
        out = []
        for _ in range(max_new_tokens):
            if len(ids) >= self.max_len:
                break
            logits = self.forward(np.array([ids]), img_feat[None])[0, -1]
            if temperature <= 0.0:
                nxt = int(np.argmax(logits))
            else:
                scaled = logits / temperature
                scaled -= scaled.max()
                probs = np.exp(scaled)
                probs /= probs.sum()
                nxt = int(rng.choice(len(probs), p=probs))
            if nxt == EOS_ID:
                break
            ids.append(nxt)
            out.append(nxt)
        return out

    # --- adapter io --------------------------------------------------------

    def adapter_state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.adapter_params}

    def load_adapter_state(self, state: dict[str, np.ndarray]) -> None:
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


def sequence_ids(tokenizer: WordTokenizer, system_prompt: str, instruction: str,
                 answer_raw: str | None = None):
    """Token ids for [BOS] system instruction [answer] and the answer label mask.

    The mask is True exactly on answer token positions; when answer_raw is
    None this is the generation prefix.
    """
    ids = [BOS_ID]
    for text in (system_prompt, instruction):
        ids.extend(tokenizer.token_id(w) for w, _ in tokenizer.split(text))
    mask = [False] * len(ids)
    if answer_raw is not None:
        answer_ids = [tokenizer.token_id(w) for w, _ in tokenizer.split(answer_raw)]
        ids.extend(answer_ids)
        mask.extend([True] * len(answer_ids))
        ids.append(EOS_ID)
        mask.append(False)
    return np.array(ids), np.array(mask, dtype=bool)
