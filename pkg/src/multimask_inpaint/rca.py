"""Rectified cross-attention: mask attention logits with a token/space layout.

Image patches are queries, text embeddings are keys/values. Logits where
the layout forbids a (token, cell) pair are replaced by the most negative
finite value of the compute dtype, so softmax over tokens assigns them
exactly zero weight (the exp underflows to 0.0) without the NaN hazards of
a literal -inf in lower precisions. Tests assert the zero-weight
guarantee, never the sentinel itself.

Shapes: Q is (heads, H*W, d); K and V are (heads, T, d); logit maps are
(heads, T, H, W) with the token axis leading, one map per head. The same
layout applies to every head.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layout import LayoutTensor


class UnsupportedBackboneError(TypeError):
    """Backbone does not expose enumerable cross-attention sites."""


@dataclass
class AttentionInputs:
    q: np.ndarray  # (heads, H*W, d)
    k: np.ndarray  # (heads, T, d)
    v: np.ndarray  # (heads, T, d)
    spatial: tuple[int, int]  # (H_lat, W_lat)
    scale: float | None = None  # defaults to 1/sqrt(d)

    def __post_init__(self):
        q, k, v = (np.asarray(a, dtype=np.float64) for a in (self.q, self.k, self.v))
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ValueError("q, k, v must be 3-D (heads, seq, d)")
        heads, hw, d = q.shape
        if k.shape != (heads, k.shape[1], d) or v.shape != k.shape:
            raise ValueError(f"inconsistent shapes q={q.shape} k={k.shape} v={v.shape}")
        if hw != self.spatial[0] * self.spatial[1]:
            raise ValueError(f"q has {hw} cells but spatial={self.spatial}")
        if d <= 0:
            raise ValueError("d must be positive")
        self.q, self.k, self.v = q, k, v
        if self.scale is None:
            self.scale = 1.0 / np.sqrt(d)

    @property
    def n_tokens(self) -> int:
        return self.k.shape[1]


@dataclass
class RectifiedMap:
    logits: np.ndarray  # (heads, T, H, W) with sentinel at rectified-out entries
    provenance: str  # layout id


def attention_logits(inputs: AttentionInputs) -> np.ndarray:
    """Scaled dot products Q·K^T / sqrt(d), token axis first: (heads, T, H, W)."""
    h, w = inputs.spatial
    logits = np.einsum("hcd,htd->htc", inputs.q, inputs.k) * inputs.scale
    return logits.reshape(logits.shape[0], logits.shape[1], h, w)


def rectify(logits: np.ndarray, layout: LayoutTensor,
            on_fully_masked: str = "error") -> RectifiedMap:
    """Keep logits where the layout is 1, sentinel (-inf stand-in) elsewhere.

    A cell with no active token is a construction bug; the default policy
    raises, ``on_fully_masked="fallback"`` restores the unrectified column
    for such cells with a warning instead.
    """
    if logits.shape[1:] != layout.bits.shape:
        raise ValueError(f"logits {logits.shape} do not match layout {layout.bits.shape}")
    active = layout.bits.astype(bool)[None]  # broadcast over heads
    covered = layout.bits.any(axis=0)
    if not covered.all():
        if on_fully_masked == "error":
            raise ValueError("layout leaves some cell with no active token")
        import logging
        logging.getLogger(__name__).warning(
            "fully-masked cells fall back to unrectified attention")
        active = active | ~covered[None, None]
    sentinel = np.finfo(logits.dtype).min
    rectified = np.where(active, logits, sentinel)
    return RectifiedMap(logits=rectified, provenance=layout.layout_id)


def _softmax_tokens(logit_maps: np.ndarray) -> np.ndarray:
    """Softmax over the token axis of (heads, T, cells); sentinel rows get exact 0."""
    shifted = logit_maps - logit_maps.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def rca_attention(inputs: AttentionInputs, layout: LayoutTensor | None = None,
                  on_fully_masked: str = "error") -> np.ndarray:
    """Rectified attention output (heads, H*W, d); layout=None means vanilla."""
    out, _ = rca_attention_with_cache(inputs, layout, on_fully_masked)
    return out


def rca_attention_with_cache(inputs: AttentionInputs, layout: LayoutTensor | None = None,
                             on_fully_masked: str = "error"):
    """Forward pass that also returns the cache needed by rca_attention_backward."""
    heads = inputs.q.shape[0]
    n_cells = inputs.q.shape[1]
    logits = attention_logits(inputs)
    if layout is not None:
        logits = rectify(logits, layout, on_fully_masked).logits
    flat = logits.reshape(heads, inputs.n_tokens, n_cells)
    weights = _softmax_tokens(flat)  # (heads, T, cells)
    out = np.einsum("htc,htd->hcd", weights, inputs.v)
    cache = {"weights": weights, "inputs": inputs}
    return out, cache


def rca_attention_backward(cache: dict, d_out: np.ndarray):
    """Analytic gradients (dQ, dK, dV) of rca_attention for upstream d_out.

    Rectified-out pairs carry exactly zero weight, so their logit
    gradients vanish; a token inactive at every cell gets zero dK and dV.
    """
    weights = cache["weights"]  # (heads, T, cells)
    inputs: AttentionInputs = cache["inputs"]
    d_out = np.asarray(d_out, dtype=np.float64)

    dv = np.einsum("htc,hcd->htd", weights, d_out)
    dw = np.einsum("hcd,htd->htc", d_out, inputs.v)
    # softmax backward per (head, cell) column
    da = weights * (dw - (weights * dw).sum(axis=1, keepdims=True))
    dq = np.einsum("htc,htd->hcd", da, inputs.k) * inputs.scale
    dk = np.einsum("htc,hcd->htd", da, inputs.q) * inputs.scale
    return dq, dk, dv


# --- hook contract -----------------------------------------------------------

@dataclass
class HookHandle:
    """Undoable installation record; remove() restores vanilla attention."""

    _sites: list = field(default_factory=list)
    _previous: list = field(default_factory=list)
    _installed: bool = True

    def remove(self) -> None:
        if not self._installed:
            return
        for site, prev in zip(self._sites, self._previous):
            site.layout_provider = prev
        self._installed = False

    def __enter__(self) -> "HookHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.remove()


def install_hooks(backbone, layout_provider) -> HookHandle:
    """Point every cross-attention site of the backbone at layout_provider.

    The provider is called as ``layout_provider(resolution)`` once per site
    per forward pass and returns a LayoutTensor or None (vanilla). The
    returned handle restores the previous providers on remove().
    """
    sites_fn = getattr(backbone, "cross_attention_sites", None)
    if sites_fn is None:
        raise UnsupportedBackboneError(
            f"{type(backbone).__name__} has no cross_attention_sites()")
    sites = list(sites_fn())
    if not sites:
        raise UnsupportedBackboneError("backbone reports no cross-attention sites")
    handle = HookHandle()
    for site in sites:
        if not hasattr(site, "layout_provider") or not hasattr(site, "resolution"):
            raise UnsupportedBackboneError(
                "cross-attention site lacks layout_provider/resolution attributes")
        handle._sites.append(site)
        handle._previous.append(site.layout_provider)
        site.layout_provider = layout_provider
    return handle


def all_ones_provider(n_tokens: int):
    """Layout provider that turns RCA into vanilla attention everywhere."""
    def provider(resolution: tuple[int, int]) -> LayoutTensor:
        return LayoutTensor.all_ones(n_tokens, tuple(resolution))
    return provider


def dump_attention_heatmap(weights: np.ndarray, spatial: tuple[int, int],
                           path: str | Path) -> None:
    """Save a token-marginalized attention heatmap (mean max-weight per cell)."""
    from PIL import Image

    h, w = spatial
    per_cell = weights.max(axis=1).mean(axis=0).reshape(h, w)  # (cells,) -> (h, w)
    lo, hi = float(per_cell.min()), float(per_cell.max())
    norm = (per_cell - lo) / (hi - lo) if hi > lo else np.zeros_like(per_cell)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((norm * 255).astype(np.uint8), mode="L").save(path)
