"""
Layout tensors and rectified cross-attention
============================================

The core mechanism: each region's prompt tokens are only visible to the
spatial cells of that region. A binary layout (tokens x height x width)
assigns token rows to cells; attention logits are rectified to -inf where
the layout is 0, so softmax gives those pairs exactly zero weight.

This demo builds a two-region layout on a tiny grid, runs rectified
attention, and shows that each region's output depends only on its own
prompt's value rows.
"""

from pathlib import Path

import numpy as np

from multimask_inpaint.codec import RegionPrompt
from multimask_inpaint.layout import build_layout, concat_and_span, dump_layout_debug
from multimask_inpaint.masks import Mask, MaskSet
from multimask_inpaint.rca import AttentionInputs, rca_attention, rca_attention_with_cache
from multimask_inpaint.tokenizer import WordTokenizer

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# Two disjoint masks on an 8x8 grid: left column block and bottom-right.
size = (8, 8)
left = np.zeros(size, dtype=np.uint8)
left[1:5, 0:3] = 1
right = np.zeros(size, dtype=np.uint8)
right[5:8, 5:8] = 1
mask_set = MaskSet([Mask(grid=left), Mask(grid=right)], size)

texts = ["a sailing boat", "a stone tower"]
tok = WordTokenizer.fit(texts)
cp = concat_and_span([RegionPrompt(t, c, i) for i, (t, c) in
                      enumerate(zip(texts, ["blue", "red"]))], tok, max_len=16)
print("concatenated prompt:", cp.full_text)
print("token spans (mask, start, end):", cp.spans)

layout = build_layout(mask_set, cp, size)
print("layout shape (tokens, H, W):", layout.bits.shape)

# Unmasked cells attend to every token; masked cells only to their span
# plus the special rows. Check one cell of each kind:
span0 = set(range(cp.spans[0][1], cp.spans[0][2]))
cell_in_left = set(np.flatnonzero(layout.bits[:, 2, 1]))
cell_outside = set(np.flatnonzero(layout.bits[:, 0, 7]))
print("active tokens at a left-mask cell:", sorted(cell_in_left))
print("  (its span:", sorted(span0), "+ specials", cp.special_token_positions, ")")
print("active tokens at an unmasked cell:", len(cell_outside), "of", len(cp))

dump_layout_debug(layout, cp, out_dir / "layout_debug")
print("wrote span heatmaps to", out_dir / "layout_debug")

# Rectified attention: craft V rows so each token span carries a distinct
# "signal" channel, and confirm isolation between the regions.
rng = np.random.default_rng(0)
n_tok = len(cp)
d = 4
inputs = AttentionInputs(q=rng.normal(size=(1, 64, d)),
                         k=rng.normal(size=(1, n_tok, d)),
                         v=np.zeros((1, n_tok, d)), spatial=size)
s0, e0 = cp.spans[0][1], cp.spans[0][2]
s1, e1 = cp.spans[1][1], cp.spans[1][2]
inputs.v[0, s0:e0, 0] = 1.0   # region-0 tokens write channel 0
inputs.v[0, s1:e1, 1] = 1.0   # region-1 tokens write channel 1

out = rca_attention(inputs, layout).reshape(8, 8, d)
print("\nchannel-0 mass inside left mask:", float(out[..., 0][left == 1].mean()))
print("channel-0 mass inside right mask:", float(out[..., 0][right == 1].mean()))
print("channel-1 mass inside right mask:", float(out[..., 1][right == 1].mean()))
print("channel-1 mass inside left mask:", float(out[..., 1][left == 1].mean()))

# Zero-weight guarantee, stated exactly:
_, cache = rca_attention_with_cache(inputs, layout)
weights = cache["weights"][0].reshape(n_tok, 8, 8)
assert (weights[layout.bits == 0] == 0.0).all()
print("\nzero attention weight wherever the layout is 0: verified")
