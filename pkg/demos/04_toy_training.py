"""
Adapter training on the toy backbones
=====================================

Both models train small low-rank adapters while their base weights stay
frozen: the prompt generator minimizes a label-masked causal LM loss over
answer tokens only, and the inpainter minimizes noise-prediction MSE with
rectified cross-attention active and text dropped only on single-mask
examples. This demo overfits both on synthetic micro-batches and plots
the loss curves.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import build_promptgen_fixture, make_inpaint_backbone, make_inpaint_items

from multimask_inpaint.inpaint import InpaintTrainConfig, make_training_example, train_inpainter
from multimask_inpaint.promptgen import PromptGenTrainConfig, train_promptgen

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# --- prompt generator ---------------------------------------------------
backbone, dataset = build_promptgen_fixture(n_examples=8, seed=0, d_model=24,
                                            d_hidden=48, lora_rank=8)
print(f"prompt generator: {backbone.n_trainable()} trainable adapter parameters, "
      f"base frozen ({backbone.base_checksum()[:12]}...)")
config = PromptGenTrainConfig(lr=0.05, batch_size=8, max_steps=250, seed=1,
                              lora_rank=8, lora_alpha=16)
with tempfile.TemporaryDirectory() as tmp:
    pg_result = train_promptgen(dataset, backbone, config, tmp)
print(f"  loss {pg_result.initial_loss:.3f} -> {pg_result.final_loss:.3f} "
      f"in {len(pg_result.losses)} steps; "
      f"max clipped grad norm {max(pg_result.grad_norms):.3f} (cap 0.5)")

# --- inpainter ------------------------------------------------------------
inp = make_inpaint_backbone(seed=3)
items = make_inpaint_items(4, seed=4)
train_set = [make_training_example(img, ms, texts, inp) for img, ms, texts in items]
print(f"inpainter: {inp.n_trainable()} trainable adapter parameters on "
      f"{len(inp.cross_attention_sites())} cross-attention sites")
inp_config = InpaintTrainConfig(lr=0.05, batch_size=4, max_steps=250, seed=5,
                                fixed_noise=True, lora_rank=2, lora_alpha=2)
with tempfile.TemporaryDirectory() as tmp:
    ip_result = train_inpainter(train_set, inp, inp_config, tmp)
print(f"  loss {ip_result.initial_loss:.3f} -> {ip_result.final_loss:.3f} "
      f"in {len(ip_result.losses)} steps; "
      f"max clipped grad norm {max(ip_result.grad_norms):.3f} (cap 1.0)")

# --- loss curves ----------------------------------------------------------
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
ax1.plot(pg_result.losses)
ax1.set_title("prompt generator (LM loss)")
ax1.set_xlabel("step")
ax2.plot(ip_result.losses, color="tab:orange")
ax2.set_title("inpainter (noise MSE)")
ax2.set_xlabel("step")
fig.tight_layout()
fig.savefig(out_dir / "training_curves.png", dpi=120)
print("wrote", out_dir / "training_curves.png")
