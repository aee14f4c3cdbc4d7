"""Text-guided multi-mask inpainting toolkit.

Builds object-level annotations from raw images, fine-tunes a
prompt-generating multimodal language model with a color-tag answer
format, and inpaints several masked regions in one diffusion pass by
rectifying cross-attention with a token/space layout.
"""

__version__ = "0.1.0"
