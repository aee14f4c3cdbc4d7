"""Ordered color palette shared by mask overlays, tag names, and the UI.

Color names double as tag names in the answer format, so they must be
single lowercase ASCII words.
"""

import re

# Default ordered palette. Extend via config; order matters because the
# service reports colors to clients in palette order.
DEFAULT_PALETTE = ["red", "green", "blue", "yellow", "purple"]

PALETTE_RGB = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "purple": (128, 0, 128),
    # extras available to configs that need more than five colors
    "orange": (255, 165, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "brown": (139, 69, 19),
    "pink": (255, 192, 203),
}

_NAME_RE = re.compile(r"^[a-z]+$")


def validate_palette(palette: list[str]) -> list[str]:
    """Check palette names are usable as tags; returns the palette unchanged."""
    if not palette:
        raise ValueError("palette must not be empty")
    seen = set()
    for name in palette:
        if not _NAME_RE.match(name):
            raise ValueError(f"palette color {name!r} is not a single lowercase ascii word")
        if name in seen:
            raise ValueError(f"palette color {name!r} appears twice")
        if name not in PALETTE_RGB:
            raise ValueError(f"palette color {name!r} has no RGB value registered")
        seen.add(name)
    return palette


def rgb_of(name: str) -> tuple[int, int, int]:
    return PALETTE_RGB[name]
