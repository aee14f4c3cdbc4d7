"""Color-tag answer format: encode per-region prompts, parse model output, build instructions.

The answer serialization wraps each region description in tags named after
the color painted over its mask: ``<blue> a wooden boat </blue> <red> a
tall tree </red>``. Parsing is defensive — model output never raises, it
yields per-color statuses instead.
"""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .masks import ColoredOverlayImage
from .palette import DEFAULT_PALETTE

N_MAX = 5

# Statuses reported by parse_answer, decided purely by tag presence:
# both tags found -> ok; open tag without close -> malformed (text runs to
# end of string); no open tag -> missing.
STATUS_OK = "ok"
STATUS_MISSING = "missing"
STATUS_MALFORMED = "malformed"


@dataclass
class RegionPrompt:
    """Text for one mask plus the palette color that marks it."""

    text: str
    color_name: str
    mask_index: int

    def validate(self) -> "RegionPrompt":
        if not self.text.strip():
            raise ValueError(f"region prompt for {self.color_name!r} is empty")
        return self


@dataclass
class TaggedAnswer:
    raw: str
    segments: list[tuple[str, str]]  # (color_name, text)


@dataclass
class ParseResult:
    prompts: list[RegionPrompt]
    statuses: dict[str, str]  # color_name -> status
    raw: str

    @property
    def all_ok(self) -> bool:
        return all(s == STATUS_OK for s in self.statuses.values())


@dataclass
class InstructionBundle:
    system_prompt: str
    instruction: str
    overlay: ColoredOverlayImage | None = None
    template_version: str = "v1"


def escape_text(text: str) -> str:
    """Escape tag characters so prompts can contain literal '<'."""
    return text.replace("&", "&amp;").replace("<", "&lt;")


def unescape_text(text: str) -> str:
    return text.replace("&lt;", "<").replace("&amp;", "&")


def encode_answer(prompts: list[RegionPrompt]) -> TaggedAnswer:
    """Serialize prompts as '<c> text </c>' blocks separated by single spaces.

    Colors must be distinct (one tag pair per region) and every prompt
    must have non-blank text.
    """
    colors = [p.color_name for p in prompts]
    if len(set(colors)) != len(colors):
        raise ValueError(f"duplicate colors in answer: {colors}")
    blocks = []
    segments = []
    for p in prompts:
        text = p.validate().text.strip()
        blocks.append(f"<{p.color_name}> {escape_text(text)} </{p.color_name}>")
        segments.append((p.color_name, text))
    return TaggedAnswer(raw=" ".join(blocks), segments=segments)


def parse_answer(raw: str, expected_colors: list[str]) -> ParseResult:
    """Extract the text between <c>...</c> for each expected color.

    First occurrence wins when a tag repeats. An unclosed tag consumes to
    the end of the string and is reported malformed; an absent tag is
    reported missing with empty text. Never raises on model output.
    """
    prompts = []
    statuses = {}
    for k, color in enumerate(expected_colors):
        open_tag, close_tag = f"<{color}>", f"</{color}>"
        start = raw.find(open_tag)
        if start < 0:
            text, status = "", STATUS_MISSING
        else:
            body_start = start + len(open_tag)
            end = raw.find(close_tag, body_start)
            if end < 0:
                text, status = unescape_text(raw[body_start:].strip()), STATUS_MALFORMED
            else:
                text, status = unescape_text(raw[body_start:end].strip()), STATUS_OK
        prompts.append(RegionPrompt(text=text, color_name=color, mask_index=k))
        statuses[color] = status
    return ParseResult(prompts=prompts, statuses=statuses, raw=raw)


def _load_template(name: str, version: str) -> str:
    ref = resources.files("multimask_inpaint") / "templates" / f"{name}_{version}.txt"
    return ref.read_text().strip()


def build_instruction(color_order: list[str], n: int | None = None,
                      template_version: str = "v1",
                      overlay: ColoredOverlayImage | None = None) -> InstructionBundle:
    """Render the deterministic instruction naming the colors in answer order."""
    n = len(color_order) if n is None else n
    if n != len(color_order):
        raise ValueError(f"n={n} but {len(color_order)} colors given")
    if not 1 <= n <= N_MAX:
        raise ValueError(f"n={n} outside [1, {N_MAX}]")
    system_prompt = _load_template("system", template_version)
    tmpl = _load_template("instruction_single" if n == 1 else "instruction_multi",
                          template_version)
    instruction = tmpl.format(n=n, color_list=", ".join(color_order),
                              first_color=color_order[0])
    return InstructionBundle(system_prompt=system_prompt, instruction=instruction,
                             overlay=overlay, template_version=template_version)


def append_answer_log(path: str | Path, result: ParseResult) -> None:
    """Append one JSONL row {raw, segments, statuses} for a parsed answer."""
    row = {"raw": result.raw,
           "segments": [[p.color_name, p.text] for p in result.prompts],
           "statuses": result.statuses}
    with open(path, "a") as f:
        f.write(json.dumps(row) + "\n")
