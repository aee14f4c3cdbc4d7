"""
The color-tag answer format
===========================

Per-region descriptions travel between the prompt generator and the rest
of the pipeline as tagged blocks: <blue> ... </blue> <red> ... </red>.
This demo round-trips a two-region answer, shows how defensive parsing
reports partial model output, and prints the instruction the generator is
asked to follow.
"""

from multimask_inpaint.codec import (
    RegionPrompt,
    build_instruction,
    encode_answer,
    parse_answer,
)

prompts = [
    RegionPrompt(text="a wooden boat drifting near the shore", color_name="blue",
                 mask_index=0),
    RegionPrompt(text="a tall tree with golden leaves", color_name="red", mask_index=1),
]

answer = encode_answer(prompts)
print("encoded answer:")
print(" ", answer.raw)

parsed = parse_answer(answer.raw, ["blue", "red"])
print("round-trip texts:", [p.text for p in parsed.prompts])
print("statuses:", parsed.statuses)

# Model output is never trusted: missing or unclosed tags degrade to
# per-color statuses instead of exceptions.
for raw in [
    "<blue> a boat </blue>",                      # red missing
    "<blue> a boat",                              # unclosed -> recovered
    "<red> swapped order </red> <blue> fine </blue>",  # order-insensitive
]:
    result = parse_answer(raw, ["blue", "red"])
    print(f"{raw!r:55} -> {result.statuses}")

# Literal '<' inside a prompt survives a round trip via escaping.
tricky = RegionPrompt(text="math like 1 < 2 and a literal </red> string",
                      color_name="green", mask_index=0)
encoded = encode_answer([tricky])
print("escaped on the wire:", encoded.raw)
print("recovered:", parse_answer(encoded.raw, ["green"]).prompts[0].text)

# The instruction names the colors in answer order.
bundle = build_instruction(["blue", "red"])
print("\nsystem prompt:", bundle.system_prompt[:72], "...")
print("instruction:", bundle.instruction)
