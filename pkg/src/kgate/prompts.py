"""Prompt rendering for generator hand-off.

Two modes: ``with_knowledge`` includes the selected pool as a reference
block, ``internal_only`` asks the generator to rely on what it already
knows. Output is byte-stable so downstream callers can golden-test it.
"""
from __future__ import annotations

from typing import Sequence

from .errors import ValidationError

MODES = ("with_knowledge", "internal_only")

_PREAMBLE = (
    'Assuming there is a seeker of knowledge who engages in a conversation (named "apprentice" / "user") '
    'with a wise person who has access to knowledge (named "wizard" / "assistant"), I will provide the '
    "history of their conversation and the available reference knowledge as follows:"
)

_TAIL_START = (
    "As the wizard/assistant, please continue the dialogue with the apprentice/user, "
    "keeping in mind the history of their conversation "
)

_TAIL_KNOWLEDGE = "and the available reference knowledge."
_TAIL_INTERNAL = "and leveraging your knowledge."
_TAIL_END = " Provide a response of less than 20 words."


def render_prompt(history: Sequence[str], pool: Sequence[str], mode: str) -> str:
    """Render the generation prompt for one dialogue turn.

    ``pool`` holds the knowledge texts to cite; it must be non-empty in
    ``with_knowledge`` mode and is ignored in ``internal_only`` mode.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown prompt mode {mode!r}; expected one of {MODES}")
    if mode == "with_knowledge" and not pool:
        raise ValidationError("with_knowledge mode requires a non-empty knowledge pool")
    lines = [_PREAMBLE, "", "History of conversation:"]
    lines.extend(history)
    if mode == "with_knowledge":
        lines.append("")
        lines.append("Reference knowledge:")
        lines.extend(pool)
    lines.append("")
    tail_k = _TAIL_KNOWLEDGE if mode == "with_knowledge" else _TAIL_INTERNAL
    lines.append(_TAIL_START + tail_k + _TAIL_END)
    return "\n".join(lines) + "\n"
