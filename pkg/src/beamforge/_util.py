"""Small shared helpers: deterministic rounding and key=value text documents."""

from __future__ import annotations

import math

import numpy as np


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero.

    Python's built-in round() rounds halves to even, which would make
    stride and count computations depend on parity; this variant is the
    convention used everywhere counts are derived from ratios.
    """
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def round_half_away_array(x: np.ndarray) -> np.ndarray:
    return (np.floor(np.abs(x) + 0.5) * np.sign(x)).astype(np.int64)


def format_float(x: float) -> str:
    """Shortest decimal that round-trips to the same IEEE-754 double."""
    return repr(float(x))


def parse_kv_text(text: str) -> tuple[dict[str, str], list[tuple[str, str]]]:
    """Parse a line-oriented ``key = value`` document.

    Returns (last-value-wins mapping, ordered list of every pair) so formats
    with repeated keys (e.g. one line per scene box) can see all occurrences.
    Blank lines and ``#`` comments are ignored.
    """
    mapping: dict[str, str] = {}
    pairs: list[tuple[str, str]] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        mapping[key] = value
        pairs.append((key, value))
    return mapping, pairs
