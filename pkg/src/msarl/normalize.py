"""Canonical normalization of sandbox output and answer literals.

One total function turns raw text into a canonical value: a number, a list of
numbers, or (failing both) the trimmed string itself.  All answer/GT
comparisons in the harness go through the tolerance helpers here so that
"129", " 129\n", "129.0" and "1,2 9"-style noise behave predictably.
"""

from __future__ import annotations

import ast
import math

from .errors import MalformedAnswerLiteral

Number = int | float
NormalizedValue = Number | list[Number] | str

# Relative tolerance for numeric equality; integer answers compare exactly.
REL_TOL = 1e-6


def canonical_number(x: Number) -> Number:
    """Collapse integer-valued floats to int (4.0 -> 4)."""
    if isinstance(x, float) and math.isfinite(x) and x == int(x):
        return int(x)
    return x


def parse_number(text: str) -> Number | None:
    """Parse one numeric literal, stripping thousands separators.

    Returns None when the text is not a finite number.
    """
    s = text.strip().replace(",", "")
    if not s:
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        value = float(s)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return canonical_number(value)


def _parse_number_list(text: str) -> list[Number] | None:
    s = text.strip()
    if not (s.startswith("[") and s.endswith("]")):
        return None
    try:
        parsed = ast.literal_eval(s)
    except (ValueError, SyntaxError):
        return None
    if not isinstance(parsed, list):
        return None
    out: list[Number] = []
    for item in parsed:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            return None
        if isinstance(item, float) and not math.isfinite(item):
            return None
        out.append(canonical_number(item))
    return out


def normalize_text(raw: str) -> NormalizedValue:
    """Normalize raw text to a number, a number list, or a trimmed string.

    Total function: anything that is neither numeric nor a bracketed numeric
    list comes back as the stripped string.
    """
    s = raw.strip()
    number = parse_number(s)
    if number is not None:
        return number
    numbers = _parse_number_list(s)
    if numbers is not None:
        return numbers
    return s


def normalize_answer(literal: str) -> Number:
    """Normalize a final-answer literal; must come out numeric."""
    value = parse_number(literal)
    if value is None:
        raise MalformedAnswerLiteral(f"not a numeric answer literal: {literal!r}")
    return value


def numbers_equal(a: Number, b: Number) -> bool:
    """|a - b| <= REL_TOL * max(1, |b|); b is the reference value."""
    return abs(a - b) <= REL_TOL * max(1.0, abs(b))


def values_equal(a: NormalizedValue, b: NormalizedValue) -> bool:
    """Equality under numeric tolerance; lists compare elementwise."""
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return numbers_equal(a, b)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(numbers_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    return False


def canonical_str(value: NormalizedValue) -> str:
    """Render a normalized value in its canonical text form."""
    if isinstance(value, list):
        return "[" + ", ".join(canonical_str(v) for v in value) + "]"
    if isinstance(value, (int, float)):
        return repr(canonical_number(value))
    return value


def parse_canonical(text: str) -> NormalizedValue:
    """Inverse of canonical_str for persisted GT entries."""
    return normalize_text(text)
