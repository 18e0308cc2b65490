"""Line-based key/value documents used for all structured-text artifacts.

One record per line, ``dotted.key = value``.  Values are integers, reals,
bare tokens, or whitespace-separated numeric vectors.  Reals are written
with 17 significant digits so a write/read cycle is bit-exact for float64.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np


def format_float(x: float) -> str:
    """17-significant-digit decimal form, round-trip exact for float64."""
    return format(float(x), ".17g")


def _format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_format_value(v) for v in value)
    raise TypeError(f"unsupported kvdoc value type: {type(value)!r}")


def dump_kv(records: dict[str, object], header: str | None = None) -> str:
    lines: list[str] = []
    if header:
        lines.append(f"# {header}")
    for key, value in records.items():
        text = _format_value(value)
        if "\n" in text:
            raise ValueError(f"value for {key!r} contains a newline")
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def _parse_token(token: str):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def parse_kv(text: str) -> dict[str, object]:
    """Parse a kv document; vectors come back as lists of numbers."""
    records: dict[str, object] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed kv line: {raw!r}")
        key, _, rest = line.partition("=")
        key = key.strip()
        tokens = rest.split()
        if not tokens:
            records[key] = ""
        elif len(tokens) == 1:
            records[key] = _parse_token(tokens[0])
        else:
            parsed = [_parse_token(t) for t in tokens]
            if any(isinstance(p, str) for p in parsed):
                records[key] = rest.strip()
            else:
                records[key] = parsed
    return records


def write_kv(path, records: dict[str, object], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dump_kv(records, header=header))


def read_kv(path) -> dict[str, object]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_kv(handle.read())


def as_float_array(value, length: int | None = None) -> np.ndarray:
    """Coerce a parsed kv value to a float64 vector."""
    if isinstance(value, (int, float)):
        arr = np.array([value], dtype=float)
    else:
        arr = np.asarray(value, dtype=float)
    if length is not None and arr.size != length:
        raise ValueError(f"expected vector of length {length}, got {arr.size}")
    return arr


def collect_prefixed(records: dict[str, object], prefix: str) -> dict[str, object]:
    """Sub-dict of records under ``prefix.`` with the prefix stripped."""
    out = {}
    lead = prefix + "."
    for key, value in records.items():
        if key.startswith(lead):
            out[key[len(lead):]] = value
    return out


def iter_indexed(records: dict[str, object], pattern: str) -> Iterable[tuple[int, object]]:
    """Yield (index, value) for keys like ``pattern`` with {i} placeholders."""
    i = 1
    while True:
        key = pattern.format(i=i)
        if key not in records:
            return
        yield i, records[key]
        i += 1
