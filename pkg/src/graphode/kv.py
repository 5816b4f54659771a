"""Line-oriented ``key=value`` text used by manifests, configs, and checkpoints."""

from __future__ import annotations


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` comments and blank lines are skipped.

    Raises ValueError on malformed or duplicate entries; callers wrap this
    into the error type appropriate for the file being read.
    """
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key in {raw!r}")
        if key in pairs:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def format_kv_text(pairs: dict[str, str]) -> str:
    return "".join(f"{key}={value}\n" for key, value in pairs.items())


def format_float(value: float) -> str:
    """Decimal form with enough digits to round-trip any float64 exactly."""
    return f"{float(value):.17g}"
