"""Plain-text campaign configuration.

One ``[name]`` section per campaign, ``key = value`` lines, ``#`` comments.
Values are kept as strings together with their line numbers so that every
later validation error can point at the offending line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientSet, Field, Formulation, as_field, checkerboard
from .errors import ConfigError

KINDS = ("stability", "convergence", "lemma4", "duality", "bestapprox")

_SECTION = re.compile(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$")
_KEYVAL = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_CALL = re.compile(r"^([a-z_]+)\s*\((.*)\)$")


@dataclass
class Section:
    name: str
    line: int
    values: dict[str, tuple[str, int]] = field(default_factory=dict)

    def get(self, key: str, default=None) -> str | None:
        v = self.values.get(key)
        return default if v is None else v[0]

    def line_of(self, key: str) -> int:
        return self.values.get(key, ("", self.line))[1]


def parse_config_text(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _SECTION.match(line):
            name = m.group(1)
            if any(s.name == name for s in sections):
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = Section(name, lineno)
            sections.append(current)
        elif m := _KEYVAL.match(line):
            if current is None:
                raise ConfigError("key outside of a [section]", lineno)
            key, value = m.group(1), m.group(2).strip()
            if key in current.values:
                raise ConfigError(f"duplicate key {key!r}", lineno)
            current.values[key] = (value, lineno)
        else:
            raise ConfigError(f"cannot parse {raw.strip()!r}", lineno)
    if not sections:
        raise ConfigError("no [section] found")
    return sections


def parse_config(path: str | Path) -> list[Section]:
    return parse_config_text(Path(path).read_text())


def _numbers(text: str, line: int, count: int | None = None) -> list[float]:
    parts = [p.strip() for p in text.strip().strip("()").split(",") if p.strip()]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"expected numbers, got {text!r}", line) from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"expected {count} numbers, got {len(vals)}", line)
    return vals


def parse_A(text: str, line: int) -> Field:
    text = text.strip()
    if text == "identity":
        return as_field(1.0, (2, 2))
    m = _CALL.match(text)
    if m and m.group(1) == "diag":
        a, b = _numbers(m.group(2), line, 2)
        return as_field(np.diag([a, b]), (2, 2))
    if m and m.group(1) == "checkerboard":
        v1, v2, blocks = _numbers(m.group(2), line, 3)
        if blocks < 1 or blocks != int(blocks):
            raise ConfigError("checkerboard blocks must be a positive integer", line)
        return checkerboard(v1, v2, int(blocks))
    raise ConfigError(f"unknown A specification {text!r}", line)


_B_PRESETS = {
    "zero": (0.0, 0.0),
    "diagonal": (1.0, 1.0),
}


def parse_b(text: str, line: int) -> Field:
    text = text.strip()
    if text in _B_PRESETS:
        return as_field(_B_PRESETS[text], (2,))
    if text == "swirl":
        return as_field(lambda x: np.stack([0.5 - x[..., 1], x[..., 0] - 0.5], axis=-1), (2,))
    if text.startswith("("):
        return as_field(_numbers(text, line, 2), (2,))
    raise ConfigError(f"unknown b specification {text!r}", line)


def parse_gamma(text: str, line: int) -> Field:
    text = text.strip()
    if text == "lipschitz_preset":
        return as_field(lambda x: 1.0 + x[..., 0], ())
    m = _CALL.match(text)
    if m and m.group(1) == "const":
        (c,) = _numbers(m.group(2), line, 1)
        return as_field(c, ())
    raise ConfigError(f"unknown gamma specification {text!r}", line)


def coefficients_from(section: Section) -> CoefficientSet:
    A = parse_A(section.get("A", "identity"), section.line_of("A"))
    b = parse_b(section.get("b", "zero"), section.line_of("b"))
    gamma = parse_gamma(section.get("gamma", "const(0)"), section.line_of("gamma"))
    form = section.get("formulation", "conservative")
    if form not in ("conservative", "divergence"):
        raise ConfigError(f"formulation must be conservative or divergence, got {form!r}", section.line_of("formulation"))
    return CoefficientSet(A, b, gamma, Formulation(form))


def get_int(section: Section, key: str, default: int | None = None, minimum: int | None = None) -> int:
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"[{section.name}] missing required key {key!r}", section.line)
        return default
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}", section.line_of(key)) from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}", section.line_of(key))
    return v


def get_float(section: Section, key: str, default: float) -> float:
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}", section.line_of(key)) from None


def get_range(section: Section, key: str) -> tuple[float, float] | None:
    raw = section.get(key)
    if raw is None:
        return None
    lo, hi = _numbers(raw, section.line_of(key), 2)
    return lo, hi


def get_bool(section: Section, key: str, default: bool = False) -> bool:
    raw = section.get(key)
    if raw is None:
        return default
    if raw.lower() in ("true", "yes", "1"):
        return True
    if raw.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key} must be true or false", section.line_of(key))
