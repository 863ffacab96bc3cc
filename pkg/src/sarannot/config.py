"""Run configuration: a line-oriented ``section.key = value`` text file.

Blank lines and ``#`` comments are ignored.  Values are parsed as

* ``true`` / ``false`` / ``none``
* integers and floats
* lists in brackets, ``[1, 2, 3]`` (elements parsed the same way)
* anything else (optionally quoted) is a string

Later assignments override earlier ones; command-line overrides are
applied last.  Unknown sections are rejected, unknown keys inside a known
section are kept so that paths can be added freely under ``io``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Iterable, Optional

DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": None},
    "geometry": {
        "heading": [0.0, 1.0],
        "look_side": "right",
        "incidence_deg": 36.0,
        "altitude": 514000.0,
        "az_spacing": 1.1,
        "rg_spacing": 0.588,
        "margin": 4,
    },
    "tomosim": {
        "origin": [0.0, 0.0],
        "extent": None,
        "ground_height": 0.0,
        "density_ground": 1.0,
        "density_roof": 6.0,
        "density_facade": 3.0,
        "position_noise": 0.0,
        "outlier_fraction": 0.0,
        "reestimate": False,
        "n_baselines": 25,
        "baseline_min": -135.0,
        "baseline_max": 135.0,
        "wavelength": 0.031,
        "slant_range": 700000.0,
        "grid_min": -100.0,
        "grid_max": 100.0,
        "grid_q": 201,
        "noise_sigma": 0.0,
    },
    "label": {"dilation_radius": 1, "dilation_iterations": 1, "building_values": None},
    "coreg": {
        "cell_size": 3.0,
        "max_shift": 10,
        "z_bin": 0.5,
        "facade_cell": 1.0,
        "facade_spread": 3.0,
        "facade_dilate": 1,
        "max_iter": 100,
        "huber_delta": 1.0,
        "tol": 1e-6,
    },
    "crf": {
        "w_spatial": 1.0,
        "theta_gamma": 3.0,
        "w_bilateral": 1.0,
        "theta_alpha": 60.0,
        "theta_beta": 10.0,
        "iterations": 10,
        "window": "exact",
        "intensity_scale": "log",
    },
    "dataprep": {
        "size": 256,
        "overlap": 32,
        "augment": ["identity"],
        "split_ratio": 0.6875,
        "train": None,
        "test": None,
    },
    "io": {},
}

_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$")


class ConfigError(ValueError):
    pass


def parse_value(text: str) -> Any:
    t = text.strip()
    low = t.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if low in ("none", "null", ""):
        return None
    if t.startswith("[") and t.endswith("]"):
        inner = t[1:-1].strip()
        return [parse_value(p) for p in inner.split(",")] if inner else []
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    if _INT.match(t):
        return int(t)
    if _FLOAT.match(low):
        return float(t)
    return t


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


class RunConfig:
    """Resolved configuration: defaults, then file, then overrides."""

    def __init__(self, sections: Optional[dict] = None):
        self.sections = copy.deepcopy(DEFAULTS)
        for sec, vals in (sections or {}).items():
            for k, v in vals.items():
                self.set(sec, k, v)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            m = _LINE.match(line)
            if not m:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
            cfg.set(m.group(1), m.group(2), parse_value(m.group(3)), where=f"{source}:{lineno}")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.parse(p.read_text(), str(p))

    def set(self, section: str, key: str, value: Any, where: str = "") -> None:
        if section not in self.sections:
            prefix = f"{where}: " if where else ""
            raise ConfigError(f"{prefix}unknown config section {section!r}")
        self.sections[section][key] = value

    def override(self, assignments: Iterable[str]) -> None:
        """Apply ``section.key=value`` strings (e.g. from ``--set``)."""
        for a in assignments:
            m = _LINE.match(a.strip())
            if not m:
                raise ConfigError(f"bad override {a!r}; expected section.key=value")
            self.set(m.group(1), m.group(2), parse_value(m.group(3)), where="--set")

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.sections.get(section, {}).get(key, default)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.sections)

    def canonical(self) -> str:
        return json.dumps(self.sections, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def dumps(self) -> str:
        """Render back into the text format (parses to an equal config)."""
        lines = []
        for sec in sorted(self.sections):
            for k in sorted(self.sections[sec]):
                lines.append(f"{sec}.{k} = {_render(self.sections[sec][k])}")
        return "\n".join(lines) + "\n"


def _render(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_render(x) for x in v) + "]"
    s = str(v)
    if parse_value(s) != s or "#" in s or "," in s:
        return '"' + s + '"'
    return s
