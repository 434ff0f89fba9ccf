"""Figure specifications: what to read, how to group, where to render."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("overlay", "summary-panel", "grid")


class FigureSpecError(ValueError):
    """Raised for malformed figure specs or inputs that don't match them."""


@dataclass(frozen=True)
class FigureSpec:
    """Declarative description of one rendered figure.

    kind "overlay" expects trajectory CSVs (theory and/or empirical seeds);
    "grid" and "summary-panel" expect sweep results CSVs. grouping defaults
    to the sweep coordinate columns.
    """

    kind: str
    inputs: tuple
    output: str
    image_format: str = "png"
    grouping: tuple = ("n_data", "s_bar_a", "s_bar_b", "relatedness")
    value_column: str = "mt_benefit"
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FigureSpecError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise FigureSpecError("figure spec needs at least one input CSV")
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        object.__setattr__(self, "grouping", tuple(self.grouping))
        if self.image_format not in ("png", "svg", "pdf"):
            raise FigureSpecError(f"unsupported image format {self.image_format!r}")

    @classmethod
    def from_file(cls, path) -> "FigureSpec":
        try:
            tree = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise FigureSpecError(f"figure spec {path} is not valid JSON: {err}") from err
        known = {"kind", "inputs", "output", "image_format", "grouping", "value_column", "title"}
        unknown = set(tree) - known
        if unknown:
            raise FigureSpecError(f"unknown figure spec keys: {sorted(unknown)}")
        missing = {"kind", "inputs", "output"} - set(tree)
        if missing:
            raise FigureSpecError(f"figure spec missing required keys: {sorted(missing)}")
        return cls(**tree)
