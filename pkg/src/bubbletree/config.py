"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .bubble_tree import TreeConfig
from .concentration import ETA
from .cut_fill import SIGMA_MAX
from .errors import InputError


@dataclass
class Config:
    eta: float = ETA
    sigma_max: float = SIGMA_MAX
    d_min: float = 0.1
    quantum_margin: float = 0.1
    level: int = 6
    cauchy_tol: float = 0.02

    def __post_init__(self):
        if not 0 < self.sigma_max < 1:
            raise InputError("sigma_max must lie in (0, 1)")
        if self.eta <= 0 or self.d_min <= 0 or self.cauchy_tol <= 0:
            raise InputError("eta, d_min and cauchy_tol must be positive")
        if not 0 <= self.quantum_margin < 1:
            raise InputError("quantum_margin must lie in [0, 1)")
        if not 0 <= self.level <= 8:
            raise InputError("level must lie in [0, 8]")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def updated(self, **overrides) -> "Config":
        """Copy with the non-None overrides applied."""
        vals = self.to_dict()
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return Config(**vals)

    def tree_config(self) -> TreeConfig:
        return TreeConfig(d_min=self.d_min, cauchy_tol=self.cauchy_tol,
                          quantum_margin=self.quantum_margin, eta=self.eta,
                          sigma_max=self.sigma_max)


def parse_config(text: str) -> Config:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(Config)}
    vals = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key or not value:
            raise InputError(f"config line {n}: expected key = value")
        if key not in types:
            raise InputError(f"config line {n}: unknown key {key!r}")
        cast = int if types[key] in (int, "int") else float
        try:
            vals[key] = cast(value)
        except ValueError:
            raise InputError(f"config line {n}: bad value {value!r} for {key}") from None
    return Config(**vals)


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
