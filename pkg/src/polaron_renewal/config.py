"""Run configuration in a flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidParameterError

DEFAULT_P_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in text.split(","))


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 1.0
    base_seed: int = 42
    shards: int = 8
    samples_per_shard: int = 125_000
    P_grid: tuple[float, ...] = DEFAULT_P_GRID
    lambda_min: float = -3.0
    lambda_max: float = 0.0
    n_lambda: int = 7
    h: float = 0.01
    T_max: float = 10.0
    tol: float = 1e-6
    fk_steps: int = 800
    fk_paths: int = 100_000
    T_grid: tuple[float, ...] = (1.0, 2.0)
    max_n: int = 10_000
    max_tau: float = 1000.0
    output_dir: str = "."
    format: str = "csv"
    threads: int | None = None

    def __post_init__(self):
        # coerce so that values read from text and given in code compare equal
        object.__setattr__(self, "P_grid", tuple(float(p) for p in self.P_grid))
        object.__setattr__(self, "T_grid", tuple(float(t) for t in self.T_grid))
        self.validate()

    def validate(self) -> None:
        def need(cond, name, what):
            if not cond:
                raise InvalidParameterError(f"{name} {what}, got {getattr(self, name)!r}")

        need(self.alpha > 0 and math.isfinite(self.alpha), "alpha", "must be a positive number")
        need(self.base_seed >= 0, "base_seed", "must be a nonnegative integer")
        need(self.shards >= 1, "shards", "must be >= 1")
        need(self.samples_per_shard >= 1, "samples_per_shard", "must be >= 1")
        need(all(p >= 0 and math.isfinite(p) for p in self.P_grid), "P_grid", "must hold finite P >= 0")
        need(self.lambda_min < self.lambda_max, "lambda_min", "must be below lambda_max")
        need(self.n_lambda >= 1, "n_lambda", "must be >= 1")
        need(self.h > 0, "h", "must be positive")
        need(self.T_max >= self.h, "T_max", "must be at least h")
        need(0 < self.tol < 1, "tol", "must lie in (0, 1)")
        need(self.fk_steps >= 2, "fk_steps", "must be >= 2")
        need(self.fk_paths >= 2, "fk_paths", "must be >= 2")
        need(all(t > 0 for t in self.T_grid), "T_grid", "must hold positive times")
        need(self.max_n >= 1, "max_n", "must be >= 1")
        need(self.max_tau > 0, "max_tau", "must be positive")
        need(self.format in ("csv", "jsonl"), "format", "must be csv or jsonl")
        need(self.threads is None or self.threads >= 1, "threads", "must be >= 1")

    @property
    def resolved_threads(self) -> int:
        return self.threads if self.threads is not None else (os.cpu_count() or 1)

    def lambda_grid(self) -> list[float]:
        if self.n_lambda == 1:
            return [self.lambda_min]
        step = (self.lambda_max - self.lambda_min) / (self.n_lambda - 1)
        return [self.lambda_min + i * step for i in range(self.n_lambda)]

    def items(self) -> list[tuple[str, str]]:
        return [(f.name, _fmt(getattr(self, f.name))) for f in dataclasses.fields(self)]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidParameterError(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
        return cls.from_strings(raw)

    @classmethod
    def from_strings(cls, raw: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for key, text in raw.items():
            if key not in kinds:
                raise InvalidParameterError(f"unknown config key {key!r}")
            values[key] = _parse_field(key, kinds[key].type, text)
        if base is not None:
            return dataclasses.replace(base, **values)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())


def _parse_field(key: str, kind: str, text: str):
    try:
        if kind.startswith("tuple"):
            return _floats(text)
        if kind.startswith("int | None"):
            return int(text) if text else None
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise InvalidParameterError(f"{key}: cannot parse {text!r}") from None


__all__ = ["RunConfig", "DEFAULT_P_GRID"]
