"""Light switch-on probability curves and their Monte Carlo datasets.

A curve has the form ``p = a + c / (1 + exp(-(d*m + b*E)))`` where ``E`` is the
work-area illuminance, either in lux or in log10(lux).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class LuxScale(str, Enum):
    RAW = "raw"
    LOG10 = "log10"


@dataclass(frozen=True)
class ProbitModel:
    a: float
    b: float
    c: float
    d: float
    probit_m: float
    lux_scale: LuxScale = LuxScale.RAW

    def __post_init__(self) -> None:
        object.__setattr__(self, "lux_scale", LuxScale(self.lux_scale))
        if self.c == 0:
            raise ConfigError("amplitude c must be non-zero")

    def illuminance_term(self, work_lux) -> np.ndarray:
        lux = np.asarray(work_lux, dtype=float)
        if self.lux_scale is LuxScale.LOG10:
            if np.any(lux <= 0):
                raise DomainError("work_lux must be positive on a log10 scale")
            return np.log10(lux)
        return lux

    def raw(self, work_lux) -> np.ndarray | float:
        """Curve value before clamping to [0, 1]."""
        e = self.illuminance_term(work_lux)
        with np.errstate(over="ignore"):
            out = self.a + self.c / (1.0 + np.exp(-(self.d * self.probit_m + self.b * e)))
        return float(out) if np.ndim(out) == 0 else out

    def __call__(self, work_lux):
        return evaluate(self, work_lux)

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "d": self.d,
            "probit_m": self.probit_m,
            "lux_scale": self.lux_scale.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProbitModel":
        return cls(
            a=float(data["a"]),
            b=float(data["b"]),
            c=float(data["c"]),
            d=float(data["d"]),
            probit_m=float(data["probit_m"]),
            lux_scale=LuxScale(data.get("lux_scale", "raw")),
        )


def evaluate(model: ProbitModel, work_lux):
    """Switch-on probability at ``work_lux``, clamped to [0, 1].

    Accepts a scalar or an array and returns the same kind.
    """
    out = np.clip(model.raw(work_lux), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class IlluminanceDistribution:
    mean: float = 450.0
    std_dev: float = 150.0
    lower: float = 200.0
    upper: float = 750.0

    def __post_init__(self) -> None:
        if not self.upper > self.lower:
            raise ConfigError(f"truncation window [{self.lower}, {self.upper}] is empty")
        if not self.std_dev > 0:
            raise ConfigError("std_dev must be positive")
        if not self.lower > 0:
            raise ConfigError("lower bound must be positive so log10 stays defined")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_dev": self.std_dev, "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, data: dict) -> "IlluminanceDistribution":
        return cls(**{k: float(data[k]) for k in ("mean", "std_dev", "lower", "upper")})


@dataclass(frozen=True)
class BpmSample:
    work_lux: float
    p_switch_on: float


def sample_lux(dist: IlluminanceDistribution, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` illuminances from a truncated normal by rejection."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    out = np.empty(count)
    filled = 0
    for _ in range(10_000):
        need = count - filled
        draw = rng.normal(dist.mean, dist.std_dev, size=max(need, 16))
        keep = draw[(draw >= dist.lower) & (draw <= dist.upper)][:need]
        out[filled : filled + keep.size] = keep
        filled += keep.size
        if filled == count:
            return out
    raise ConfigError("truncation window is too far in the tail to sample from")


def sample_dataset(model: ProbitModel, dist: IlluminanceDistribution, count: int, seed: int) -> list[BpmSample]:
    lux = sample_lux(dist, count, seed)
    p = np.atleast_1d(evaluate(model, lux))
    return [BpmSample(float(e), float(q)) for e, q in zip(lux, p)]


def write_samples_csv(samples: Iterable[BpmSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["work_lux", "p_switch_on"])
        for s in samples:
            w.writerow([f"{s.work_lux:.10g}", f"{s.p_switch_on:.10g}"])


def read_samples_csv(path: str | Path) -> list[BpmSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["work_lux", "p_switch_on"]:
            raise ConfigError(f"{path}: expected header work_lux,p_switch_on")
        return [BpmSample(float(r["work_lux"]), float(r["p_switch_on"])) for r in reader]
