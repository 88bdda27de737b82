"""Assembling generator and discriminator inputs.

Probit datasets only know illuminance, so occupancy and intermediate leaving
are borrowed from the synthetic IVE records before anything is fed to a net.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .ive import LEAVING_LABELS, OCCUPANCY_LABELS, Leaving, Occupancy, SyntheticIveRecord
from .probit import BpmSample, ConfigError

LUX_MIN = 200.0
LUX_MAX = 750.0
N_FEATURES = 5


class LuxNorm(str, Enum):
    NONE = "none"
    SCALE01 = "scale01"


class Provenance(str, Enum):
    EXISTING_BPM = "existing_bpm"
    SYNTHETIC_IVE = "synthetic_ive"
    TARGET = "target"


@dataclass(frozen=True)
class FeatureRow:
    occupancy: Occupancy
    intermediate_leaving: Leaving
    work_lux: float
    p_switch_on: float | None = None


@dataclass(frozen=True)
class AssembledDataset:
    rows: list[FeatureRow]
    provenance: list[Provenance]

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, which: Provenance) -> list[FeatureRow]:
        return [r for r, p in zip(self.rows, self.provenance) if p is which]


def ive_feature_rows(records: Sequence[SyntheticIveRecord]) -> list[FeatureRow]:
    """IVE records as feature rows; the observed switch state is the probability."""
    return [FeatureRow(r.occupancy, r.intermediate_leaving, r.work_lux, float(r.light_on)) for r in records]


def impute_contextual_factors(
    bpm_rows: Sequence[BpmSample],
    ive_rows: Sequence[SyntheticIveRecord],
    seed: int,
    joint: bool = True,
) -> list[FeatureRow]:
    """Attach occupancy and leaving status drawn from the IVE records.

    By default both factors come from one randomly chosen IVE record so their
    dependence survives. ``joint=False`` draws them from independent records.
    """
    if not ive_rows:
        raise ConfigError("cannot impute contextual factors from an empty IVE dataset")
    rng = np.random.default_rng(seed)
    n = len(bpm_rows)
    occ_idx = rng.integers(len(ive_rows), size=n)
    leave_idx = occ_idx if joint else rng.integers(len(ive_rows), size=n)
    return [
        FeatureRow(ive_rows[i].occupancy, ive_rows[j].intermediate_leaving, s.work_lux, s.p_switch_on)
        for s, i, j in zip(bpm_rows, occ_idx, leave_idx)
    ]


def concat(
    bpm_feature_rows: Sequence[FeatureRow],
    ive_feature_rows: Sequence[FeatureRow],
    seed: int | None = None,
    provenance: tuple[Provenance, Provenance] = (Provenance.EXISTING_BPM, Provenance.SYNTHETIC_IVE),
) -> AssembledDataset:
    """Stack two row sets, tag their origin and shuffle when ``seed`` is given."""
    if not bpm_feature_rows or not ive_feature_rows:
        raise ConfigError("both row sets must be non-empty")
    rows = list(bpm_feature_rows) + list(ive_feature_rows)
    prov = [provenance[0]] * len(bpm_feature_rows) + [provenance[1]] * len(ive_feature_rows)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(rows))
        rows = [rows[i] for i in order]
        prov = [prov[i] for i in order]
    return AssembledDataset(rows, prov)


def scale_lux(work_lux, lux_norm: LuxNorm | str = LuxNorm.SCALE01):
    if LuxNorm(lux_norm) is LuxNorm.NONE:
        return work_lux
    return (np.asarray(work_lux, dtype=float) - LUX_MIN) / (LUX_MAX - LUX_MIN)


def to_feature_vector(row: FeatureRow, lux_norm: LuxNorm | str = LuxNorm.SCALE01) -> np.ndarray:
    """``[occupied, leave_none, leave_short, leave_long, lux]``."""
    vec = np.zeros(N_FEATURES)
    vec[0] = float(int(row.occupancy))
    vec[1 + int(row.intermediate_leaving)] = 1.0
    vec[4] = scale_lux(row.work_lux, lux_norm)
    return vec


def feature_matrix(rows: Sequence[FeatureRow], lux_norm: LuxNorm | str = LuxNorm.SCALE01) -> np.ndarray:
    occ = np.fromiter((int(r.occupancy) for r in rows), dtype=float, count=len(rows))
    leave = np.fromiter((int(r.intermediate_leaving) for r in rows), dtype=int, count=len(rows))
    lux = np.fromiter((r.work_lux for r in rows), dtype=float, count=len(rows))
    out = np.zeros((len(rows), N_FEATURES))
    out[:, 0] = occ
    out[np.arange(len(rows)), 1 + leave] = 1.0
    out[:, 4] = scale_lux(lux, lux_norm)
    return out


def probabilities(rows: Sequence[FeatureRow]) -> np.ndarray:
    if any(r.p_switch_on is None for r in rows):
        raise ConfigError("rows lack switch-on probabilities")
    return np.array([r.p_switch_on for r in rows], dtype=float)


def mode_context(records: Sequence[SyntheticIveRecord]) -> tuple[Occupancy, Leaving]:
    """Most frequent (occupancy, leaving) pair; ties go to the smaller code."""
    counts = Counter((r.occupancy, r.intermediate_leaving) for r in records)
    best = max(counts.values())
    return min(k for k, v in counts.items() if v == best)


ASSEMBLED_COLUMNS = ["provenance", "occupancy", "intermediate_leaving", "work_lux", "p_switch_on"]


def write_assembled_csv(data: AssembledDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ASSEMBLED_COLUMNS)
        for row, prov in zip(data.rows, data.provenance):
            w.writerow(
                [
                    prov.value,
                    OCCUPANCY_LABELS[row.occupancy],
                    LEAVING_LABELS[row.intermediate_leaving],
                    f"{row.work_lux:.10g}",
                    "" if row.p_switch_on is None else f"{row.p_switch_on:.10g}",
                ]
            )


def read_assembled_csv(path: str | Path) -> AssembledDataset:
    rows, prov = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ASSEMBLED_COLUMNS:
            raise ConfigError(f"{path}: expected header {','.join(ASSEMBLED_COLUMNS)}")
        for r in reader:
            prov.append(Provenance(r["provenance"]))
            rows.append(
                FeatureRow(
                    Occupancy(OCCUPANCY_LABELS.index(r["occupancy"])),
                    Leaving(LEAVING_LABELS.index(r["intermediate_leaving"])),
                    float(r["work_lux"]),
                    float(r["p_switch_on"]) if r["p_switch_on"] else None,
                )
            )
    return AssembledDataset(rows, prov)
