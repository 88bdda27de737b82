"""Accuracy of BPMs against a performance target.

Absolute errors per probe point (E1 existing, E2 IVE, E3 augmented), their
means, and one-sided t-tests that E1 and E2 exceed E3.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import betainc


class AlignmentError(ValueError):
    pass


class DegenerateTestError(ArithmeticError):
    pass


class ErrorKind(str, Enum):
    E1_EXISTING = "E1_existing"
    E2_IVE = "E2_ive"
    E3_AUGMENTED = "E3_augmented"


# published values, carried for side-by-side display only
PUBLISHED_REFERENCE = {
    "experiment1": {
        "mae_augmented": 0.17,
        "mae_existing": 0.48,
        "mae_ive": 0.47,
        "t_hypothesis1": 44.300,
        "t_hypothesis2": 17.873,
    },
    "experiment2": {
        "mae_augmented": 0.14,
        "mae_existing": 0.41,
        "mae_ive": 0.47,
        "t_hypothesis1": 53.535,
        "t_hypothesis2": 19.377,
    },
}


def _pair(model_p, target_p) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(model_p, dtype=float).ravel()
    x = np.asarray(target_p, dtype=float).ravel()
    if y.shape != x.shape:
        raise AlignmentError(f"series lengths differ: {y.size} vs {x.size}")
    if y.size == 0:
        raise AlignmentError("empty series")
    return y, x


def mae(model_p, target_p) -> float:
    y, x = _pair(model_p, target_p)
    return float(np.mean(np.abs(y - x)))


@dataclass(frozen=True)
class ErrorSeries:
    kind: ErrorKind
    values: np.ndarray
    point_ids: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


def error_series(model_p, target_p, kind: ErrorKind | str, point_ids=None) -> ErrorSeries:
    y, x = _pair(model_p, target_p)
    ids = np.arange(y.size, dtype=float) if point_ids is None else np.asarray(point_ids, dtype=float).ravel()
    if ids.size != y.size:
        raise AlignmentError("point_ids do not align with the series")
    return ErrorSeries(ErrorKind(kind), np.abs(y - x), ids)


def student_t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t via the regularized incomplete beta."""
    x = df / (df + t * t)
    tail = 0.5 * float(betainc(df / 2.0, 0.5, x))
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class TTestResult:
    t_value: float
    degrees_freedom: float
    p_value: float
    reject_h0: bool
    alpha: float = 0.05
    paired: bool = True


def one_tailed_t_test(
    errors_a: ErrorSeries,
    errors_b: ErrorSeries,
    alpha: float = 0.05,
    paired: bool = True,
) -> TTestResult:
    """Test H1: mean(a) - mean(b) > 0.

    The paired form uses differences at shared probe points. ``paired=False``
    runs Welch's unequal-variance test instead.
    """
    a = np.asarray(errors_a.values, dtype=float)
    b = np.asarray(errors_b.values, dtype=float)
    if paired:
        if a.shape != b.shape or not np.array_equal(errors_a.point_ids, errors_b.point_ids):
            raise AlignmentError("paired test needs series on identical probe points")
        n = a.size
        if n < 2:
            raise DegenerateTestError("need at least two paired points")
        d = a - b
        sd = float(np.std(d, ddof=1))
        if sd == 0.0:
            raise DegenerateTestError("differences have zero variance")
        t = float(np.mean(d)) / (sd / math.sqrt(n))
        df: float = n - 1
    else:
        if a.size < 2 or b.size < 2:
            raise DegenerateTestError("need at least two points per series")
        va = float(np.var(a, ddof=1)) / a.size
        vb = float(np.var(b, ddof=1)) / b.size
        if va + vb == 0.0:
            raise DegenerateTestError("both series have zero variance")
        t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(va + vb)
        df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = student_t_sf(t, df)
    return TTestResult(t, df, p, p < alpha, alpha, paired)


@dataclass
class EvalReport:
    experiment: str
    point_ids: np.ndarray
    target_p: np.ndarray
    augmented_p: np.ndarray
    existing_p: np.ndarray
    ive_p: np.ndarray
    e1: ErrorSeries
    e2: ErrorSeries
    e3: ErrorSeries
    hypothesis1: TTestResult | None
    hypothesis2: TTestResult | None
    notes: list[str] = field(default_factory=list)

    @property
    def mae_existing(self) -> float:
        return self.e1.mean

    @property
    def mae_ive(self) -> float:
        return self.e2.mean

    @property
    def mae_augmented(self) -> float:
        return self.e3.mean

    @property
    def n_points(self) -> int:
        return int(self.point_ids.size)

    def metrics(self) -> list[tuple[str, float]]:
        out = [
            ("mae_augmented", self.mae_augmented),
            ("mae_existing", self.mae_existing),
            ("mae_ive", self.mae_ive),
            ("probe_points", float(self.n_points)),
        ]
        for name, res in (("hypothesis1", self.hypothesis1), ("hypothesis2", self.hypothesis2)):
            if res is None:
                continue
            out += [
                (f"{name}_t", res.t_value),
                (f"{name}_df", float(res.degrees_freedom)),
                (f"{name}_p", res.p_value),
                (f"{name}_reject", float(res.reject_h0)),
            ]
        return out

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "experiment", "value"])
        for name, value in self.metrics():
            w.writerow([name, self.experiment, f"{value:.10g}"])
        for name, value in PUBLISHED_REFERENCE.get(self.experiment, {}).items():
            w.writerow([f"published_{name}", self.experiment, f"{value:.10g}"])
        return buf.getvalue()

    def plot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["work_lux", "target", "augmented", "existing", "ive"])
        for row in zip(self.point_ids, self.target_p, self.augmented_p, self.existing_p, self.ive_p):
            w.writerow([f"{v:.10g}" for v in row])
        return buf.getvalue()

    def text(self) -> str:
        ref = PUBLISHED_REFERENCE.get(self.experiment, {})

        def published(key: str, fmt: str = "{:.2f}") -> str:
            return fmt.format(ref[key]) if key in ref else "-"

        lines = [
            f"Experiment: {self.experiment}   probe points: {self.n_points}",
            "",
            "Mean absolute error against the performance target",
            f"  {'model':<16}{'this run':>10}{'published':>11}",
            f"  {'Augmented BPM':<16}{self.mae_augmented:>10.4f}{published('mae_augmented'):>11}",
            f"  {'Existing BPM':<16}{self.mae_existing:>10.4f}{published('mae_existing'):>11}",
            f"  {'Synthetic IVE':<16}{self.mae_ive:>10.4f}{published('mae_ive'):>11}",
            "",
            "Absolute errors",
            "  E1 = |existing BPM - target|",
            "  E2 = |synthetic IVE - target|",
            "  E3 = |augmented BPM - target|",
            "",
            "One-tailed t-tests (H1: mean Ex - mean E3 > 0)",
            f"  {'hypothesis':<14}{'|t|':>10}{'df':>8}{'p-value':>12}{'H0':>8}{'published |t|':>15}",
        ]
        for i, res in ((1, self.hypothesis1), (2, self.hypothesis2)):
            label = f"{i} (E{i} vs E3)"
            if res is None:
                lines.append(f"  {label:<14}{'degenerate':>10}")
                continue
            verdict = "Reject" if res.reject_h0 else "Retain"
            lines.append(
                f"  {label:<14}{abs(res.t_value):>10.3f}{res.degrees_freedom:>8.0f}"
                f"{res.p_value:>12.3g}{verdict:>8}{published(f't_hypothesis{i}', '{:.3f}'):>15}"
            )
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, prefix: str = "report") -> list[Path]:
        out_dir = Path(out_dir)
        paths = [
            out_dir / f"{prefix}.txt",
            out_dir / f"{prefix}_metrics.csv",
            out_dir / f"{prefix}_plot_data.csv",
        ]
        for path, body in zip(paths, (self.text(), self.metrics_csv(), self.plot_csv())):
            partial = path.with_name(path.name + ".partial")
            partial.write_text(body)
            os.replace(partial, path)
        return paths


def build_report(
    augmented_p,
    existing_p,
    ive_p,
    target_p,
    point_ids,
    experiment: str = "",
    alpha: float = 0.05,
    paired: bool = True,
) -> EvalReport:
    """Errors, MAEs and both hypothesis tests on a shared probe grid.

    A degenerate test (zero-variance differences) is recorded in ``notes``
    and its result left as ``None``.
    """
    ids = np.asarray(point_ids, dtype=float).ravel()
    e1 = error_series(existing_p, target_p, ErrorKind.E1_EXISTING, ids)
    e2 = error_series(ive_p, target_p, ErrorKind.E2_IVE, ids)
    e3 = error_series(augmented_p, target_p, ErrorKind.E3_AUGMENTED, ids)
    notes = []
    results = []
    for i, other in ((1, e1), (2, e2)):
        try:
            results.append(one_tailed_t_test(other, e3, alpha, paired))
        except DegenerateTestError as exc:
            notes.append(f"hypothesis {i}: {exc}")
            results.append(None)
    return EvalReport(
        experiment,
        ids,
        np.asarray(target_p, dtype=float).ravel(),
        np.asarray(augmented_p, dtype=float).ravel(),
        np.asarray(existing_p, dtype=float).ravel(),
        np.asarray(ive_p, dtype=float).ravel(),
        e1,
        e2,
        e3,
        results[0],
        results[1],
        notes,
    )
