"""Event logs from immersive virtual environment sessions and their HMM.

Hidden states are the light switch (0 = off, 1 = on). Observations are the
contextual factors folded into one ordinal code::

    code = occupancy*27 + leaving*9 + outdoor*3 + work
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .probit import ConfigError, DomainError

N_OBS = 54
SMOOTHING = 1e-3

ILLUMINANCE_LUX = {0: 200.0, 1: 500.0, 2: 700.0}


class IveFormatError(ValueError):
    pass


class DegenerateLikelihoodError(ArithmeticError):
    pass


class EventKind(IntEnum):
    INITIAL = 0
    ARRIVAL = 1
    SHORT_LEAVE = 2
    RETURN_SHORT = 3
    LONG_LEAVE = 4
    RETURN_LONG = 5
    DEPARTURE = 6


class Occupancy(IntEnum):
    NON_OCCUPANCY = 0
    OCCUPANCY = 1


class Leaving(IntEnum):
    NONE = 0
    SHORT = 1
    LONG = 2


class Illuminance(IntEnum):
    DARK = 0
    NORMAL = 1
    BRIGHT = 2

    @property
    def lux(self) -> float:
        return ILLUMINANCE_LUX[int(self)]


EVENT_LABELS = ["Initial", "Arrival", "ShortLeave", "ReturnShort", "LongLeave", "ReturnLong", "Departure"]
OCCUPANCY_LABELS = ["No", "Yes"]
LEAVING_LABELS = ["None", "Short", "Long"]
ILLUM_LABELS = ["Dark", "Normal", "Bright"]
LIGHT_LABELS = ["0", "1"]

IVE_COLUMNS = ["event_kind", "occupancy", "intermediate_leaving", "outdoor_illum", "work_illum", "light_on"]
SYNTHETIC_COLUMNS = ["occupancy", "intermediate_leaving", "outdoor_illum", "work_illum", "light_on", "work_lux"]

# event-kind counts of the 180-event reference corpus
CORPUS_COUNTS = {
    EventKind.INITIAL: 36,
    EventKind.ARRIVAL: 36,
    EventKind.SHORT_LEAVE: 18,
    EventKind.RETURN_SHORT: 18,
    EventKind.LONG_LEAVE: 18,
    EventKind.RETURN_LONG: 18,
    EventKind.DEPARTURE: 36,
}

Factors = tuple[Occupancy, Leaving, Illuminance, Illuminance]


@dataclass(frozen=True)
class EventRecord:
    event_kind: EventKind
    occupancy: Occupancy
    intermediate_leaving: Leaving
    outdoor_illum: Illuminance
    work_illum: Illuminance
    light_on: bool
    session_id: str | None = None

    @property
    def factors(self) -> Factors:
        return (self.occupancy, self.intermediate_leaving, self.outdoor_illum, self.work_illum)


@dataclass(frozen=True)
class SyntheticIveRecord:
    occupancy: Occupancy
    intermediate_leaving: Leaving
    outdoor_illum: Illuminance
    work_illum: Illuminance
    light_on: bool
    work_lux: float

    @property
    def factors(self) -> Factors:
        return (self.occupancy, self.intermediate_leaving, self.outdoor_illum, self.work_illum)


def encode_factors(occupancy, leaving, outdoor, work) -> int:
    return int(occupancy) * 27 + int(leaving) * 9 + int(outdoor) * 3 + int(work)


def encode(record: EventRecord | SyntheticIveRecord) -> int:
    return encode_factors(*record.factors)


def decode(code: int) -> Factors:
    code = int(code)
    if not 0 <= code < N_OBS:
        raise DomainError(f"observation code {code} outside [0, {N_OBS - 1}]")
    occ, rest = divmod(code, 27)
    leave, rest = divmod(rest, 9)
    outdoor, work = divmod(rest, 3)
    return Occupancy(occ), Leaving(leave), Illuminance(outdoor), Illuminance(work)


# -- HMM ---------------------------------------------------------------------


@dataclass(frozen=True)
class Hmm:
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self) -> None:
        for name in ("initial", "transition", "emission"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.initial.shape[0]
        if self.transition.shape != (n, n) or self.emission.ndim != 2 or self.emission.shape[0] != n:
            raise ConfigError("inconsistent HMM shapes")
        for name, arr in (("initial", self.initial[None, :]), ("transition", self.transition), ("emission", self.emission)):
            if np.any(arr < 0) or not np.allclose(arr.sum(axis=1), 1.0, atol=1e-9, rtol=0):
                raise ConfigError(f"{name} rows must be non-negative and sum to 1")

    @property
    def n_hidden(self) -> int:
        return self.initial.shape[0]

    @property
    def n_obs(self) -> int:
        return self.emission.shape[1]

    def to_dict(self) -> dict:
        return {
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Hmm":
        return cls(np.array(data["initial"]), np.array(data["transition"]), np.array(data["emission"]))


def _normalise_rows(counts: np.ndarray) -> np.ndarray:
    counts = np.atleast_2d(counts).astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    uniform = np.full_like(counts, 1.0 / counts.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(totals > 0, counts / totals, uniform)
    return out


def init_from_counts(
    sequences: Sequence[Sequence[tuple[int, int]]],
    n_hidden: int = 2,
    n_obs: int = N_OBS,
    smoothing: float = SMOOTHING,
) -> Hmm:
    """Relative-frequency HMM from labelled ``(state, code)`` sequences."""
    if not sequences or all(len(s) == 0 for s in sequences):
        raise ConfigError("no labelled sequences to count")
    init = np.zeros(n_hidden)
    trans = np.zeros((n_hidden, n_hidden))
    emit = np.zeros((n_hidden, n_obs))
    for seq in sequences:
        if not seq:
            continue
        init[seq[0][0]] += 1
        for state, code in seq:
            emit[state, code] += 1
        for (s0, _), (s1, _) in zip(seq, seq[1:]):
            trans[s0, s1] += 1
    if trans.sum() == 0:
        raise ConfigError("need at least one observed transition")
    return Hmm(
        _normalise_rows(init + smoothing)[0],
        _normalise_rows(trans + smoothing),
        _normalise_rows(emit + smoothing),
    )


def _group_by_length(sequences: Sequence[Sequence[int]]) -> list[np.ndarray]:
    groups: dict[int, list] = {}
    for seq in sequences:
        if len(seq) == 0:
            raise ConfigError("sequences must be non-empty")
        groups.setdefault(len(seq), []).append(seq)
    return [np.asarray(groups[k], dtype=int) for k in sorted(groups)]


def forward_backward(hmm: Hmm, obs: np.ndarray):
    """Scaled forward-backward on a batch of equal-length sequences.

    ``obs`` has shape (S, T). Returns ``(log_lik, alpha, beta, scale)`` where
    ``log_lik`` has shape (S,), alpha/beta are (S, T, N) and scale is (S, T).
    """
    obs = np.atleast_2d(obs)
    s_count, t_len = obs.shape
    n = hmm.n_hidden
    b = hmm.emission[:, obs].transpose(1, 2, 0)  # (S, T, N)
    alpha = np.empty((s_count, t_len, n))
    scale = np.empty((s_count, t_len))

    a = hmm.initial[None, :] * b[:, 0]
    for t in range(t_len):
        if t > 0:
            a = (alpha[:, t - 1] @ hmm.transition) * b[:, t]
        c = a.sum(axis=1)
        if np.any(c <= 0):
            raise DegenerateLikelihoodError("an observed code has zero probability under the model")
        alpha[:, t] = a / c[:, None]
        scale[:, t] = c

    beta = np.empty_like(alpha)
    beta[:, -1] = 1.0
    for t in range(t_len - 2, -1, -1):
        beta[:, t] = ((b[:, t + 1] * beta[:, t + 1]) @ hmm.transition.T) / scale[:, t + 1, None]
    return np.log(scale).sum(axis=1), alpha, beta, scale


def log_likelihood(hmm: Hmm, sequences: Sequence[Sequence[int]]) -> float:
    return float(sum(forward_backward(hmm, g)[0].sum() for g in _group_by_length(sequences)))


def _log_prior(hmm: Hmm, smoothing: float) -> float:
    if smoothing == 0:
        return 0.0
    params = np.concatenate([hmm.initial.ravel(), hmm.transition.ravel(), hmm.emission.ravel()])
    return float(smoothing * np.log(params).sum())


def baum_welch(
    hmm0: Hmm,
    sequences: Sequence[Sequence[int]],
    max_iters: int = 100,
    tol: float = 1e-6,
    smoothing: float = SMOOTHING,
) -> tuple[Hmm, list[float]]:
    """Fit an HMM by expectation-maximisation.

    With ``smoothing > 0`` every expected count gets ``smoothing`` added
    before normalising, which is MAP estimation under a symmetric Dirichlet
    prior. The trace then records the penalised objective
    ``log L + smoothing * sum(log params)``, the quantity EM is guaranteed
    not to decrease. With ``smoothing = 0`` it is the plain log-likelihood.
    """
    groups = _group_by_length(sequences)
    n, k = hmm0.n_hidden, hmm0.n_obs
    hmm = hmm0
    trace: list[float] = []
    for _ in range(max_iters + 1):
        init_c = np.zeros(n)
        trans_c = np.zeros((n, n))
        emit_c = np.zeros((n, k))
        ll = 0.0
        for obs in groups:
            lls, alpha, beta, scale = forward_backward(hmm, obs)
            ll += lls.sum()
            gamma = alpha * beta  # already normalised per timestep by scaling
            init_c += gamma[:, 0].sum(axis=0)
            for j in range(n):
                np.add.at(emit_c[j], obs.ravel(), gamma[:, :, j].ravel())
            if obs.shape[1] > 1:
                b_next = hmm.emission[:, obs[:, 1:]].transpose(1, 2, 0)  # (S, T-1, N)
                xi = (
                    alpha[:, :-1, :, None]
                    * hmm.transition[None, None]
                    * (b_next * beta[:, 1:])[:, :, None, :]
                    / scale[:, 1:, None, None]
                )
                trans_c += xi.sum(axis=(0, 1))
        trace.append(ll + _log_prior(hmm, smoothing))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            break
        if len(trace) == max_iters + 1:
            break
        hmm = Hmm(
            _normalise_rows(init_c + smoothing)[0],
            _normalise_rows(trans_c + smoothing),
            _normalise_rows(emit_c + smoothing),
        )
    return hmm, trace


def align_states(hmm: Hmm, reference: Hmm) -> Hmm:
    """Relabel hidden states so each matches the closest reference emission row.

    EM is indifferent to state labels; this restores the reference's meaning
    (state 1 = light on) by minimising total L1 distance between emission rows.
    """
    if hmm.n_hidden != reference.n_hidden:
        raise ConfigError("cannot align HMMs with different state counts")
    best = min(
        itertools.permutations(range(hmm.n_hidden)),
        key=lambda perm: np.abs(hmm.emission[list(perm)] - reference.emission).sum(),
    )
    idx = list(best)
    return Hmm(hmm.initial[idx], hmm.transition[np.ix_(idx, idx)], hmm.emission[idx])


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(np.asarray(transition).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def sample_paths(hmm: Hmm, n_sequences: int, seq_len: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling. Returns (states, codes), each of shape (S, T)."""
    rng = np.random.default_rng(seed)
    states = np.empty((n_sequences, seq_len), dtype=int)
    codes = np.empty((n_sequences, seq_len), dtype=int)
    cum_t = np.cumsum(hmm.transition, axis=1)
    cum_e = np.cumsum(hmm.emission, axis=1)

    def pick(cum_rows: np.ndarray) -> np.ndarray:
        u = rng.random(cum_rows.shape[0])
        idx = (u[:, None] >= cum_rows).sum(axis=1)
        return np.minimum(idx, cum_rows.shape[1] - 1)

    s = pick(np.broadcast_to(np.cumsum(hmm.initial), (n_sequences, hmm.n_hidden)))
    for t in range(seq_len):
        if t > 0:
            s = pick(cum_t[s])
        states[:, t] = s
        codes[:, t] = pick(cum_e[s])
    return states, codes


def synthesize(hmm: Hmm, n_records: int, seq_len: int, seed: int) -> list[SyntheticIveRecord]:
    """Draw IID sequences from ``hmm`` and flatten them into records.

    ``ceil(n_records / seq_len)`` sequences are drawn and the tail of the
    last one is dropped.
    """
    if n_records < 1 or seq_len < 1:
        raise ConfigError("n_records and seq_len must be positive")
    n_seq = -(-n_records // seq_len)
    states, codes = sample_paths(hmm, n_seq, seq_len, seed)
    out = []
    for s, c in zip(states.ravel()[:n_records], codes.ravel()[:n_records]):
        occ, leave, outdoor, work = decode(c)
        out.append(SyntheticIveRecord(occ, leave, outdoor, work, bool(s), work.lux))
    return out


# -- corpus I/O --------------------------------------------------------------


def _parse(label: str, labels: list[str], column: str, row: int) -> int:
    try:
        return labels.index(label.strip())
    except ValueError:
        raise IveFormatError(f"row {row}: unknown {column} label {label!r}") from None


def load_ive_csv(path: str | Path) -> list[EventRecord]:
    path = Path(path)
    if not path.exists():
        raise IveFormatError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in IVE_COLUMNS if c not in header]
        if missing:
            raise IveFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        for i, row in enumerate(reader, start=2):
            if any(row.get(c) is None for c in IVE_COLUMNS):
                raise IveFormatError(f"row {i}: too few fields")
            sid = row.get("session_id")
            records.append(
                EventRecord(
                    EventKind(_parse(row["event_kind"], EVENT_LABELS, "event_kind", i)),
                    Occupancy(_parse(row["occupancy"], OCCUPANCY_LABELS, "occupancy", i)),
                    Leaving(_parse(row["intermediate_leaving"], LEAVING_LABELS, "intermediate_leaving", i)),
                    Illuminance(_parse(row["outdoor_illum"], ILLUM_LABELS, "outdoor_illum", i)),
                    Illuminance(_parse(row["work_illum"], ILLUM_LABELS, "work_illum", i)),
                    bool(_parse(row["light_on"], LIGHT_LABELS, "light_on", i)),
                    sid.strip() if sid else None,
                )
            )
    if not records:
        raise IveFormatError(f"{path}: empty dataset")
    return records


def write_ive_csv(records: Iterable[EventRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IVE_COLUMNS + ["session_id"])
        for r in records:
            w.writerow(
                [
                    EVENT_LABELS[r.event_kind],
                    OCCUPANCY_LABELS[r.occupancy],
                    LEAVING_LABELS[r.intermediate_leaving],
                    ILLUM_LABELS[r.outdoor_illum],
                    ILLUM_LABELS[r.work_illum],
                    int(r.light_on),
                    r.session_id or "",
                ]
            )


def write_synthetic_csv(records: Iterable[SyntheticIveRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SYNTHETIC_COLUMNS)
        for r in records:
            w.writerow(
                [
                    OCCUPANCY_LABELS[r.occupancy],
                    LEAVING_LABELS[r.intermediate_leaving],
                    ILLUM_LABELS[r.outdoor_illum],
                    ILLUM_LABELS[r.work_illum],
                    int(r.light_on),
                    f"{r.work_lux:g}",
                ]
            )


def read_synthetic_csv(path: str | Path) -> list[SyntheticIveRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SYNTHETIC_COLUMNS:
            raise IveFormatError(f"{path}: expected header {','.join(SYNTHETIC_COLUMNS)}")
        out = []
        for i, row in enumerate(reader, start=2):
            out.append(
                SyntheticIveRecord(
                    Occupancy(_parse(row["occupancy"], OCCUPANCY_LABELS, "occupancy", i)),
                    Leaving(_parse(row["intermediate_leaving"], LEAVING_LABELS, "intermediate_leaving", i)),
                    Illuminance(_parse(row["outdoor_illum"], ILLUM_LABELS, "outdoor_illum", i)),
                    Illuminance(_parse(row["work_illum"], ILLUM_LABELS, "work_illum", i)),
                    bool(_parse(row["light_on"], LIGHT_LABELS, "light_on", i)),
                    float(row["work_lux"]),
                )
            )
    return out


def sessions(records: Sequence[EventRecord]) -> list[list[EventRecord]]:
    """Split a corpus into sessions.

    Uses ``session_id`` when every record carries one (first-appearance
    order); otherwise each ``Initial`` event opens a new session.
    """
    if records and all(r.session_id for r in records):
        by_id: dict[str, list[EventRecord]] = {}
        for r in records:
            by_id.setdefault(r.session_id, []).append(r)  # type: ignore[arg-type]
        return list(by_id.values())
    out: list[list[EventRecord]] = []
    for r in records:
        if r.event_kind is EventKind.INITIAL or not out:
            out.append([])
        out[-1].append(r)
    return out


def labelled_sequences(records: Sequence[EventRecord]) -> list[list[tuple[int, int]]]:
    return [[(int(r.light_on), encode(r)) for r in s] for s in sessions(records)]


def observation_sequences(records: Sequence[EventRecord]) -> list[list[int]]:
    return [[encode(r) for r in s] for s in sessions(records)]


# -- example corpus ----------------------------------------------------------

# switch-on propensity of an occupant facing a given work-area illuminance
_ON_WHEN_PRESENT = {Illuminance.DARK: 0.95, Illuminance.NORMAL: 0.75, Illuminance.BRIGHT: 0.35}


def generate_example_corpus(seed: int) -> list[EventRecord]:
    """Synthesize a 180-event corpus with the published event-kind counts.

    36 sessions of five events each: half take a short intermediate leave,
    half a long one. Outdoor illuminance is fixed per session; work-area
    illuminance follows it loosely.
    """
    rng = np.random.default_rng(seed)
    kinds = [True] * 18 + [False] * 18
    rng.shuffle(kinds)
    records: list[EventRecord] = []
    for n, short in enumerate(kinds):
        sid = f"s{n:02d}"
        outdoor = Illuminance(int(rng.integers(3)))

        def work_level() -> Illuminance:
            w = rng.choice(3, p=[0.6, 0.3, 0.1] if outdoor is Illuminance.DARK else
                           [0.2, 0.5, 0.3] if outdoor is Illuminance.NORMAL else [0.1, 0.3, 0.6])
            return Illuminance(int(w))

        def decide(present: bool, work: Illuminance, was_on: bool, keep_on: float) -> bool:
            if present:
                return was_on or rng.random() < _ON_WHEN_PRESENT[work]
            return was_on and rng.random() < keep_on

        leave = Leaving.SHORT if short else Leaving.LONG
        leave_kind, back_kind = (
            (EventKind.SHORT_LEAVE, EventKind.RETURN_SHORT) if short else (EventKind.LONG_LEAVE, EventKind.RETURN_LONG)
        )
        plan = [
            (EventKind.INITIAL, Occupancy.NON_OCCUPANCY, Leaving.NONE, 0.0),
            (EventKind.ARRIVAL, Occupancy.OCCUPANCY, Leaving.NONE, 0.0),
            (leave_kind, Occupancy.NON_OCCUPANCY, leave, 0.85 if short else 0.3),
            (back_kind, Occupancy.OCCUPANCY, leave, 0.0),
            (EventKind.DEPARTURE, Occupancy.NON_OCCUPANCY, Leaving.NONE, 0.1),
        ]
        light = False
        for kind, occ, lv, keep_on in plan:
            work = work_level()
            light = decide(occ is Occupancy.OCCUPANCY, work, light, keep_on)
            records.append(EventRecord(kind, occ, lv, outdoor, work, light, sid))
    return records
