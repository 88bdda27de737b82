"""End-to-end experiment stages and the artifacts they leave on disk.

Every stage is deterministic given the config: its seed is derived from the
master seed and the stage name, and every emitted file is recorded in
``manifest.json`` with its SHA-256.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__, gan, ive, plotting, probit
from .config import ExperimentConfig, dumps
from .dataset import (
    AssembledDataset,
    FeatureRow,
    Provenance,
    concat,
    impute_contextual_factors,
    ive_feature_rows,
    mode_context,
    write_assembled_csv,
)
from .stats import EvalReport, build_report

log = logging.getLogger("augbpm")

EXISTING_CSV = "existing_bpm.csv"
TARGET_CSV = "target.csv"
CORPUS_CSV = "ive_corpus.csv"
SYNTHETIC_CSV = "synthetic_ive.csv"
HMM_JSON = "hmm.json"
TRAINING_CSV = "training_data.csv"
CHECKPOINT = "augmented_bpm.bin"
TRACE_CSV = "training_trace.csv"
FIGURE = "report_figure.png"
MANIFEST = "manifest.json"


def say(stage: str, message: str, *args) -> None:
    log.info(f"[{stage}] {message}", *args)


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def atomic(path: Path) -> Iterator[Path]:
    """Yield a ``.partial`` path that is renamed onto ``path`` on success."""
    partial = path.with_name(path.name + ".partial")
    try:
        yield partial
    except BaseException:
        partial.unlink(missing_ok=True)
        raise
    os.replace(partial, path)


class Run:
    """Output directory plus the manifest that tracks it."""

    def __init__(self, cfg: ExperimentConfig, out_dir: str | Path | None = None):
        self.cfg = cfg
        self.out = Path(out_dir or cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.seconds: dict[str, float] = {}
        existing = self.out / MANIFEST
        if existing.exists():
            try:
                old = json.loads(existing.read_text())
                self.files.update(old.get("files", {}))
                self.seconds.update(old.get("stage_seconds", {}))
            except json.JSONDecodeError:
                pass

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, path: Path) -> None:
        self.files[path.name] = sha256(path)

    @contextlib.contextmanager
    def stage(self, name: str) -> Iterator[None]:
        t0 = time.perf_counter()
        yield
        self.seconds[name] = round(time.perf_counter() - t0, 3)

    def write_manifest(self) -> Path:
        body = {
            "library_version": __version__,
            "experiment": self.cfg.experiment,
            "config": self.cfg.to_dict(),
            "files": dict(sorted(self.files.items())),
            "stage_seconds": self.seconds,
        }
        path = self.path(MANIFEST)
        with atomic(path) as tmp:
            tmp.write_text(json.dumps(body, indent=2) + "\n")
        return path


# -- stages -------------------------------------------------------------------


def sample_bpm(cfg: ExperimentConfig, which: str, count: int | None = None) -> list[probit.BpmSample]:
    if which == "existing":
        model, n = cfg.existing_bpm, cfg.existing_samples
    elif which == "target":
        model, n = cfg.target, cfg.target_samples
    else:
        raise probit.ConfigError(f"which must be 'existing' or 'target', got {which!r}")
    return probit.sample_dataset(model, cfg.illuminance, count or n, cfg.stage_seed(f"sample-{which}"))


@dataclass
class IveResult:
    corpus: list[ive.EventRecord]
    counted: ive.Hmm
    fitted: ive.Hmm
    trace: list[float]
    synthetic: list[ive.SyntheticIveRecord]


def build_ive(cfg: ExperimentConfig) -> IveResult:
    if cfg.ive.kind == "csv":
        corpus = ive.load_ive_csv(cfg.ive.path)
    else:
        corpus = ive.generate_example_corpus(cfg.stage_seed("ive-corpus"))
    h = cfg.hmm
    counted = ive.init_from_counts(ive.labelled_sequences(corpus), h.n_hidden, ive.N_OBS, h.smoothing)
    fitted, trace = ive.baum_welch(counted, ive.observation_sequences(corpus), h.max_iters, h.tol, h.smoothing)
    fitted = ive.align_states(fitted, counted)
    synthetic = ive.synthesize(fitted, cfg.ive.n_records, h.seq_len, cfg.stage_seed("synth-ive"))
    return IveResult(corpus, counted, fitted, trace, synthetic)


@dataclass
class TrainingRows:
    existing: list[FeatureRow]
    ive: list[FeatureRow]
    target: list[FeatureRow]


def assemble(
    cfg: ExperimentConfig,
    existing: list[probit.BpmSample],
    target: list[probit.BpmSample],
    synthetic: list[ive.SyntheticIveRecord],
) -> TrainingRows:
    return TrainingRows(
        impute_contextual_factors(existing, synthetic, cfg.stage_seed("impute-existing"), cfg.joint_imputation),
        ive_feature_rows(synthetic),
        impute_contextual_factors(target, synthetic, cfg.stage_seed("impute-target"), cfg.joint_imputation),
    )


def training_config(cfg: ExperimentConfig) -> gan.GanConfig:
    return gan.GanConfig.from_dict({**cfg.gan.to_dict(), "seed": cfg.stage_seed("train")})


def probe_for(cfg: ExperimentConfig, synthetic: list[ive.SyntheticIveRecord]) -> gan.Probe:
    e = cfg.evaluation
    return gan.make_probe(cfg.target, mode_context(synthetic), e.probe_lo, e.probe_hi, e.probe_points)


def ive_curve(synthetic: list[ive.SyntheticIveRecord], work_lux: np.ndarray) -> np.ndarray:
    """Switch-on frequency of the synthetic IVE records at each probe lux.

    Each lux value takes the frequency observed at the nearest categorical
    level (200 / 500 / 700 lux).
    """
    levels = np.array(sorted(ive.ILLUMINANCE_LUX.values()))
    on = np.array([r.light_on for r in synthetic], dtype=float)
    lux = np.array([r.work_lux for r in synthetic])
    overall = float(on.mean())
    freq = np.array([on[lux == lv].mean() if np.any(lux == lv) else overall for lv in levels])
    nearest = np.abs(np.asarray(work_lux)[:, None] - levels[None, :]).argmin(axis=1)
    return freq[nearest]


def evaluate(cfg: ExperimentConfig, aug: gan.AugmentedBpm, synthetic: list[ive.SyntheticIveRecord]) -> EvalReport:
    probe = probe_for(cfg, synthetic)
    return build_report(
        gan.predict(aug, probe.rows()),
        probit.evaluate(cfg.existing_bpm, probe.work_lux),
        ive_curve(synthetic, probe.work_lux),
        probe.target_p,
        probe.work_lux,
        cfg.experiment,
        cfg.evaluation.alpha,
        cfg.evaluation.paired,
    )


# -- commands -------------------------------------------------------------------


def cmd_sample_bpm(cfg: ExperimentConfig, which: str, count: int | None = None, out_dir=None) -> Path:
    run = Run(cfg, out_dir)
    with run.stage(f"sample-{which}"):
        samples = sample_bpm(cfg, which, count)
        path = run.path(EXISTING_CSV if which == "existing" else TARGET_CSV)
        with atomic(path) as tmp:
            probit.write_samples_csv(samples, tmp)
        run.record(path)
    p = np.array([s.p_switch_on for s in samples])
    lux = np.array([s.work_lux for s in samples])
    say("sample-bpm", "%s: %d rows, lux mean %.1f, p mean %.4f (min %.4f, max %.4f)",
        which, len(samples), lux.mean(), p.mean(), p.min(), p.max())
    run.write_manifest()
    return path


def _write_ive(run: Run, res: IveResult, cfg: ExperimentConfig) -> None:
    if cfg.ive.kind == "generate":
        path = run.path(CORPUS_CSV)
        with atomic(path) as tmp:
            ive.write_ive_csv(res.corpus, tmp)
        run.record(path)
    path = run.path(HMM_JSON)
    body = {"counted": res.counted.to_dict(), "fitted": res.fitted.to_dict(), "log_likelihood_trace": res.trace}
    with atomic(path) as tmp:
        tmp.write_text(json.dumps(body, indent=1) + "\n")
    run.record(path)
    path = run.path(SYNTHETIC_CSV)
    with atomic(path) as tmp:
        ive.write_synthetic_csv(res.synthetic, tmp)
    run.record(path)


def cmd_synth_ive(cfg: ExperimentConfig, out_dir=None) -> IveResult:
    run = Run(cfg, out_dir)
    with run.stage("synth-ive"):
        res = build_ive(cfg)
        _write_ive(run, res, cfg)
    say("synth-ive", "corpus of %d events in %d sessions", len(res.corpus), len(ive.sessions(res.corpus)))
    say("synth-ive", "Baum-Welch log-likelihood %s", " ".join(f"{v:.4f}" for v in res.trace))
    say("synth-ive", "wrote %d synthetic records", len(res.synthetic))
    run.write_manifest()
    return res


def _write_trace(trace: list[gan.TraceRow], path: Path) -> None:
    with atomic(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(gan.TRACE_COLUMNS)
            for r in trace:
                w.writerow([r.epoch, f"{r.value_fn:.10g}", f"{r.d_loss:.10g}", f"{r.g_loss:.10g}", f"{r.probe_mae:.10g}"])


def _save_checkpoint(aug: gan.AugmentedBpm, path: Path, run: Run) -> None:
    meta = path.with_name(path.name + ".json")
    with atomic(path) as tmp, atomic(meta) as tmp_meta:
        written, written_meta = aug.save(tmp)
        os.replace(written_meta, tmp_meta)
    run.record(path)
    run.record(meta)


def _upstream(run: Run, cfg: ExperimentConfig) -> tuple[IveResult, TrainingRows]:
    with run.stage("sample-bpm"):
        existing = sample_bpm(cfg, "existing")
        target = sample_bpm(cfg, "target")
        for samples, name in ((existing, EXISTING_CSV), (target, TARGET_CSV)):
            with atomic(run.path(name)) as tmp:
                probit.write_samples_csv(samples, tmp)
            run.record(run.path(name))
    with run.stage("synth-ive"):
        res = build_ive(cfg)
        _write_ive(run, res, cfg)
    say("synth-ive", "Baum-Welch log-likelihood %.4f -> %.4f in %d iterations", res.trace[0], res.trace[-1], len(res.trace) - 1)
    with run.stage("assemble"):
        rows = assemble(cfg, existing, target, res.synthetic)
        gen_in = concat(rows.existing, rows.ive, cfg.stage_seed("concat"))
        data = AssembledDataset(gen_in.rows + rows.target, gen_in.provenance + [Provenance.TARGET] * len(rows.target))
        path = run.path(TRAINING_CSV)
        with atomic(path) as tmp:
            write_assembled_csv(data, tmp)
        run.record(path)
    say("assemble", "%d existing, %d IVE, %d target rows", len(rows.existing), len(rows.ive), len(rows.target))
    return res, rows


def cmd_train(cfg: ExperimentConfig, out_dir=None) -> tuple[gan.AugmentedBpm, list[gan.TraceRow]]:
    run = Run(cfg, out_dir)
    res, rows = _upstream(run, cfg)
    gcfg = training_config(cfg)
    probe = probe_for(cfg, res.synthetic)
    say("train", "m=%d n=%d alpha=%g r=%g", gcfg.batch_size_m, gcfg.epochs_n, gcfg.learning_rate_alpha, gcfg.regularization_r)

    def progress(row: gan.TraceRow) -> None:
        say("train", "epoch %d V=%.5f d_loss=%.5f g_loss=%.5f probe_mae=%.5f",
            row.epoch, row.value_fn, row.d_loss, row.g_loss, row.probe_mae)

    try:
        with run.stage("train"):
            aug, trace = gan.train(gcfg, rows.existing, rows.ive, rows.target, probe, progress)
    except gan.TrainingDivergedError as exc:
        _write_trace(exc.trace, run.path(TRACE_CSV))
        run.record(run.path(TRACE_CSV))
        if exc.last_good is not None:
            last = gan.AugmentedBpm(exc.last_good, gcfg.lux_norm, gcfg.to_dict())
            _save_checkpoint(last, run.path("augmented_bpm.last_good.bin"), run)
        run.write_manifest()
        say("train", "aborted: %s", exc)
        raise
    _save_checkpoint(aug, run.path(CHECKPOINT), run)
    _write_trace(trace, run.path(TRACE_CSV))
    run.record(run.path(TRACE_CSV))
    say("train", "finished at epoch %d, probe MAE %.5f", aug.final_epoch, trace[-1].probe_mae)
    run.write_manifest()
    return aug, trace


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str | Path | None = None, out_dir=None) -> EvalReport:
    run = Run(cfg, out_dir)
    ckpt = Path(checkpoint) if checkpoint else run.path(CHECKPOINT)
    aug = gan.AugmentedBpm.load(ckpt)
    with run.stage("evaluate"):
        res = build_ive(cfg)
        report = evaluate(cfg, aug, res.synthetic)
        for path in report.write(run.out):
            run.record(path)
        fig = run.path(FIGURE)
        with atomic(fig) as tmp:
            plotting.save_comparison(report, tmp, fmt="png")
        run.record(fig)
    say("evaluate", "MAE augmented %.4f existing %.4f ive %.4f",
        report.mae_augmented, report.mae_existing, report.mae_ive)
    for i, res_t in ((1, report.hypothesis1), (2, report.hypothesis2)):
        if res_t is not None:
            say("evaluate", "hypothesis %d: t=%.3f df=%d p=%.3g reject=%s",
                i, res_t.t_value, res_t.degrees_freedom, res_t.p_value, res_t.reject_h0)
    run.write_manifest()
    return report


def cmd_run_experiment(cfg: ExperimentConfig, out_dir=None) -> EvalReport:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.yaml"
    with atomic(cfg_path) as tmp:
        tmp.write_text(dumps(cfg))
    run = Run(cfg, out)
    run.record(cfg_path)
    run.write_manifest()
    cmd_train(cfg, out)
    return cmd_evaluate(cfg, out / CHECKPOINT, out)
