"""Conditional GAN that turns existing-BPM and IVE features into an augmented BPM.

The generator maps encoded context ``[occupied, leave one-hot, lux]`` to a
switch-on probability. The discriminator sees ``[probability, context]`` and
is trained to tell generated probabilities (label 0) from the performance
target's (label 1). Each epoch runs one discriminator step followed by one
generator step.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .dataset import N_FEATURES, FeatureRow, LuxNorm, feature_matrix, probabilities
from .ive import Leaving, Occupancy
from .probit import ConfigError, ProbitModel, evaluate

log = logging.getLogger(__name__)

EPS = nn.BCE_EPS


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries the trace and the last finite generator."""

    def __init__(self, message: str, trace: list["TraceRow"], last_good: nn.Mlp | None = None):
        super().__init__(message)
        self.trace = trace
        self.last_good = last_good


@dataclass(frozen=True)
class GanConfig:
    batch_size_m: int = 2000
    epochs_n: int = 200_000
    learning_rate_alpha: float = 1e-6
    regularization_r: float = 1e-6
    seed: int = 0
    mae_threshold: float | None = None
    log_interval: int = 1000
    hidden: int = 300
    leaky_slope: float = nn.LEAKY_SLOPE
    non_saturating: bool = False
    lux_norm: LuxNorm = LuxNorm.SCALE01

    def __post_init__(self) -> None:
        object.__setattr__(self, "lux_norm", LuxNorm(self.lux_norm))
        if self.batch_size_m < 1:
            raise ConfigError("batch_size_m must be >= 1")
        if self.epochs_n < 1:
            raise ConfigError("epochs_n must be >= 1")
        if self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1")
        if self.learning_rate_alpha < 0 or self.regularization_r < 0:
            raise ConfigError("learning rate and regularization must be non-negative")

    @property
    def enet(self) -> nn.ElasticNetConfig:
        return nn.ElasticNetConfig.split(self.regularization_r)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lux_norm"] = self.lux_norm.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GanConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown gan settings: {', '.join(sorted(unknown))}")
        return cls(**data)


def make_generator(seed: int, hidden: int = 300) -> nn.Mlp:
    return nn.init_weights(
        [N_FEATURES, hidden, hidden, 1],
        [nn.Activation.RELU, nn.Activation.RELU, nn.Activation.SIGMOID],
        seed,
    )


def make_discriminator(seed: int, hidden: int = 300, slope: float = nn.LEAKY_SLOPE) -> nn.Mlp:
    return nn.init_weights(
        [N_FEATURES + 1, hidden, hidden, 1],
        [nn.Activation.LEAKY_RELU, nn.Activation.LEAKY_RELU, nn.Activation.SIGMOID],
        seed,
        slope=slope,
    )


def disc_input(p: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Discriminator rows ``[probability | conditioning features]``."""
    return np.hstack([np.reshape(p, (-1, 1)), features])


def generate(gen: nn.Mlp, features: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(gen, features)
    return out[:, 0]


def value_function(
    disc: nn.Mlp,
    gen: nn.Mlp,
    target_p: np.ndarray,
    target_features: np.ndarray,
    z_features: np.ndarray,
) -> float:
    """Minimax value: mean log D(target | ctx) + mean log(1 - D(G(z) | z))."""
    if len(target_p) == 0 or len(z_features) == 0:
        raise ConfigError("value function needs non-empty batches")
    d_real, _ = nn.forward(disc, disc_input(target_p, target_features))
    d_fake, _ = nn.forward(disc, disc_input(generate(gen, z_features), z_features))
    d_real = np.clip(d_real[:, 0], EPS, 1 - EPS)
    d_fake = np.clip(d_fake[:, 0], EPS, 1 - EPS)
    return float(np.mean(np.log(d_real)) + np.mean(np.log1p(-d_fake)))


def _check_batches(z_features: np.ndarray, target_p: np.ndarray | None = None) -> None:
    if len(z_features) == 0:
        raise ConfigError("empty batch")
    if target_p is not None and len(target_p) != len(z_features):
        raise ConfigError(
            f"generated batch has {len(z_features)} rows but target batch has {len(target_p)}"
        )


def discriminator_gradients(
    disc: nn.Mlp,
    gen: nn.Mlp,
    z_features: np.ndarray,
    target_p: np.ndarray,
    target_features: np.ndarray,
    enet: nn.ElasticNetConfig = nn.NO_PENALTY,
) -> tuple[nn.Gradients, dict]:
    """Gradient of the discriminator's loss, the negated minimax value.

    Descending this gradient is ascent on the value function. Returns the
    gradients and the batch statistics used for the training trace.
    """
    _check_batches(z_features, target_p)
    n = len(z_features)
    fake_p = generate(gen, z_features)
    x = np.vstack([disc_input(target_p, target_features), disc_input(fake_p, z_features)])
    out, cache = nn.forward(disc, x)
    d = out[:, 0]
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    # d(-V)/d(logit) for the 1/n-averaged terms
    dlogit = (d - labels) / n
    grads = nn.backward(disc, cache, dlogit, enet, wrt_preactivation=True)
    dc = np.clip(d, EPS, 1 - EPS)
    value = float(np.mean(np.log(dc[:n])) + np.mean(np.log1p(-dc[n:])))
    stats = {"value_fn": value, "d_loss": nn.bce_loss(d, labels)}
    return grads, stats


def discriminator_objective(disc, gen, z_features, target_p, target_features) -> float:
    """Unclipped loss whose gradient :func:`discriminator_gradients` returns."""
    fake_p = generate(gen, z_features)
    d_real = nn.forward(disc, disc_input(target_p, target_features))[0][:, 0]
    d_fake = nn.forward(disc, disc_input(fake_p, z_features))[0][:, 0]
    return float(-(np.mean(np.log(d_real)) + np.mean(np.log1p(-d_fake))))


def discriminator_step(
    disc: nn.Mlp,
    gen: nn.Mlp,
    z_features: np.ndarray,
    target_p: np.ndarray,
    target_features: np.ndarray,
    cfg: GanConfig,
) -> nn.Mlp:
    grads, _ = discriminator_gradients(disc, gen, z_features, target_p, target_features, cfg.enet)
    return nn.sgd_step(disc, grads, nn.SgdConfig(cfg.learning_rate_alpha, nn.Direction.DESCENT))


def generator_gradients(
    gen: nn.Mlp,
    disc: nn.Mlp,
    z_features: np.ndarray,
    enet: nn.ElasticNetConfig = nn.NO_PENALTY,
    non_saturating: bool = False,
) -> tuple[nn.Gradients, float]:
    """Gradient of mean log(1 - D(G(z) | z)) with respect to the generator.

    ``non_saturating`` swaps the objective for -mean log D(G(z) | z).
    """
    _check_batches(z_features)
    n = len(z_features)
    g_out, g_cache = nn.forward(gen, z_features)
    d_out, d_cache = nn.forward(disc, disc_input(g_out[:, 0], z_features))
    d = d_out[:, 0]
    dc = np.clip(d, EPS, 1 - EPS)
    if non_saturating:
        loss = float(-np.mean(np.log(dc)))
        dlogit = (d - 1.0) / n
    else:
        loss = float(np.mean(np.log1p(-dc)))
        dlogit = -d / n
    d_grads = nn.backward(disc, d_cache, dlogit, wrt_preactivation=True)
    dp = d_grads.inputs[:, :1]
    return nn.backward(gen, g_cache, dp, enet), loss


def generator_objective(gen, disc, z_features, non_saturating: bool = False) -> float:
    d = nn.forward(disc, disc_input(generate(gen, z_features), z_features))[0][:, 0]
    if non_saturating:
        return float(-np.mean(np.log(d)))
    return float(np.mean(np.log1p(-d)))


def generator_step(gen: nn.Mlp, disc: nn.Mlp, z_features: np.ndarray, cfg: GanConfig) -> nn.Mlp:
    grads, _ = generator_gradients(gen, disc, z_features, cfg.enet, cfg.non_saturating)
    return nn.sgd_step(gen, grads, nn.SgdConfig(cfg.learning_rate_alpha, nn.Direction.DESCENT))


# -- probe grid ---------------------------------------------------------------


@dataclass(frozen=True)
class Probe:
    """Fixed lux grid at one context, used to measure distance to the target."""

    work_lux: np.ndarray
    occupancy: Occupancy
    leaving: Leaving
    target_p: np.ndarray

    def rows(self) -> list[FeatureRow]:
        return [FeatureRow(self.occupancy, self.leaving, float(x)) for x in self.work_lux]


def probe_grid(lo: float = 200.0, hi: float = 700.0, points: int = 101) -> np.ndarray:
    return np.linspace(lo, hi, points)


def make_probe(
    target: ProbitModel,
    context: tuple[Occupancy, Leaving],
    lo: float = 200.0,
    hi: float = 700.0,
    points: int = 101,
) -> Probe:
    lux = probe_grid(lo, hi, points)
    return Probe(lux, context[0], context[1], np.asarray(evaluate(target, lux)))


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    value_fn: float
    d_loss: float
    g_loss: float
    probe_mae: float


TRACE_COLUMNS = ["epoch", "value_fn", "d_loss", "g_loss", "probe_mae"]


@dataclass
class AugmentedBpm:
    generator: nn.Mlp
    lux_norm: LuxNorm = LuxNorm.SCALE01
    config: dict = field(default_factory=dict)
    dataset_hashes: dict = field(default_factory=dict)
    final_epoch: int = 0

    def metadata(self) -> dict:
        return {
            "format": "augbpm-augmented-bpm",
            "checkpoint_version": nn.CHECKPOINT_VERSION,
            "lux_norm": LuxNorm(self.lux_norm).value,
            "final_epoch": self.final_epoch,
            "config": self.config,
            "dataset_hashes": self.dataset_hashes,
        }

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``path`` (network checkpoint) and ``path`` + ``.json`` metadata."""
        path = Path(path)
        nn.save(self.generator, path)
        meta = path.with_name(path.name + ".json")
        meta.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path, meta

    @classmethod
    def load(cls, path: str | Path) -> "AugmentedBpm":
        path = Path(path)
        meta_path = path.with_name(path.name + ".json")
        if not meta_path.exists():
            raise nn.CheckpointError(f"{meta_path}: metadata sidecar missing")
        meta = json.loads(meta_path.read_text())
        if meta.get("checkpoint_version") != nn.CHECKPOINT_VERSION:
            raise nn.CheckpointError(
                f"{path}: checkpoint version {meta.get('checkpoint_version')} != {nn.CHECKPOINT_VERSION}"
            )
        gen = nn.load(path)
        if gen.n_in != N_FEATURES or gen.n_out != 1:
            raise nn.CheckpointError(f"{path}: not a generator ({gen.n_in} inputs, {gen.n_out} outputs)")
        return cls(gen, LuxNorm(meta["lux_norm"]), meta.get("config", {}), meta.get("dataset_hashes", {}), meta.get("final_epoch", 0))


def predict(aug: AugmentedBpm, rows: Sequence[FeatureRow]) -> np.ndarray:
    return generate(aug.generator, feature_matrix(rows, aug.lux_norm))


def rows_digest(rows: Sequence[FeatureRow]) -> str:
    h = hashlib.sha256()
    for r in rows:
        h.update(f"{int(r.occupancy)},{int(r.intermediate_leaving)},{r.work_lux!r},{r.p_switch_on!r}\n".encode())
    return h.hexdigest()


def _draw(rng: np.random.Generator, n_rows: int, m: int) -> np.ndarray:
    if n_rows < m:
        return rng.integers(n_rows, size=m)
    return rng.choice(n_rows, size=m, replace=False)


def train(
    cfg: GanConfig,
    bpm_rows: Sequence[FeatureRow],
    ive_rows: Sequence[FeatureRow],
    target_rows: Sequence[FeatureRow],
    probe: Probe | None = None,
    progress: Callable[[TraceRow], None] | None = None,
    step_log: list | None = None,
) -> tuple[AugmentedBpm, list[TraceRow]]:
    """Alternating minimax training.

    Every epoch draws ``m`` existing-BPM and ``m`` IVE rows as the generator
    batch and ``2m`` target rows, takes one discriminator step, then draws a
    fresh ``2m`` generator batch and takes one generator step. A trace row is
    emitted on epoch 1, every ``log_interval`` epochs and on the last epoch.
    Training stops early once the probe MAE falls below ``mae_threshold``.

    If ``step_log`` is a list, ``(epoch, "disc" | "gen")`` tuples are appended
    to it as steps happen.
    """
    if not bpm_rows or not ive_rows or not target_rows:
        raise ConfigError("training needs existing-BPM, IVE and target rows")
    m = cfg.batch_size_m
    bpm_x = feature_matrix(bpm_rows, cfg.lux_norm)
    ive_x = feature_matrix(ive_rows, cfg.lux_norm)
    tgt_x = feature_matrix(target_rows, cfg.lux_norm)
    tgt_p = probabilities(target_rows)
    probe_x = None
    if probe is not None:
        probe_x = feature_matrix(probe.rows(), cfg.lux_norm)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    gen = make_generator(int(seeds[0].generate_state(1)[0]), cfg.hidden)
    disc = make_discriminator(int(seeds[1].generate_state(1)[0]), cfg.hidden, cfg.leaky_slope)
    rng = np.random.default_rng(seeds[2])
    sgd = nn.SgdConfig(cfg.learning_rate_alpha, nn.Direction.DESCENT)
    enet = cfg.enet

    def z_batch() -> np.ndarray:
        return np.vstack([bpm_x[_draw(rng, len(bpm_x), m)], ive_x[_draw(rng, len(ive_x), m)]])

    trace: list[TraceRow] = []
    epoch = 0
    for epoch in range(1, cfg.epochs_n + 1):
        z = z_batch()
        t_idx = _draw(rng, len(tgt_x), 2 * m)
        d_grads, stats = discriminator_gradients(disc, gen, z, tgt_p[t_idx], tgt_x[t_idx], enet)
        disc = nn.sgd_step(disc, d_grads, sgd)
        if step_log is not None:
            step_log.append((epoch, "disc"))

        z = z_batch()
        g_grads, g_loss = generator_gradients(gen, disc, z, enet, cfg.non_saturating)
        last_good = gen
        gen = nn.sgd_step(gen, g_grads, sgd)
        if step_log is not None:
            step_log.append((epoch, "gen"))

        if not (np.isfinite(stats["value_fn"]) and np.isfinite(g_loss) and gen.is_finite() and disc.is_finite()):
            raise TrainingDivergedError(f"non-finite loss or weights at epoch {epoch}", trace, last_good)

        last = epoch == cfg.epochs_n
        need_mae = cfg.mae_threshold is not None and probe_x is not None
        logged = epoch == 1 or epoch % cfg.log_interval == 0 or last
        mae = float("nan")
        if probe_x is not None and (logged or need_mae):
            mae = float(np.mean(np.abs(generate(gen, probe_x) - probe.target_p)))
        converged = need_mae and mae < cfg.mae_threshold
        if logged or converged:
            row = TraceRow(epoch, stats["value_fn"], stats["d_loss"], g_loss, mae)
            trace.append(row)
            if progress is not None:
                progress(row)
        if converged:
            log.info("probe MAE %.4f below threshold at epoch %d", mae, epoch)
            break

    hashes = {
        "existing_bpm": rows_digest(bpm_rows),
        "synthetic_ive": rows_digest(ive_rows),
        "target": rows_digest(target_rows),
    }
    return AugmentedBpm(gen, cfg.lux_norm, cfg.to_dict(), hashes, epoch), trace
