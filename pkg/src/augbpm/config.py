"""Experiment configuration files and stage seeding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from .gan import GanConfig
from .probit import ConfigError, IlluminanceDistribution, ProbitModel

PRESETS = ("experiment1", "experiment2")


@dataclass(frozen=True)
class IveSource:
    kind: str = "generate"  # "generate" or "csv"
    path: str | None = None
    n_records: int = 5000

    def __post_init__(self) -> None:
        if self.kind not in ("generate", "csv"):
            raise ConfigError(f"ive.source must be 'generate' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("ive.path is required when ive.source is 'csv'")
        if self.n_records < 1:
            raise ConfigError("ive.n_records must be >= 1")


@dataclass(frozen=True)
class HmmSettings:
    n_hidden: int = 2
    smoothing: float = 1e-3
    seq_len: int = 5
    max_iters: int = 100
    tol: float = 1e-6


@dataclass(frozen=True)
class EvalSettings:
    probe_lo: float = 200.0
    probe_hi: float = 700.0
    probe_points: int = 101
    alpha: float = 0.05
    paired: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    existing_bpm: ProbitModel
    target: ProbitModel
    illuminance: IlluminanceDistribution = IlluminanceDistribution()
    existing_samples: int = 5000
    target_samples: int = 5000
    ive: IveSource = IveSource()
    hmm: HmmSettings = HmmSettings()
    joint_imputation: bool = True
    gan: GanConfig = GanConfig()
    desk_scale: dict = field(default_factory=dict)
    evaluation: EvalSettings = EvalSettings()
    output_dir: str = "runs"
    seed: int = 0

    def stage_seed(self, stage: str) -> int:
        """Seed for one pipeline stage, derived from the master seed."""
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(digest[:4], "little")

    def with_desk_scale(self) -> "ExperimentConfig":
        return replace(self, gan=GanConfig.from_dict({**self.gan.to_dict(), **self.desk_scale}))

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "existing_bpm": self.existing_bpm.to_dict(),
            "target": self.target.to_dict(),
            "illuminance": self.illuminance.to_dict(),
            "samples": {"existing": self.existing_samples, "target": self.target_samples},
            "ive": {"source": self.ive.kind, "path": self.ive.path, "n_records": self.ive.n_records},
            "hmm": dict(vars(self.hmm)),
            "dataset": {"joint_imputation": self.joint_imputation},
            "gan": self.gan.to_dict(),
            "desk_scale": dict(self.desk_scale),
            "eval": dict(vars(self.evaluation)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            samples = data.get("samples", {})
            ive = data.get("ive", {})
            gan = data.get("gan", {})
            desk = dict(data.get("desk_scale") or {})
            GanConfig.from_dict({**gan, **desk})  # reject bad overrides early
            return cls(
                experiment=str(data["experiment"]),
                existing_bpm=ProbitModel.from_dict(data["existing_bpm"]),
                target=ProbitModel.from_dict(data["target"]),
                illuminance=IlluminanceDistribution.from_dict(data.get("illuminance", IlluminanceDistribution().to_dict())),
                existing_samples=int(samples.get("existing", 5000)),
                target_samples=int(samples.get("target", 5000)),
                ive=IveSource(ive.get("source", "generate"), ive.get("path"), int(ive.get("n_records", 5000))),
                hmm=HmmSettings(**data.get("hmm", {})),
                joint_imputation=bool(data.get("dataset", {}).get("joint_imputation", True)),
                gan=GanConfig.from_dict(gan),
                desk_scale=desk,
                evaluation=EvalSettings(**data.get("eval", {})),
                output_dir=str(data.get("output_dir", "runs")),
                seed=int(data.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc.args[0]!r}") from None
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from None


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def loads(text: str) -> ExperimentConfig:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return ExperimentConfig.from_dict(data)


def load(path: str | Path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("augbpm.presets").joinpath(f"{name}.yaml").read_text()


def load_preset(name: str) -> ExperimentConfig:
    return loads(preset_text(name))
