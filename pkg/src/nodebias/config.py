"""Experiment configuration (JSON) with defaults for every field except the
dataset source."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SplitSpec, SynthConfig
from .errors import ConfigError, DataError
from .perturb import DEFAULT_BUDGET, DEFAULT_MC_SAMPLES, POLARITIES
from .train import TrainConfig

REGIMES = ("full", "truncated")


@dataclass(frozen=True)
class DatasetSource:
    """Exactly one of ``csv`` (split by ``split``), ``train_csv`` + ``test_csv``,
    or ``synthetic``."""

    csv: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None
    synthetic: SynthConfig | None = None
    test_head_count: int = 20
    test_tail_count: int = 14

    @property
    def kind(self) -> str:
        if self.synthetic is not None:
            return "synthetic"
        if self.csv is not None:
            return "csv"
        return "train_test"

    def to_dict(self) -> dict:
        if self.kind == "synthetic":
            return {"synthetic": asdict(self.synthetic),
                    "test_head_count": self.test_head_count,
                    "test_tail_count": self.test_tail_count}
        if self.kind == "csv":
            return {"csv": self.csv}
        return {"train_csv": self.train_csv, "test_csv": self.test_csv}


@dataclass(frozen=True)
class SweepConfig:
    step: float = 0.05
    max_level: int = 10
    class_polarity: str = "symmetric"
    node_polarities: tuple[str, ...] = ("negative", "positive")
    budget: int = DEFAULT_BUDGET
    mc_samples: int = DEFAULT_MC_SAMPLES
    mc_seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("sweep.step must be positive")
        if self.max_level < 1:
            raise ConfigError("sweep.max_level must be positive")
        if self.class_polarity not in POLARITIES:
            raise ConfigError(f"sweep.class_polarity must be one of {POLARITIES}")
        for p in self.node_polarities:
            if p not in ("positive", "negative"):
                raise ConfigError("sweep.node_polarities may contain 'positive' and 'negative' only")
        if self.budget < 1 or self.mc_samples < 1:
            raise ConfigError("sweep.budget and sweep.mc_samples must be positive")


@dataclass(frozen=True)
class TruncationConfig:
    seed: int = 0
    # redraw the deleted head rows before training each network
    per_network: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    feature_select_k: int | None = 5
    split: SplitSpec = field(default_factory=SplitSpec)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    regimes: tuple[str, ...] = REGIMES
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = tuple(range(10))
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "nodebias_out"

    def __post_init__(self):
        if not self.regimes:
            raise ConfigError("regimes must not be empty")
        for r in self.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.feature_select_k is not None and self.feature_select_k < 1:
            raise ConfigError("feature_select_k must be positive")

    def echo(self) -> dict:
        """Configuration as written into outputs (output location excluded,
        so identical experiments produce identical files)."""
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "dataset": self.dataset.to_dict(),
            "feature_select_k": self.feature_select_k,
            "split": asdict(self.split),
            "truncation": asdict(self.truncation),
            "regimes": list(self.regimes),
            "train": train,
            "seeds": list(self.seeds),
            "sweep": {**asdict(self.sweep), "node_polarities": list(self.sweep.node_polarities)},
        }


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, DataError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config field(s) {sorted(unknown)}")
    if "dataset" not in doc:
        raise ConfigError("config needs a 'dataset' source")
    ds = dict(doc["dataset"]) if isinstance(doc["dataset"], dict) else None
    if ds is None:
        raise ConfigError("dataset: expected an object")
    synth = ds.pop("synthetic", None)
    source = _build(DatasetSource, ds, "dataset")
    if synth is not None:
        source = DatasetSource(**{**ds, "synthetic": _build(SynthConfig, synth, "dataset.synthetic")})
    chosen = [source.synthetic is not None, source.csv is not None,
              source.train_csv is not None or source.test_csv is not None]
    if sum(chosen) != 1:
        raise ConfigError("dataset needs exactly one of 'csv', 'train_csv'+'test_csv', 'synthetic'")
    if chosen[2] and (source.train_csv is None or source.test_csv is None):
        raise ConfigError("dataset: 'train_csv' and 'test_csv' go together")
    if base_dir is not None:
        resolved = {}
        for key in ("csv", "train_csv", "test_csv"):
            value = getattr(source, key)
            if value is not None and not Path(value).is_absolute():
                resolved[key] = str(base_dir / value)
        if resolved:
            source = DatasetSource(**{**{f.name: getattr(source, f.name) for f in fields(source)},
                                      **resolved})

    kwargs = {"dataset": source}
    if "feature_select_k" in doc:
        kwargs["feature_select_k"] = doc["feature_select_k"]
    if "split" in doc:
        kwargs["split"] = _build(SplitSpec, doc["split"], "split")
    if "truncation" in doc:
        kwargs["truncation"] = _build(TruncationConfig, doc["truncation"], "truncation")
    if "regimes" in doc:
        kwargs["regimes"] = tuple(doc["regimes"])
    if "train" in doc:
        train = dict(doc["train"] or {})
        if "seed" in train:
            raise ConfigError("train.seed is not configurable; use 'seeds'")
        kwargs["train"] = _build(TrainConfig, train, "train")
    if "seeds" in doc:
        kwargs["seeds"] = tuple(int(s) for s in doc["seeds"])
    if "sweep" in doc:
        sweep = dict(doc["sweep"] or {})
        if "node_polarities" in sweep:
            sweep["node_polarities"] = tuple(sweep["node_polarities"])
        kwargs["sweep"] = _build(SweepConfig, sweep, "sweep")
    if "output_dir" in doc:
        out = Path(doc["output_dir"])
        if base_dir is not None and not out.is_absolute():
            out = base_dir / out
        kwargs["output_dir"] = str(out)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc, base_dir=path.parent)
