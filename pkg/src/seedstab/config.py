"""Run configuration: one YAML document per experiment directory."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .checklist import SuiteConfig, capability_spec
from .data import LEXICON_NAMES
from .errors import ConfigError, InputError
from .swa import SwaConfig
from .textmodel import TrainConfig

VARIANTS = ("vanilla", "swa")
_DESK_SCALE = 0.1


@dataclass
class CorpusConfig:
    source: str = "synthetic"  # or "tsv"
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 400
    n_test: int = 400
    hard_fraction: float = 0.08
    train_tsv: str | None = None
    dev_tsv: str | None = None
    test_tsv: str | None = None
    sst_test_sentences: str | None = None
    sst_dictionary: str | None = None
    sst_sentiment_labels: str | None = None


@dataclass
class NamesConfig:
    min_count: int = 2
    exclusions: list = field(default_factory=list)


@dataclass
class AnalysisConfig:
    outlier_iqr_factor: float = 3.0
    outlier_min_gap: float = 0.01
    misclassified_only: bool = False
    dir_categories: int = 3


@dataclass
class RunConfig:
    seeds: list = field(default_factory=lambda: list(range(10)))
    variants: list = field(default_factory=lambda: list(VARIANTS))
    train: TrainConfig = field(default_factory=TrainConfig)
    min_freq: int = 1
    swa: SwaConfig = field(default_factory=SwaConfig)
    select_swa_lr: bool = True
    save_snapshots: bool = False
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    suite: SuiteConfig = field(default_factory=lambda: SuiteConfig(scale=_DESK_SCALE))
    suite_seed: int = 0
    names: NamesConfig = field(default_factory=NamesConfig)
    lexicons: dict = field(default_factory=dict)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    parallelism: int = 1
    out_dir: str | None = None

    @property
    def out_path(self) -> Path:
        out = self.out_dir or os.environ.get("SEEDSTAB_OUT")
        if not out:
            raise ConfigError("out_dir", "no output directory (set out_dir, --out or SEEDSTAB_OUT)")
        return Path(out)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "seeds must be unique")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError("variants", f"unknown variant {v!r}")
        if not self.variants:
            raise ConfigError("variants", "at least one variant is required")
        if self.parallelism < 1:
            raise ConfigError("parallelism", "must be >= 1")
        if self.min_freq < 1:
            raise ConfigError("min_freq", "must be >= 1")
        try:
            self.train.validate()
        except InputError as exc:
            raise ConfigError("train", str(exc)) from None
        if not 1 <= self.swa.cutoff_epoch < self.train.epochs:
            raise ConfigError("swa.cutoff_epoch", f"must satisfy 1 <= cutoff < train.epochs ({self.train.epochs})")
        if self.select_swa_lr and not self.swa.candidate_lrs:
            raise ConfigError("swa.candidate_lrs", "empty while select_swa_lr is on")
        if self.corpus.source not in ("synthetic", "tsv"):
            raise ConfigError("corpus.source", "must be 'synthetic' or 'tsv'")
        if self.corpus.source == "tsv":
            for key in ("train_tsv", "dev_tsv"):
                if not getattr(self.corpus, key):
                    raise ConfigError(f"corpus.{key}", "required when corpus.source is 'tsv'")
            if not self.corpus.test_tsv and not self.corpus.sst_test_sentences:
                raise ConfigError("corpus.test_tsv", "need test_tsv or sst_test_sentences")
        if self.suite.scale <= 0:
            raise ConfigError("suite.scale", "must be > 0")
        try:
            self.suite.capabilities()
        except InputError as exc:
            raise ConfigError("suite.enabled", str(exc)) from None
        for name in list(self.suite.sizes) + list(self.suite.perturbations):
            try:
                capability_spec(name)
            except InputError as exc:
                raise ConfigError("suite.sizes", str(exc)) from None
        for key in self.lexicons:
            if key not in LEXICON_NAMES:
                raise ConfigError(f"lexicons.{key}", "unknown lexicon")
        if self.analysis.dir_categories not in (2, 3):
            raise ConfigError("analysis.dir_categories", "must be 2 or 3")
        if self.names.min_count < 1:
            raise ConfigError("names.min_count", "must be >= 1")
        return self


_NESTED = {
    "train": TrainConfig,
    "swa": SwaConfig,
    "corpus": CorpusConfig,
    "suite": SuiteConfig,
    "names": NamesConfig,
    "analysis": AnalysisConfig,
}


def _build(cls, data, prefix):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        path = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(path, "unknown field")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if cls is RunConfig and key in _NESTED:
            if key == "suite":
                value = {"scale": _DESK_SCALE, **(value or {})}
            kwargs[key] = _build(_NESTED[key], value, path)
        else:
            kwargs[key] = _coerce(fields[key], value, path)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from None


def _coerce(f, value, path):
    # PyYAML reads "1e-2" as a string; float-typed fields accept it anyway
    if f.type in ("float", "float | None") and isinstance(value, (str, int)) and not isinstance(value, bool):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(path, f"expected a number, got {value!r}") from None
    if f.name == "candidate_lrs" and isinstance(value, list):
        try:
            return [float(v) for v in value]
        except ValueError:
            raise ConfigError(path, "expected a list of numbers") from None
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"{path}: {exc}") from None
    return from_dict(data)
