"""Declarative run configuration for the CLI (single JSON document)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import FORMATS
from .features import FeatureConfig
from .pipeline import (
    DEFAULT_ARCHETYPE_SPECS,
    SETTINGS,
    ArchetypeSpec,
    PipelineConfig,
    default_baseline_hyper,
    default_fine_tune_hyper,
    default_pseudo_hyper,
)
from .scorer import HyperParams


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    source: str
    format: str = "plain-lines"


@dataclass
class RunConfig:
    corpora: list[CorpusEntry]
    labeled_train: str
    output_dir: str
    labeled_test: str | None = None
    retrieval: FeatureConfig = field(
        default_factory=lambda: FeatureConfig(hashed_dim=1024, ngram_min=3, ngram_max=5)
    )
    archetypes: list[ArchetypeSpec] = field(
        default_factory=lambda: list(DEFAULT_ARCHETYPE_SPECS)
    )
    k: int = 500
    seeds: tuple[int, ...] = (1, 2, 3)
    n_folds: int = 5
    fold_seed: int = 1
    hyper_pseudo: HyperParams = field(default_factory=default_pseudo_hyper)
    hyper_fine: HyperParams = field(default_factory=default_fine_tune_hyper)
    hyper_baseline: HyperParams = field(default_factory=default_baseline_hyper)
    ridge_lambda_baseline: float = 1.0
    setting: str = "ensemble_mean"
    exclude_labeled: bool = True
    shared_pseudo_labels: bool = False
    literal_45_columns: bool = False
    default_rating_std: float = 0.5

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            k=self.k,
            n_folds=self.n_folds,
            seeds=tuple(self.seeds),
            hyper_pseudo=self.hyper_pseudo,
            hyper_fine=self.hyper_fine,
            hyper_baseline=self.hyper_baseline,
            ridge_lambda_baseline=self.ridge_lambda_baseline,
            exclude_labeled=self.exclude_labeled,
            shared_pseudo_labels=self.shared_pseudo_labels,
            literal_45_columns=self.literal_45_columns,
        )

    def to_dict(self) -> dict:
        return {
            "corpora": [
                {"path": c.path, "source": c.source, "format": c.format}
                for c in self.corpora
            ],
            "labeled_train": self.labeled_train,
            "labeled_test": self.labeled_test,
            "output_dir": self.output_dir,
            "retrieval": {
                "hashed_dim": self.retrieval.hashed_dim,
                "ngram_min": self.retrieval.ngram_min,
                "ngram_max": self.retrieval.ngram_max,
                "max_tokens": self.retrieval.max_tokens,
            },
            "archetypes": [
                {
                    "name": a.name,
                    "hashed_dim": a.hashed_dim,
                    "ngram_min": a.ngram_min,
                    "ngram_max": a.ngram_max,
                    "batch_size": a.batch_size,
                }
                for a in self.archetypes
            ],
            "k": self.k,
            "seeds": list(self.seeds),
            "n_folds": self.n_folds,
            "fold_seed": self.fold_seed,
            "hyper_pseudo": self.hyper_pseudo.to_dict(),
            "hyper_fine": self.hyper_fine.to_dict(),
            "hyper_baseline": self.hyper_baseline.to_dict(),
            "ridge_lambda_baseline": self.ridge_lambda_baseline,
            "setting": self.setting,
            "exclude_labeled": self.exclude_labeled,
            "shared_pseudo_labels": self.shared_pseudo_labels,
            "literal_45_columns": self.literal_45_columns,
            "default_rating_std": self.default_rating_std,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _hyper_from(d: dict | None, fallback: HyperParams) -> HyperParams:
    if d is None:
        return fallback
    base = fallback.to_dict()
    base.update(d)
    try:
        return HyperParams.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid hyperparameters: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    try:
        corpora = [
            CorpusEntry(
                path=str(c["path"]),
                source=str(c["source"]),
                format=str(c.get("format", "plain-lines")),
            )
            for c in raw["corpora"]
        ]
        cfg = RunConfig(
            corpora=corpora,
            labeled_train=str(raw["labeled_train"]),
            labeled_test=raw.get("labeled_test"),
            output_dir=str(raw["output_dir"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config {path} missing required field: {exc}") from exc

    if "retrieval" in raw:
        try:
            cfg.retrieval = FeatureConfig(**raw["retrieval"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid retrieval featurizer config: {exc}") from exc
    if "archetypes" in raw:
        try:
            cfg.archetypes = [ArchetypeSpec(**a) for a in raw["archetypes"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid archetype config: {exc}") from exc
    for key in (
        "k",
        "n_folds",
        "fold_seed",
        "ridge_lambda_baseline",
        "setting",
        "exclude_labeled",
        "shared_pseudo_labels",
        "literal_45_columns",
        "default_rating_std",
    ):
        if key in raw:
            setattr(cfg, key, raw[key])
    if "seeds" in raw:
        cfg.seeds = tuple(int(s) for s in raw["seeds"])
    cfg.hyper_pseudo = _hyper_from(raw.get("hyper_pseudo"), cfg.hyper_pseudo)
    cfg.hyper_fine = _hyper_from(raw.get("hyper_fine"), cfg.hyper_fine)
    cfg.hyper_baseline = _hyper_from(raw.get("hyper_baseline"), cfg.hyper_baseline)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if not cfg.corpora:
        raise ConfigError("config lists no corpora")
    for entry in cfg.corpora:
        if entry.format not in FORMATS:
            raise ConfigError(f"unknown corpus format {entry.format!r}")
        if not Path(entry.path).is_file():
            raise ConfigError(f"corpus file does not exist: {entry.path}")
    if not Path(cfg.labeled_train).is_file():
        raise ConfigError(f"labeled train file does not exist: {cfg.labeled_train}")
    if cfg.labeled_test is not None and not Path(cfg.labeled_test).is_file():
        raise ConfigError(f"labeled test file does not exist: {cfg.labeled_test}")
    if cfg.k <= 0:
        raise ConfigError("k must be a positive integer")
    if cfg.n_folds < 2:
        raise ConfigError("n_folds must be at least 2")
    if not cfg.seeds or any(s <= 0 for s in cfg.seeds):
        raise ConfigError("seeds must be positive integers")
    if not cfg.archetypes:
        raise ConfigError("config lists no archetypes")
    if len({a.name for a in cfg.archetypes}) != len(cfg.archetypes):
        raise ConfigError("archetype names must be unique")
    if cfg.setting not in SETTINGS:
        raise ConfigError(f"setting must be one of {SETTINGS}, got {cfg.setting!r}")
    if cfg.default_rating_std < 0:
        raise ConfigError("default_rating_std must be >= 0")
