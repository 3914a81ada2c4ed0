"""End-to-end orchestration shared by the CLI and the evaluation harness.

Holds the four experimental settings: a single-model baseline, a 9-model
pseudo-label-only ensemble, and the 45-model two-stage ensemble with mean or
linear-stacker aggregation, all evaluated by k-fold cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import CorpusStore, LabeledSentence
from .ensemble import (
    Archetype,
    EnsembleBundle,
    FoldPlan,
    _pooled_base_predictions,
    cv_fine_tune,
    fit_stacker,
    make_fold_plan,
    train_pseudo_stage,
)
from .features import FeatureConfig, FeatureStats, embed_many, fit_feature_stats
from .linalg import clamp_scores
from .metrics import EvalReport, fold_mean, mapped_rmse, rmse
from .pseudolabel import PseudoLabelSet, generate_pseudo_labels
from .scorer import HyperParams, ScorerModel, predict, train_iterative, train_ridge
from .simindex import VectorIndex, build_index

SETTINGS = ("baseline", "pseudo_only", "ensemble_mean", "ensemble_stacker")

RETRIEVAL = "retrieval"


@dataclass(frozen=True)
class ArchetypeSpec:
    name: str
    hashed_dim: int
    ngram_min: int
    ngram_max: int
    batch_size: int = 32

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            hashed_dim=self.hashed_dim,
            ngram_min=self.ngram_min,
            ngram_max=self.ngram_max,
        )


DEFAULT_ARCHETYPE_SPECS = (
    ArchetypeSpec("char35_wide", 2048, 3, 5, 32),
    ArchetypeSpec("char24_mid", 1024, 2, 4, 32),
    ArchetypeSpec("char46_narrow", 512, 4, 6, 20),
)

DEFAULT_RETRIEVAL_CONFIG = FeatureConfig(hashed_dim=1024, ngram_min=3, ngram_max=5)


def default_pseudo_hyper() -> HyperParams:
    return HyperParams(
        learning_rate=0.3, max_epochs=4, early_stopping=False, ridge_lambda=1.0
    )


def default_fine_tune_hyper() -> HyperParams:
    # no early stopping here: the fine-tuning folds are small and the 20%
    # holdout costs more than the stopping rule saves
    return HyperParams(
        learning_rate=0.1, max_epochs=20, early_stopping=False, ridge_lambda=1.0
    )


def default_baseline_hyper() -> HyperParams:
    return HyperParams(
        learning_rate=0.2, max_epochs=30, early_stopping=True, ridge_lambda=1.0
    )


@dataclass
class PipelineConfig:
    k: int = 500
    n_folds: int = 5
    seeds: tuple[int, ...] = (1, 2, 3)
    hyper_pseudo: HyperParams = field(default_factory=default_pseudo_hyper)
    hyper_fine: HyperParams = field(default_factory=default_fine_tune_hyper)
    hyper_baseline: HyperParams = field(default_factory=default_baseline_hyper)
    ridge_lambda_baseline: float = 1.0
    exclude_labeled: bool = True
    shared_pseudo_labels: bool = False
    literal_45_columns: bool = False


@dataclass
class PipelineContext:
    """Fold-independent state: store, featurizers, cached features, index."""

    store: CorpusStore
    retrieval_stats: FeatureStats
    archetypes: list[Archetype]
    index: VectorIndex
    corpus_features: dict[str, np.ndarray]
    row_of_id: dict[int, int]


def build_context(
    store: CorpusStore,
    retrieval_config: FeatureConfig = DEFAULT_RETRIEVAL_CONFIG,
    archetype_specs: Sequence[ArchetypeSpec] = DEFAULT_ARCHETYPE_SPECS,
) -> PipelineContext:
    texts = [r.text for r in store.records]
    retrieval_stats = fit_feature_stats(store.records, retrieval_config)
    archetypes = [
        Archetype(
            name=spec.name,
            stats=fit_feature_stats(store.records, spec.feature_config()),
            batch_size=spec.batch_size,
        )
        for spec in archetype_specs
    ]
    corpus_features = {RETRIEVAL: embed_many(texts, retrieval_stats)}
    for arch in archetypes:
        corpus_features[arch.name] = embed_many(texts, arch.stats)
    index = build_index(
        zip((r.id for r in store.records), corpus_features[RETRIEVAL]),
        fingerprint=retrieval_stats.fingerprint,
    )
    row_of_id = {r.id: row for row, r in enumerate(store.records)}
    return PipelineContext(
        store=store,
        retrieval_stats=retrieval_stats,
        archetypes=archetypes,
        index=index,
        corpus_features=corpus_features,
        row_of_id=row_of_id,
    )


def train_gate_model(
    ctx: PipelineContext, anchors: Sequence[LabeledSentence], cfg: PipelineConfig
) -> ScorerModel:
    """Closed-form ridge baseline used to score pseudo-label candidates."""
    X = embed_many([a.text for a in anchors], ctx.retrieval_stats)
    y = np.array([a.mos for a in anchors])
    return train_ridge(
        X,
        y,
        cfg.ridge_lambda_baseline,
        fingerprint=ctx.retrieval_stats.fingerprint,
        stage="baseline",
        archetype=RETRIEVAL,
    )


def corpus_score_map(ctx: PipelineContext, gate: ScorerModel) -> dict[int, float]:
    scores = predict(gate, ctx.corpus_features[RETRIEVAL])
    return {r.id: float(s) for r, s in zip(ctx.store.records, scores)}


def generate_for_anchors(
    ctx: PipelineContext,
    anchors: Sequence[LabeledSentence],
    gate: ScorerModel,
    cfg: PipelineConfig,
    exclude_texts: set[str] | None,
) -> PseudoLabelSet:
    return generate_pseudo_labels(
        anchors,
        ctx.index,
        ctx.store,
        gate,
        ctx.retrieval_stats,
        k=cfg.k,
        exclude_texts=exclude_texts,
        precomputed_scores=corpus_score_map(ctx, gate),
    )


def _pseudo_features(
    ctx: PipelineContext, pset: PseudoLabelSet
) -> dict[str, np.ndarray]:
    rows = [ctx.row_of_id[lab.sentence_id] for lab in pset.labels]
    return {
        arch.name: ctx.corpus_features[arch.name][rows] for arch in ctx.archetypes
    }


def _train_stage_models(
    ctx: PipelineContext, pset: PseudoLabelSet, cfg: PipelineConfig
) -> list[ScorerModel]:
    return train_pseudo_stage(
        [lab.text for lab in pset.labels],
        [lab.predicted_score for lab in pset.labels],
        ctx.archetypes,
        cfg.seeds,
        cfg.hyper_pseudo,
        features_by_archetype=_pseudo_features(ctx, pset),
    )


def evaluate_settings(
    ctx: PipelineContext,
    labeled: Sequence[LabeledSentence],
    settings: Sequence[str],
    plan: FoldPlan,
    cfg: PipelineConfig,
    predictor_override: Callable[[str, list[LabeledSentence]], np.ndarray] | None = None,
) -> dict[str, EvalReport]:
    """Cross-validate the requested settings on the labeled set.

    By default pseudo-labels are regenerated per fold from training-fold
    anchors only; the shared_pseudo_labels flag instead generates them once from
    all anchors, which leaks gate information across folds.
    """
    for setting in settings:
        if setting not in SETTINGS:
            raise ValueError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    labeled = list(labeled)
    y = np.array([s.mos for s in labeled])
    texts = [s.text for s in labeled]
    exclude = {s.text for s in labeled} if cfg.exclude_labeled else None

    x_labeled = {
        arch.name: embed_many(texts, arch.stats) for arch in ctx.archetypes
    }
    need_pseudo = predictor_override is None and any(
        s != "baseline" for s in settings
    )

    shared_models: list[ScorerModel] | None = None
    if need_pseudo and cfg.shared_pseudo_labels:
        gate = train_gate_model(ctx, labeled, cfg)
        pset = generate_for_anchors(ctx, labeled, gate, cfg, exclude)
        shared_models = _train_stage_models(ctx, pset, cfg)

    per_fold: dict[str, list[float]] = {s: [] for s in settings}
    pooled_pred: dict[str, np.ndarray] = {s: np.zeros(len(labeled)) for s in settings}

    for f in range(plan.n_folds):
        train_idx = plan.train_indices(f)
        test_idx = plan.fold_indices(f)
        fold_train = [labeled[i] for i in train_idx]
        fold_test = [labeled[i] for i in test_idx]

        models9: list[ScorerModel] | None = shared_models
        if predictor_override is None and need_pseudo and models9 is None:
            gate = train_gate_model(ctx, fold_train, cfg)
            pset = generate_for_anchors(ctx, fold_train, gate, cfg, exclude)
            assert not any(lab.anchor_id in {s.id for s in fold_test} for lab in pset.labels)
            models9 = _train_stage_models(ctx, pset, cfg)

        bundle: EnsembleBundle | None = None
        if predictor_override is None and any(
            s in ("ensemble_mean", "ensemble_stacker") for s in settings
        ):
            inner_plan = make_fold_plan(
                len(train_idx), cfg.n_folds, seed=plan.seed * 1009 + f
            )
            bundle = cv_fine_tune(
                models9,
                ctx.archetypes,
                fold_train,
                inner_plan,
                cfg.hyper_fine,
                literal_columns=cfg.literal_45_columns,
            )

        for setting in settings:
            if predictor_override is not None:
                preds = np.asarray(predictor_override(setting, fold_test), dtype=np.float64)
            elif setting == "baseline":
                arch0 = ctx.archetypes[0]
                h = replace(
                    cfg.hyper_baseline, seed=plan.seed * 7919 + f, batch_size=arch0.batch_size
                )
                model = train_iterative(
                    None,
                    x_labeled[arch0.name][train_idx],
                    y[train_idx],
                    h,
                    fingerprint=arch0.stats.fingerprint,
                    stage="baseline",
                    archetype=arch0.name,
                )
                preds = predict(model, x_labeled[arch0.name][test_idx])
            elif setting == "pseudo_only":
                acc = np.zeros(len(test_idx))
                for m in models9:
                    acc += predict(m, x_labeled[m.archetype][test_idx])
                preds = clamp_scores(acc / len(models9))
            elif setting == "ensemble_mean":
                acc = np.zeros(len(test_idx))
                for fm in bundle.fold_models:
                    acc += predict(fm.model, x_labeled[fm.archetype][test_idx])
                preds = clamp_scores(acc / len(bundle.fold_models))
            else:  # ensemble_stacker
                w, b, _ = fit_stacker(bundle.oof, y[train_idx])
                x_test = {
                    name: feats[test_idx] for name, feats in x_labeled.items()
                }
                if cfg.literal_45_columns:
                    cols = np.column_stack(
                        [predict(fm.model, x_test[fm.archetype]) for fm in bundle.fold_models]
                    )
                else:
                    cols = _pooled_base_predictions(bundle, x_test)
                preds = clamp_scores(cols @ w + b)
            per_fold[setting].append(rmse(preds, y[test_idx]))
            pooled_pred[setting][test_idx] = preds

    reports: dict[str, EvalReport] = {}
    for setting in settings:
        raw = rmse(pooled_pred[setting], y)
        mapped, mapping = mapped_rmse(pooled_pred[setting], y)
        reports[setting] = EvalReport(
            setting=setting,
            per_fold_rmse=per_fold[setting],
            fold_mean_rmse=fold_mean(per_fold[setting]),
            rmse_raw=raw,
            rmse_mapped=mapped,
            mapping=mapping,
            details={
                "n_folds": plan.n_folds,
                "plan_seed": plan.seed,
                "shared_pseudo_labels": cfg.shared_pseudo_labels,
            },
        )
    return reports
