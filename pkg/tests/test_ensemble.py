import math

import numpy as np
import pytest

from pseudolab.corpus import LabeledSentence
from pseudolab.ensemble import (
    Archetype,
    EnsembleBundle,
    FoldPlan,
    aggregate_mean,
    audit_oof_hygiene,
    cv_fine_tune,
    fit_stacker,
    load_bundle,
    make_fold_plan,
    predict_ensemble,
    predict_ensemble_batch,
    save_bundle,
    train_pseudo_stage,
)
from pseudolab.features import FeatureConfig, embed_many, fit_feature_stats
from pseudolab.scorer import HyperParams, ScorerModel, model_to_json, train_ridge


class TestFoldPlan:
    def test_equal_sizes(self):
        plan = make_fold_plan(1000, n_folds=5, seed=1)
        sizes = [plan.fold_indices(f).size for f in range(5)]
        assert sizes == [200] * 5

    def test_remainder_spread(self):
        plan = make_fold_plan(7, n_folds=5, seed=1)
        sizes = sorted(plan.fold_indices(f).size for f in range(5))
        assert sizes == [1, 1, 1, 2, 2]

    def test_partition(self):
        plan = make_fold_plan(53, n_folds=4, seed=9)
        seen = np.concatenate([plan.fold_indices(f) for f in range(4)])
        assert sorted(seen.tolist()) == list(range(53))
        for f in range(4):
            train = set(plan.train_indices(f).tolist())
            fold = set(plan.fold_indices(f).tolist())
            assert not train & fold
            assert train | fold == set(range(53))

    def test_deterministic(self):
        a = make_fold_plan(100, n_folds=5, seed=3)
        b = make_fold_plan(100, n_folds=5, seed=3)
        assert np.array_equal(a.assignment, b.assignment)
        c = make_fold_plan(100, n_folds=5, seed=4)
        assert not np.array_equal(a.assignment, c.assignment)

    def test_too_few_items(self):
        with pytest.raises(ValueError, match="folds"):
            make_fold_plan(3, n_folds=5)

    def test_roundtrip(self):
        plan = make_fold_plan(20, n_folds=5, seed=2)
        again = FoldPlan.from_dict(plan.to_dict())
        assert np.array_equal(again.assignment, plan.assignment)
        assert (again.n_folds, again.seed) == (plan.n_folds, plan.seed)


@pytest.fixture(scope="module")
def toy_archetypes():
    texts = [f"beispielsatz nummer {i} mit etwas mehr inhalt dahinter" for i in range(80)]
    return [
        Archetype("a", fit_feature_stats(texts, FeatureConfig(hashed_dim=64)), 32),
        Archetype("b", fit_feature_stats(texts, FeatureConfig(hashed_dim=32, ngram_min=2, ngram_max=4)), 32),
        Archetype("c", fit_feature_stats(texts, FeatureConfig(hashed_dim=48, ngram_min=4, ngram_max=6)), 20),
    ], texts


class TestPseudoStage:
    def test_cardinality_and_identity(self, toy_archetypes, rng):
        archetypes, texts = toy_archetypes
        scores = rng.uniform(2, 6, size=len(texts))
        hyper = HyperParams(learning_rate=0.1, max_epochs=2)
        models = train_pseudo_stage(texts, scores, archetypes, (1, 2, 3), hyper)
        assert len(models) == 9
        keys = {(m.archetype, m.seed) for m in models}
        assert len(keys) == 9
        assert {m.stage for m in models} == {"pseudo_tuned"}

    def test_single_archetype_single_seed(self, toy_archetypes, rng):
        archetypes, texts = toy_archetypes
        scores = rng.uniform(2, 6, size=len(texts))
        models = train_pseudo_stage(
            texts, scores, archetypes[:1], (7,), HyperParams(max_epochs=1)
        )
        assert len(models) == 1
        assert models[0].fingerprint == archetypes[0].stats.fingerprint

    def test_rerun_byte_identical(self, toy_archetypes, rng):
        archetypes, texts = toy_archetypes
        scores = rng.uniform(2, 6, size=len(texts))
        hyper = HyperParams(learning_rate=0.1, max_epochs=2)
        a = train_pseudo_stage(texts, scores, archetypes, (1, 2), hyper)
        b = train_pseudo_stage(texts, scores, archetypes, (1, 2), hyper)
        assert [model_to_json(m) for m in a] == [model_to_json(m) for m in b]

    def test_empty_rejected(self, toy_archetypes):
        archetypes, _ = toy_archetypes
        with pytest.raises(ValueError, match="empty"):
            train_pseudo_stage([], [], archetypes, (1,), HyperParams())


def _labeled_from(texts, y):
    return [
        LabeledSentence(id=i, text=t, mos=float(v), rating_std=0.3)
        for i, (t, v) in enumerate(zip(texts, y))
    ]


@pytest.fixture(scope="module")
def tuned_bundle(toy_archetypes, request):
    archetypes, texts = toy_archetypes
    rng = np.random.default_rng(5)
    scores = rng.uniform(2, 6, size=len(texts))
    base = train_pseudo_stage(
        texts, scores, archetypes, (1, 2, 3), HyperParams(learning_rate=0.2, max_epochs=3)
    )
    y = np.clip(2.0 + 0.04 * np.array([len(t) for t in texts]) + rng.normal(scale=0.2, size=len(texts)), 1, 7)
    labeled = _labeled_from(texts, y)
    plan = make_fold_plan(len(labeled), n_folds=5, seed=11)
    hyper = HyperParams(learning_rate=0.1, max_epochs=10, early_stopping=True)
    return cv_fine_tune(base, archetypes, labeled, plan, hyper), labeled, plan


class TestCvFineTune:
    def test_model_cardinality(self, tuned_bundle):
        bundle, labeled, plan = tuned_bundle
        assert len(bundle.fold_models) == 45  # 3 archetypes x 3 seeds x 5 folds
        keys = {(fm.archetype, fm.seed, fm.fold) for fm in bundle.fold_models}
        assert len(keys) == 45

    def test_oof_shape_and_range(self, tuned_bundle):
        bundle, labeled, _ = tuned_bundle
        assert bundle.oof.shape == (len(labeled), 9)
        assert np.all((bundle.oof >= 1.0) & (bundle.oof <= 7.0))
        assert len(bundle.oof_columns) == 9

    def test_hygiene_audit(self, tuned_bundle):
        bundle, _, _ = tuned_bundle
        assert audit_oof_hygiene(bundle)

    def test_literal_columns(self, toy_archetypes):
        archetypes, texts = toy_archetypes
        rng = np.random.default_rng(6)
        y = rng.uniform(2, 6, size=len(texts))
        base = train_pseudo_stage(
            texts, y, archetypes[:1], (1, 2), HyperParams(max_epochs=1)
        )
        labeled = _labeled_from(texts, y)
        plan = make_fold_plan(len(labeled), n_folds=5, seed=1)
        bundle = cv_fine_tune(
            base, archetypes[:1], labeled, plan, HyperParams(max_epochs=1), literal_columns=True
        )
        assert bundle.oof.shape == (len(texts), 10)  # 2 base models x 5 folds
        assert len(bundle.fold_models) == 10
        assert not audit_oof_hygiene(bundle)  # leaky by construction

    def test_plan_size_mismatch(self, toy_archetypes):
        archetypes, texts = toy_archetypes
        base = [
            ScorerModel(
                weights=np.zeros(64 + 6),
                intercept=3.0,
                fingerprint=archetypes[0].stats.fingerprint,
                archetype="a",
            )
        ]
        labeled = _labeled_from(texts[:10], [3.0] * 10)
        plan = make_fold_plan(9, n_folds=3)
        with pytest.raises(ValueError, match="fold plan"):
            cv_fine_tune(base, archetypes, labeled, plan, HyperParams())

    def test_recovers_exact_linear_target(self, toy_archetypes):
        # target is an exact linear function of archetype-a features, so the
        # warm-started fine-tune should land near it out of fold
        archetypes, texts = toy_archetypes
        arch = archetypes[0]
        X = embed_many(texts, arch.stats)
        rng = np.random.default_rng(8)
        w_true = rng.normal(size=X.shape[1]) * 0.2
        y = np.clip(4.0 + X @ w_true, 1.5, 6.5)
        assert np.all((y > 1.5) & (y < 6.5))  # no clipping actually bites
        labeled = _labeled_from(texts, y)
        base = [
            train_ridge(X, y, 1e-6, fingerprint=arch.stats.fingerprint, archetype="a")
        ]
        plan = make_fold_plan(len(labeled), n_folds=5, seed=2)
        bundle = cv_fine_tune(
            base,
            archetypes[:1],
            labeled,
            plan,
            HyperParams(learning_rate=0.01, max_epochs=2),
        )
        oof_rmse = float(np.sqrt(np.mean((bundle.oof[:, 0] - y) ** 2)))
        assert oof_rmse < 0.05


class TestAggregateMean:
    def test_simple(self):
        assert aggregate_mean(np.array([2.0, 4.0])) == 3.0

    def test_clamped(self):
        assert aggregate_mean(np.array([7.0, 9.4])) == 7.0

    def test_matches_fsum_oracle(self, rng):
        row = rng.uniform(1, 7, size=45)
        oracle = math.fsum(float(v) for v in row) / 45
        assert aggregate_mean(row) == pytest.approx(oracle, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            aggregate_mean(np.array([]))


class TestStacker:
    def test_exact_single_column(self, rng):
        y = rng.uniform(2, 6, size=100)
        w, b, fallback = fit_stacker(y[:, None], y)
        assert not fallback
        assert w[0] == pytest.approx(1.0, abs=1e-9)
        assert b == pytest.approx(0.0, abs=1e-9)

    def test_recovers_known_combination(self, rng):
        oof = rng.uniform(1, 7, size=(500, 5))
        w_true = np.array([0.4, 0.1, 0.2, 0.2, 0.1])
        y = oof @ w_true + 0.3
        w, b, fallback = fit_stacker(oof, y)
        assert not fallback
        np.testing.assert_allclose(w, w_true, atol=1e-6)
        assert b == pytest.approx(0.3, abs=1e-6)

    def test_in_sample_dominates_mean(self, rng):
        oof = np.clip(rng.uniform(2, 6, size=(200, 9)) + rng.normal(scale=0.5, size=(200, 9)), 1, 7)
        y = rng.uniform(2, 6, size=200)
        w, b, _ = fit_stacker(oof, y)
        stacked = oof @ w + b
        mean_pred = oof.mean(axis=1)
        rmse = lambda p: float(np.sqrt(np.mean((p - y) ** 2)))
        assert rmse(stacked) <= rmse(mean_pred) + 1e-9

    def test_degenerate_columns_trigger_fallback(self, rng):
        col = rng.uniform(2, 6, size=50)
        oof = np.column_stack([col, col, col])
        y = col + 0.1
        w, b, fallback = fit_stacker(oof, y)
        assert fallback
        pred = oof @ w + b
        assert float(np.sqrt(np.mean((pred - y) ** 2))) < 1e-3

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            fit_stacker(np.array([[np.nan]]), np.array([3.0]))


def _constant_bundle(archetypes, intercepts, aggregation="mean", **kw):
    fold_models = []
    base_keys = []
    from pseudolab.ensemble import FoldModel

    for arch, icpt in zip(archetypes, intercepts):
        base_keys.append((arch.name, 1))
        dim = arch.stats.config.hashed_dim + 6
        for f in range(2):
            fold_models.append(
                FoldModel(
                    archetype=arch.name,
                    seed=1,
                    fold=f,
                    model=ScorerModel(
                        weights=np.zeros(dim),
                        intercept=icpt,
                        fingerprint=arch.stats.fingerprint,
                        seed=1,
                        stage="final",
                        archetype=arch.name,
                    ),
                )
            )
    plan = make_fold_plan(4, n_folds=2, seed=0)
    return EnsembleBundle(
        fold_models=fold_models,
        plan=plan,
        base_keys=base_keys,
        archetypes={a.name: a for a in archetypes},
        aggregation=aggregation,
        **kw,
    )


class TestPredictEnsemble:
    def test_mean_of_constant_models(self, toy_archetypes):
        archetypes, _ = toy_archetypes
        bundle = _constant_bundle(archetypes, [2.0, 2.5, 3.0])
        assert predict_ensemble(bundle, "irgendein satz") == pytest.approx(2.5)

    def test_stacker_with_uniform_weights_equals_mean(self, toy_archetypes):
        archetypes, texts = toy_archetypes
        mean_bundle = _constant_bundle(archetypes, [2.0, 3.0, 4.0])
        stack_bundle = _constant_bundle(
            archetypes,
            [2.0, 3.0, 4.0],
            aggregation="stacker",
            stacker_weights=np.full(3, 1.0 / 3.0),
            stacker_intercept=0.0,
        )
        a = predict_ensemble_batch(mean_bundle, texts[:5])
        b = predict_ensemble_batch(stack_bundle, texts[:5])
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_stacker_without_weights_rejected(self, toy_archetypes):
        archetypes, _ = toy_archetypes
        bundle = _constant_bundle(archetypes, [2.0, 2.5, 3.0], aggregation="stacker")
        with pytest.raises(ValueError, match="stacker"):
            predict_ensemble(bundle, "satz")

    def test_batch_matches_per_model_replay(self, tuned_bundle, toy_archetypes):
        bundle, labeled, _ = tuned_bundle
        archetypes, _ = toy_archetypes
        texts = [s.text for s in labeled[:20]]
        got = predict_ensemble_batch(bundle, texts)
        x_by_arch = {a.name: embed_many(texts, a.stats) for a in archetypes}
        from pseudolab.scorer import predict

        acc = np.zeros(len(texts))
        for fm in bundle.fold_models:
            acc += predict(fm.model, x_by_arch[fm.archetype])
        expected = np.clip(acc / len(bundle.fold_models), 1.0, 7.0)
        np.testing.assert_allclose(got, expected, atol=1e-12)


def test_bundle_roundtrip(tmp_path, tuned_bundle):
    bundle, labeled, _ = tuned_bundle
    y = np.array([s.mos for s in labeled])
    w, b, fallback = fit_stacker(bundle.oof, y)
    bundle.stacker_weights = w
    bundle.stacker_intercept = b
    bundle.stacker_fallback = fallback
    bundle.aggregation = "stacker"
    save_bundle(bundle, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle")
    assert len(loaded.fold_models) == len(bundle.fold_models)
    for a, b_ in zip(bundle.fold_models, loaded.fold_models):
        assert model_to_json(a.model) == model_to_json(b_.model)
    np.testing.assert_array_equal(loaded.oof, bundle.oof)
    np.testing.assert_array_equal(loaded.stacker_weights, bundle.stacker_weights)
    assert loaded.aggregation == "stacker"
    texts = [s.text for s in labeled[:5]]
    np.testing.assert_allclose(
        predict_ensemble_batch(loaded, texts),
        predict_ensemble_batch(bundle, texts),
        atol=0,
    )
