"""Complexity regressors: closed-form ridge and a mini-batch iterative trainer.

The iterative trainer follows a linear schedule with 10% warmup, per-epoch
seeded shuffling, and optional early stopping on a holdout split; it is the
desk-scale stand-in for the fine-tuning stages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import clamp_scores, solve_spd

STAGES = ("baseline", "pseudo_tuned", "final")


@dataclass
class HyperParams:
    learning_rate: float = 0.2
    schedule: str = "linear"
    warmup_fraction: float = 0.1
    batch_size: int = 32
    max_epochs: int = 30
    early_stopping: bool = False
    early_stopping_holdout_fraction: float = 0.2
    ridge_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.schedule != "linear":
            raise ValueError(f"unsupported schedule: {self.schedule!r}")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("batch_size and max_epochs must be positive")
        if not 0 < self.early_stopping_holdout_fraction < 1:
            raise ValueError("early_stopping_holdout_fraction must be in (0, 1)")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "schedule": self.schedule,
            "warmup_fraction": self.warmup_fraction,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stopping": self.early_stopping,
            "early_stopping_holdout_fraction": self.early_stopping_holdout_fraction,
            "ridge_lambda": self.ridge_lambda,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


@dataclass
class ScorerModel:
    weights: np.ndarray
    intercept: float
    fingerprint: str = ""
    seed: int = 0
    stage: str = "baseline"
    archetype: str = ""

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "archetype": self.archetype,
            "seed": self.seed,
            "stage": self.stage,
            "intercept": self.intercept,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerModel":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            intercept=float(d["intercept"]),
            fingerprint=d["fingerprint"],
            seed=int(d["seed"]),
            stage=d["stage"],
            archetype=d["archetype"],
        )


def model_to_json(model: ScorerModel) -> str:
    # json float repr is shortest-roundtrip, so serialization is bit-exact
    return json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model: ScorerModel, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def load_model(path: str | Path) -> ScorerModel:
    return ScorerModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _validate_training_inputs(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"inconsistent training shapes {X.shape} vs {y.shape}")
    if X.shape[0] < 1:
        raise ValueError("empty training set")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training inputs")
    return X, y


def train_ridge(
    X: np.ndarray,
    y: np.ndarray,
    ridge_lambda: float = 0.0,
    *,
    fingerprint: str = "",
    seed: int = 0,
    stage: str = "baseline",
    archetype: str = "",
) -> ScorerModel:
    """Closed-form ridge on mean-centered data; the intercept is not penalized."""
    X, y = _validate_training_inputs(X, y)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc + ridge_lambda * np.eye(X.shape[1])
    w = solve_spd(A, Xc.T @ yc)
    intercept = y_mean - float(x_mean @ w)
    return ScorerModel(
        weights=w,
        intercept=intercept,
        fingerprint=fingerprint,
        seed=seed,
        stage=stage,
        archetype=archetype,
    )


def _learning_rate_at(step: int, total_steps: int, hyper: HyperParams) -> float:
    warmup_steps = int(hyper.warmup_fraction * total_steps)
    if step < warmup_steps:
        return hyper.learning_rate * (step + 1) / warmup_steps
    if total_steps == warmup_steps:
        return hyper.learning_rate
    return hyper.learning_rate * (total_steps - step) / (total_steps - warmup_steps)


def _rmse(pred: np.ndarray, gold: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - gold) ** 2)))


def train_iterative(
    init: ScorerModel | None,
    X: np.ndarray,
    y: np.ndarray,
    hyper: HyperParams,
    *,
    fingerprint: str = "",
    stage: str = "pseudo_tuned",
    archetype: str = "",
) -> ScorerModel:
    """Mini-batch gradient descent on squared error plus a ridge penalty.

    Linear warmup then linear decay to zero; data reshuffled each epoch from
    a generator seeded by hyper.seed, so runs are bitwise reproducible.
    """
    X, y = _validate_training_inputs(X, y)
    n, d = X.shape
    if init is not None:
        if fingerprint and init.fingerprint and init.fingerprint != fingerprint:
            raise ValueError("init model fingerprint does not match training features")
        if init.weights.shape[0] != d:
            raise ValueError("init model dimension does not match training features")
        w = init.weights.copy()
        b = float(init.intercept)
        fingerprint = fingerprint or init.fingerprint
        archetype = archetype or init.archetype
    else:
        w = np.zeros(d, dtype=np.float64)
        b = 0.0

    rng = np.random.default_rng(hyper.seed)
    holdout_idx = np.zeros(0, dtype=np.int64)
    train_idx = np.arange(n)
    if hyper.early_stopping:
        order = rng.permutation(n)
        n_hold = int(round(n * hyper.early_stopping_holdout_fraction))
        if 1 <= n_hold < n:
            holdout_idx = order[n - n_hold :]
            train_idx = order[: n - n_hold]

    Xt, yt = X[train_idx], y[train_idx]
    Xh, yh = X[holdout_idx], y[holdout_idx]
    nt = Xt.shape[0]
    n_batches = (nt + hyper.batch_size - 1) // hyper.batch_size
    total_steps = hyper.max_epochs * n_batches

    best = (np.inf, w.copy(), b)
    epochs_since_improvement = 0
    step = 0
    for epoch in range(hyper.max_epochs):
        perm = rng.permutation(nt)
        for start in range(0, nt, hyper.batch_size):
            batch = perm[start : start + hyper.batch_size]
            Xb, yb = Xt[batch], yt[batch]
            err = Xb @ w + b - yb
            if not np.all(np.isfinite(err)):
                raise ValueError(f"non-finite loss at step {step}")
            lr = _learning_rate_at(step, total_steps, hyper)
            gw = 2.0 * (Xb.T @ err) / len(batch) + 2.0 * hyper.ridge_lambda / n * w
            gb = 2.0 * float(err.mean())
            w -= lr * gw
            b -= lr * gb
            step += 1
        if holdout_idx.size:
            score = _rmse(Xh @ w + b, yh)
            if score < best[0]:
                best = (score, w.copy(), b)
                epochs_since_improvement = 0
            else:
                epochs_since_improvement += 1
                if epochs_since_improvement > 1:  # patience of one epoch
                    break
    if holdout_idx.size:
        _, w, b = best
    return ScorerModel(
        weights=w,
        intercept=b,
        fingerprint=fingerprint,
        seed=hyper.seed,
        stage=stage,
        archetype=archetype,
    )


def predict(model: ScorerModel, X: np.ndarray) -> np.ndarray:
    """Raw linear prediction clamped element-wise to the 1..7 scale."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[0]:
        raise ValueError(
            f"feature dimension {X.shape} does not match model dimension "
            f"{model.weights.shape[0]}"
        )
    return clamp_scores(X @ model.weights + model.intercept)


def predict_texts(model: ScorerModel, stats, texts) -> np.ndarray:
    from .features import embed_many

    if model.fingerprint and model.fingerprint != stats.fingerprint:
        raise ValueError("model fingerprint does not match featurizer fingerprint")
    return predict(model, embed_many(list(texts), stats))


def _loss(X, y, w, b, ridge_lambda):
    err = X @ w + b - y
    return float(np.mean(err**2) + ridge_lambda / X.shape[0] * np.dot(w, w))


def gradient_check(
    X: np.ndarray,
    y: np.ndarray,
    model: ScorerModel,
    epsilon: float = 1e-6,
    ridge_lambda: float = 0.0,
) -> float:
    """Max relative error between analytic gradient and central differences."""
    X, y = _validate_training_inputs(X, y)
    w = model.weights.astype(np.float64).copy()
    b = float(model.intercept)
    n = X.shape[0]
    err = X @ w + b - y
    analytic = np.concatenate(
        [2.0 * (X.T @ err) / n + 2.0 * ridge_lambda / n * w, [2.0 * float(err.mean())]]
    )
    numeric = np.zeros_like(analytic)
    for j in range(w.shape[0]):
        wp, wm = w.copy(), w.copy()
        wp[j] += epsilon
        wm[j] -= epsilon
        numeric[j] = (_loss(X, y, wp, b, ridge_lambda) - _loss(X, y, wm, b, ridge_lambda)) / (
            2 * epsilon
        )
    numeric[-1] = (
        _loss(X, y, w, b + epsilon, ridge_lambda) - _loss(X, y, w, b - epsilon, ridge_lambda)
    ) / (2 * epsilon)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
