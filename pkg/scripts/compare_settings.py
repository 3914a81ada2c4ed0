#!/usr/bin/env python3
"""Cross-validate all four experimental settings on the synthetic fixture and
print the per-fold RMSE table.

Settings: a single fine-tuned baseline, the 9-model pseudo-label-only
ensemble, and the 45-model two-stage ensemble with mean or stacker
aggregation.
"""

import argparse
import time

from pseudolab import fixtures, pipeline
from pseudolab.ensemble import make_fold_plan
from pseudolab.features import FeatureConfig
from pseudolab.metrics import render_report_table
from pseudolab.pipeline import SETTINGS, ArchetypeSpec, PipelineConfig

# reduced dimensions keep a full comparison under a minute
RETRIEVAL = FeatureConfig(hashed_dim=256, ngram_min=3, ngram_max=4)
ARCHETYPES = (
    ArchetypeSpec("a", 256, 3, 5, 32),
    ArchetypeSpec("b", 128, 2, 4, 32),
    ArchetypeSpec("c", 192, 4, 6, 20),
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-corpus", type=int, default=5000)
    parser.add_argument("--n-train", type=int, default=200)
    parser.add_argument("--k", type=int, default=500)
    parser.add_argument("--fold-seed", type=int, default=1)
    parser.add_argument("--data-seed", type=int, default=7)
    args = parser.parse_args()

    start = time.monotonic()
    dataset = fixtures.make_synthetic_dataset(
        n_corpus=args.n_corpus, n_train=args.n_train, seed=args.data_seed
    )
    ctx = pipeline.build_context(dataset.store, RETRIEVAL, ARCHETYPES)
    print(f"context built in {time.monotonic() - start:.1f}s")

    cfg = PipelineConfig(k=args.k)
    plan = make_fold_plan(len(dataset.labeled_train), cfg.n_folds, seed=args.fold_seed)
    reports = pipeline.evaluate_settings(
        ctx, dataset.labeled_train, list(SETTINGS), plan, cfg
    )
    print(render_report_table([reports[s] for s in SETTINGS]))
    for s in SETTINGS:
        r = reports[s]
        print(f"{s}: raw {r.rmse_raw:.3f}  mapped {r.rmse_mapped:.3f}")
    print(f"total {time.monotonic() - start:.1f}s")


if __name__ == "__main__":
    main()
