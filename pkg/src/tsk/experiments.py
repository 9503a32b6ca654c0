"""Small synthetic experiments comparing heads on planted-motif data.

Each function returns plain dicts so results can be printed, saved as JSON,
or asserted on.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledSet, labeled_set, preset_spec, synthesize, duration_oracle
from .evaluation import evaluate_model, speed_error
from .heads import HeadConfig, Model
from .training import TrainConfig, train


def _split(task: str, seed: int, n_train: int, n_test: int) -> tuple[LabeledSet, LabeledSet]:
    spec = preset_spec(task, seed)
    seqs, anns, classes = synthesize(task, spec, n_train + n_test)
    data = labeled_set(task, seqs, anns, classes)
    return data.subset(range(n_train)), data.subset(range(n_train, n_train + n_test))


def compare_heads(task: str, mode: str, heads, seeds=range(5), n_train=400, n_test=150, epochs=50, log=None) -> dict[str, list[float]]:
    """Test metric of every head for every seed; one fresh dataset per seed."""
    results: dict[str, list[float]] = {h: [] for h in heads}
    for seed in seeds:
        train_set, test_set = _split(task, seed, n_train, n_test)
        D = train_set[0].features.shape[1]
        C = len(train_set.classes)
        for kind in heads:
            model = Model.init(HeadConfig(mode, kind, D, C, task=task), seed)
            model, _ = train(model, train_set, TrainConfig(epochs=epochs, seed=seed), eval_every=0)
            metric = evaluate_model(model, test_set)["metric"]
            results[kind].append(metric)
            if log:
                log(f"seed {seed} {kind}: {metric:.4f}")
    return results


def segmented_ordering(seeds=range(5), epochs=50, log=None) -> dict[str, list[float]]:
    """Clip mAP of mean-pool, max-pool and sub-event heads (400 train / 150 test clips)."""
    return compare_heads("multilabel", "segmented", ("mean_pool", "max_pool", "sub_events"), seeds, 400, 150, epochs, log)


def continuous_ordering(seeds=range(5), epochs=50, log=None) -> dict[str, list[float]]:
    """Per-frame mAP of per-frame, sliding max-pool and sub+super heads (100 train / 40 test videos)."""
    return compare_heads("detection", "continuous", ("per_frame", "max_pool", "sub_super"), seeds, 100, 40, epochs, log)


def speed_sanity(seed=0, n_train=280, n_test=120, epochs=50, heads=("sub_events",)) -> dict[str, dict[str, float]]:
    """MAE/RMSE of the duration oracle and of regression heads on noiseless speed clips."""
    spec = preset_spec("speed", seed)
    seqs, anns, classes = synthesize("speed", spec, n_train + n_test)
    data = labeled_set("speed", seqs, anns, classes)
    train_set, test_set = data.subset(range(n_train)), data.subset(range(n_train, n_train + n_test))
    targets = [ex.target for ex in test_set]
    out = {"oracle": speed_error([duration_oracle(ex.features, spec) for ex in test_set], targets)}
    for kind in heads:
        model = Model.init(HeadConfig("segmented", kind, spec.D, 1, task="speed"), seed)
        model, _ = train(model, train_set, TrainConfig(epochs=epochs, seed=seed), eval_every=0)
        report = evaluate_model(model, test_set)
        out[kind] = {"mae": report["mae"], "rmse": report["rmse"]}
    return out


def summarize(results: dict[str, list[float]]) -> dict[str, float]:
    return {k: float(np.mean(v)) for k, v in results.items()}
