"""Ranking and regression metrics, and model evaluation over labeled sets."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .heads import Model
from .tensor import Tensor


class UndefinedMetricError(ValueError):
    """No class has a positive example, so mAP is undefined."""


def average_precision(scores, labels, ids=None) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive.

    Items are ranked by descending score; equal scores keep ``ids`` order
    (ascending), defaulting to input order.  Returns NaN when there is no
    positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if ids is None:
        ids = np.arange(len(scores))
    order = np.lexsort((np.asarray(ids), -scores))
    hits = labels[order] > 0
    npos = int(hits.sum())
    if npos == 0:
        return float("nan")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, npos + 1) / ranks))


def per_class_ap(scores, labels, ids=None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-shape matrices")
    return np.array([average_precision(scores[:, c], labels[:, c], ids) for c in range(scores.shape[1])])


def clip_map(scores, labels, ids=None) -> float:
    """Mean AP over classes with at least one positive (N x C inputs)."""
    aps = per_class_ap(scores, labels, ids)
    defined = aps[~np.isnan(aps)]
    if defined.size == 0:
        raise UndefinedMetricError("no class has a positive example")
    return float(defined.mean())


def per_frame_map(scores_per_video, labels_per_video) -> float:
    """mAP over the pooled frames of all videos (each T_i x C)."""
    scores = np.concatenate([np.asarray(s, dtype=np.float64) for s in scores_per_video], axis=0)
    labels = np.concatenate([np.asarray(z) for z in labels_per_video], axis=0)
    return clip_map(scores, labels)


def accuracy(pred_classes, true_classes) -> float:
    pred = np.asarray(pred_classes)
    true = np.asarray(true_classes)
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions for {true.size} targets")
    if pred.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(pred == true))


def speed_error(preds, targets) -> dict[str, float]:
    """Both mean-absolute and root-mean-squared error, in the targets' unit."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"{preds.size} predictions for {targets.size} targets")
    if preds.size == 0:
        raise ValueError("speed error of an empty set is undefined")
    r = preds - targets
    return {"mae": float(np.mean(np.abs(r))), "rmse": float(math.sqrt(np.mean(r * r)))}


# -- running a model ----------------------------------------------------------


def frozen(model: Model) -> Model:
    """A view of ``model`` whose forward pass records no graph."""
    return Model(model.config, {k: Tensor(p.data) for k, p in model.parameters.items()})


def predict(model: Model, features) -> np.ndarray:
    """Raw head output for one sequence; regression output is mapped back to target units."""
    out = frozen(model)(features).data
    cfg = model.config
    if cfg.task == "speed":
        return cfg.target_offset + cfg.target_scale * out
    return out


def _predict_all(model: Model, dataset, threads: int = 1) -> list[np.ndarray]:
    m = frozen(model)
    cfg = model.config

    def run(ex):
        out = m(ex.features).data
        return cfg.target_offset + cfg.target_scale * out if cfg.task == "speed" else out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, dataset))
    return [run(ex) for ex in dataset]


def evaluate_model(model: Model, dataset, threads: int = 1) -> dict:
    """Task-appropriate metrics for ``model`` over a LabeledSet.

    The returned dict always has ``metric``: mAP for multilabel, per-frame mAP
    for detection, MAE for speed and accuracy for pitch type.
    """
    task = dataset.task
    outs = _predict_all(model, dataset, threads)
    report: dict = {"task": task, "examples": len(dataset)}
    if task in ("multilabel", "detection"):
        if task == "multilabel":
            scores = np.stack(outs)
            labels = np.stack([np.asarray(ex.target) for ex in dataset])
        else:
            scores = np.concatenate(outs, axis=0)
            labels = np.concatenate([np.asarray(ex.target) for ex in dataset], axis=0)
        aps = per_class_ap(scores, labels)
        names = dataset.classes or [f"class_{c}" for c in range(len(aps))]
        report["per_class_ap"] = {n: (None if np.isnan(a) else float(a)) for n, a in zip(names, aps)}
        report["mAP"] = clip_map(scores, labels)
        report["metric"] = report["mAP"]
    elif task == "speed":
        report.update(speed_error([float(o.reshape(-1)[0]) for o in outs], [ex.target for ex in dataset]))
        report["metric"] = report["mae"]
    elif task == "pitch_type":
        pred = [int(np.argmax(o)) for o in outs]
        report["accuracy"] = accuracy(pred, [int(ex.target) for ex in dataset])
        report["metric"] = report["accuracy"]
    else:
        raise ValueError(f"unknown task {task!r}")
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def write_ap_table(rows: dict[str, dict[str, float | None]], classes: list[str], path) -> None:
    """Per-class AP table: one row per method, one column per class, in percent."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["Method", *classes])
        for method, aps in rows.items():
            w.writerow([method, *("" if aps.get(c) is None else f"{100 * aps[c]:.1f}" for c in classes)])
