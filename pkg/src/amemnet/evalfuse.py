"""Per-observation-ratio evaluation, score files and two-stream late fusion."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import FeatureDataset, triplet_arrays
from .exceptions import DimensionError

DEFAULT_BETA = 1.5


@dataclass
class ScoreTable:
    """One row of class scores per (sample_id, p), kept sorted by that key."""

    sample_id: np.ndarray
    p: np.ndarray
    label: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.sample_id = np.asarray(self.sample_id, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        order = np.lexsort((self.p, self.sample_id))
        if not np.array_equal(order, np.arange(len(order))):
            self.sample_id, self.p = self.sample_id[order], self.p[order]
            self.label, self.scores = self.label[order], self.scores[order]

    def __len__(self) -> int:
        return len(self.sample_id)

    @property
    def classes(self) -> int:
        return self.scores.shape[1]

    def keys(self) -> list[tuple[int, int]]:
        return list(zip(self.sample_id.tolist(), self.p.tolist()))

    def predictions(self) -> np.ndarray:
        # np.argmax returns the lowest index among ties
        return np.argmax(self.scores, axis=1)

    def accuracy_by_progress(self, progress: int | None = None) -> np.ndarray:
        P = int(self.p.max()) if progress is None else progress
        correct = self.predictions() == self.label
        acc = np.full(P, np.nan)
        for q in range(1, P + 1):
            mask = self.p == q
            if mask.any():
                acc[q - 1] = correct[mask].mean()
        return acc

    def equals(self, other: "ScoreTable") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("sample_id", "p", "label", "scores"))


def predict(x, model) -> np.ndarray:
    """Class distribution for one partial feature (eval mode, no memory writes)."""
    return model.predict_proba(np.asarray(x, dtype=np.float64))


def score_table(dataset: FeatureDataset, ids, model, batch: int = 1024) -> ScoreTable:
    X, _, y, p, sid = triplet_arrays(dataset, ids)
    if len(X) == 0:
        raise ValueError("cannot evaluate an empty split")
    scores = np.concatenate([np.atleast_2d(model.predict_proba(X[i:i + batch]))
                             for i in range(0, len(X), batch)])
    return ScoreTable(sid, p, y, scores)


def evaluate_by_ratio(dataset: FeatureDataset, model, ids=None) -> tuple[np.ndarray, ScoreTable]:
    """Top-1 accuracy at each progress level over ``ids`` (default: the test split)."""
    ids = dataset.test_ids if ids is None else ids
    table = score_table(dataset, ids, model)
    return table.accuracy_by_progress(dataset.progress), table


def fuse_streams(rgb: ScoreTable, flow: ScoreTable,
                 beta: float = DEFAULT_BETA) -> tuple[ScoreTable, np.ndarray]:
    """``rgb + beta * flow`` row-wise on matching keys, plus fused accuracy per progress."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    ka, kb = set(rgb.keys()), set(flow.keys())
    if ka != kb:
        raise KeyError(f"score tables cover different (sample_id, p) keys: missing from flow "
                       f"{sorted(ka - kb)[:5]}, missing from rgb {sorted(kb - ka)[:5]}")
    if rgb.classes != flow.classes:
        raise DimensionError(f"{rgb.classes} vs {flow.classes} classes")
    if not np.array_equal(rgb.label, flow.label):
        bad = int(np.flatnonzero(rgb.label != flow.label)[0])
        raise ValueError(f"label disagreement at sample {rgb.sample_id[bad]}, p={rgb.p[bad]}")
    fused = ScoreTable(rgb.sample_id, rgb.p, rgb.label, rgb.scores + beta * flow.scores)
    return fused, fused.accuracy_by_progress()


# CSV I/O ----------------------------------------------------------------------

def _open_w(path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_report(accuracies, path) -> None:
    acc = np.asarray(accuracies, dtype=np.float64)
    P = len(acc)
    with _open_w(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "accuracy"])
        for q, a in enumerate(acc, 1):
            w.writerow([f"{q / P:.1f}", repr(float(a))])


def read_report(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["ratio"]) for r in rows]),
            np.array([float(r["accuracy"]) for r in rows]))


def write_scores(table: ScoreTable, path) -> None:
    with _open_w(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "p", "label"] + [f"score_{k}" for k in range(table.classes)])
        for s, q, y, row in zip(table.sample_id, table.p, table.label, table.scores):
            w.writerow([int(s), int(q), int(y)] + [repr(float(v)) for v in row])


def read_scores(path) -> ScoreTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["sample_id", "p", "label"]:
            raise ValueError(f"{path}: not a score file (header {header[:3]})")
        rows = list(reader)
    k = len(header) - 3
    if not rows:
        return ScoreTable(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, k)))
    arr = [(int(r[0]), int(r[1]), int(r[2]), [float(v) for v in r[3:]]) for r in rows]
    return ScoreTable([a[0] for a in arr], [a[1] for a in arr], [a[2] for a in arr],
                      np.array([a[3] for a in arr]).reshape(len(arr), k))
