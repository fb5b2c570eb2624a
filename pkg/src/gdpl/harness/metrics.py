"""Accuracy summaries for base-to-novel evaluation."""
from __future__ import annotations

from typing import Iterable

import numpy as np


def harmonic_mean(acc_base: float, acc_novel: float) -> float:
    """2ab / (a + b)."""
    a, b = float(acc_base), float(acc_novel)
    if a < 0 or b < 0:
        raise ValueError(f"accuracies must be non-negative, got {a}, {b}")
    if a + b == 0:
        raise ValueError("harmonic mean undefined when both accuracies are zero")
    return 2.0 * a * b / (a + b)


def geometric_mean(a: float, b: float) -> float:
    return float(np.sqrt(a * b))


def arithmetic_mean(a: float, b: float) -> float:
    return 0.5 * (a + b)


def accuracy(pred_ids, true_ids) -> float:
    pred_ids, true_ids = np.asarray(pred_ids), np.asarray(true_ids)
    if len(true_ids) == 0:
        raise ValueError("accuracy of an empty split is undefined")
    return 100.0 * float(np.mean(pred_ids == true_ids))


def average_rows(pairs: Iterable[tuple[float, float]]) -> dict[str, float]:
    """Two ways of averaging several datasets' (base, novel) results.

    ``mean_of_hm`` averages per-dataset HMs; ``hm_of_means`` takes the HM of
    the averaged accuracies. They generally differ, so both are reported.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no results to average")
    base = float(np.mean([p[0] for p in pairs]))
    novel = float(np.mean([p[1] for p in pairs]))
    return {
        "mean_base": base,
        "mean_novel": novel,
        "mean_of_hm": float(np.mean([harmonic_mean(*p) for p in pairs])),
        "hm_of_means": harmonic_mean(base, novel),
    }
