"""Recognition metrics: correct rate, accurate rate, and character error rate.

All three derive from the deletion / substitution / insertion counts of a
minimal edit alignment between ground truth and prediction:

    CR  = (N - D - S) / N
    AR  = (N - D - S - I) / N
    CER = (D + S + I) / N

where N is the ground-truth length.  AR can go negative for very
insertion-heavy output and is reported unclamped.  Corpus-level numbers are
micro-averages: error counts are summed across samples before the formulas
are applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInputError, UndefinedMetricError
from .trajectory import Trajectory, prepare


@dataclass
class EditStats:
    """Alignment error counts against a ground truth of length ``truth_len``."""

    deletions: int = 0
    substitutions: int = 0
    insertions: int = 0
    truth_len: int = 0

    @property
    def distance(self) -> int:
        return self.deletions + self.substitutions + self.insertions

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(
            self.deletions + other.deletions,
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.truth_len + other.truth_len,
        )


def edit_ops(truth: Sequence, prediction: Sequence) -> EditStats:
    """Minimal-edit alignment counts between two symbol sequences.

    Among all minimal-cost alignments the one with the most diagonal steps
    (matches plus substitutions) is chosen, which makes the (D, S, I) split
    unique and symmetric: substitutions are preferred over paired
    deletion/insertion steps.
    """
    n, m = len(truth), len(prediction)
    # cost[i][j], diag[i][j]: min cost and, at that cost, max diagonal steps
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    diag = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub_cost = 0 if truth[i - 1] == prediction[j - 1] else 1
            options = (
                (cost[i - 1, j - 1] + sub_cost, diag[i - 1, j - 1] + 1),
                (cost[i - 1, j] + 1, diag[i - 1, j]),
                (cost[i, j - 1] + 1, diag[i, j - 1]),
            )
            best = min(opt[0] for opt in options)
            cost[i, j] = best
            diag[i, j] = max(opt[1] for opt in options if opt[0] == best)

    # D and I are fixed once the diagonal count is: each diagonal step
    # consumes one symbol on both sides
    d_total = n - int(diag[n, m])
    i_total = m - int(diag[n, m])
    s_total = int(cost[n, m]) - d_total - i_total
    return EditStats(d_total, s_total, i_total, n)


def cr_ar(stats: EditStats) -> tuple[float, float]:
    """Correct rate and accurate rate from alignment counts."""
    if stats.truth_len < 1:
        raise UndefinedMetricError("metrics need a non-empty ground truth")
    n = stats.truth_len
    cr = (n - stats.deletions - stats.substitutions) / n
    ar = (n - stats.deletions - stats.substitutions - stats.insertions) / n
    return cr, ar


def cer(truth: Sequence, prediction: Sequence) -> float:
    """Character error rate: total edit operations per ground-truth symbol."""
    if len(truth) < 1:
        raise UndefinedMetricError("CER needs a non-empty ground truth")
    return edit_ops(truth, prediction).distance / len(truth)


@dataclass
class SampleResult:
    truth: str
    prediction: str
    stats: EditStats


@dataclass
class MetricsReport:
    cr: float
    ar: float
    cer: float
    stats: EditStats
    num_samples: int
    per_sample: list[SampleResult] | None = None

    def to_dict(self, include_per_sample: bool = False) -> dict:
        out = {
            "cr": self.cr,
            "ar": self.ar,
            "cer": self.cer,
            "n_t": self.stats.truth_len,
            "d_e": self.stats.deletions,
            "s_e": self.stats.substitutions,
            "i_e": self.stats.insertions,
            "num_samples": self.num_samples,
        }
        if include_per_sample and self.per_sample is not None:
            out["per_sample"] = [
                {
                    "truth": r.truth,
                    "prediction": r.prediction,
                    "d_e": r.stats.deletions,
                    "s_e": r.stats.substitutions,
                    "i_e": r.stats.insertions,
                }
                for r in self.per_sample
            ]
        return out

    def to_json(self, include_per_sample: bool = False) -> str:
        return json.dumps(self.to_dict(include_per_sample))


def aggregate(results: list[SampleResult]) -> MetricsReport:
    total = EditStats()
    for r in results:
        total = total + r.stats
    cr, ar = cr_ar(total)
    return MetricsReport(
        cr=cr,
        ar=ar,
        cer=total.distance / total.truth_len,
        stats=total,
        num_samples=len(results),
        per_sample=results,
    )


def evaluate_corpus(model, corpus: list[Trajectory], mode: str = "character") -> MetricsReport:
    """Run the model over a labeled corpus and micro-average the metrics.

    ``character`` mode compares length-1 sequences (top-1 prediction vs the
    sample label); ``ctc`` mode compares greedy-decoded character strings.
    """
    if not corpus:
        raise EmptyInputError("cannot evaluate an empty corpus")
    results: list[SampleResult] = []
    if mode == "character":
        for traj in corpus:
            feats = prepare(traj).matrix
            predicted = model.forward(feats).top1
            results.append(
                SampleResult(traj.label, predicted, edit_ops([traj.label], [predicted]))
            )
    elif mode == "ctc":
        from . import tensor as T
        from .ctc import ctc_greedy_decode

        for traj in corpus:
            feats = prepare(traj).matrix
            log_post = T.log_softmax(model.frame_logits(feats), axis=1).data
            decoded = "".join(model.labels[i - 1] for i in ctc_greedy_decode(log_post))
            results.append(
                SampleResult(traj.label, decoded, edit_ops(list(traj.label), list(decoded)))
            )
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    return aggregate(results)
