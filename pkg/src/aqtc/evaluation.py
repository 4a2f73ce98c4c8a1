"""Recall@k over per-step candidate rankings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimError, MissingLabelError
from .model import forward_question


def rank_of(probs, gt):
    """1-based rank of ``gt``; equal probabilities rank the lower index first."""
    probs = np.asarray(probs, dtype=np.float64)
    p = probs[gt]
    ahead = np.count_nonzero(probs > p) + np.count_nonzero(probs[:gt] == p)
    return int(ahead) + 1


def recall_at_k(probs, gt, k):
    if k < 1:
        raise ValueError("k must be at least 1")
    return rank_of(probs, gt) <= k


@dataclass
class MetricsReport:
    r_at_1: float
    r_at_3: float
    per_step_count: int
    breakdown: list = field(default_factory=list)  # (sample index, step index, rank)

    def to_record(self):
        return {"r_at_1": self.r_at_1, "r_at_3": self.r_at_3, "per_step_count": self.per_step_count}

    def summary(self):
        return (f"R@1 = {100 * self.r_at_1:.1f}%  R@3 = {100 * self.r_at_3:.1f}%  "
                f"over {self.per_step_count} steps")


def ensemble_predict(params_list, cfg, sample, video, tfidf_weights=None):
    """Mean of each member's autoregressive per-step probabilities."""
    if not params_list:
        raise ValueError("ensemble needs at least one member")
    dims = {p.d for p in params_list}
    if len(dims) != 1:
        raise DimError(f"ensemble members disagree on d: {sorted(dims)}")
    if len(params_list) == 1:
        return [p.data for p in forward_question(params_list[0], cfg, sample, video, "autoregressive", tfidf_weights)]
    runs = [[p.data for p in forward_question(m, cfg, sample, video, "autoregressive", tfidf_weights)]
            for m in params_list]
    out = []
    for step_probs in zip(*runs):
        avg = np.mean(step_probs, axis=0)
        out.append(avg / avg.sum())
    return out


def predict(params, cfg, sample, video):
    members = params if isinstance(params, (list, tuple)) else [params]
    return ensemble_predict(list(members), cfg, sample, video)


def report_from_predictions(predictions, dataset):
    """Aggregate per-step predictions (one list per sample) into a report."""
    breakdown, hits1, hits3 = [], 0, 0
    for si, (sample, probs_per_step) in enumerate(zip(dataset.samples, predictions)):
        for step_i, (step, probs) in enumerate(zip(sample.steps, probs_per_step)):
            if step.ground_truth is None:
                raise MissingLabelError(f"sample {si} step {step_i} has no ground truth")
            r = rank_of(probs, step.ground_truth)
            breakdown.append((si, step_i, r))
            hits1 += r <= 1
            hits3 += r <= 3
    total = len(breakdown)
    if total == 0:
        return MetricsReport(0.0, 0.0, 0, [])
    return MetricsReport(hits1 / total, hits3 / total, total, breakdown)


def evaluate(params, cfg, dataset):
    """Step-level R@1 and R@3 of a model or a list of ensemble members."""
    for si, sample in enumerate(dataset.samples):
        if not sample.labeled:
            raise MissingLabelError(f"sample {si} has unlabeled steps")
    predictions = [predict(params, cfg, s, dataset.video_of(s)) for s in dataset.samples]
    return report_from_predictions(predictions, dataset)
