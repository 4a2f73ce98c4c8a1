"""Cross-entropy training with Adam, scheduled teacher forcing and pseudo-labels."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tn
from .data import Dataset, Step
from .errors import ConfigError, EmptyDatasetError
from .evaluation import evaluate
from .model import GroundingConfig, ModelParams, argmax_lowest, forward_question
from .tensor import Graph, Tensor, gradients

log = logging.getLogger(__name__)

SCHEDULES = ("linear_decay", "teacher_forcing", "autoregressive")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    val_fraction: float = 0.05
    patience: int = 10
    schedule: str = "linear_decay"
    decay_rate: float = 0.05
    ssl_threshold: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if not 0 < self.ssl_threshold < 1:
            raise ConfigError("ssl_threshold must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size and patience must be positive, max_epochs non-negative")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_r_at_1: float
    val_r_at_3: float
    tf_probability: float
    round: int = 1

    def to_record(self):
        return {"epoch": self.epoch, "round": self.round, "train_loss": self.train_loss,
                "val_r_at_1": self.val_r_at_1, "val_r_at_3": self.val_r_at_3,
                "tf_probability": self.tf_probability}


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = -1

    def dumps(self):
        return "".join(json.dumps(r.to_record()) + "\n" for r in self.records)


# ---------------------------------------------------------------- loss / optimizer


def cross_entropy_loss(probs_per_step, ground_truths):
    """Mean over steps of ``-ln p[gt]`` with probabilities floored at 1e-12."""
    if len(probs_per_step) != len(ground_truths):
        raise ValueError("one ground truth per step is required")
    if not probs_per_step:
        raise ValueError("no steps to score")
    picked = []
    for probs, gt in zip(probs_per_step, ground_truths):
        probs = tn.as_tensor(probs)
        n = probs.shape[0]
        if not 0 <= gt < n:
            raise IndexError(f"ground truth {gt} out of range for {n} candidates")
        picked.append(tn.take(probs, slice(gt, gt + 1)))
    logp = tn.log(tn.concat(picked, axis=0))
    return tn.mul(tn.mean(logp), Tensor(-1.0))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def fresh(cls, params):
        zeros = {n: np.zeros_like(a) for n, a in params.arrays().items()}
        return cls(zeros, {n: z.copy() for n, z in zeros.items()}, 0)


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_update(params, grads, state, lr):
    """One bias-corrected Adam step; returns ``(new_params, new_state)``."""
    t = state.t + 1
    new_arrays, m_new, v_new = {}, {}, {}
    for name, p in params.arrays().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        new_arrays[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        m_new[name], v_new[name] = m, v
    return params.updated(new_arrays), AdamState(m_new, v_new, t)


def tf_probability(epoch, decay_rate):
    return max(0.0, 1.0 - decay_rate * epoch)


def schedule_probability(cfg, epoch):
    if cfg.schedule == "teacher_forcing":
        return 1.0
    if cfg.schedule == "autoregressive":
        return 0.0
    return tf_probability(epoch, cfg.decay_rate)


# ---------------------------------------------------------------- training loop


def sample_loss_and_grads(params, grounding, sample, video, history_mode):
    names = params.names()
    with Graph() as g:
        probs = forward_question(params, grounding, sample, video, history_mode)
        loss = cross_entropy_loss(probs, [s.ground_truth for s in sample.steps])
    grads = gradients(g, loss, [params[n] for n in names])
    return loss.item(), dict(zip(names, grads))


def train_epoch(params, opt_state, cfg, grounding, dataset, epoch, rng):
    """One shuffled pass with per-sample teacher-forcing draws.

    The shuffle and every Bernoulli draw are taken from ``rng`` regardless
    of schedule, so schedules that agree on the probability agree bitwise.
    Returns ``(params, opt_state, mean_loss, tf_probability)``.
    """
    p_tf = schedule_probability(cfg, epoch)
    n = len(dataset.samples)
    order = rng.permutation(n)
    draws = rng.random(n)
    losses = []
    for start in range(0, n, cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        acc = {name: np.zeros_like(a) for name, a in params.arrays().items()}
        for idx in batch:
            sample = dataset.samples[idx]
            mode = "teacher_forced" if draws[idx] < p_tf else "autoregressive"
            loss, grads = sample_loss_and_grads(params, grounding, sample, dataset.video_of(sample), mode)
            losses.append(loss)
            for name, g in grads.items():
                acc[name] += g
        scale = 1.0 / len(batch)
        params, opt_state = adam_update(params, {k: v * scale for k, v in acc.items()}, opt_state,
                                        cfg.learning_rate)
    return params, opt_state, float(np.mean(losses)), p_tf


def train(cfg, train_ds, val_ds, params_init=None, grounding=None, round_index=1, progress=None):
    """Train with early stopping on validation R@1; returns ``(best_params, TrainLog)``."""
    if not train_ds.samples:
        raise EmptyDatasetError("training set is empty")
    grounding = grounding or GroundingConfig()
    params = params_init if params_init is not None else ModelParams.init(train_ds.dim, cfg.seed)
    if params.d != train_ds.dim:
        raise ConfigError(f"model dim {params.d} does not match dataset dim {train_ds.dim}")
    rng = np.random.default_rng(cfg.seed)
    opt_state = AdamState.fresh(params)
    trainlog = TrainLog()
    best_params, best_r1, wait = params, -math.inf, 0
    for epoch in range(cfg.max_epochs):
        params, opt_state, loss, p_tf = train_epoch(params, opt_state, cfg, grounding, train_ds, epoch, rng)
        if val_ds is not None and val_ds.samples:
            report = evaluate(params, grounding, val_ds)
            r1, r3 = report.r_at_1, report.r_at_3
        else:
            r1 = r3 = float("nan")
        trainlog.records.append(EpochRecord(epoch, loss, r1, r3, p_tf, round_index))
        log.info("round %d epoch %d loss %.4f val R@1 %.3f R@3 %.3f tf %.2f",
                 round_index, epoch, loss, r1, r3, p_tf)
        if progress is not None:
            progress(trainlog.records[-1])
        if val_ds is None or not val_ds.samples:
            best_params, trainlog.best_epoch = params, epoch
            continue
        if r1 > best_r1:
            best_params, best_r1, wait = params, r1, 0
            trainlog.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return best_params, trainlog


# ---------------------------------------------------------------- SSL / ensembles


def admits(probs_per_step, threshold):
    """True when every step's top probability strictly exceeds ``threshold``."""
    return all(float(np.max(p)) > threshold for p in probs_per_step)


def pseudo_label(params, cfg, unlabeled_ds, grounding=None, predictor=None):
    """Samples whose autoregressive predictions are confident at every step.

    Admitted samples are labeled with the per-step argmax. ``predictor``
    replaces the model forward ``(sample, video) -> list of prob vectors``.
    """
    grounding = grounding or GroundingConfig()
    if predictor is None:
        def predictor(sample, video):
            return [p.data for p in forward_question(params, grounding, sample, video, "autoregressive")]
    admitted = []
    for sample in unlabeled_ds.samples:
        probs = predictor(sample, unlabeled_ds.video_of(sample))
        if not admits(probs, cfg.ssl_threshold):
            continue
        steps = [Step(st.candidates, argmax_lowest(p)) for st, p in zip(sample.steps, probs)]
        admitted.append(replace(sample, steps=steps))
    return unlabeled_ds.with_samples(admitted)


def train_with_ssl(cfg, labeled_ds, unlabeled_ds, val_ds=None, params_init=None, grounding=None, progress=None):
    """Train, pseudo-label the unlabeled pool, then retrain on the union.

    Round two starts from the round-one parameters with the teacher-forcing
    schedule restarted. If no sample is admitted the round-one result is
    returned unchanged. The log carries both rounds.
    """
    params, log1 = train(cfg, labeled_ds, val_ds, params_init, grounding, 1, progress)
    if unlabeled_ds is None or not unlabeled_ds.samples:
        return params, log1
    pseudo = pseudo_label(params, cfg, unlabeled_ds, grounding)
    log.info("pseudo-labeling admitted %d of %d samples", len(pseudo.samples), len(unlabeled_ds.samples))
    if not pseudo.samples:
        return params, log1
    merged = Dataset(labeled_ds.dim, {**pseudo.videos, **labeled_ds.videos}, labeled_ds.samples + pseudo.samples)
    params2, log2 = train(cfg, merged, val_ds, params, grounding, 2, progress)
    return params2, TrainLog(log1.records + log2.records, log2.best_epoch)
