"""Finite-difference checks for every op kind and the end-to-end loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .data import SyntheticConfig, generate_synthetic
from .model import GroundingConfig, ModelParams, forward_question
from .tensor import Tensor, grad_check

TOLERANCE = 1e-4
STEP = 1e-5
# Fixed end-to-end configuration. Entries with |grad| below ~1e-7 sit at the
# float64 resolution of step-1e-5 central differences, so the relative-error
# metric is configuration sensitive; this one has no such entries.
MODEL_DIM = 5
MODEL_SEED = 11


def _param(rng, shape, low=None, high=None, away_from_zero=False):
    if low is not None:
        arr = rng.uniform(low, high, size=shape)
    else:
        arr = rng.standard_normal(shape)
    if away_from_zero:
        arr = np.where(np.abs(arr) < 0.05, np.sign(arr) * 0.05 + arr, arr)
    return Tensor(arr, requires_grad=True)


def op_case(kind, rng):
    """``(f, params)`` exercising one op kind on random shapes."""
    r, c, k = (int(x) for x in rng.integers(1, 5, size=3))

    seed = int(rng.integers(1 << 31))

    def fixed(fn):
        # the weighting tensor must be identical across every evaluation
        def f(*ps):
            out = fn(*ps)
            w = Tensor(np.random.default_rng(seed).standard_normal(out.shape))
            return tn.tsum(tn.mul(out, w))
        return f

    if kind == "matmul":
        variant = int(rng.integers(4))
        a_shape = (r, k) if variant in (0, 2) else (k,)
        b_shape = (k, c) if variant in (0, 1) else (k,)
        return fixed(tn.matmul), [_param(rng, a_shape), _param(rng, b_shape)]
    if kind in ("add", "sub", "elementwise_mul"):
        b_shape = (c,) if rng.random() < 0.5 else (r, c)
        fn = {"add": tn.add, "sub": tn.sub, "elementwise_mul": tn.mul}[kind]
        return fixed(fn), [_param(rng, (r, c)), _param(rng, b_shape)]
    if kind == "concat":
        axis = int(rng.integers(2))
        shapes = [(r, c), (k, c)] if axis == 0 else [(r, c), (r, k)]
        return fixed(lambda a, b: tn.concat([a, b], axis=axis)), [_param(rng, s) for s in shapes]
    if kind in ("tanh", "sigmoid"):
        fn = tn.tanh if kind == "tanh" else tn.sigmoid
        return fixed(fn), [_param(rng, (r, c))]
    if kind == "relu":
        return fixed(tn.relu), [_param(rng, (r, c), away_from_zero=True)]
    if kind in ("softmax", "sum", "mean"):
        axis = [None, 0, 1][int(rng.integers(3))]
        if kind == "softmax":
            axis = 0 if axis is None else axis
        fn = {"softmax": tn.softmax, "sum": tn.tsum, "mean": tn.mean}[kind]
        return fixed(lambda x: fn(x, axis=axis)), [_param(rng, (r, c))]
    if kind == "slice":
        i = int(rng.integers(r))
        return fixed(lambda x: tn.take(x, (slice(i, r), slice(0, max(1, c - 1))))), [_param(rng, (r, c))]
    if kind == "reshape":
        return fixed(lambda x: tn.reshape(x, (c * r,))), [_param(rng, (r, c))]
    if kind == "transpose":
        return fixed(tn.transpose), [_param(rng, (r, c))]
    if kind == "log":
        return fixed(tn.log), [_param(rng, (r, c), 0.5, 2.0)]
    raise ValueError(f"no gradient case for {kind!r}")


def model_case(seed=MODEL_SEED, d=MODEL_DIM, grounding=None, history_mode="teacher_forced"):
    """Loss of one synthetic question as a function of every model parameter."""
    from .training import cross_entropy_loss

    ds = generate_synthetic(SyntheticConfig(num_videos=1, m=3, d=d, samples_per_video=1,
                                            steps_per_sample=2, n_candidates=3, noise_sigma=0.1,
                                            vocab_per_function=3, seed=seed))
    sample = ds.samples[0]
    video = ds.video_of(sample)
    grounding = grounding or GroundingConfig("combined", "combined")
    params = ModelParams.init(d, seed)
    names = params.names()
    gts = [s.ground_truth for s in sample.steps]

    def f(*tensors):
        p = ModelParams(d, dict(zip(names, tensors)))
        return cross_entropy_loss(forward_question(p, grounding, sample, video, history_mode), gts)

    return f, [params[n] for n in names]


@dataclass
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE


def run_gradcheck(trials=100, seed=0, corrupt=None):
    """Max relative error per op kind over ``trials`` random cases, plus the full model.

    ``corrupt`` names a check whose analytic gradient gets perturbed, a
    negative control for the harness itself.
    """
    rng = np.random.default_rng(seed)

    def hook_for(name):
        if name != corrupt:
            return None
        return lambda grads: [g + 1e-3 * (1.0 + np.abs(g)) for g in grads]

    results = []
    for kind in tn.OP_KINDS:
        worst = 0.0
        for _ in range(trials):
            f, params = op_case(kind, rng)
            worst = max(worst, grad_check(f, params, STEP, hook_for(kind)))
        results.append(CheckResult(kind, worst))
    for label, grounding, mode in (
            ("model[combined/combined, teacher_forced]", GroundingConfig("combined", "combined"), "teacher_forced"),
            ("model[combined/soft, autoregressive]", GroundingConfig("combined", "soft"), "autoregressive")):
        f, params = model_case(grounding=grounding, history_mode=mode)
        results.append(CheckResult(label, grad_check(f, params, STEP, hook_for("model"))))
    return results
