"""Grounding, context reweighting and GRU multi-step answer scoring.

Vectors follow the column convention: a matrix ``W`` of shape (out, in)
maps ``x`` to ``W x``. Candidates of one step are processed together as the
rows of an (n, d) matrix, which computes the same per-candidate equations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DegenerateStepError, DimError, EmptySequenceError, MissingLabelError, ShapeError
from .tensor import Tensor
from .tfidf import video_weights

GROUND_MODES = ("soft", "hard", "combined")
HISTORY_MODES = ("teacher_forced", "autoregressive")


@dataclass(frozen=True)
class GroundingConfig:
    text_mode: str = "combined"
    video_mode: str = "soft"

    def __post_init__(self):
        for mode in (self.text_mode, self.video_mode):
            if mode not in GROUND_MODES:
                raise ConfigError(f"grounding mode must be one of {GROUND_MODES}, got {mode!r}")

    @property
    def uses_hard(self):
        return self.text_mode != "soft" or self.video_mode != "soft"


def param_shapes(d):
    shapes = {}
    for att in ("ground_video", "ground_text", "reweight"):
        shapes[f"{att}.W_q"] = (d, d)
        shapes[f"{att}.W_k"] = (d, d)
        shapes[f"{att}.w"] = (d,)
    shapes["reweight.u"] = (d,)
    shapes["gate.W_g"] = (d, 2 * d)
    shapes["gate.b_g"] = (d,)
    shapes.update({
        "context_mlp.W1": (d, d), "context_mlp.b1": (d,),
        "context_mlp.W2": (d, d), "context_mlp.b2": (d,),
    })
    for gate in ("z", "r", "h"):
        shapes[f"gru.W_{gate}"] = (d, d)
        shapes[f"gru.U_{gate}"] = (d, d)
        shapes[f"gru.b_{gate}"] = (d,)
    shapes.update({
        "score_mlp.W1": (d, d), "score_mlp.b1": (d,),
        "score_mlp.W2": (1, d), "score_mlp.b2": (1,),
    })
    return shapes


def _is_bias(name):
    leaf = name.rsplit(".", 1)[1]
    return leaf.startswith("b")


class ModelParams:
    """Named learnable tensors; treat as immutable and build new ones on update."""

    def __init__(self, d, tensors):
        expected = param_shapes(d)
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise DimError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        self.d = d
        self.tensors = {}
        for name, shape in expected.items():
            t = tensors[name]
            arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            if arr.shape != shape:
                raise DimError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            self.tensors[name] = t if isinstance(t, Tensor) and t.requires_grad else Tensor(arr, requires_grad=True)

    @classmethod
    def init(cls, d, seed):
        """Glorot-uniform weights (vectors treated as d->1 maps), zero biases."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in param_shapes(d).items():
            if _is_bias(name):
                arrays[name] = np.zeros(shape)
                continue
            fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
            a = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-a, a, size=shape)
        return cls(d, arrays)

    @classmethod
    def zeros(cls, d):
        return cls(d, {n: np.zeros(s) for n, s in param_shapes(d).items()})

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def arrays(self):
        return {n: t.data for n, t in self.tensors.items()}

    def updated(self, arrays):
        return ModelParams(self.d, {**self.tensors, **arrays})

    def equals(self, other):
        return self.d == other.d and all(
            np.array_equal(self.tensors[n].data, other.tensors[n].data) for n in self.tensors)

    @property
    def num_parameters(self):
        return sum(t.data.size for t in self.tensors.values())


# ---------------------------------------------------------------- checkpoints


def checkpoint_record(params, grounding=None):
    rec = {"format": "aqtc-checkpoint", "version": 1, "d": params.d,
           "params": {n: {"shape": list(t.shape), "values": [float(x) for x in t.data.ravel()]}
                      for n, t in params.tensors.items()}}
    if grounding is not None:
        rec["grounding"] = {"text_mode": grounding.text_mode, "video_mode": grounding.video_mode}
    return rec


def write_checkpoint(params, path, grounding=None):
    Path(path).write_text(json.dumps(checkpoint_record(params, grounding), indent=1) + "\n", encoding="utf-8")


def read_checkpoint(path):
    """Returns ``(params, grounding_or_None)``."""
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    d = int(rec["d"])
    arrays = {}
    for name, entry in rec["params"].items():
        arr = np.asarray(entry["values"], dtype=np.float64)
        arrays[name] = arr.reshape(tuple(entry["shape"]))
    grounding = GroundingConfig(**rec["grounding"]) if "grounding" in rec else None
    return ModelParams(d, arrays), grounding


# ---------------------------------------------------------------- attention


def _as_matrix(seq):
    if isinstance(seq, Tensor):
        if seq.data.ndim != 2:
            raise ShapeError("sequence", seq.shape, detail="expected (m, d) matrix")
        if seq.shape[0] == 0:
            raise EmptySequenceError("sequence is empty")
        return seq
    if len(seq) == 0:
        raise EmptySequenceError("sequence is empty")
    if all(not isinstance(s, Tensor) for s in seq):
        return Tensor(np.stack([np.asarray(s, dtype=np.float64) for s in seq]))
    rows = [tn.as_tensor(s) for s in seq]
    return tn.concat([tn.reshape(r, (1, r.shape[0])) for r in rows], axis=0)


def additive_scores(params, prefix, query, keys):
    """``w . tanh(W_q q + W_k k)`` for every row ``k`` of ``keys``; keys may be (d,) or (m, d)."""
    proj_q = tn.matmul(params[f"{prefix}.W_q"], query)
    proj_k = tn.matmul(keys, tn.transpose(params[f"{prefix}.W_k"]))
    return tn.matmul(tn.tanh(tn.add(proj_k, proj_q)), params[f"{prefix}.w"])


def soft_ground(params, prefix, Q, seq):
    """Attention-weighted pooling of ``seq`` under the question ``Q``.

    Returns ``(weights, pooled)`` as tensors of shape (m,) and (d,).
    """
    keys = _as_matrix(seq)
    alpha = tn.softmax(additive_scores(params, prefix, Q, keys), axis=0)
    return alpha, tn.matmul(alpha, keys)


def hard_ground(weights, video_seq, text_seq):
    video = _as_matrix(video_seq)
    text = _as_matrix(text_seq)
    w = tn.as_tensor(weights)
    if w.data.ndim != 1 or w.shape[0] != video.shape[0] or video.shape[0] != text.shape[0]:
        raise ShapeError("hard_ground", w.shape, video.shape, text.shape)
    return tn.matmul(w, video), tn.matmul(w, text)


def ground(params, cfg, Q, video_seq, text_seq, tfidf_weights=None):
    """Question-aware video and text features ``(V, T)`` under ``cfg``."""
    if cfg.uses_hard and tfidf_weights is None:
        raise ConfigError("hard or combined grounding needs tfidf_weights")
    video = _as_matrix(video_seq)
    text = _as_matrix(text_seq)
    hard = hard_ground(tfidf_weights, video, text) if cfg.uses_hard else (None, None)
    out = []
    for mode, prefix, seq, hard_feat in (
            (cfg.video_mode, "ground_video", video, hard[0]),
            (cfg.text_mode, "ground_text", text, hard[1])):
        if mode == "hard":
            out.append(hard_feat)
            continue
        soft_feat = soft_ground(params, prefix, Q, seq)[1]
        if mode == "soft":
            out.append(soft_feat)
        else:
            out.append(tn.mul(tn.add(soft_feat, hard_feat), np.full(soft_feat.shape, 0.5)))
    return out[0], out[1]


def fuse_answer_button(params, A, B):
    """Sigmoid gate mixing answer and button features; rows are candidates."""
    A = tn.as_tensor(A)
    B = tn.as_tensor(B)
    axis = A.data.ndim - 1
    logits = tn.matmul(tn.concat([A, B], axis=axis), tn.transpose(params["gate.W_g"]))
    g = tn.sigmoid(tn.add(logits, params["gate.b_g"]))
    one_minus = tn.sub(np.ones(g.shape), g)
    return tn.add(tn.mul(g, A), tn.mul(one_minus, B))


def _mlp(params, prefix, x):
    h = tn.relu(tn.add(tn.matmul(x, tn.transpose(params[f"{prefix}.W1"])), params[f"{prefix}.b1"]))
    return tn.add(tn.matmul(h, tn.transpose(params[f"{prefix}.W2"])), params[f"{prefix}.b2"])


def reweight_context(params, V, T, Q, A_hat, return_weights=False):
    """Attention over ``[V, T, Q, A_hat]`` with a learned query, then the context MLP.

    ``A_hat`` may be one vector or an (n, d) matrix of candidates; the
    result has the matching shape.
    """
    A_hat = tn.as_tensor(A_hat)
    single = A_hat.data.ndim == 1
    rows = tn.reshape(A_hat, (1, A_hat.shape[0])) if single else A_hat
    shared = tn.concat([tn.reshape(tn.as_tensor(x), (1, params.d)) for x in (V, T, Q)], axis=0)
    u = params["reweight.u"]
    shared_scores = additive_scores(params, "reweight", u, shared)  # (3,)
    cand_scores = additive_scores(params, "reweight", u, rows)  # (n,)
    fused_rows, weights = [], []
    for j in range(rows.shape[0]):
        alpha = tn.softmax(tn.concat([shared_scores, tn.take(cand_scores, slice(j, j + 1))]), axis=0)
        context = tn.concat([shared, tn.take(rows, (slice(j, j + 1),))], axis=0)
        fused_rows.append(tn.reshape(tn.matmul(alpha, context), (1, params.d)))
        weights.append(alpha)
    fused = tn.concat(fused_rows, axis=0) if len(fused_rows) > 1 else fused_rows[0]
    C = _mlp(params, "context_mlp", fused)
    if single:
        C = tn.reshape(C, (params.d,))
    if return_weights:
        return C, weights
    return C


def gru_step(params, H_prev, C):
    """One GRU update from ``H_prev`` (d,) with input ``C`` (d,) or (n, d)."""
    H_prev = tn.as_tensor(H_prev)
    C = tn.as_tensor(C)

    def gate(name, hidden):
        x = tn.matmul(C, tn.transpose(params[f"gru.W_{name}"]))
        return tn.add(tn.add(x, tn.matmul(params[f"gru.U_{name}"], hidden)), params[f"gru.b_{name}"])

    z = tn.sigmoid(gate("z", H_prev))
    r = tn.sigmoid(gate("r", H_prev))
    # r has candidate rows; U_h (r * H_prev) is applied per row
    rh = tn.mul(r, H_prev)
    cand = tn.add(tn.add(tn.matmul(C, tn.transpose(params["gru.W_h"])),
                         tn.matmul(rh, tn.transpose(params["gru.U_h"]))), params["gru.b_h"])
    h_tilde = tn.tanh(cand)
    keep = tn.mul(tn.sub(np.ones(z.shape), z), H_prev)
    return tn.add(keep, tn.mul(z, h_tilde))


def score_step(params, hidden_states):
    """Softmax over per-candidate scores from a shared two-layer MLP."""
    H = _as_matrix(hidden_states)
    if H.shape[0] < 2:
        raise DegenerateStepError(f"a step needs at least 2 candidates, got {H.shape[0]}")
    hidden = tn.relu(tn.add(tn.matmul(H, tn.transpose(params["score_mlp.W1"])), params["score_mlp.b1"]))
    # a row-wise reduction instead of a matrix-vector product keeps each
    # candidate's logit independent of its position in the batch
    w = tn.reshape(params["score_mlp.W2"], (H.shape[1],))
    n = H.shape[0]
    logits = tn.add(tn.reshape(tn.tsum(tn.mul(hidden, w), axis=1), (n, 1)), params["score_mlp.b2"])
    return tn.softmax(tn.reshape(logits, (n,)), axis=0)


def argmax_lowest(values):
    """Index of the maximum, ties going to the lowest index."""
    return int(np.argmax(np.asarray(values)))


def sample_inputs(sample, video):
    """Constant tensors for one question: Q, video matrix, text matrix."""
    Q = Tensor(sample.question_feature)
    Vm = Tensor(np.stack([c.video_feature for c in video]))
    Tm = Tensor(np.stack([c.script_feature for c in video]))
    return Q, Vm, Tm


def forward_question(params, cfg, sample, video, history_mode="autoregressive", tfidf_weights=None):
    """Per-step candidate probabilities for one question.

    History starts at zero; after each step it becomes the hidden state of
    the ground-truth candidate (``teacher_forced``) or of the most probable
    one (``autoregressive``).
    """
    if history_mode not in HISTORY_MODES:
        raise ConfigError(f"history_mode must be one of {HISTORY_MODES}, got {history_mode!r}")
    if history_mode == "teacher_forced" and not sample.labeled:
        raise MissingLabelError("teacher forcing needs a ground truth on every step")
    if cfg.uses_hard and tfidf_weights is None:
        tfidf_weights = video_weights(sample.question_text, [c.script_text for c in video])
    Q, Vm, Tm = sample_inputs(sample, video)
    V, T = ground(params, cfg, Q, Vm, Tm, tfidf_weights)
    H = Tensor(np.zeros(params.d))
    probs_per_step = []
    for step in sample.steps:
        A = np.stack([c.answer_feature for c in step.candidates])
        B = np.stack([c.button_feature for c in step.candidates])
        A_hat = fuse_answer_button(params, A, B)
        C = reweight_context(params, V, T, Q, A_hat)
        H_all = gru_step(params, H, C)
        probs = score_step(params, H_all)
        probs_per_step.append(probs)
        pick = step.ground_truth if history_mode == "teacher_forced" else argmax_lowest(probs.data)
        H = tn.take(H_all, pick)
    return probs_per_step
