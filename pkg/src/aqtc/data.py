"""Dataset schema, line-delimited JSON I/O and the synthetic task generator.

File format: one JSON object per line, either

    {"kind": "video", "id": ..., "clips": [{"video_feature": [...] | "video_feature_seq": [[...], ...],
                                            "script_text": ...,
                                            "script_feature": [...] | "script_feature_seq": [[...], ...]}]}
    {"kind": "sample", "functions_ref": ..., "question_text": ..., "question_feature": [...],
     "steps": [{"candidates": [{"answer_text": ..., "answer_feature": [...], "button_feature": [...]}],
                "ground_truth": int | null}]}

Feature sequences are average-pooled on load. Floats are written with
``repr``, which round-trips float64 exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimError, EmptySequenceError, ParseError, RefError


def _vec_eq(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(eq=False)
class FunctionClip:
    video_feature: np.ndarray
    script_text: str
    script_feature: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, FunctionClip) and self.script_text == other.script_text
                and _vec_eq(self.video_feature, other.video_feature)
                and _vec_eq(self.script_feature, other.script_feature))


@dataclass(eq=False)
class Candidate:
    answer_text: str
    answer_feature: np.ndarray
    button_feature: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Candidate) and self.answer_text == other.answer_text
                and _vec_eq(self.answer_feature, other.answer_feature)
                and _vec_eq(self.button_feature, other.button_feature))


@dataclass
class Step:
    candidates: list
    ground_truth: Optional[int] = None


@dataclass(eq=False)
class QuestionSample:
    question_text: str
    question_feature: np.ndarray
    steps: list
    functions_ref: str

    def __eq__(self, other):
        return (isinstance(other, QuestionSample) and self.question_text == other.question_text
                and self.functions_ref == other.functions_ref and self.steps == other.steps
                and _vec_eq(self.question_feature, other.question_feature))

    @property
    def labeled(self):
        return all(s.ground_truth is not None for s in self.steps)


@dataclass
class Dataset:
    dim: int
    videos: dict
    samples: list = field(default_factory=list)

    def video_of(self, sample):
        return self.videos[sample.functions_ref]

    def with_samples(self, samples):
        return Dataset(self.dim, self.videos, list(samples))

    def without_labels(self):
        stripped = [
            dataclasses.replace(s, steps=[Step(st.candidates, None) for st in s.steps])
            for s in self.samples
        ]
        return self.with_samples(stripped)

    @property
    def num_steps(self):
        return sum(len(s.steps) for s in self.samples)

    def validate(self):
        d = self.dim
        if d <= 0:
            raise DimError(f"feature dimension must be positive, got {d}")

        def check(vec, what):
            if vec.ndim != 1 or vec.shape[0] != d:
                raise DimError(f"{what}: expected length {d}, got shape {vec.shape}")

        for vid, clips in self.videos.items():
            if not clips:
                raise ParseError(f"video {vid!r} has no clips")
            for i, clip in enumerate(clips):
                check(clip.video_feature, f"video {vid} clip {i} video_feature")
                check(clip.script_feature, f"video {vid} clip {i} script_feature")
                if not clip.script_text:
                    raise ParseError(f"video {vid!r} clip {i} has empty script_text")
        for n, s in enumerate(self.samples):
            if s.functions_ref not in self.videos:
                raise RefError(f"sample {n} references unknown video {s.functions_ref!r}")
            check(s.question_feature, f"sample {n} question_feature")
            if not s.steps:
                raise ParseError(f"sample {n} has no steps")
            for i, st in enumerate(s.steps):
                if len(st.candidates) < 2:
                    raise ParseError(f"sample {n} step {i} has fewer than 2 candidates")
                for c in st.candidates:
                    check(c.answer_feature, f"sample {n} step {i} answer_feature")
                    check(c.button_feature, f"sample {n} step {i} button_feature")
                gt = st.ground_truth
                if gt is not None and not 0 <= gt < len(st.candidates):
                    raise ParseError(f"sample {n} step {i} ground_truth {gt} out of range")
        return self


def pool_sequence(seq):
    """Elementwise mean of a non-empty sequence of equal-length vectors."""
    if len(seq) == 0:
        raise EmptySequenceError("cannot pool an empty sequence")
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim != 2:
        raise DimError("pool_sequence needs vectors of uniform length")
    return arr.mean(axis=0)


# ---------------------------------------------------------------- file I/O


def _feature(rec, name, line):
    if name in rec:
        vec = np.asarray(rec[name], dtype=np.float64)
        if vec.ndim != 1:
            raise DimError(f"line {line}: {name} must be a flat vector")
        return vec
    seq_name = name + "_seq"
    if seq_name in rec:
        try:
            return pool_sequence(rec[seq_name])
        except (ValueError, TypeError) as exc:
            if isinstance(exc, EmptySequenceError):
                raise ParseError(f"{seq_name} is empty", line) from exc
            raise DimError(f"line {line}: {seq_name} holds vectors of unequal length") from exc
    raise ParseError(f"missing {name}", line)


def _parse_sample(rec, line):
    steps = []
    for st in rec["steps"]:
        cands = [
            Candidate(str(c.get("answer_text", "")), _feature(c, "answer_feature", line),
                      _feature(c, "button_feature", line))
            for c in st["candidates"]
        ]
        gt = st.get("ground_truth")
        if gt is not None and (not isinstance(gt, int) or isinstance(gt, bool)):
            raise ParseError(f"ground_truth must be an integer, got {gt!r}", line)
        steps.append(Step(cands, gt))
    return QuestionSample(str(rec["question_text"]), _feature(rec, "question_feature", line),
                          steps, str(rec["functions_ref"]))


def read_dataset(lines):
    videos, samples, dims = {}, [], set()
    for line_no, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line_no) from exc
        if not isinstance(rec, dict):
            raise ParseError("record is not an object", line_no)
        kind = rec.get("kind")
        try:
            if kind == "video":
                vid = str(rec["id"])
                if vid in videos:
                    raise ParseError(f"duplicate video id {vid!r}", line_no)
                clips = [
                    FunctionClip(_feature(c, "video_feature", line_no), str(c["script_text"]),
                                 _feature(c, "script_feature", line_no))
                    for c in rec["clips"]
                ]
                videos[vid] = clips
                dims.update(c.video_feature.shape[0] for c in clips)
            elif kind == "sample":
                sample = _parse_sample(rec, line_no)
                samples.append(sample)
                dims.add(sample.question_feature.shape[0])
            else:
                raise ParseError(f"unknown record kind {kind!r}", line_no)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed {kind} record: {exc!r}", line_no) from exc
    if not dims:
        raise ParseError("dataset contains no features")
    if len(dims) > 1:
        raise DimError(f"inconsistent feature dimensions {sorted(dims)}")
    return Dataset(dims.pop(), videos, samples).validate()


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return read_dataset(fh)


def _floats(vec):
    return [float(x) for x in vec]


def dataset_records(ds):
    for vid, clips in ds.videos.items():
        yield {"kind": "video", "id": vid, "clips": [
            {"video_feature": _floats(c.video_feature), "script_text": c.script_text,
             "script_feature": _floats(c.script_feature)} for c in clips]}
    for s in ds.samples:
        yield {"kind": "sample", "functions_ref": s.functions_ref, "question_text": s.question_text,
               "question_feature": _floats(s.question_feature),
               "steps": [{"candidates": [
                   {"answer_text": c.answer_text, "answer_feature": _floats(c.answer_feature),
                    "button_feature": _floats(c.button_feature)} for c in st.candidates],
                   "ground_truth": st.ground_truth} for st in s.steps]}


def dumps_dataset(ds):
    return "".join(json.dumps(rec) + "\n" for rec in dataset_records(ds))


def write_dataset(ds, path):
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    num_videos: int = 8
    m: int = 6
    d: int = 64
    samples_per_video: int = 8
    steps_per_sample: int = 3
    n_candidates: int = 4
    noise_sigma: float = 0.05
    vocab_per_function: int = 8
    seed: int = 0

    def validate(self):
        for name in ("num_videos", "m", "d", "samples_per_video", "steps_per_sample", "vocab_per_function"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_candidates < 2:
            raise ValueError("n_candidates must be at least 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        return self


SCRIPT_TOKENS = 12
QUESTION_TOKENS = 5


def _unit(v):
    return v / np.linalg.norm(v)


def generate_synthetic(cfg):
    """Planted-structure dataset: questions target one function per video.

    The correct answer at step ``i`` is built from the target function's
    video feature plus an offset shared by every step ``i`` in the dataset,
    and its button from the target's script feature plus the same offset.
    Distractor answers and buttons are random unit vectors.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, m = cfg.d, cfg.m
    offsets = [_unit(rng.standard_normal(d)) for _ in range(cfg.steps_per_sample)]
    videos, samples = {}, []
    next_token = 0
    for v in range(cfg.num_videos):
        vid = f"video{v:03d}"
        clips, vocabs = [], []
        for _ in range(m):
            vocab = [f"w{next_token + k}" for k in range(cfg.vocab_per_function)]
            next_token += cfg.vocab_per_function
            vocabs.append(vocab)
            vf = _unit(rng.standard_normal(d))
            sf = vf + cfg.noise_sigma * rng.standard_normal(d)
            words = rng.choice(vocab, size=SCRIPT_TOKENS)
            clips.append(FunctionClip(vf, " ".join(words), sf))
        videos[vid] = clips
        for _ in range(cfg.samples_per_video):
            target = int(rng.integers(m))
            q_feat = _unit(clips[target].video_feature + cfg.noise_sigma * rng.standard_normal(d))
            q_text = " ".join(rng.choice(vocabs[target], size=QUESTION_TOKENS))
            steps = []
            for i, off in enumerate(offsets):
                gt = int(rng.integers(cfg.n_candidates))
                cands = []
                for j in range(cfg.n_candidates):
                    if j == gt:
                        a = _unit(clips[target].video_feature + off)
                        b = _unit(clips[target].script_feature + off)
                    else:
                        a = _unit(rng.standard_normal(d))
                        b = _unit(rng.standard_normal(d))
                    cands.append(Candidate(f"step {i + 1} option {j + 1}", a, b))
                steps.append(Step(cands, gt))
            samples.append(QuestionSample(q_text, q_feat, steps, vid))
    return Dataset(d, videos, samples)


def split_train_val(ds, val_fraction, seed):
    """Seeded sample-level partition; validation gets at least one sample."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    n = len(ds.samples)
    n_val = max(1, round(val_fraction * n))
    if n_val >= n:
        n_val = n - 1 if n > 1 else n
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train = [s for i, s in enumerate(ds.samples) if i not in val_idx]
    val = [s for i, s in enumerate(ds.samples) if i in val_idx]
    return ds.with_samples(train), ds.with_samples(val)
