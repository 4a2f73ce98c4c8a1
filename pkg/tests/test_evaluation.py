import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqtc.data import SyntheticConfig, generate_synthetic
from aqtc.errors import DimError, MissingLabelError
from aqtc.evaluation import ensemble_predict, evaluate, rank_of, recall_at_k, report_from_predictions
from aqtc.model import GroundingConfig, ModelParams, forward_question


@pytest.mark.parametrize("probs, gt, k, hit", [
    ([0.5, 0.3, 0.2], 0, 1, True),
    ([0.6, 0.1, 0.3], 1, 1, False),
    ([0.6, 0.1, 0.3], 1, 3, True),
    ([0.6, 0.1, 0.3], 2, 2, True),
    ([0.4, 0.4, 0.2], 0, 1, True),
    ([0.4, 0.4, 0.2], 1, 1, False),
])
def test_recall_examples(probs, gt, k, hit):
    assert recall_at_k(probs, gt, k) is hit


def test_rank_ties_go_to_lowest_index():
    assert [rank_of([0.25] * 4, g) for g in range(4)] == [1, 2, 3, 4]


def rank_by_sort(probs, gt):
    # stable sort on descending probability keeps lower indices first among ties
    order = sorted(range(len(probs)), key=lambda i: -probs[i])
    return order.index(gt) + 1


@settings(max_examples=200)
@given(st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.4]), min_size=1, max_size=7), st.data())
def test_rank_matches_stable_sort_and_is_monotone(values, data):
    gt = data.draw(st.integers(0, len(values) - 1))
    assert rank_of(values, gt) == rank_by_sort(values, gt)
    hits = [recall_at_k(values, gt, k) for k in range(1, len(values) + 2)]
    assert hits == sorted(hits)
    assert recall_at_k(values, gt, len(values))


def test_uniform_outputs_give_three_quarters_at_three():
    # enumerate every ground-truth placement for a uniform 4-way model
    hits = [recall_at_k(np.full(4, 0.25), gt, 3) for gt in range(4)]
    assert sum(hits) / 4 == 0.75
    ds = generate_synthetic(SyntheticConfig(num_videos=2, m=3, d=4, samples_per_video=2, steps_per_sample=2,
                                            n_candidates=4, vocab_per_function=2, seed=0))
    samples = []
    for gt in range(4):
        s = ds.samples[gt]
        samples.append(dataclasses.replace(s, steps=[dataclasses.replace(st_, ground_truth=gt) for st_ in s.steps]))
    ds = ds.with_samples(samples)
    report = report_from_predictions([[np.full(4, 0.25)] * 2] * 4, ds)
    assert report.r_at_3 == 0.75 and report.r_at_1 == 0.25 and report.per_step_count == 8


def test_perfect_oracle_scores_one():
    ds = generate_synthetic(SyntheticConfig(num_videos=3, m=4, d=8, samples_per_video=3, noise_sigma=0.0, seed=4))
    preds = [[np.eye(len(st_.candidates))[st_.ground_truth] for st_ in s.steps] for s in ds.samples]
    report = report_from_predictions(preds, ds)
    assert report.r_at_1 == 1.0 and report.r_at_3 == 1.0
    assert report.per_step_count == ds.num_steps
    assert [r for *_, r in report.breakdown] == [1] * ds.num_steps


def test_evaluate_counts_and_order(small_ds, small_params):
    report = evaluate(small_params, GroundingConfig(), small_ds)
    assert report.per_step_count == sum(len(s.steps) for s in small_ds.samples)
    assert 0 <= report.r_at_1 <= report.r_at_3 <= 1
    assert [(si, i) for si, i, _ in report.breakdown] == [
        (si, i) for si, s in enumerate(small_ds.samples) for i in range(len(s.steps))]


def test_evaluate_rejects_unlabeled(small_ds, small_params):
    with pytest.raises(MissingLabelError):
        evaluate(small_params, GroundingConfig(), small_ds.without_labels())


def test_single_member_and_identical_members(small_ds, small_params):
    g = GroundingConfig()
    s = small_ds.samples[1]
    video = small_ds.video_of(s)
    member = [p.data for p in forward_question(small_params, g, s, video, "autoregressive")]
    for k in (1, 2, 3):
        out = ensemble_predict([small_params] * k, g, s, video)
        for a, b in zip(out, member):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    assert evaluate([small_params], g, small_ds) == evaluate(small_params, g, small_ds)


def test_two_member_mean(small_ds, monkeypatch):
    import aqtc.evaluation as ev
    from aqtc.tensor import Tensor
    a, b = ModelParams.init(8, 0), ModelParams.init(8, 1)
    table = {id(a): [0.8, 0.2], id(b): [0.4, 0.6]}
    monkeypatch.setattr(ev, "forward_question", lambda p, *args: [Tensor(table[id(p)])])
    out = ensemble_predict([a, b], GroundingConfig(), small_ds.samples[0], None)
    np.testing.assert_allclose(out[0], [0.6, 0.4], atol=1e-15)


def test_ensemble_dim_mismatch(small_ds):
    with pytest.raises(DimError):
        ensemble_predict([ModelParams.init(8, 0), ModelParams.init(4, 0)], GroundingConfig(),
                         small_ds.samples[0], small_ds.video_of(small_ds.samples[0]))


def test_ensemble_of_distinct_members_is_a_distribution(small_ds):
    members = [ModelParams.init(8, s) for s in range(3)]
    s = small_ds.samples[0]
    out = ensemble_predict(members, GroundingConfig(), s, small_ds.video_of(s))
    assert all(abs(p.sum() - 1) < 1e-12 and np.all(p >= 0) for p in out)


def test_report_record_and_summary(small_ds, small_params):
    report = evaluate(small_params, GroundingConfig(), small_ds)
    rec = report.to_record()
    assert set(rec) == {"r_at_1", "r_at_3", "per_step_count"}
    assert "R@1" in report.summary()
