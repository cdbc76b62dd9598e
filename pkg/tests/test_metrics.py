import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vntraj.decoder import PredictionSet, mixture_nll, softmax_np
from vntraj.metrics import (EvalError, EvalRecord, ade_fde, aggregate, cnll, constant_velocity,
                            dumps_predictions, evaluate, loads_predictions, prediction_row, r_auc,
                            rank_correlation, retention_curve, score, write_reports)
from vntraj.scene import DT, ShiftConfig, generate_synthetic


def _rec(sid, c, u, ade=0.0):
    return EvalRecord(sid, c, ade, ade, ade, ade, u)


def _random_pred(rng, k=3, T=25):
    return PredictionSet(rng.normal(size=(k, T, 2)), softmax_np(rng.normal(size=k)))


# ---------------------------------------------------------------- per-scene


def test_ade_fde_exact_and_345():
    y = np.cumsum(np.ones((25, 2)), axis=0)
    ade, fde = ade_fde(PredictionSet(y[None], np.ones(1)), y)
    assert ade[0] == 0 and fde[0] == 0
    ade, fde = ade_fde(PredictionSet((y + [3.0, 4.0])[None], np.ones(1)), y)
    assert ade[0] == pytest.approx(5.0, abs=1e-12) and fde[0] == pytest.approx(5.0, abs=1e-12)


def test_ade_fde_loop_oracle(rng):
    pred, y = _random_pred(rng), rng.normal(size=(25, 2))
    ade, fde = ade_fde(pred, y)
    for k in range(3):
        d = [math.hypot(*(pred.trajectories[k, t] - y[t])) for t in range(25)]
        assert ade[k] == pytest.approx(sum(d) / 25, abs=1e-12)
        assert fde[k] == pytest.approx(d[-1], abs=1e-12)


def test_ade_fde_shape_mismatch(rng):
    with pytest.raises(ValueError):
        ade_fde(_random_pred(rng, T=5), np.zeros((25, 2)))


def test_aggregate_examples():
    assert aggregate(np.array([1.0, 3.0]), np.array([0.5, 0.5])) == (1.0, 2.0)
    assert aggregate(np.array([2.5]), np.array([1.0])) == (2.5, 2.5)


@given(st.integers(0, 10_000))
def test_min_below_weighted(seed):
    rng = np.random.default_rng(seed)
    r = score("s", _random_pred(rng, k=5), rng.normal(size=(25, 2)))
    assert r.min_ade <= r.w_ade + 1e-12 and r.min_fde <= r.w_fde + 1e-12


def test_cnll_bit_identical_to_mixture_nll(rng):
    for _ in range(5):
        pred, y = _random_pred(rng), rng.normal(size=(25, 2))
        assert cnll(pred, y) == mixture_nll(pred.trajectories, pred.confidences, y)


def test_cnll_anchors():
    y = np.zeros((25, 2))
    assert cnll(PredictionSet((y + [1.0, 0.0])[None], np.ones(1)), y) == pytest.approx(12.5, abs=1e-9)


# ---------------------------------------------------------------- retention


def test_retention_fixture():
    curve = retention_curve([_rec("a", 1.0, 0.1), _rec("b", 2.0, 0.2), _rec("c", 3.0, 0.3)])
    assert [m for _, m in curve.points] == pytest.approx([1.0, 1.5, 2.0])
    assert [f for f, _ in curve.points] == pytest.approx([1 / 3, 2 / 3, 1.0])
    assert curve.auc == pytest.approx(1.5, abs=1e-12)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.floats(-5, 5))
def test_constant_metric_curve(us, c):
    recs = [_rec(str(i), c, u) for i, u in enumerate(us)]
    assert retention_curve(recs).auc == pytest.approx(c, abs=1e-12)


@given(st.lists(st.floats(0, 50), min_size=2, max_size=20), st.integers(0, 10_000))
def test_oracle_ordering_is_best(cnlls, seed):
    rng = np.random.default_rng(seed)
    recs = [_rec(f"s{i:02d}", c, float(rng.uniform())) for i, c in enumerate(cnlls)]
    oracle = r_auc(recs, [r.cnll for r in recs])
    worst = r_auc(recs, [-r.cnll for r in recs])
    assert oracle <= r_auc(recs) + 1e-9
    assert worst >= r_auc(recs) - 1e-9


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    recs = [_rec(f"s{i}", float(c), float(u)) for i, (c, u) in enumerate(rng.uniform(size=(10, 2)))]
    scaled = [replace(r, uncertainty=r.uncertainty * scale) for r in recs]
    assert retention_curve(scaled) == retention_curve(recs)


def test_ties_broken_by_scene_id():
    recs = [_rec("b", 2.0, 0.5), _rec("a", 4.0, 0.5)]
    assert retention_curve(recs).points[0][1] == 4.0
    assert retention_curve(recs[::-1]) == retention_curve(recs)


def test_empty_retention_rejected():
    with pytest.raises(ValueError):
        retention_curve([])


# ---------------------------------------------------------------- rank correlation


def test_spearman_extremes():
    recs = [_rec(str(i), float(i), float(i) * 2) for i in range(6)]
    assert rank_correlation(recs) == pytest.approx(1.0, abs=1e-12)
    rev = [_rec(str(i), float(i), -float(i)) for i in range(6)]
    assert rank_correlation(rev) == pytest.approx(-1.0, abs=1e-12)


@given(st.permutations(range(12)))
def test_spearman_matches_sum_d2_formula(perm):
    n = len(perm)
    recs = [_rec(str(i), float(i), float(p)) for i, p in enumerate(perm)]
    d2 = sum((i - p) ** 2 for i, p in enumerate(perm))
    assert rank_correlation(recs) == pytest.approx(1 - 6 * d2 / (n * (n ** 2 - 1)), abs=1e-12)


def test_spearman_errors():
    with pytest.raises(ValueError):
        rank_correlation([_rec("a", 1.0, 1.0), _rec("b", 2.0, 2.0)])
    with pytest.raises(ValueError):
        rank_correlation([_rec(str(i), float(i), 1.0) for i in range(4)])


# ---------------------------------------------------------------- evaluate


@pytest.fixture(scope="module")
def scenes():
    return generate_synthetic(ShiftConfig(21, 4, 0.0))


def _perfect(scenes):
    return [(s.scene_id, PredictionSet(s.future_array()[None], np.ones(1)), None) for s in scenes]


def test_evaluate_perfect_is_zero(scenes):
    res = evaluate(_perfect(scenes), scenes)
    assert all(v == 0.0 for v in res.summary.values())


def test_evaluate_hand_means(scenes):
    preds = []
    for i, s in enumerate(scenes[:2]):
        preds.append((s.scene_id, PredictionSet((s.future_array() + [3.0 * (i + 1), 0.0])[None], np.ones(1)),
                      float(i)))
    res = evaluate(preds, scenes)
    # offsets 3 and 6 m at every step
    assert res.summary["min_ade"] == pytest.approx(4.5, abs=1e-9)
    assert res.summary["w_fde"] == pytest.approx(4.5, abs=1e-9)
    assert res.summary["cnll"] == pytest.approx((25 * 9 / 2 + 25 * 36 / 2) / 2, abs=1e-9)
    assert res.summary["r_auc_cnll"] == pytest.approx((112.5 + (112.5 + 450) / 2) / 2, abs=1e-9)


def test_evaluate_order_independent(scenes):
    rng = np.random.default_rng(4)
    preds = [(s.scene_id, _random_pred(rng), float(rng.uniform())) for s in scenes]
    a = evaluate(preds, scenes)
    b = evaluate(preds[::-1], scenes[::-1])
    assert a == b
    assert [r.scene_id for r in a.records] == sorted(s.scene_id for s in scenes)


def test_evaluate_errors(scenes):
    preds = _perfect(scenes)
    with pytest.raises(EvalError, match="duplicate"):
        evaluate(preds + preds[:1], scenes)
    with pytest.raises(EvalError, match="ghost"):
        evaluate([("ghost", preds[0][1], None)], scenes)


def test_prediction_file_round_trip(rng):
    pred = _random_pred(rng)
    text = dumps_predictions([prediction_row("x", pred, 0.25), prediction_row("y", pred, None)])
    back = loads_predictions(text)
    assert [(sid, u) for sid, _, u in back] == [("x", 0.25), ("y", None)]
    np.testing.assert_array_equal(back[0][1].trajectories, pred.trajectories)
    with pytest.raises(EvalError):
        loads_predictions('{"scene_id": "z"}\n')


def test_reports_written(scenes, tmp_path):
    res = evaluate(_perfect(scenes), scenes)
    paths = write_reports(res, tmp_path, "m")
    assert paths["summary"].read_text().splitlines() == [
        "model,r_auc_cnll,cnll,min_ade,min_fde,w_ade,w_fde", "m,0.0,0.0,0.0,0.0,0.0,0.0"]
    assert paths["retention"].read_text().splitlines()[0] == "fraction,mean_cnll"
    assert paths["scatter"].read_text().splitlines()[1].endswith(",nan,nan")
    assert paths["plot"].read_text().startswith("<svg")


def test_constant_velocity_baseline(scenes):
    s = scenes[0]
    last = s.target.states[-1]
    cv = constant_velocity(s)
    assert cv.shape == (25, 2)
    np.testing.assert_allclose(cv[4], [last.x + 5 * DT * last.vx, last.y + 5 * DT * last.vy], atol=1e-12)
