import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import distance_transform_edt

import metric_reference as R
from znext import metrics as M

GTS = [np.array(g, dtype=bool) for g in R.GT_SET]
PREDS = [np.array(p, dtype=np.float64) for p in R.all_binary_3x3()]


def square_mask(side=16, lo=5, hi=11):
    g = np.zeros((side, side), bool)
    g[lo:hi, lo:hi] = True
    return g


# MAE

def test_mae_examples():
    g = square_mask().astype(float)
    assert M.mae(g, g) == 0
    assert M.mae(1 - g, g) == 1
    assert M.mae(np.full_like(g, 0.5), g) == 0.5


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        M.mae(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(0, 1)), arrays(np.bool_, (4, 5)))
def test_mae_complement_sums_to_one(p, g):
    assert M.mae(p, g) + M.mae(1 - p, g) == pytest.approx(1.0, abs=1e-12)


# F-measure, Dice, IoU

def test_f_beta_examples():
    g = square_mask()
    assert M.f_beta(g.astype(float), g, threshold=0.3) == 1.0
    assert M.f_beta(np.zeros(g.shape), g) == 0.0
    g3 = np.array([[1, 1, 1], [0, 0, 0], [0, 0, 0]], bool)
    p3 = np.array([[1, 1, 0], [1, 0, 0], [0, 0, 0]], float)
    assert M.f_beta(p3, g3) == pytest.approx(2 / 3, abs=1e-15)


def test_dice_iou_examples():
    g = np.zeros((4, 4), bool)
    g[0, :] = True
    assert M.m_dice(g.astype(float), g) == 1 and M.m_iou(g.astype(float), g) == 1
    assert M.m_dice((~g).astype(float), g) == 0 and M.m_iou((~g).astype(float), g) == 0
    p = np.zeros((4, 4))
    p[0, :2] = p[1, :2] = 1
    assert M.m_dice(p, g) == 0.5
    assert M.m_iou(p, g) == pytest.approx(1 / 3, abs=1e-15)
    assert M.m_dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_dice_of_clip_is_frame_mean():
    g = np.zeros((2, 4, 4), bool)
    g[:, 0, :] = True
    p = g.astype(float)
    p[1] = 0
    p[1, 0, :2] = p[1, 1, :2] = 1
    assert M.m_dice(p, g) == pytest.approx(0.75)


# PR curve

def test_pr_curve_perfect_map():
    g = square_mask()
    prec, rec = M.pr_curve(g.astype(float), g)
    assert prec.shape == rec.shape == (256,)
    # threshold 0 binarizes everything to foreground, so precision is the
    # foreground fraction there; every other threshold keeps exactly g
    assert prec[0] == pytest.approx(g.mean())
    assert np.all(prec[1:] == 1.0) and np.all(rec == 1.0)


def test_pr_curve_constant_half_single_transition():
    g = square_mask()
    prec, rec = M.pr_curve(np.full(g.shape, 0.5), g)
    # floor(0.5*255) = 127, so q >= t holds for t <= 127 only
    assert np.all(rec[:128] == 1) and np.all(rec[128:] == 0)
    assert np.all(prec[:128] == pytest.approx(g.mean())) and np.all(prec[128:] == 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)), arrays(np.bool_, (5, 5)))
def test_pr_curve_recall_non_increasing_and_full_at_zero(p, g):
    prec, rec = M.pr_curve(p, g)
    assert np.all(np.diff(rec) <= 0)
    if g.any():
        assert rec[0] == 1.0


# structure measure

def test_s_measure_perfect_and_inverted():
    g = np.zeros((4, 4), bool)
    g[1:3, 1:3] = True
    assert M.s_measure(g.astype(float), g) == pytest.approx(1.0, abs=1e-6)
    assert M.s_measure(1 - g.astype(float), g) < M.s_measure(g.astype(float), g)


def test_s_measure_degenerate_masks():
    p = np.full((4, 4), 0.25)
    assert M.s_measure(p, np.zeros((4, 4))) == 0.75
    assert M.s_measure(p, np.ones((4, 4))) == 0.25


def test_centroid_rounds_half_up():
    g = np.zeros((4, 4), bool)
    g[1:3, 1:3] = True
    # 1-based mean row is 2.5, which rounds up to 3 (numpy's round would give 2)
    assert M.centroid(g) == (3, 3)


# enhanced alignment

def test_e_measure_perfect_binary_map():
    g = square_mask()
    _, curve = M.e_measure(g.astype(float), g)
    assert np.all(curve[1:] == pytest.approx(1.0, abs=1e-12))


def test_e_measure_inverse_is_per_threshold_minimum():
    for g in GTS[2:]:
        curves = np.array([M.e_curve(p, g) for p in PREDS])
        inv = M.e_curve(1 - g.astype(float), g)
        assert np.all(inv[1:] <= curves[:, 1:].min(axis=0) + 1e-12)


def test_e_measure_degenerate_masks():
    p = np.zeros((3, 3))
    p[0, 0] = 1
    mean_e, _ = M.e_measure(p, np.zeros((3, 3)))
    assert 0 < mean_e < 1
    assert M.e_curve(p, np.zeros((3, 3)))[1] == pytest.approx(8 / 9)
    assert M.e_curve(p, np.ones((3, 3)))[1] == pytest.approx(1 / 9)


# weighted F

def test_weighted_f_perfect_is_one():
    g = square_mask()
    assert M.weighted_f(g.astype(float), g) == pytest.approx(1.0, abs=1e-12)


def test_weighted_f_empty_mask_flagged():
    detail = M.weighted_f_detail(np.zeros((4, 4)), np.zeros((4, 4)))
    assert detail.value == 0.0 and detail.empty_gt
    report = M.evaluate(np.zeros((4, 4)), np.zeros((4, 4)))
    assert report.warnings


def test_weighted_f_distance_ordering_follows_definition():
    # A single false positive next to the object versus one far from it.
    # The importance factor 2 - exp(ln(0.5)/5 * d) grows with distance, so
    # the far error costs more under the original definition.
    g = square_mask()
    near = g.astype(float)
    near[4, 8] = 1
    far = g.astype(float)
    far[15, 15] = 1
    wf_near, wf_far = M.weighted_f(near, g), M.weighted_f(far, g)
    assert wf_far < wf_near < 1.0


def test_nearest_foreground_matches_scipy_distance():
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.random((20, 17)) < 0.1
        g[3, 4] = True
        dist, idx = M.nearest_foreground(g, chunk=37)
        np.testing.assert_allclose(dist, distance_transform_edt(~g), atol=1e-12)
        assert np.all(g.ravel()[idx.ravel()])


def test_gaussian_kernel_normalized_and_symmetric():
    k = M.gaussian_kernel()
    assert k.shape == (7, 7) and k.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(k, k.T)
    np.testing.assert_array_equal(k, k[::-1])


# exhaustive 3x3 oracle

@pytest.mark.parametrize("gi", range(len(GTS)))
def test_exhaustive_3x3_matches_reference(gi):
    g, gt = GTS[gi], R.GT_SET[gi]
    for p, pt in zip(PREDS, R.all_binary_3x3()):
        assert M.mae(p, g) == pytest.approx(R.mae(pt, gt), abs=1e-9)
        assert M.f_beta(p, g) == pytest.approx(R.f_beta(pt, gt), abs=1e-9)
        assert M.max_f(p, g) == pytest.approx(R.max_f(pt, gt), abs=1e-9)
        assert M.m_dice(p, g) == pytest.approx(R.dice(pt, gt), abs=1e-9)
        assert M.m_iou(p, g) == pytest.approx(R.iou(pt, gt), abs=1e-9)
        assert M.s_measure(p, g) == pytest.approx(R.s_measure(pt, gt), abs=1e-9)
        assert M.e_measure(p, g)[0] == pytest.approx(sum(R.e_curve(pt, gt)) / 256, abs=1e-9)
        assert M.weighted_f(p, g) == pytest.approx(R.weighted_f(pt, gt), abs=1e-9)


SIMILARITIES = {
    "s_measure": M.s_measure,
    "mean_e": lambda p, g: M.e_measure(p, g)[0],
    "weighted_f": M.weighted_f,
    "max_f": M.max_f,
    "f_beta": M.f_beta,
    "m_dice": M.m_dice,
    "m_iou": M.m_iou,
}


@pytest.mark.parametrize("name", sorted(SIMILARITIES))
def test_exact_prediction_maximizes_similarity(name):
    fn = SIMILARITIES[name]
    for g in GTS:
        best = fn(g.astype(float), g)
        assert all(fn(p, g) <= best + 1e-12 for p in PREDS)
        assert min(M.mae(p, g) for p in PREDS) == M.mae(g.astype(float), g) == 0


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(0, 1)), arrays(np.bool_, (4, 4)))
def test_continuous_predictions_match_reference(p, g):
    pt, gt = p.tolist(), g.astype(int).tolist()
    assert M.s_measure(p, g) == pytest.approx(R.s_measure(pt, gt), abs=1e-9)
    assert M.weighted_f(p, g) == pytest.approx(R.weighted_f(pt, gt), abs=1e-9)
    np.testing.assert_allclose(M.e_curve(p, g), R.e_curve(pt, gt), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(0, 1)), arrays(np.bool_, (5, 6)))
def test_all_scalars_in_unit_interval(p, g):
    report = M.evaluate(p, g)
    for name, value in report.scalars().items():
        assert 0.0 <= value <= 1.0, name
    assert report.f_curve.shape == report.e_curve.shape == (256,)
    assert report.pr_curve.shape == (256, 2)


# aggregation and CSV output

def test_aggregate_is_mean_of_items(tmp_path):
    rng = np.random.default_rng(4)
    reports = []
    for _ in range(4):
        g = rng.random((8, 8)) < 0.4
        reports.append(M.evaluate(rng.random((8, 8)), g))
    summary = M.write_report_csv(tmp_path / "m.csv", ["a", "b", "c", "d"], reports)
    for k in M.SCALARS:
        assert getattr(summary, k) == pytest.approx(np.mean([getattr(r, k) for r in reports]), abs=1e-15)
    np.testing.assert_allclose(summary.e_curve, np.mean([r.e_curve for r in reports], axis=0))
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["name", *M.SCALARS]
    assert [r[0] for r in rows[1:]] == ["a", "b", "c", "d", "mean"]
    assert float(rows[-1][1]) == summary.s_measure
    M.write_curves_csv(tmp_path / "c.csv", summary)
    curve_rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert len(curve_rows) == 257 and curve_rows[0][0] == "threshold"


def test_aggregate_empty_raises():
    with pytest.raises(ValueError):
        M.aggregate([])


def test_quantize_is_floor():
    assert M.quantize(np.array([0.5, 1.0, 0.0, 0.999]))[0] == 127
    assert list(M.quantize(np.array([1.0, 0.0, 0.999]))) == [255, 0, math.floor(0.999 * 255)]
