import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgm import metrics as M
from cgm.metrics import DegenerateGroundTruth, MetricReport

import oracles
from helpers import half_plane, random_mask


def _pair(seed, h=8, w=8):
    rng = np.random.default_rng(seed)
    y = random_mask(rng, h, w, p=rng.uniform(0.15, 0.85))
    # mix of quantised, continuous and exact-threshold values
    q = rng.random((h, w))
    q[rng.random((h, w)) < 0.3] = rng.integers(0, 256, 1) / 255
    return q, y


IDEAL = dict(max_f=1.0, weighted_f=1.0, e_measure=1.0, s_measure=1.0, mae=0.0, dice=1.0, iou=1.0, ber=0.0, acc=1.0)


# ------------------------------------------------------------ MAE

def test_mae_examples():
    y = half_plane(8)
    assert M.mae(y.astype(float), y) == 0.0
    assert M.mae(1.0 - y, y) == 1.0
    assert M.mae(np.full((8, 8), 0.5), y) == 0.5
    q = np.array([[0.9, 0.1], [0.4, 0.8]])
    assert math.isclose(M.mae(q, np.array([[1, 0], [0, 1]])), 0.2)


# ------------------------------------------------------------ max F

def test_max_f_examples():
    y = half_plane(8)
    assert M.max_f(y.astype(float), y) == 1.0
    assert M.max_f(np.full((4, 4), 0.6), np.ones((4, 4), np.uint8)) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_max_f_matches_sweep_oracle(seed):
    q, y = _pair(seed)
    assert abs(M.max_f(q, y) - oracles.max_f(q, y)) <= 1e-12


def test_max_f_requires_foreground():
    with pytest.raises(DegenerateGroundTruth):
        M.max_f(np.zeros((3, 3)), np.zeros((3, 3), np.uint8))


# ------------------------------------------------------------ E-measure

def test_e_measure_perfect_and_complement():
    y = half_plane(8)
    assert M.e_measure(y.astype(float), y) == 1.0
    assert M.e_measure(1.0 - y, y) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_e_measure_matches_oracle(seed):
    q, y = _pair(seed + 100)
    assert abs(M.e_measure(q, y) - oracles.e_measure(q, y)) <= 1e-12


def test_e_measure_degenerate_gt():
    q = np.full((4, 4), 0.25)
    assert M.e_measure(q, np.zeros((4, 4), np.uint8)) == oracles.e_measure(q, np.zeros((4, 4)))
    assert M.e_measure(q, np.ones((4, 4), np.uint8)) == oracles.e_measure(q, np.ones((4, 4)))


# ------------------------------------------------------------ weighted F

def test_weighted_f_examples():
    y = half_plane(32)
    assert M.weighted_f(y.astype(float), y) == 1.0
    assert M.weighted_f(1.0 - y, y) < 0.05


def test_weighted_f_constant_border_variant():
    y = half_plane(32)
    # zero padding lets border pixels of a fully wrong map earn some credit
    assert 0.05 < M.weighted_f(1.0 - y, y, border="constant") < 0.1


def test_weighted_f_drops_with_one_flip():
    y = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.uint8)
    q = y.astype(float)
    q[3, 4] = 1 - q[3, 4]
    assert M.weighted_f(q, y) < 1.0


@pytest.mark.parametrize("seed", range(8))
def test_weighted_f_matches_loop_oracle(seed):
    q, y = _pair(seed + 200)
    assert abs(M.weighted_f(q, y) - oracles.weighted_f(q, y)) <= 1e-9


def test_nearest_foreground_tie_break():
    y = np.zeros((3, 3), bool)
    y[0, 1] = y[1, 0] = y[1, 2] = y[2, 1] = True
    sq, rows, cols = M.nearest_foreground(y)
    assert sq[1, 1] == 1 and (rows[1, 1], cols[1, 1]) == (0, 1)
    assert (rows[2, 2], cols[2, 2]) == (1, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 14), st.integers(2, 14))
def test_nearest_foreground_brute_force(seed, h, w):
    rng = np.random.default_rng(seed)
    y = random_mask(rng, h, w, p=rng.uniform(0.02, 0.5)).astype(bool)
    sq, rows, cols = M.nearest_foreground(y)
    fg = [(r, c) for r in range(h) for c in range(w) if y[r, c]]
    for r in range(h):
        for c in range(w):
            d, fr, fc = min(((fr - r) ** 2 + (fc - c) ** 2, fr, fc) for fr, fc in fg)
            assert (sq[r, c], rows[r, c], cols[r, c]) == (d, fr, fc)


# ------------------------------------------------------------ S-measure

def test_s_measure_examples():
    y = half_plane(8)
    assert M.s_measure(y.astype(float), y) == 1.0
    for seed in range(3):
        yy = random_mask(np.random.default_rng(seed), 8, 8)
        assert 0 < M.s_measure(np.full((8, 8), 0.5), yy) < 1


@pytest.mark.parametrize("seed", range(8))
def test_s_measure_matches_definition(seed):
    q, y = _pair(seed + 300)
    assert abs(M.s_measure(q, y) - oracles.s_measure(q, y)) <= 1e-9


def test_s_measure_degenerate_gt():
    q = np.full((5, 5), 0.2)
    assert math.isclose(M.s_measure(q, np.zeros((5, 5), np.uint8)), 0.8)
    assert math.isclose(M.s_measure(q, np.ones((5, 5), np.uint8)), 0.2)


# ------------------------------------------------------------ confusion-based

def test_confusion_examples():
    y = half_plane(4)
    assert (M.dice(y, y), M.iou(y, y), M.acc(y, y), M.ber(y, y)) == (1.0, 1.0, 1.0, 0.0)
    q = 1.0 - y
    assert M.ber(q, y) == 1.0 and M.acc(q, y) == 0.0
    q = np.array([[1.0, 1.0, 0.0, 0.0]])
    g = np.array([[1, 0, 0, 0]])
    c = M.confusion(q, g)
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 2, 0)
    assert math.isclose(M.dice(q, g), 2 / 3) and M.iou(q, g) == 0.5
    assert M.acc(q, g) == 0.75 and math.isclose(M.ber(q, g), 1 / 6)


def test_empty_sets():
    z = np.zeros((3, 3))
    assert M.dice(z, z.astype(np.uint8)) == 1.0 and M.iou(z, z.astype(np.uint8)) == 1.0
    assert M.ber(z, z.astype(np.uint8)) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_confusion_matches_loops(seed):
    q, y = _pair(seed + 400)
    ref = oracles.confusion_measures(q, y)
    for name, v in ref.items():
        assert abs(getattr(M, name)(q, y) - v) <= 1e-12


# ------------------------------------------------------------ reports

def test_perfect_report_is_ideal():
    rng = np.random.default_rng(0)
    y = random_mask(rng, 24, 20)
    assert M.evaluate_pair(y.astype(float), y).scores() == IDEAL


def test_report_bounds_property():
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def check(seed):
        q, y = _pair(seed, 10, 9)
        r = M.evaluate_pair(q, y)
        for name, v in r.scores().items():
            assert 0.0 <= v <= 1.0, name
    check()


def test_dataset_mean_and_idempotence():
    y = half_plane(8)
    a = np.where(y == 1, 0.98, 0.0)
    b = np.where(y == 1, 0.96, 0.0)
    assert math.isclose(M.mae(a, y), 0.01) and math.isclose(M.mae(b, y), 0.02)
    rep = M.evaluate_dataset([(a, y), (b, y)])
    assert math.isclose(rep.mae, 0.015)
    single = M.evaluate_dataset([(a, y)])
    assert single.scores() == M.evaluate_pair(a, y).scores()
    assert M.evaluate_dataset([(a, y), (a, y)]).scores() == single.scores()


def test_dataset_mae_hand_values():
    y = np.ones((10, 10), np.uint8)
    a = np.full((10, 10), 0.98)
    b = np.full((10, 10), 0.96)
    assert math.isclose(M.evaluate_dataset([(a, y), (b, y)]).mae, 0.03)


def test_dataset_excludes_empty_gt():
    y = half_plane(8)
    rep = M.evaluate_dataset([(y.astype(float), y), (np.zeros((8, 8)), np.zeros((8, 8), np.uint8))])
    assert rep.n_images == 1 and rep.n_excluded == 1
    assert rep.scores() == IDEAL
    with pytest.raises(DegenerateGroundTruth):
        M.evaluate_dataset([(np.zeros((8, 8)), np.zeros((8, 8), np.uint8))])


def test_dataset_jobs_do_not_change_result():
    pairs = [_pair(s, 16, 16) for s in range(6)]
    assert M.evaluate_dataset(pairs, jobs=1) == M.evaluate_dataset(pairs, jobs=3)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        M.evaluate_pair(np.zeros((4, 4)), np.ones((4, 5), np.uint8))


def test_report_fields():
    assert M.METRIC_NAMES == ("max_f", "weighted_f", "e_measure", "s_measure", "mae", "dice", "iou", "ber", "acc")
    assert isinstance(M.evaluate_pair(*_pair(1)), MetricReport)
