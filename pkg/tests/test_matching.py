import numpy as np
import pytest

from conftest import brute_force_max_matching
from starvox import (
    IouMatrix,
    SceneSpec,
    accuracy_curve,
    generate,
    hungarian_match,
    iou_matrix,
    label_volume,
)


def cubes_volume(shape, boxes):
    data = np.zeros(shape, np.uint32)
    for lab, (z0, z1, y0, y1, x0, x1) in boxes.items():
        data[z0:z1, y0:y1, x0:x1] = lab
    return label_volume(data)


def random_iou_table(rng, n_gt, n_pred, density=0.5):
    entries = {}
    for g in range(1, n_gt + 1):
        for p in range(1, n_pred + 1):
            if rng.random() < density:
                entries[(g, p)] = float(rng.random())
    return IouMatrix(
        gt_ids=np.arange(1, n_gt + 1),
        pred_ids=np.arange(1, n_pred + 1),
        entries=entries,
        gt_sizes={g: 1 for g in range(1, n_gt + 1)},
        pred_sizes={p: 1 for p in range(1, n_pred + 1)},
    )


# --- IoU matrix ---


def test_identity_prediction():
    vol = cubes_volume((10, 10, 10), {1: (0, 4, 0, 4, 0, 4), 2: (5, 9, 5, 9, 5, 9)})
    m = iou_matrix(vol, vol)
    assert m.entries == {(1, 1): 1.0, (2, 2): 1.0}


def test_disjoint_supports_empty_matrix():
    a = cubes_volume((8, 8, 8), {1: (0, 3, 0, 3, 0, 3)})
    b = cubes_volume((8, 8, 8), {1: (5, 8, 5, 8, 5, 8)})
    assert iou_matrix(a, b).entries == {}


def test_half_overlapping_cubes_third():
    a = cubes_volume((12, 12, 12), {1: (0, 10, 0, 10, 0, 10)})
    b = cubes_volume((12, 12, 12), {7: (0, 10, 0, 10, 5, 15)})  # clipped to x=5..12
    m = iou_matrix(a, b)
    # overlap 10*10*5 = 500, sizes 1000 and 700 -> union 1200
    assert m.entries[(1, 7)] == pytest.approx(500 / 1200)

    b_full = cubes_volume((12, 12, 22), {7: (0, 10, 0, 10, 5, 15)})
    a_full = cubes_volume((12, 12, 22), {1: (0, 10, 0, 10, 0, 10)})
    m2 = iou_matrix(a_full, b_full)
    assert m2.entries[(1, 7)] == pytest.approx(500 / 1500)  # = 1/3


def test_shape_mismatch_rejected():
    a = cubes_volume((4, 4, 4), {})
    b = cubes_volume((4, 4, 5), {})
    with pytest.raises(ValueError):
        iou_matrix(a, b)


def test_noncontiguous_ids_preserved():
    a = cubes_volume((8, 8, 8), {17: (0, 4, 0, 4, 0, 4)})
    b = cubes_volume((8, 8, 8), {250: (0, 4, 0, 4, 0, 4)})
    m = iou_matrix(a, b)
    assert m.entries == {(17, 250): 1.0}


# --- Hungarian matching ---


def test_perfect_prediction_accuracy_one():
    vol = cubes_volume((10, 10, 10), {1: (0, 4, 0, 4, 0, 4), 2: (5, 9, 5, 9, 5, 9)})
    rep = accuracy_curve(vol, vol, [0.1 * k for k in range(1, 10)])
    for t in rep.taus:
        assert rep.per_tau[t].accuracy == 1.0


def test_one_gt_no_pred():
    gt = cubes_volume((6, 6, 6), {1: (0, 3, 0, 3, 0, 3)})
    pred = cubes_volume((6, 6, 6), {})
    rep = hungarian_match(iou_matrix(gt, pred), 0.5)
    assert (rep.tp, rep.fp, rep.fn) == (0, 0, 1)
    assert rep.accuracy == 0.0


def test_tau_bounds():
    m = random_iou_table(np.random.Generator(np.random.Philox(0)), 3, 3)
    with pytest.raises(ValueError):
        hungarian_match(m, 0.0)
    with pytest.raises(ValueError):
        hungarian_match(m, 1.1)


def test_tp_matches_brute_force_200_random():
    rng = np.random.Generator(np.random.Philox(99))
    for trial in range(200):
        n_gt = int(rng.integers(0, 8))
        n_pred = int(rng.integers(0, 8))
        m = random_iou_table(rng, n_gt, n_pred, density=float(rng.uniform(0.2, 0.9)))
        tau = float(rng.uniform(0.05, 0.95))
        rep = hungarian_match(m, tau)
        expect = brute_force_max_matching(m.entries, tau)
        assert rep.tp == expect, f"trial {trial}: tp {rep.tp} != brute {expect}"
        assert rep.fp == n_pred - rep.tp and rep.fn == n_gt - rep.tp


def test_one_to_one_matching():
    rng = np.random.Generator(np.random.Philox(7))
    m = random_iou_table(rng, 6, 6, 0.8)
    rep = hungarian_match(m, 0.2)
    gts = [g for g, _, _ in rep.matched_pairs]
    preds = [p for _, p, _ in rep.matched_pairs]
    assert len(gts) == len(set(gts)) and len(preds) == len(set(preds))
    assert rep.tp <= min(m.n_gt, m.n_pred)


def test_cardinality_dominates_total_iou():
    # one high-IoU pair vs two medium pairs: two matches must win
    m = IouMatrix(
        gt_ids=np.array([1, 2]),
        pred_ids=np.array([1, 2]),
        entries={(1, 1): 0.95, (2, 1): 0.5, (1, 2): 0.5},
        gt_sizes={1: 1, 2: 1},
        pred_sizes={1: 1, 2: 1},
    )
    rep = hungarian_match(m, 0.3)
    assert rep.tp == 2
    assert {(g, p) for g, p, _ in rep.matched_pairs} == {(1, 2), (2, 1)}


def test_ties_broken_by_total_iou():
    m = IouMatrix(
        gt_ids=np.array([1]),
        pred_ids=np.array([1, 2]),
        entries={(1, 1): 0.6, (1, 2): 0.9},
        gt_sizes={1: 1},
        pred_sizes={1: 1, 2: 1},
    )
    rep = hungarian_match(m, 0.5)
    assert rep.matched_pairs == [(1, 2, 0.9)]


def test_accuracy_identity_integer():
    rng = np.random.Generator(np.random.Philox(11))
    for _ in range(30):
        m = random_iou_table(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        rep = hungarian_match(m, 0.4)
        assert rep.accuracy * (rep.tp + rep.fp + rep.fn) == pytest.approx(rep.tp, abs=1e-12)


def test_tau_monotonicity_on_scenes(rays96):
    from starvox import object_probability, radial_distances, reconstruct_labels

    labels, _ = generate(SceneSpec(shape=(48, 64, 64), n_objects=8, radius_range=(6, 9), seed=40))
    recon, _ = reconstruct_labels(labels, rays96)
    taus = [0.3, 0.5, 0.7, 0.9]
    rep = accuracy_curve(labels, recon, taus)
    accs = [rep.per_tau[t].accuracy for t in taus]
    assert all(a >= b for a, b in zip(accs, accs[1:]))


def test_accuracy_curve_validation():
    vol = cubes_volume((4, 4, 4), {1: (0, 2, 0, 2, 0, 2)})
    with pytest.raises(ValueError):
        accuracy_curve(vol, vol, [])
    with pytest.raises(ValueError):
        accuracy_curve(vol, vol, [0.5, 2.0])


def test_csv_layout():
    vol = cubes_volume((6, 6, 6), {1: (0, 3, 0, 3, 0, 3)})
    rep = accuracy_curve(vol, vol, [0.1, 0.5, 0.9])
    rows = rep.csv_rows()
    assert rows[0] == "metric,0.1,0.5,0.9"
    assert rows[1] == "accuracy,1.000,1.000,1.000"
