import json

import numpy as np
import pytest

from handcast import metrics as m
from oracles import metric_oracle, top_fraction_oracle


def rand_case(rng, T=10, p=0.8):
    gt = rng.normal(size=(T, 42, 3))
    pred = gt + rng.normal(size=gt.shape) * 0.1
    return pred, gt, rng.uniform(size=(T, 42)) < p


def close(a, b, tol=1e-9):
    return (a is None and b is None) or (a is not None and b is not None and abs(a - b) <= tol)


def test_matches_loop_oracle(rng):
    for _ in range(100):
        T = int(rng.integers(1, 11))
        pred, gt, mask = rand_case(rng, T, p=rng.uniform(0.05, 1.0))
        ade, fde, _ = m.trajectory_errors(pred, gt, mask)
        mp, mpf, _ = m.pose_errors(pred, gt, mask)
        ref = metric_oracle(pred.tolist(), gt.tolist(), mask.tolist())
        assert all(close(a, b) for a, b in zip((ade, fde, mp, mpf), ref))


def test_identity(rng):
    _, gt, mask = rand_case(rng)
    mask[:, [0, 21]] = True
    assert m.trajectory_errors(gt, gt, mask)[:2] == (0.0, 0.0)
    assert m.pose_errors(gt, gt, mask)[:2] == (0.0, 0.0)


def test_four_term_case():
    gt = np.zeros((2, 42, 3))
    pred = gt.copy()
    pred[1, 0] = [1.0, 0, 0]
    ade, fde, counts = m.trajectory_errors(pred, gt, np.ones((2, 42), bool))
    assert (ade, fde) == (0.25, 0.5) and counts["wrist_frames"] == 4


def test_fde_skips_invalid_final_wrist():
    gt = np.zeros((2, 42, 3))
    pred = gt.copy()
    pred[1, 0] = [1.0, 0, 0]
    pred[1, 21] = [3.0, 0, 0]
    mask = np.ones((2, 42), bool)
    mask[1, 21] = False
    assert m.trajectory_errors(pred, gt, mask)[1] == 1.0


def test_translation_invariance(rng):
    pred, gt, mask = rand_case(rng)
    shifted = pred + rng.normal(size=(10, 1, 3))
    a, b = m.pose_errors(pred, gt, mask)[:2], m.pose_errors(shifted, gt, mask)[:2]
    assert abs(a[0] - b[0]) < 1e-12 and abs(a[1] - b[1]) < 1e-12


def test_single_joint():
    gt = np.zeros((1, 42, 3))
    pred = gt.copy()
    pred[0, 3] = [0, 0.05, 0]
    mask = np.zeros((1, 42), bool)
    mask[0, [0, 3]] = True
    mp, mpf, counts = m.pose_errors(pred, gt, mask)
    assert mp == pytest.approx(0.05, abs=1e-15) and counts["joint_frames"] == 1


def test_absent_when_nothing_eligible(rng):
    pred, gt, _ = rand_case(rng)
    mask = np.zeros((10, 42), bool)
    mask[:, [0, 21]] = True
    mp, mpf, counts = m.pose_errors(pred, gt, mask)
    assert mp is None and mpf is None and counts["joint_frames"] == 0
    ade, fde, counts = m.trajectory_errors(pred, gt, np.zeros((10, 42), bool))
    assert ade is None and fde is None and counts["wrist_frames"] == 0


def test_single_frame_ade_equals_fde(rng):
    for _ in range(20):
        pred, gt, mask = rand_case(rng, T=1, p=0.7)
        ade, fde, _ = m.trajectory_errors(pred, gt, mask)
        assert ade == fde


def test_invalid_joints_change_nothing(rng):
    pred, gt, mask = rand_case(rng, p=0.6)
    p2 = pred.copy()
    p2[~mask] = 1e9
    g2 = gt.copy()
    g2[~mask] = -1e9
    a = m.sample_metrics("x", pred, gt, mask)
    b = m.sample_metrics("x", p2, g2, mask)
    assert a == b


def test_stratify_examples():
    scores = {f"s{i}": float(i) for i in range(10)}
    assert m.stratify_top_fraction(scores, 0.1) == ["s9"]
    same = {f"s{i}": 1.0 for i in range(10)}
    assert m.stratify_top_fraction(same, 0.2) == ["s0", "s1"]
    with pytest.raises(ValueError):
        m.stratify_top_fraction({}, 0.1)


def test_stratify_matches_sort_oracle(rng):
    for _ in range(50):
        n = int(rng.integers(1, 60))
        # coarse scores so ties are common
        scores = {f"id{int(k):04d}": float(rng.integers(0, 5)) for k in rng.permutation(1000)[:n]}
        f = float(rng.choice([0.05, 0.1, 0.25, 0.5, 1.0]))
        assert m.stratify_top_fraction(scores, f) == top_fraction_oracle(scores, f)


def sm(sid, n, err, ego=0.0):
    return m.SampleMetrics(sid, n * err, n, err, 1, n * err, n, err, 1, ego)


def test_micro_pooling():
    r = m.aggregate_report([sm("a", 1, 0.1), sm("b", 3, 0.2)])
    assert r.mpjpe == pytest.approx(0.175, abs=1e-15)
    assert r.ade == pytest.approx(0.175, abs=1e-15)
    macro = m.aggregate_report([sm("a", 1, 0.1), sm("b", 3, 0.2)], averaging="macro")
    assert macro.mpjpe == pytest.approx(0.15, abs=1e-15)


def test_single_sample_report(rng):
    pred, gt, mask = rand_case(rng)
    r = m.aggregate_report([m.sample_metrics("x", pred, gt, mask)])
    ade, fde, _ = m.trajectory_errors(pred, gt, mask)
    mp, mpf, _ = m.pose_errors(pred, gt, mask)
    assert (r.ade, r.fde, r.mpjpe, r.mpjpe_f) == (ade, fde, mp, mpf)


def test_strata_and_round_trip():
    per = [sm(f"s{i}", 2, 0.01 * i, ego=float(i)) for i in range(20)]
    strata = m.egomotion_strata(per, 0.1)
    assert set(strata) == {"top10", "all"}
    assert strata["top10"] == ["s19", "s18"]
    r = m.aggregate_report(per, strata)
    assert r.strata["all"].mpjpe == r.mpjpe and r.strata["all"].n_samples == r.n_samples
    assert r.strata["top10"].n_samples == 2
    d = json.loads(r.to_json())
    assert d["report_version"] == 1 and d["config"]["averaging"] == "micro"
    back = m.Report.from_dict(d)
    assert back.to_json() == r.to_json()


def test_unknown_averaging():
    with pytest.raises(ValueError):
        m.aggregate_report([sm("a", 1, 0.1)], averaging="median")
