import itertools

import numpy as np
import pytest

from handcast import objectives as ob
from handcast.nnkernel.gradcheck import numeric_gradient, relative_error
from handcast.objectives import LossWeights


def case(rng, T=3, p_valid=0.8):
    gt = rng.normal(size=(T, 42, 3)) * 0.1
    pred = gt + rng.normal(size=gt.shape) * 0.05
    mask = rng.uniform(size=(T, 42)) < p_valid
    return pred, gt, mask


def loop_oracle(pred, gt, mask):
    """Direct per-term loops over the definitions."""
    a_sum = a_n = r_sum = r_n = p_sum = p_n = 0.0
    T = pred.shape[0]
    for t in range(T):
        for j in range(42):
            if mask[t, j]:
                a_sum += sum(abs(pred[t, j, k] - gt[t, j, k]) for k in range(3))
                a_n += 1
        for w in (0, 21):
            if not mask[t, w]:
                continue
            for j in range(w + 1, w + 21):
                if mask[t, j]:
                    r_sum += sum(abs((pred[t, j, k] - pred[t, w, k]) - (gt[t, j, k] - gt[t, w, k])) for k in range(3))
                    r_n += 1
            for i, j in itertools.combinations(range(w, w + 21), 2):
                if mask[t, i] and mask[t, j]:
                    d = np.linalg.norm(pred[t, i] - pred[t, j]) - np.linalg.norm(gt[t, i] - gt[t, j])
                    p_sum += d * d
                    p_n += 1
        # pairs in a hand whose wrist is invalid still count
        for w in (0, 21):
            if mask[t, w]:
                continue
            for i, j in itertools.combinations(range(w, w + 21), 2):
                if mask[t, i] and mask[t, j]:
                    d = np.linalg.norm(pred[t, i] - pred[t, j]) - np.linalg.norm(gt[t, i] - gt[t, j])
                    p_sum += d * d
                    p_n += 1
    f = lambda s, n: s / n if n else 0.0
    return f(a_sum, a_n), f(r_sum, r_n), f(p_sum, p_n)


def test_pair_set():
    pairs = ob.intra_hand_pairs()
    assert pairs.shape == (420, 2)
    assert np.all(pairs[:, 0] < pairs[:, 1])
    assert np.all((pairs[:, 0] < 21) == (pairs[:, 1] < 21))
    assert len({tuple(p) for p in pairs}) == 420


def test_terms_match_loop_oracle(rng):
    for _ in range(3):
        pred, gt, mask = case(rng, T=2, p_valid=0.7)
        A, R, P = loop_oracle(pred, gt, mask)
        assert abs(ob.loss_abs(pred, gt, mask) - A) < 1e-12
        assert abs(ob.loss_rel(pred, gt, mask) - R) < 1e-12
        assert abs(ob.loss_pair(pred, gt, mask) - P) < 1e-12


def test_identity_is_zero(rng):
    _, gt, mask = case(rng)
    b = ob.loss_total(gt, gt, mask)
    assert b.total == 0.0 and b.abs == 0.0 and b.rel == 0.0 and b.pair == 0.0


def test_constant_offset():
    gt = np.zeros((2, 42, 3))
    assert ob.loss_abs(gt + [0.1, 0, 0], gt, np.ones((2, 42), bool)) == pytest.approx(0.1, abs=1e-15)


def test_rel_single_offset():
    gt = np.zeros((1, 42, 3))
    pred = gt.copy()
    pred[0, 5] = [0, 0.2, 0]
    mask = np.zeros((1, 42), bool)
    mask[0, :21] = True
    # 20 eligible finger joints on the left hand, one carries 0.2
    assert ob.loss_rel(pred, gt, mask) == pytest.approx(0.2 / 20, abs=1e-15)


def test_rel_skips_frames_with_invalid_wrist(rng):
    pred, gt, mask = case(rng, T=2, p_valid=1.0)
    mask[1, 0] = False
    before = ob.loss_rel(pred, gt, mask)
    pred2 = pred.copy()
    pred2[1, 1:21] += 5.0  # left fingers in frame 1 move, their wrist is invalid
    assert ob.loss_rel(pred2, gt, mask) == before


def test_rel_translation_invariance(rng):
    pred, gt, mask = case(rng)
    shift = rng.normal(size=(pred.shape[0], 1, 3))
    assert abs(ob.loss_rel(pred + shift, gt, mask) - ob.loss_rel(pred, gt, mask)) < 1e-12


def test_rel_per_hand_translation_invariance(rng):
    pred, gt, mask = case(rng)
    moved = pred.copy()
    moved[:, :21] += rng.normal(size=(pred.shape[0], 1, 3))
    moved[:, 21:] += rng.normal(size=(pred.shape[0], 1, 3))
    assert abs(ob.loss_rel(moved, gt, mask) - ob.loss_rel(pred, gt, mask)) < 1e-12


def rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.linalg.det(q))


def test_pair_rigid_invariance(rng):
    _, gt, mask = case(rng)
    moved = np.stack([gt[t] @ rotation(rng).T + rng.normal(size=3) for t in range(gt.shape[0])])
    assert ob.loss_pair(moved, gt, mask) < 1e-12


def test_pair_single_arithmetic():
    gt = np.zeros((1, 42, 3))
    gt[0, 1] = [1.0, 0, 0]
    pred = np.zeros((1, 42, 3))
    pred[0, 1] = [1.1, 0, 0]
    mask = np.zeros((1, 42), bool)
    mask[0, [0, 1]] = True
    assert ob.loss_pair(pred, gt, mask) == pytest.approx(0.01, abs=1e-15)


def test_weight_projection_is_bitwise(rng):
    pred, gt, mask = case(rng)
    assert ob.loss_total(pred, gt, mask, LossWeights(1, 0, 0)).total == ob.loss_abs(pred, gt, mask)


def test_recomposition(rng):
    pred, gt, mask = case(rng)
    A, R, P = ob.loss_abs(pred, gt, mask), ob.loss_rel(pred, gt, mask), ob.loss_pair(pred, gt, mask)
    assert ob.loss_total(pred, gt, mask).total == pytest.approx(0.6 * A + 0.2 * R + 0.2 * P, abs=1e-15)


def test_empty_terms_flagged():
    z = np.zeros((2, 42, 3))
    b = ob.loss_total(z + 1, z, np.zeros((2, 42), bool))
    assert b.total == 0.0 and b.flags == {"abs_empty": True, "rel_empty": True, "pair_empty": True}


def test_batch_is_mean_of_samples(rng):
    cases = [case(rng) for _ in range(3)]
    pred, gt, mask = (np.stack(x) for x in zip(*cases))
    each = [ob.loss_total(*c).total for c in cases]
    assert ob.loss_total(pred, gt, mask).total == pytest.approx(np.mean(each), abs=1e-15)


def test_scaling_law(rng):
    pred, gt, mask = case(rng)
    s = 2.5
    assert abs(ob.loss_abs(s * pred, s * gt, mask) - s * ob.loss_abs(pred, gt, mask)) < 1e-12
    assert abs(ob.loss_rel(s * pred, s * gt, mask) - s * ob.loss_rel(pred, gt, mask)) < 1e-12
    assert abs(ob.loss_pair(s * pred, s * gt, mask) - s * s * ob.loss_pair(pred, gt, mask)) < 1e-12


def test_masked_values_change_nothing(rng):
    pred, gt, mask = case(rng, p_valid=0.6)
    junk_p, junk_g = pred.copy(), gt.copy()
    junk_p[~mask] = rng.normal(size=(np.count_nonzero(~mask), 3)) * 100
    junk_g[~mask] = np.nan
    a, ga = ob.loss_and_gradient(pred, gt, mask)
    b, gb = ob.loss_and_gradient(junk_p, junk_g, mask)
    assert a.as_dict() == b.as_dict()
    assert np.array_equal(ga, gb)
    assert np.all(ga[~mask] == 0.0)


def kink_free(rng, B=2, T=2):
    """Offsets keep every l1 residual at least 0.015 away from zero."""
    gt = rng.normal(size=(B, T, 42, 3)) * 0.1
    off = rng.choice([-1.0, 1.0], size=gt.shape) * rng.uniform(0.02, 0.07, size=gt.shape)
    off[:, :, [0, 21]] = 0.005
    mask = rng.uniform(size=(B, T, 42)) < 0.8
    return gt + off, gt, mask


def test_gradient_matches_finite_differences(rng):
    for weights in (LossWeights(), LossWeights(1, 0, 0), LossWeights(0, 1, 0), LossWeights(0, 0, 1)):
        pred, gt, mask = kink_free(rng)
        analytic = ob.loss_gradient(pred, gt, mask, weights)
        numeric = numeric_gradient(lambda: ob.loss_total(pred, gt, mask, weights).total, pred)
        assert relative_error(analytic, numeric) < 1e-4


def test_pair_gradient_zero_at_fit(rng):
    _, gt, mask = case(rng)
    assert np.all(ob.loss_gradient(gt, gt, mask, LossWeights(0, 0, 1)) == 0.0)


def test_shared_path_agrees(rng):
    pred, gt, mask = case(rng)
    both, grad = ob.loss_and_gradient(pred, gt, mask)
    assert both.total == ob.loss_total(pred, gt, mask).total
    assert np.array_equal(grad, ob.loss_gradient(pred, gt, mask))


def test_losses_non_negative(rng):
    for _ in range(5):
        b = ob.loss_total(*case(rng))
        assert min(b.abs, b.rel, b.pair) >= 0


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.2, 0.2)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ob.loss_abs(np.zeros((2, 42, 3)), np.zeros((3, 42, 3)), np.ones((2, 42), bool))
