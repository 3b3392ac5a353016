import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headfit import autodiff as ad
from headfit.autodiff import Tensor
from headfit.camera import Landmarks2D
from headfit.losses import (LossWeights, RingElementOutput, reprojection_loss,
                            shape_consistency_loss,
                            shape_consistency_loss_oracle, total_loss)


def _wrap(betas: np.ndarray):
    return [[Tensor(b) for b in chunk] for chunk in betas]


def test_margin_satisfied_gives_zero():
    # matched codes coincide, unmatched is 1.0 away in squared distance
    betas = np.zeros((1, 3, 2))
    betas[0, 2] = [1.0, 0.0]
    loss = shape_consistency_loss(_wrap(betas), margin=0.5)
    assert loss.item() == 0.0


def test_collapsed_unmatched_hits_margin():
    betas = np.zeros((1, 3, 4))  # all three codes identical
    loss = shape_consistency_loss(_wrap(betas), margin=0.5)
    assert loss.item() == pytest.approx(2.0 / 3.0)


def test_matches_triple_loop_oracle(rng):
    for _ in range(100):
        betas = rng.normal(size=(2, 4, 5))
        ours = shape_consistency_loss(_wrap(betas), margin=0.5).item()
        oracle = shape_consistency_loss_oracle(betas, margin=0.5)
        assert abs(ours - oracle) < 1e-12


def test_ring_of_two_rejected_only_below_two():
    with pytest.raises(ValueError):
        shape_consistency_loss(_wrap(np.zeros((1, 1, 3))), margin=0.5)
    shape_consistency_loss(_wrap(np.zeros((1, 2, 3))), margin=0.5)


def test_loss_non_negative_and_zero_iff_margin_met(rng):
    for _ in range(50):
        betas = rng.normal(size=(1, 3, 4))
        loss = shape_consistency_loss(_wrap(betas), margin=0.3).item()
        assert loss >= 0.0
        margin_met = all(
            np.sum((betas[0, j] - betas[0, k]) ** 2) + 0.3
            <= np.sum((betas[0, j] - betas[0, 2]) ** 2) + 1e-15
            for j in range(2) for k in range(2))
        assert (loss == 0.0) == margin_met


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 23))
def test_matched_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    betas = rng.normal(size=(1, 4, 3))
    base = shape_consistency_loss(_wrap(betas), margin=0.5).item()
    perm = betas.copy()
    perm[0, :3] = perm[0, np.array([2, 0, 1])]
    assert shape_consistency_loss(_wrap(perm), margin=0.5).item() \
        == pytest.approx(base, abs=1e-12)


def test_scaling_betas_scales_hinge_first_terms(rng):
    # scaling a slice by c > 1 multiplies every pairwise sq distance by c^2
    betas = rng.normal(size=(1, 4, 3))
    scaled = 1.7 * betas
    for j in range(3):
        for k in range(3):
            d = np.sum((betas[0, j] - betas[0, k]) ** 2)
            ds = np.sum((scaled[0, j] - scaled[0, k]) ** 2)
            assert ds == pytest.approx(1.7 ** 2 * d)


def test_shape_consistency_gradient(rng):
    flat0 = rng.normal(size=12)

    def f(flat):
        chunk = [flat[0:4], flat[4:8], flat[8:12]]
        return shape_consistency_loss([chunk], margin=0.5)

    # keep away from hinge kinks
    if any(abs(v) < 1e-4 for v in _hinge_args(flat0.reshape(3, 4), 0.5)):
        flat0 = flat0 + 0.1
    assert ad.grad_check(f, flat0) < 1e-4


def _hinge_args(chunk: np.ndarray, margin: float):
    out = []
    for j in range(len(chunk) - 1):
        for k in range(len(chunk) - 1):
            out.append(np.sum((chunk[j] - chunk[k]) ** 2)
                       - np.sum((chunk[j] - chunk[-1]) ** 2) + margin)
    return out


# ---------------------------------------------------------------------------
# reprojection


def test_reprojection_hand_example():
    projected = Tensor(np.array([[3.0, 4.0], [0.0, 0.0]]))
    observed = Landmarks2D(np.zeros((2, 2)), np.ones(2))
    loss = reprojection_loss(projected, observed, 0.41)
    assert loss.item() == pytest.approx(1.75)


def test_reprojection_all_unconfident_is_zero(rng):
    projected = Tensor(rng.normal(size=(5, 2)))
    observed = Landmarks2D(rng.normal(size=(5, 2)), np.full(5, 0.41))
    assert reprojection_loss(projected, observed, 0.41).item() == 0.0


def test_reprojection_exact_match_is_zero(rng):
    pts = rng.normal(size=(7, 2))
    loss = reprojection_loss(Tensor(pts), Landmarks2D(pts, np.ones(7)), 0.41)
    assert loss.item() == 0.0


def test_reprojection_invariant_to_zero_weight_positions(rng):
    pts = rng.normal(size=(6, 2))
    conf = np.array([1.0, 1.0, 0.0, 1.0, 0.2, 1.0])
    base = reprojection_loss(Tensor(pts), Landmarks2D(np.zeros((6, 2)), conf),
                             0.41).item()
    moved = np.zeros((6, 2))
    moved[2] = [500.0, -1e4]
    moved[4] = [3.0, 3.0]
    shifted = reprojection_loss(Tensor(pts), Landmarks2D(moved, conf),
                                0.41).item()
    assert shifted == pytest.approx(base)


def test_reprojection_empty_rejected():
    with pytest.raises(ValueError):
        reprojection_loss(Tensor(np.zeros((0, 2))),
                          Landmarks2D(np.zeros((0, 2)), np.zeros(0)), 0.41)


def test_reprojection_gradient(rng):
    observed = Landmarks2D(rng.normal(size=(4, 2)),
                           np.array([1.0, 0.0, 1.0, 1.0]))

    def f(flat):
        return reprojection_loss(flat.reshape((4, 2)), observed, 0.41)

    assert ad.grad_check(f, rng.normal(size=8)) < 1e-4


# ---------------------------------------------------------------------------
# total loss


def _element(beta, psi, projected, observed_pts, conf):
    return RingElementOutput(Tensor(beta), Tensor(psi), Tensor(projected),
                             Landmarks2D(observed_pts, conf))


def test_total_loss_collapsed_case():
    # zero params, perfect landmarks, unmatched collapsed onto matched:
    # only the hinge terms survive
    weights = LossWeights()
    n_b, ring = 2, 4
    pts = np.array([[1.0, 2.0], [3.0, 4.0]])
    ringo = [[_element(np.zeros(3), np.zeros(2), pts, pts, np.ones(2))
              for _ in range(ring)] for _ in range(n_b)]
    total, breakdown = total_loss(ringo, weights)
    expect = weights.shape_consistency * (
        weights.margin * (ring - 1) ** 2 * n_b) / (n_b * ring)
    assert total.item() == pytest.approx(expect)
    assert breakdown["reprojection"] == 0.0
    assert breakdown["shape_reg"] == 0.0


def test_total_loss_zero_weights(rng):
    weights = LossWeights(shape_consistency=0.0, reprojection=0.0,
                          shape_reg=0.0, expr_reg=0.0)
    ringo = [[_element(rng.normal(size=3), rng.normal(size=2),
                       rng.normal(size=(2, 2)), rng.normal(size=(2, 2)),
                       np.ones(2)) for _ in range(3)]]
    total, _ = total_loss(ringo, weights)
    assert total.item() == 0.0


def test_total_loss_matches_componentwise_oracle(rng):
    weights = LossWeights()
    n_b, ring, dim_b, dim_p, n_lm = 2, 3, 4, 2, 5
    betas = rng.normal(size=(n_b, ring, dim_b))
    psis = rng.normal(size=(n_b, ring, dim_p))
    projs = rng.normal(size=(n_b, ring, n_lm, 2))
    obs = rng.normal(size=(n_b, ring, n_lm, 2))
    confs = (rng.random((n_b, ring, n_lm)) > 0.3).astype(float)

    ringo = [[_element(betas[i, j], psis[i, j], projs[i, j], obs[i, j],
                       confs[i, j]) for j in range(ring)] for i in range(n_b)]
    total, breakdown = total_loss(ringo, weights)

    sc = shape_consistency_loss_oracle(betas, weights.margin)
    proj_terms = []
    for i in range(n_b):
        for j in range(ring):
            w = (confs[i, j] > weights.conf_threshold).astype(float)[:, None]
            proj_terms.append(np.sum(w * np.abs(projs[i, j] - obs[i, j]))
                              / (2 * n_lm))
    expect = (weights.shape_consistency * sc
              + weights.reprojection * np.mean(proj_terms)
              + weights.shape_reg * np.mean([np.sum(b ** 2)
                                             for chunk in betas for b in chunk])
              + weights.expr_reg * np.mean([np.sum(p ** 2)
                                            for chunk in psis for p in chunk]))
    assert total.item() == pytest.approx(expect, abs=1e-12)
    assert breakdown["shape_consistency"] == pytest.approx(sc, abs=1e-12)


def test_loss_weight_defaults_match_training_setup():
    weights = LossWeights()
    assert weights.shape_consistency == 1.0
    assert weights.reprojection == 60.0
    assert weights.shape_reg == pytest.approx(1e-4)
    assert weights.expr_reg == pytest.approx(1e-4)
    assert weights.margin == 0.5
    assert weights.conf_threshold == 0.41
