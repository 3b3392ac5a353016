"""Training losses: ring shape consistency, landmark reprojection, regularizers.

The ring loss hinges every matched pair of shape codes against the slice's
unmatched code: matched squared distances must undercut unmatched ones by the
margin.  The diagonal (j = k) terms are kept; they degenerate to a pure
margin-repulsion on the unmatched code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import Landmarks2D


@dataclass(frozen=True)
class LossWeights:
    shape_consistency: float = 1.0
    reprojection: float = 60.0
    shape_reg: float = 1e-4
    expr_reg: float = 1e-4
    margin: float = 0.5
    conf_threshold: float = 0.41


def shape_consistency_loss(betas: Sequence[Sequence[Tensor]], margin: float) -> Tensor:
    """Hinged matched-vs-unmatched shape-code loss, normalized by n_b * R.

    ``betas`` holds n_b slices of R shape codes each: the first R-1 share one
    identity, the last belongs to another.  The hinge has subgradient zero at
    its kink.
    """
    n_slices = len(betas)
    if n_slices == 0:
        raise ValueError("empty batch")
    ring = len(betas[0])
    if ring < 2:
        raise ValueError("ring must hold at least 2 elements")
    total = None
    for element in betas:
        if len(element) != ring:
            raise ValueError("ragged ring slices")
        unmatched = element[ring - 1]
        for j in range(ring - 1):
            to_unmatched = ad.sum_sq(ad.sub(element[j], unmatched))
            for k in range(ring - 1):
                matched = ad.sum_sq(ad.sub(element[j], element[k]))
                term = ad.relu(ad.add(ad.sub(matched, to_unmatched), margin))
                total = term if total is None else ad.add(total, term)
    return ad.div(total, float(n_slices * ring))


def shape_consistency_loss_oracle(betas: np.ndarray, margin: float) -> float:
    """Direct triple-loop evaluation on an (n_b, R, dim) array; test oracle."""
    n_slices, ring, _ = betas.shape
    total = 0.0
    for i in range(n_slices):
        for j in range(ring - 1):
            for k in range(ring - 1):
                matched = float(np.sum((betas[i, j] - betas[i, k]) ** 2))
                unmatched = float(np.sum((betas[i, j] - betas[i, ring - 1]) ** 2))
                total += max(0.0, matched - unmatched + margin)
    return total / (n_slices * ring)


def reprojection_loss(projected: Tensor, observed: Landmarks2D,
                      conf_threshold: float) -> Tensor:
    """Confidence-gated L1 landmark loss, averaged over all 2L coordinates.

    Landmarks at or below the confidence threshold get weight zero but still
    count in the denominator, so the loss scale does not depend on how many
    detections survived.
    """
    count = len(observed)
    if count == 0:
        raise ValueError("no landmarks")
    if projected.shape != (count, 2):
        raise ValueError("landmark count mismatch")
    weights = (observed.confidence > conf_threshold).astype(float)[:, None]
    residual = ad.t_abs(ad.sub(projected, observed.positions))
    return ad.div(ad.t_sum(ad.mul(weights, residual)), float(2 * count))


@dataclass(eq=False)
class RingElementOutput:
    """Per-element tensors the total loss consumes."""

    beta: Tensor
    psi: Tensor
    projected: Tensor
    observed: Landmarks2D


def total_loss(ring: Sequence[Sequence[RingElementOutput]],
               weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of all loss terms plus a per-term numeric breakdown.

    Reprojection and both regularizers are averaged over every ring element
    of every slice.
    """
    n_elements = sum(len(s) for s in ring)
    if n_elements == 0:
        raise ValueError("empty ring batch")

    sc = shape_consistency_loss([[e.beta for e in s] for s in ring], weights.margin)

    proj_sum = None
    shape_sum = None
    expr_sum = None
    for element in (e for s in ring for e in s):
        proj = reprojection_loss(element.projected, element.observed,
                                 weights.conf_threshold)
        proj_sum = proj if proj_sum is None else ad.add(proj_sum, proj)
        b2 = ad.sum_sq(element.beta)
        shape_sum = b2 if shape_sum is None else ad.add(shape_sum, b2)
        p2 = ad.sum_sq(element.psi)
        expr_sum = p2 if expr_sum is None else ad.add(expr_sum, p2)
    proj_mean = ad.div(proj_sum, float(n_elements))
    shape_mean = ad.div(shape_sum, float(n_elements))
    expr_mean = ad.div(expr_sum, float(n_elements))

    total = ad.add(
        ad.add(ad.mul(weights.shape_consistency, sc),
               ad.mul(weights.reprojection, proj_mean)),
        ad.add(ad.mul(weights.shape_reg, shape_mean),
               ad.mul(weights.expr_reg, expr_mean)))
    breakdown = {
        "total": total.item(),
        "shape_consistency": sc.item(),
        "reprojection": proj_mean.item(),
        "shape_reg": shape_mean.item(),
        "expr_reg": expr_mean.item(),
    }
    return total, breakdown
