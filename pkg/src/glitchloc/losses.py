"""Training losses; every normalizer counts true (unpadded) frames only."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray

MAP_KINDS = ("p", "c", "pc")


@dataclass
class LossWeights:
    contrastive: float = 0.1  # lambda_c
    frame: float = 2.0  # lambda_f
    boundary: float = 1.0  # lambda_b
    multimodal_boundary: float = 1.0  # lambda_bm
    margin: float = 0.99  # delta

    def validate(self):
        for name in ("contrastive", "frame", "boundary", "multimodal_boundary"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be a finite nonnegative number")
        if not (math.isfinite(self.margin) and self.margin > 0):
            raise ValueError("margin must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def frame_mask(lengths, T: int) -> np.ndarray:
    """(B, T) float mask of valid frames."""
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


def map_mask(lengths, D: int, T: int) -> np.ndarray:
    """(B, D, T) mask of cells whose candidate [j, j+i] lies inside the clip."""
    last = np.asarray(lengths)[:, None, None] - 1
    return ((np.arange(T)[None, None, :] + np.arange(D)[None, :, None]) <= last).astype(np.float64)


def contrastive_loss(z_v, z_a, labels, margin: float, lengths) -> DiffArray:
    """Margin contrastive loss on per-frame audio-visual latent distances.

    Positive pairs (label 1) pay d^2, negative pairs max(margin - d, 0)^2,
    with d the channel-wise L2 distance at each valid frame.
    """
    z_v, z_a = ad.as_array(z_v), ad.as_array(z_a)
    if z_v.shape != z_a.shape:
        raise ad.ShapeError("contrastive_loss", z_v.shape, z_a.shape)
    b, c_f, t = z_v.shape
    mask = frame_mask(lengths, t)
    y = np.asarray(labels, dtype=np.float64)[:, None]
    diff = z_v - z_a
    sq_dist = ad.sum(ad.square(diff), axis=1)  # (B, T)
    dist = ad.l2norm(diff, axis=1)
    hinge = ad.square(ad.relu(margin - dist))
    per_frame = sq_dist * (y * mask) + hinge * ((1.0 - y) * mask)
    return ad.sum(per_frame) * (1.0 / (c_f * mask.sum()))


def frame_loss(pred_v, pred_a, label_v, label_a, lengths) -> DiffArray:
    """Binary cross-entropy over both modalities' valid frames, / (2 * sum of lengths)."""
    pred_v, pred_a = ad.as_array(pred_v), ad.as_array(pred_a)
    mask = frame_mask(lengths, pred_v.shape[-1])
    total = ad.sum(ad.binary_cross_entropy(pred_v, label_v) * mask) + ad.sum(
        ad.binary_cross_entropy(pred_a, label_a) * mask
    )
    return total * (1.0 / (2.0 * mask.sum()))


def _masked_sq_sum(pred, label, mask) -> DiffArray:
    return ad.sum(ad.squared_error(pred, ad.constant(label)) * mask)


def boundary_loss(fused: dict, label: np.ndarray, lengths) -> DiffArray:
    """Squared error of the three fused maps, / (3 * D * sum of lengths)."""
    b, d, t = label.shape
    mask = map_mask(lengths, d, t)
    total = _masked_sq_sum(fused["p"], label, mask)
    for kind in MAP_KINDS[1:]:
        total = total + _masked_sq_sum(fused[kind], label, mask)
    return total * (1.0 / (3.0 * d * float(np.sum(lengths))))


def multimodal_boundary_loss(maps_v: dict, maps_a: dict, label_v: np.ndarray, label_a: np.ndarray, lengths) -> DiffArray:
    """Squared error of all six per-modality maps, / (2 * D * sum of lengths)."""
    b, d, t = label_v.shape
    mask = map_mask(lengths, d, t)
    total = None
    for maps, label in ((maps_v, label_v), (maps_a, label_a)):
        for kind in MAP_KINDS:
            term = _masked_sq_sum(maps[kind], label, mask)
            total = term if total is None else total + term
    return total * (1.0 / (2.0 * d * float(np.sum(lengths))))


@dataclass
class LossParts:
    contrastive: DiffArray
    frame: DiffArray
    boundary: DiffArray
    multimodal_boundary: DiffArray
    total: DiffArray

    def values(self) -> dict[str, float]:
        return {
            "contrastive": self.contrastive.item(),
            "frame": self.frame.item(),
            "boundary": self.boundary.item(),
            "multimodal_boundary": self.multimodal_boundary.item(),
            "total": self.total.item(),
        }


def total_loss(parts: dict, weights: LossWeights) -> DiffArray:
    """L = lambda_b L_b + lambda_bm L_bm + lambda_f L_f + lambda_c L_c."""
    for name in ("boundary", "multimodal_boundary", "frame", "contrastive"):
        value = ad.as_array(parts[name]).value
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"loss part {name!r} is not finite")
    return (
        ad.as_array(parts["boundary"]) * weights.boundary
        + ad.as_array(parts["multimodal_boundary"]) * weights.multimodal_boundary
        + ad.as_array(parts["frame"]) * weights.frame
        + ad.as_array(parts["contrastive"]) * weights.contrastive
    )


def compute_losses(outputs, targets: dict, weights: LossWeights) -> LossParts:
    """All four losses plus the weighted total for one batch of model outputs."""
    lengths = targets["lengths"]
    parts = {
        "contrastive": contrastive_loss(outputs.z_visual, outputs.z_audio, targets["contrastive"], weights.margin, lengths),
        "frame": frame_loss(outputs.frame_visual, outputs.frame_audio, targets["frame_visual"], targets["frame_audio"], lengths),
        "boundary": boundary_loss(outputs.fused, targets["bm"], lengths),
        "multimodal_boundary": multimodal_boundary_loss(
            outputs.maps_visual, outputs.maps_audio, targets["bm_visual"], targets["bm_audio"], lengths
        ),
    }
    return LossParts(total=total_loss(parts, weights), **parts)
