"""Semantic guided neighboring: regroup tokens by routing label and undo it."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, DomainError


@dataclass
class SemanticPlan:
    perm: np.ndarray            # (..., L) unfold order: out[i] = x[perm[i]]
    inv_perm: np.ndarray        # (..., L)
    group_offsets: np.ndarray   # (..., T + 1) start of each group in the unfolded order

    @property
    def length(self) -> int:
        return self.perm.shape[-1]


def build_plan(labels: np.ndarray, T: int) -> SemanticPlan:
    """Stable counting sort of token indices by label, groups in ascending label order."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= T):
        raise DomainError(f"labels must lie in [0, {T})")
    labels = labels.astype(np.int64)
    *lead, L = labels.shape
    onehot = labels[..., None] == np.arange(T)
    counts = onehot.sum(-2)
    offsets = np.zeros((*lead, T + 1), dtype=np.int64)
    np.cumsum(counts, axis=-1, out=offsets[..., 1:])
    # rank of each token among earlier tokens with the same label
    rank = np.take_along_axis(np.cumsum(onehot, axis=-2), labels[..., None], axis=-1)[..., 0] - 1
    dest = np.take_along_axis(offsets, labels, axis=-1) + rank
    idx = np.broadcast_to(np.arange(L), labels.shape)
    perm = np.empty_like(labels)
    np.put_along_axis(perm, dest, idx, axis=-1)
    return SemanticPlan(perm=perm, inv_perm=dest, group_offsets=offsets)


def _check(x: np.ndarray, plan: SemanticPlan) -> None:
    if x.shape[-2] != plan.length or x.shape[:-2] != plan.perm.shape[:-1]:
        raise DimensionError(f"sequence {x.shape} does not match plan of shape {plan.perm.shape}")


def sgn_unfold(x: np.ndarray, plan: SemanticPlan) -> np.ndarray:
    """Gather rows into semantic order: ``out[i] = x[perm[i]]``."""
    _check(x, plan)
    return np.take_along_axis(x, plan.perm[..., None], axis=-2)


def sgn_fold(y: np.ndarray, plan: SemanticPlan) -> np.ndarray:
    """Inverse of :func:`sgn_unfold`; also its adjoint, so it maps gradients back."""
    _check(y, plan)
    return np.take_along_axis(y, plan.inv_perm[..., None], axis=-2)


def write_plan_csv(path, labels: np.ndarray, plan: SemanticPlan, width: int | None = None) -> None:
    """One row per token: raster index (or row/col), label and unfolded position."""
    labels = np.asarray(labels).ravel()
    pos = plan.inv_perm.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if width is None:
            w.writerow(["index", "label", "perm"])
            for i, (lab, p) in enumerate(zip(labels, pos)):
                w.writerow([i, int(lab), int(p)])
        else:
            w.writerow(["row", "col", "label", "perm"])
            for i, (lab, p) in enumerate(zip(labels, pos)):
                w.writerow([i // width, i % width, int(lab), int(p)])
