"""Sigmoid focal classification, L1 box regression, matching cost and the ray-denoising loss.

Background is the all-zero target vector (no explicit 'no object' logit).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..raydn import POSITIVE, RayQueryGroup
from . import tape as T
from .model import HeadOutput, ShapeError, box_target

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
BACKGROUND = -1
BOX_CODE = (1.0, 1.0, 1.0, 0.2, 0.2, 0.2, 0.2, 0.2)  # centers dominate; sizes and yaw are easy


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    l1: float = 0.25  # box regression weight in the loss
    match_l1: float = 2.0  # box weight in the Hungarian cost
    denoise: float = 1.0  # relative to the matching loss
    code: tuple = BOX_CODE  # per-component weights of the regressed box vector


def one_hot_targets(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    t = np.zeros((len(labels), n_classes))
    fg = labels >= 0
    t[np.flatnonzero(fg), labels[fg]] = 1.0
    return t


def focal_loss(class_logits, labels, gamma=FOCAL_GAMMA, alpha=FOCAL_ALPHA, normalizer=None) -> T.Var:
    """Sigmoid focal loss summed over queries x classes, divided by max(#positives, 1).

    ``labels`` holds a class id per query, or BACKGROUND (-1).
    """
    x = class_logits
    labels = np.asarray(labels, dtype=np.int64)
    t = one_hot_targets(labels, x.shape[1])
    if normalizer is None:
        normalizer = max(int((labels >= 0).sum()), 1)
    p = T.sigmoid(x)
    ce = T.add(T.mul(T.log_sigmoid(x), -t), T.mul(T.log_sigmoid(T.mul(x, -1.0)), -(1.0 - t)))
    loss = ce
    if gamma != 0.0:
        p_t = T.add(T.mul(p, t), T.mul(T.sub(1.0, p), 1.0 - t))
        loss = T.mul(loss, T.power(T.sub(1.0, p_t), gamma))
    if alpha >= 0.0:
        loss = T.mul(loss, alpha * t + (1.0 - alpha) * (1.0 - t))
    return T.mul(T.sum_(loss), 1.0 / normalizer)


def l1_loss(box, targets: np.ndarray, normalizer: float, code=None) -> T.Var:
    err = T.abs_(T.sub(box, targets))
    if code is not None:
        err = T.mul(err, np.asarray(code, dtype=np.float64))
    return T.mul(T.sum_(err), 1.0 / normalizer)


def _np_log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def matching_cost(class_logits: np.ndarray, box: np.ndarray, gt_labels, gt_targets: np.ndarray, l1_weight=2.0,
                  gamma=FOCAL_GAMMA, alpha=FOCAL_ALPHA, code=BOX_CODE) -> np.ndarray:
    """(n_query, n_gt) cost: focal class cost + l1_weight * code-weighted L1 over the
    normalised box vector."""
    p = 1.0 / (1.0 + np.exp(-class_logits))
    neg = (1.0 - alpha) * p**gamma * -_np_log_sigmoid(-class_logits)
    pos = alpha * (1.0 - p) ** gamma * -_np_log_sigmoid(class_logits)
    gt_labels = np.asarray(gt_labels, dtype=np.int64)
    cls_cost = pos[:, gt_labels] - neg[:, gt_labels]
    err = np.abs(box[:, None, :] - gt_targets[None, :, :])
    if code is not None:
        err = err * np.asarray(code, dtype=np.float64)
    box_cost = err.sum(axis=2)
    return cls_cost + l1_weight * box_cost


def set_loss(out: HeadOutput, query_idx, gt_labels, gt_targets, weights: LossWeights) -> tuple[T.Var, T.Var]:
    """(classification, regression) loss of object queries given a fixed matching."""
    n = len(out)
    labels = np.full(n, BACKGROUND, dtype=np.int64)
    query_idx = np.asarray(query_idx, dtype=np.int64)
    labels[query_idx] = gt_labels
    norm = max(len(query_idx), 1)
    cls = T.mul(focal_loss(out.class_logits, labels, normalizer=norm), weights.cls)
    if len(query_idx):
        reg = T.mul(l1_loss(out.box[query_idx], gt_targets, norm, weights.code), weights.l1)
    else:
        reg = T.mul(T.sum_(out.box), 0.0)
    return cls, reg


def denoising_targets(groups: Sequence[RayQueryGroup], prange):
    labels, targets = [], []
    for g in groups:
        tgt = box_target(g.target, prange)
        for lab in g.labels:
            labels.append(g.target.class_id if lab == POSITIVE else BACKGROUND)
            targets.append(tgt)
    return np.asarray(labels, dtype=np.int64), np.asarray(targets).reshape(-1, 8)


def denoising_loss(groups: Sequence[RayQueryGroup], outputs: HeadOutput, prange, weights: LossWeights = LossWeights()) -> T.Var:
    """Focal loss (positive -> GT class, others -> background) plus L1 toward the
    group's GT box for every ray query, positives and negatives alike.
    The focal term is normalised by the number of groups (one positive each),
    the L1 term by the number of ray queries."""
    labels, targets = denoising_targets(groups, prange)
    if len(labels) != len(outputs):
        raise ShapeError(f"{len(labels)} ray queries in groups but {len(outputs)} outputs")
    norm = max(len(groups), 1)
    cls = T.mul(focal_loss(outputs.class_logits, labels, normalizer=norm), weights.cls)
    reg = T.mul(l1_loss(outputs.box, targets, max(len(labels), 1), weights.code), weights.l1)
    return T.add(cls, reg)
