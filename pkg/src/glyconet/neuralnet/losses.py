"""Class-balanced focal loss with its exact logit gradient.

The loss for one sample with true class y and predicted distribution p is
-alpha_y * (1 - p_y)**gamma * log(p_y), averaged over the batch. gamma=0 and
uniform alpha recover plain cross-entropy through the very same code path.

Because the softmax is folded in analytically, the returned gradient is with
respect to the logits:

    d(loss)/d(logit_j) = alpha_y / B * (p_j - [j == y]) *
        ((1 - p_y)**gamma - gamma * p_y * (1 - p_y)**(gamma - 1) * log(p_y))
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def balanced_alpha(class_counts: np.ndarray) -> np.ndarray:
    """Inverse-frequency class weights alpha_c = N / (C * N_c).

    A class absent from the training scope gets weight 0 with a warning; it
    can then never dominate nor produce a division blow-up.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ValueError("class_counts must be a 1-D array with one entry per class")
    if (counts < 0).any():
        raise ValueError("class counts cannot be negative")
    total = counts.sum()
    if total == 0:
        raise ValueError("all class counts are zero")
    present = counts > 0
    if not present.all():
        logger.warning("classes %s have no training samples; their loss weight is 0",
                       np.flatnonzero(~present).tolist())
    alpha = np.zeros_like(counts)
    alpha[present] = total / (counts.size * counts[present])
    return alpha


def focal_loss(probs: np.ndarray, labels: np.ndarray, gamma: float = 2.0,
               alpha: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean focal loss and its gradient with respect to the logits."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError("probs must be (batch, n_classes) with one label per row")
    if gamma < 0:
        raise ValueError("gamma cannot be negative")
    batch, n_classes = probs.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    if alpha is None:
        alpha_y = np.ones(batch)
    else:
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (n_classes,):
            raise ValueError("alpha must hold one weight per class")
        alpha_y = alpha[labels]

    rows = np.arange(batch)
    p_y = np.clip(probs[rows, labels], PROB_FLOOR, 1.0)
    log_p = np.log(p_y)
    one_minus = 1.0 - p_y
    focus = one_minus ** gamma
    loss = float(np.mean(-alpha_y * focus * log_p))

    if gamma == 0.0:
        scale = np.ones(batch)
    else:
        # lim p->1 of the (1-p)**(gamma-1) term is 0 for gamma > 0: the
        # sample is solved and contributes no gradient.
        edge = np.where(one_minus > 0.0, one_minus ** (gamma - 1.0), 0.0)
        scale = focus - gamma * p_y * edge * log_p
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= (alpha_y * scale / batch)[:, None]
    return loss, dlogits


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Plain mean cross-entropy; equals `focal_loss` at gamma=0, alpha=None."""
    return focal_loss(probs, labels, gamma=0.0, alpha=None)
