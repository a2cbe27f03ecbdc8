"""Leave-one-out belief combination shared by the detection stages."""
from __future__ import annotations

import numpy as np

from .denoisers import VAR_FLOOR


def extrinsic_beliefs(h2, h_conj, y_tilde, var_tilde):
    """Extrinsic means/variances per edge, excluding the edge's own row.

    All inputs are (..., N, K) per-edge arrays: ``h2 = |h|^2``, the soft-IC
    observations ``y_tilde`` and their variances ``var_tilde``.  Row sums
    are formed once and the own term subtracted, so the cost is O(N K).

    Returns ``(mean, var, prec_sum, num_sum)``; the last two are the full
    (all-row) sums of shape (..., 1, K) used for the consensus estimate.
    """
    prec = h2 / var_tilde
    num = h_conj * y_tilde / var_tilde
    prec_sum = prec.sum(axis=-2, keepdims=True)
    num_sum = num.sum(axis=-2, keepdims=True)
    var = 1.0 / np.maximum(prec_sum - prec, VAR_FLOOR)
    return (num_sum - num) * var, var, prec_sum, num_sum


def weighted_consensus(prec_sum, num_sum):
    """Precision-weighted combination over all rows: (..., 1, K) -> (..., K)."""
    return num_sum[..., 0, :] / np.maximum(prec_sum[..., 0, :], VAR_FLOOR)
