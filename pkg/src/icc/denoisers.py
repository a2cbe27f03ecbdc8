"""Scalar denoisers, damping and EM mean updates used by every GaBP stage.

All functions broadcast elementwise, so they can be applied to whole
per-edge matrices at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class PriorGaussian:
    mean: complex
    var: float


def qpsk_denoise(mean, var, data_power: float):
    """Posterior mean and MSE of a Gray QPSK symbol given a Gaussian belief.

    Parameters
    ----------
    mean, var : array_like
        Extrinsic belief ``CN(mean, var)`` about the symbol.
    data_power : float
        Average symbol energy E_D; each quadrature has magnitude sqrt(E_D/2).

    Returns
    -------
    estimate : ndarray
        ``c (tanh(2 c Re(mean)/var) + j tanh(2 c Im(mean)/var))``.
    mse : ndarray
        ``E_D - |estimate|^2``, always within [0, E_D].
    """
    c = np.sqrt(data_power / 2.0)
    mean = np.asarray(mean)
    gain = 2.0 * c / np.asarray(var)
    est = c * (np.tanh(gain * mean.real) + 1j * np.tanh(gain * mean.imag))
    mse = np.clip(data_power - np.abs(est) ** 2, 0.0, data_power)
    return est, mse


def gaussian_denoise(mean, var, prior_mean, prior_var):
    """Combine a Gaussian belief with a Gaussian prior; returns (mean, var)."""
    var = np.asarray(var, dtype=float)
    total = var + prior_var
    if np.any(total == 0):
        raise DegenerateInputError("belief and prior variances are both zero")
    est = (prior_var * np.asarray(mean) + var * prior_mean) / total
    return est, prior_var * var / total


def damp(new, old, beta: float):
    """Convex blend ``beta * new + (1 - beta) * old``."""
    return beta * new + (1.0 - beta) * old


def em_update_mean(estimates, axis=None):
    """EM re-estimate of an unknown Gaussian prior mean: the sample average."""
    estimates = np.asarray(estimates)
    n = estimates.size if axis is None else np.prod([estimates.shape[a] for a in np.atleast_1d(axis)])
    if n == 0:
        raise DegenerateInputError("EM mean update needs at least one estimate")
    return np.mean(estimates, axis=axis)
