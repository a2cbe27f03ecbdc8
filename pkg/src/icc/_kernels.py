"""Compiled inner loops for the data-detection GaBP.

Each sweep is split in three passes over the batch: a fused soft-IC and
extrinsic-belief pass, a vectorized ``np.tanh`` (much faster than the scalar
libm call available inside compiled code), and a fused damping pass.
"""
from __future__ import annotations

import numba
import numpy as np

from .denoisers import VAR_FLOOR


@numba.njit(cache=True)
def belief_pass(y, h, h2, noise, d_hat, d_var, gain, arg_re, arg_im, prec_sum, num_sum):
    """Write the denoiser arguments ``gain * mean / var`` per edge and the full-row sums.

    y (B, N), h/h2/d_hat/d_var/arg_* (B, N, K), noise (B, N), prec_sum/num_sum (B, K).
    """
    n_b, n_n, n_k = h.shape
    prec = np.empty((n_n, n_k))
    num = np.empty((n_n, n_k), dtype=np.complex128)
    for b in range(n_b):
        ps = prec_sum[b]
        ns = num_sum[b]
        ps[:] = 0.0
        ns[:] = 0.0
        for n in range(n_n):
            resid = y[b, n]
            total = noise[b, n]
            for k in range(n_k):
                resid -= h[b, n, k] * d_hat[b, n, k]
                total += h2[b, n, k] * d_var[b, n, k]
            for k in range(n_k):
                hv = h[b, n, k]
                inv = 1.0 / max(total - h2[b, n, k] * d_var[b, n, k], VAR_FLOOR)
                p = h2[b, n, k] * inv
                q = hv.conjugate() * (resid + hv * d_hat[b, n, k]) * inv
                prec[n, k] = p
                num[n, k] = q
                ps[k] += p
                ns[k] += q
        for n in range(n_n):
            for k in range(n_k):
                # extrinsic mean over extrinsic variance is the leave-one-out numerator
                m = ns[k] - num[n, k]
                arg_re[b, n, k] = gain * m.real
                arg_im[b, n, k] = gain * m.imag


@numba.njit(cache=True)
def update_pass(t_re, t_im, keep, c, data_power, beta, d_hat, d_var):
    """Turn tanh outputs into QPSK estimates, damp them and pin ``keep == False`` users."""
    n_b, n_n, n_k = d_hat.shape
    for b in range(n_b):
        for n in range(n_n):
            for k in range(n_k):
                if not keep[k]:
                    d_hat[b, n, k] = 0.0
                    d_var[b, n, k] = 0.0
                    continue
                er = c * t_re[b, n, k]
                ei = c * t_im[b, n, k]
                mse = min(max(data_power - (er * er + ei * ei), 0.0), data_power)
                d_hat[b, n, k] = beta * complex(er, ei) + (1.0 - beta) * d_hat[b, n, k]
                d_var[b, n, k] = max(beta * mse + (1.0 - beta) * d_var[b, n, k], VAR_FLOOR)


def qpsk_gabp_batch(y, h, noise, keep, data_power, beta, i_max, d_hat, d_var, weighted):
    """In-place GaBP on flattened batches; returns the consensus estimates (B, K).

    ``d_hat``/``d_var`` (B, N, K) hold the initial replicas and are
    overwritten with the final ones.
    """
    n_b, n_n, n_k = h.shape
    c = float(np.sqrt(data_power / 2.0))
    h2 = h.real ** 2 + h.imag ** 2
    arg_re = np.empty(h.shape)
    arg_im = np.empty(h.shape)
    prec_sum = np.empty((n_b, n_k))
    num_sum = np.empty((n_b, n_k), dtype=complex)
    for _ in range(i_max):
        belief_pass(y, h, h2, noise, d_hat, d_var, 2.0 * c, arg_re, arg_im, prec_sum, num_sum)
        np.tanh(arg_re, out=arg_re)
        np.tanh(arg_im, out=arg_im)
        update_pass(arg_re, arg_im, keep, c, float(data_power), float(beta), d_hat, d_var)
    if weighted:
        return np.where(keep, num_sum / np.maximum(prec_sum, VAR_FLOOR), 0.0)
    return d_hat.mean(axis=-2)
