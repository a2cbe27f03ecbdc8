"""Integrated communication and computing receivers.

The data symbols are detected first by a data-only GaBP that treats the
computing superposition ``H s`` as colored noise with a diagonal covariance.
The residual ``y - H d_hat`` is then combined with one MMSE combiner per
stream to estimate the target functions directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import combiner as cmb
from ._gabp import extrinsic_beliefs, weighted_consensus
from .denoisers import VAR_FLOOR, damp, qpsk_denoise
from .errors import ConfigurationError, NumericalDivergence
from .model import ChannelRealization, RxSignal, Role, SystemConfig, TransmitFrame
from .nomographic import StreamSelector, make_selectors

CONSENSUS_MODES = ("average", "weighted")


@dataclass(frozen=True)
class EffectiveNoiseProfile:
    """Per-antenna variance of computing interference plus thermal noise, (..., N)."""

    per_antenna_var: np.ndarray


@dataclass(frozen=True)
class AccessConstraints:
    """Users whose data replicas and variances are held at zero."""

    force_zero_data: np.ndarray

    @classmethod
    def from_config(cls, cfg: SystemConfig, pin_kds: bool = False) -> "AccessConstraints":
        """Pin compute-only users; ``pin_kds`` also pins users sending both signals."""
        pinned = {Role.COMPUTE_ONLY, Role.BOTH} if pin_kds else {Role.COMPUTE_ONLY}
        return cls(np.array([r in pinned for r in cfg.roles], dtype=bool))


@dataclass(frozen=True)
class IccOutput:
    d_hat: np.ndarray  # (..., K)
    sigma_d: np.ndarray  # (..., N, K) per-edge standard deviations
    f_hat: np.ndarray  # (..., M)
    converged: np.ndarray  # (..., M) combiner flags


def effective_noise_profile(ch: ChannelRealization | np.ndarray, sigma_s2: float, noise_var: float,
                            compute_mask=None) -> EffectiveNoiseProfile:
    """``sigma_s^2 * xi_n + sigma_w^2`` with ``xi_n`` the energy of row n of H.

    With ``compute_mask`` only users that transmit a computing signal
    contribute to ``xi_n``.
    """
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=complex)
    h2 = np.abs(h) ** 2
    if compute_mask is None:
        xi = h2.sum(axis=-1)
    else:
        xi = (h2 * np.asarray(compute_mask, dtype=float)).sum(axis=-1)
    return EffectiveNoiseProfile(sigma_s2 * xi + noise_var)


BACKENDS = ("numba", "numpy")


def _qpsk_gabp_numpy(y, h, noise, keep, data_power, beta, i_max, d_hat, d_var, weighted):
    h2 = np.abs(h) ** 2
    h_conj = np.conj(h)
    prec_sum = num_sum = None
    for it in range(1, i_max + 1):
        hd = h * d_hat
        vd = h2 * d_var
        resid = (y - hd.sum(axis=-1))[..., None]
        total = (vd.sum(axis=-1) + noise)[..., None]
        var_tilde = np.maximum(total - vd, VAR_FLOOR)
        d_bar, v_bar, prec_sum, num_sum = extrinsic_beliefs(h2, h_conj, resid + hd, var_tilde)
        est, mse = qpsk_denoise(d_bar, v_bar, data_power)
        d_hat = np.where(keep, damp(est, d_hat, beta), 0.0)
        d_var = np.where(keep, np.maximum(damp(mse, d_var, beta), VAR_FLOOR), 0.0)
        if not np.all(np.isfinite(d_hat)):
            raise NumericalDivergence("data GaBP produced non-finite replicas", it)
    if weighted:
        d_cons = np.where(keep, weighted_consensus(prec_sum, num_sum), 0.0)
    else:
        d_cons = d_hat.mean(axis=-2)
    return d_cons, d_hat, d_var


def qpsk_gabp(y, h, noise, keep, data_power: float, beta: float, i_max: int, *,
              init=None, weighted: bool = False, backend: str = "numba"):
    """Core data-detection GaBP shared by every receiver that detects QPSK data.

    ``noise`` is the per-antenna noise variance (..., N); users with
    ``keep`` False are held at zero.  ``init`` optionally gives starting
    replicas and variances.  Returns ``(d_cons, d_hat, d_var)``.
    """
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {backend!r}")
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    keep = np.asarray(keep, dtype=bool)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), h.shape[:-1])
    if init is None:
        d_hat = np.zeros(h.shape, dtype=complex)
        d_var = np.full(h.shape, float(data_power))
    else:
        d_hat = np.broadcast_to(np.asarray(init[0], dtype=complex), h.shape).copy()
        d_var = np.broadcast_to(np.asarray(init[1], dtype=float), h.shape).copy()
    d_hat = np.where(keep, d_hat, 0.0)
    d_var = np.where(keep, d_var, 0.0)
    if backend == "numpy":
        return _qpsk_gabp_numpy(y, h, noise, keep, data_power, beta, i_max, d_hat, d_var, weighted)

    from ._kernels import qpsk_gabp_batch

    batch = h.shape[:-2]
    n, k = h.shape[-2:]
    flat_hat = np.ascontiguousarray(d_hat.reshape(-1, n, k))
    flat_var = np.ascontiguousarray(d_var.reshape(-1, n, k))
    cons = qpsk_gabp_batch(np.ascontiguousarray(np.broadcast_to(y, batch + (n,)).reshape(-1, n)),
                           np.ascontiguousarray(h.reshape(-1, n, k)),
                           np.ascontiguousarray(noise.reshape(-1, n)), keep,
                           float(data_power), float(beta), int(i_max), flat_hat, flat_var,
                           bool(weighted))
    if not np.all(np.isfinite(flat_hat)):
        raise NumericalDivergence("data GaBP produced non-finite replicas", i_max)
    return cons.reshape(batch + (k,)), flat_hat.reshape(h.shape), flat_var.reshape(h.shape)


def run_data_gabp(y, ch: ChannelRealization, profile: EffectiveNoiseProfile, cfg: SystemConfig,
                  constraints: AccessConstraints | None = None, *, consensus: str = "average",
                  truth: TransmitFrame | None = None, backend: str = "numba"):
    """Data-only GaBP under the effective-noise model.

    Returns the consensus estimates ``d_hat`` (..., K) and the per-edge error
    standard deviations ``sigma_d`` (..., N, K).  ``truth`` starts every
    replica at the transmitted symbols with zero variance.
    """
    if consensus not in CONSENSUS_MODES:
        raise ConfigurationError(f"unknown consensus mode {consensus!r}")
    y = y.y if isinstance(y, RxSignal) else np.asarray(y)
    h = ch.h
    noise = np.asarray(profile.per_antenna_var, dtype=float)
    if noise.shape[-1] != h.shape[-2]:
        raise ConfigurationError(f"noise profile has {noise.shape[-1]} entries, expected {h.shape[-2]}")
    pinned = np.zeros(h.shape[-1], dtype=bool) if constraints is None else \
        np.asarray(constraints.force_zero_data, dtype=bool)
    init = None if truth is None else (truth.d[..., None, :], 0.0)
    d_cons, _, d_var = qpsk_gabp(y, h, noise, ~pinned, cfg.data_power, cfg.beta_d, cfg.i_max,
                                 init=init, weighted=consensus == "weighted", backend=backend)
    return d_cons, np.sqrt(d_var)


def gabp_qpsk_detector(y, h, noise_var: float, data_power: float, beta_d: float = 0.5,
                       i_max: int = 30, backend: str = "numba"):
    """Plain GaBP QPSK detector for ``y = H d + w`` with white noise.

    This is the detector with the computing path switched off: white noise,
    nobody pinned, average consensus.  Returns ``(d_hat, d_var)``.
    """
    h = np.asarray(h, dtype=complex)
    keep = np.ones(h.shape[-1], dtype=bool)
    d_cons, _, d_var = qpsk_gabp(y, h, noise_var, keep, data_power, beta_d, i_max, backend=backend)
    return d_cons, d_var


def _selectors(cfg: SystemConfig, selectors):
    if selectors is None:
        return make_selectors(cfg.roles, cfg.stream_assignment, cfg.n_streams)
    out = list(selectors)
    for sel in out:
        p = np.asarray(sel.p if isinstance(sel, StreamSelector) else sel)
        if p.shape[-1] != cfg.n_users:
            raise ConfigurationError(f"selector length {p.shape[-1]} does not match K={cfg.n_users}")
    return out


def run_multi_stream(y, ch: ChannelRealization, cfg: SystemConfig, selectors=None, *,
                     solver: str = "gabp", omega_mode: str = "as_printed",
                     constraints: AccessConstraints | None = None, consensus: str = "average",
                     truth: TransmitFrame | None = None, gabp_tol: float = 1e-3,
                     real_only: bool = False, backend: str = "numba") -> IccOutput:
    """One shared data stage, then one combiner per stream.

    ``solver`` is ``gabp`` (inversion-free, with exact fallback and a flag),
    ``woodbury`` or ``direct``.  ``truth`` yields the genie-initialized
    matched-filter bound.
    """
    y = y.y if isinstance(y, RxSignal) else np.asarray(y)
    sels = _selectors(cfg, selectors)
    if constraints is None:
        constraints = AccessConstraints.from_config(cfg)
    profile = effective_noise_profile(ch, cfg.compute_power, cfg.noise_var, cfg.compute_mask)
    d_hat, sigma_d = run_data_gabp(y, ch, profile, cfg, constraints, consensus=consensus,
                                   truth=truth, backend=backend)
    u, converged = cmb.solve_combiners(ch, cfg, sigma_d, sels, solver=solver,
                                       omega_mode=omega_mode, gabp_tol=gabp_tol,
                                       genie=truth is not None)
    f_hat = cmb.apply_combiner(u, y, ch, d_hat, cfg.kind, real_only)
    return IccOutput(d_hat, sigma_d, f_hat, converged)


def run_single_stream(y, ch: ChannelRealization, cfg: SystemConfig, **kwargs) -> IccOutput:
    """Single-stream receiver: the M = 1 case of :func:`run_multi_stream`."""
    if cfg.n_streams != 1:
        raise ConfigurationError(f"single-stream receiver needs M = 1, got {cfg.n_streams}")
    return run_multi_stream(y, ch, cfg, None, **kwargs)


def run_mf_bound(y, ch: ChannelRealization, cfg: SystemConfig, truth: TransmitFrame,
                 selectors=None, **kwargs) -> IccOutput:
    """Same pipeline started from the ground truth with zero variances."""
    return run_multi_stream(y, ch, cfg, selectors, truth=truth, **kwargs)
