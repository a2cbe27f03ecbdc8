"""Benchmark joint GaBP: estimates every d_k and s_k, then combines in closed form."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import combiner as cmb
from ._gabp import extrinsic_beliefs, weighted_consensus
from .denoisers import VAR_FLOOR, damp, gaussian_denoise, qpsk_denoise
from .errors import ConfigurationError, NumericalDivergence
from .model import ChannelRealization, RxSignal, SystemConfig, TransmitFrame
from .nomographic import make_selectors


@dataclass(frozen=True)
class GabpState:
    """Per-edge soft replicas and MSEs, shape (..., N, K), plus running consensus."""

    d_hat: np.ndarray
    s_hat: np.ndarray
    d_var: np.ndarray
    s_var: np.ndarray
    mu_s_hat: np.ndarray
    iteration: int = 0
    d_cons: np.ndarray | None = None
    s_cons: np.ndarray | None = None


@dataclass(frozen=True)
class BenchmarkOutput:
    d_hat: np.ndarray  # (..., K)
    s_hat: np.ndarray  # (..., K)
    sigma_d: np.ndarray  # (..., N, K)
    f_hat: np.ndarray  # (..., M)
    converged: np.ndarray  # (..., M) combiner flags


def initial_state(ch: ChannelRealization, cfg: SystemConfig, truth: TransmitFrame | None = None
                  ) -> GabpState:
    """Cold start (zero replicas, prior variances) or genie start at ``truth``."""
    shape = ch.h.shape
    batch = shape[:-2]
    if truth is None:
        d_hat = np.zeros(shape, dtype=complex)
        s_hat = np.zeros(shape, dtype=complex)
        d_var = np.full(shape, cfg.data_power)
        s_var = np.full(shape, cfg.compute_power)
    else:
        d_hat = np.broadcast_to(truth.d[..., None, :], shape).astype(complex)
        s_hat = np.broadcast_to(truth.s[..., None, :], shape).astype(complex)
        d_var = np.zeros(shape)
        s_var = np.zeros(shape)
    state = GabpState(d_hat, s_hat, d_var, s_var, np.zeros(batch, dtype=complex))
    return _apply_roles(state, cfg)


def _apply_roles(state: GabpState, cfg: SystemConfig) -> GabpState:
    data = cfg.data_mask
    comp = cfg.compute_mask
    if data.all() and comp.all():
        return state
    return replace(
        state,
        d_hat=np.where(data, state.d_hat, 0.0), d_var=np.where(data, state.d_var, 0.0),
        s_hat=np.where(comp, state.s_hat, 0.0), s_var=np.where(comp, state.s_var, 0.0),
    )


def benchmark_iteration(state: GabpState, y: RxSignal | np.ndarray, ch: ChannelRealization,
                        cfg: SystemConfig) -> GabpState:
    """One joint sweep over all (n, k) edges for both d and s.

    Reads only ``state`` and returns a new state, so the sweep is fully
    parallel over edges.
    """
    y = y.y if isinstance(y, RxSignal) else np.asarray(y)
    h = ch.h
    if h.shape != state.d_hat.shape:
        raise ConfigurationError(f"state shape {state.d_hat.shape} does not match channel {h.shape}")
    h2 = np.abs(h) ** 2
    h_conj = np.conj(h)
    sigma_s2 = cfg.compute_power
    it = state.iteration + 1

    # soft interference cancellation
    hd = h * state.d_hat
    hs = h * state.s_hat
    resid = (y - hd.sum(axis=-1) - hs.sum(axis=-1))[..., None]
    vd = h2 * state.d_var
    vs = h2 * state.s_var
    total = (vd.sum(axis=-1) + vs.sum(axis=-1) + cfg.noise_var)[..., None]
    var_d = np.maximum(total - vd, VAR_FLOOR)
    var_s = np.maximum(total - vs, VAR_FLOOR)

    d_bar, dv_bar, d_prec, d_num = extrinsic_beliefs(h2, h_conj, resid + hd, var_d)
    s_bar, sv_bar, s_prec, s_num = extrinsic_beliefs(h2, h_conj, resid + hs, var_s)

    d_est, d_mse = qpsk_denoise(d_bar, dv_bar, cfg.data_power)
    s_est, s_mse = gaussian_denoise(s_bar, sv_bar, state.mu_s_hat[..., None, None], sigma_s2)

    d_hat = damp(d_est, state.d_hat, cfg.beta_d)
    s_hat = damp(s_est, state.s_hat, cfg.beta_s)
    d_var = np.maximum(damp(d_mse, state.d_var, cfg.beta_d), VAR_FLOOR)
    s_var = np.maximum(damp(s_mse, state.s_var, cfg.beta_s), VAR_FLOOR)
    if not (np.all(np.isfinite(d_hat)) and np.all(np.isfinite(s_hat))):
        raise NumericalDivergence("benchmark GaBP produced non-finite replicas", it)

    d_cons = weighted_consensus(d_prec, d_num)
    s_cons = weighted_consensus(s_prec, s_num)
    comp = cfg.compute_mask
    mu_s = np.sum(np.where(comp, s_cons, 0.0), axis=-1) / max(int(comp.sum()), 1)
    new = GabpState(d_hat, s_hat, d_var, s_var, mu_s, it, d_cons, s_cons)
    return _apply_roles(new, cfg)


def run_benchmark_detection(y, ch: ChannelRealization, cfg: SystemConfig,
                            truth: TransmitFrame | None = None) -> GabpState:
    """``i_max`` benchmark sweeps; returns the final state."""
    state = initial_state(ch, cfg, truth)
    for _ in range(cfg.i_max):
        state = benchmark_iteration(state, y, ch, cfg)
    return state


def run_benchmark(y, ch: ChannelRealization, cfg: SystemConfig, *, solver: str = "direct",
                  omega_mode: str = "as_printed", real_only: bool = False,
                  selectors=None, truth: TransmitFrame | None = None,
                  gabp_tol: float = 1e-3) -> BenchmarkOutput:
    """Full benchmark receiver: joint detection, then MMSE combining of ``y - H d_hat``.

    ``solver`` picks how the combiner system is solved (``direct``,
    ``woodbury`` or ``gabp``); passing ``truth`` gives the genie-initialized
    (matched-filter bound) variant.
    """
    y = y.y if isinstance(y, RxSignal) else np.asarray(y)
    state = run_benchmark_detection(y, ch, cfg, truth)
    sigma_d = np.sqrt(state.d_var)
    if selectors is None:
        selectors = make_selectors(cfg.roles, cfg.stream_assignment, cfg.n_streams)
    u, converged = cmb.solve_combiners(ch, cfg, sigma_d, selectors, solver=solver,
                                   omega_mode=omega_mode, gabp_tol=gabp_tol)
    f_hat = cmb.apply_combiner(u, y, ch, state.d_cons, cfg.kind, real_only)
    return BenchmarkOutput(state.d_cons, state.s_cons, sigma_d, f_hat, converged)
