"""Over-the-air computation combiners.

The MMSE combiner solves ``A u_m = b_m`` with

    A = H (sigma_s^2 I + Omega) H^H + sigma_w^2 I,    b_m = H sigma_s^2 p_m.

Three interchangeable solvers are provided: a direct Cholesky solve, the
Woodbury (matrix inversion lemma) form costing O(N K^2), and an
inversion-free GaBP sweep costing O(N^2) per iteration.  Every routine
accepts leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._gabp import extrinsic_beliefs, weighted_consensus
from .denoisers import VAR_FLOOR, PriorGaussian, damp, gaussian_denoise
from .errors import CombinerDivergence, ConfigurationError, SingularSystemError
from .model import ChannelRealization, RxSignal, SystemConfig
from .nomographic import NomographicKind, StreamSelector, postprocess

OMEGA_MODES = ("as_printed", "diagonal")


@dataclass(frozen=True)
class CombinerSystem:
    """Hermitian ``a`` (..., N, N), right-hand sides ``b`` (..., M, N), ``omega`` (..., K, K)."""

    a: np.ndarray
    b: np.ndarray
    omega: np.ndarray


@dataclass
class GabpSolveResult:
    u: np.ndarray  # (..., N) consensus estimate
    diverged: np.ndarray  # (...) bool
    residual: np.ndarray  # (...) relative residual ||A u - b|| / ||b||
    sweeps: int


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def error_covariance(sigma_d, mode: str = "as_printed"):
    """Data-error covariance Omega from the per-edge standard deviations.

    ``as_printed`` forms ``Sigma^H Sigma`` from the (..., N, K) matrix of
    standard deviations; ``diagonal`` keeps only its diagonal.
    """
    sigma_d = np.asarray(sigma_d, dtype=float)
    omega = np.swapaxes(sigma_d, -1, -2) @ sigma_d
    if mode == "diagonal":
        omega = np.einsum("...kk->...k", omega)[..., None] * np.eye(omega.shape[-1])
    elif mode != "as_printed":
        raise ConfigurationError(f"unknown omega mode {mode!r}")
    return omega.astype(complex)


def _selector_matrix(selectors, k: int) -> np.ndarray:
    if selectors is None:
        return np.ones((1, k))
    rows = [np.asarray(s.p if isinstance(s, StreamSelector) else s, dtype=float) for s in selectors]
    p = np.stack(rows)
    if p.shape[-1] != k:
        raise ConfigurationError(f"selector length {p.shape[-1]} does not match K={k}")
    return p


def _source_covariance(sigma_s2, omega, compute_mask):
    k = omega.shape[-1]
    mask = np.ones(k) if compute_mask is None else np.asarray(compute_mask, dtype=float)
    return sigma_s2 * (mask * np.eye(k)) + omega


def build_normal_system(ch: ChannelRealization | np.ndarray, sigma_s2: float, omega,
                        noise_var: float, selectors: Sequence | None = None,
                        compute_mask=None) -> CombinerSystem:
    """Assemble ``A`` and one ``b_m`` per selector (all-ones when ``selectors`` is None).

    ``compute_mask`` restricts the computing-signal covariance to users that
    actually transmit one; by default every user does.
    """
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=complex)
    n, k = h.shape[-2:]
    omega = np.asarray(omega, dtype=complex)
    c = _source_covariance(sigma_s2, omega, compute_mask)
    a = h @ c @ _herm(h)
    a = 0.5 * (a + _herm(a)) + noise_var * np.eye(n)
    p = _selector_matrix(selectors, k)
    b = sigma_s2 * np.einsum("...nk,mk->...mn", h, p)
    return CombinerSystem(a, b, omega)


def _cholesky_solve(a, rhs):
    """Solve ``a x = rhs`` for Hermitian PD ``a``; rhs is (..., N, R)."""
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("combiner matrix is not positive definite") from exc
    diag = np.abs(np.einsum("...ii->...i", low))
    if np.any(diag.min(axis=-1) <= np.sqrt(np.finfo(float).eps) * diag.max(axis=-1)):
        raise SingularSystemError("combiner matrix is numerically singular")
    z = np.linalg.solve(low, rhs)
    return np.linalg.solve(_herm(low), z)


def mmse_combiner_direct(sys: CombinerSystem, stream: int | None = None):
    """``u_m = A^{-1} b_m`` via Cholesky; ``stream`` is a 0-based row of ``sys.b``.

    With ``stream=None`` all streams are solved and returned as (..., M, N).
    """
    b = sys.b if stream is None else sys.b[..., stream:stream + 1, :]
    u = np.swapaxes(_cholesky_solve(sys.a, np.swapaxes(b, -1, -2)), -1, -2)
    return u if stream is None else u[..., 0, :]


def mmse_combiner_woodbury(ch: ChannelRealization | np.ndarray, sigma_s2: float, omega,
                           noise_var: float, b, compute_mask=None):
    """Matrix-inversion-lemma form of the MMSE combiner.

    ``u = (b - H (sigma_w^2 C^{-1} + H^H H)^{-1} H^H b) / sigma_w^2`` with
    ``C = sigma_s^2 I + Omega``; only K x K systems are factored.  ``b`` may be
    (..., N) or (..., M, N).
    """
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=complex)
    k = h.shape[-1]
    c = _source_covariance(sigma_s2, np.asarray(omega, dtype=complex), compute_mask)
    if np.any(np.linalg.cond(c) > 1.0 / np.finfo(float).eps):
        raise SingularSystemError("source covariance C is singular")
    c_inv = np.linalg.solve(c, np.broadcast_to(np.eye(k), c.shape))
    core = noise_var * c_inv + _herm(h) @ h
    b = np.asarray(b, dtype=complex)
    single = b.ndim == h.ndim - 1
    rhs = b[..., None, :] if single else b
    hb = np.einsum("...nk,...mn->...km", np.conj(h), rhs)
    t = np.linalg.solve(core, hb)
    u = (rhs - np.swapaxes(h @ t, -1, -2)) / noise_var
    return u[..., 0, :] if single else u


def _relative_residual(a, u, b):
    r = np.einsum("...ij,...j->...i", a, u) - b
    nb = np.linalg.norm(b, axis=-1)
    nr = np.linalg.norm(r, axis=-1)
    return np.where(nb > 0, nr / np.where(nb > 0, nb, 1.0), nr)


def gabp_solve(a, b, *, prior: PriorGaussian | None = None, beta_u: float = 0.3,
               i_max: int = 30, patience: int | None = 5, em: bool = True,
               init=None) -> GabpSolveResult:
    """Batched inversion-free GaBP solve of ``a u = b``.

    Each row ``b_n = sum_n' a_{n,n'} u_{n'}`` is a noiseless factor node.
    Per-edge replicas ``u_hat[n, n']`` are refined by soft interference
    cancellation, leave-one-row-out extrinsic beliefs, a Gaussian-prior
    denoiser and damping; the prior mean is re-estimated by EM as the mean
    over all N^2 edges.  The returned estimate is the precision-weighted
    consensus over all rows.

    A batch element is marked diverged (and frozen at its last iterate) once
    its residual grew for ``patience`` consecutive sweeps or any value
    became non-finite.  ``patience=None`` disables the detector.
    ``init`` optionally seeds the replicas as ``(u, var)`` (genie start).
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    prior = prior or PriorGaussian(0.0, 1.0)
    batch = b.shape[:-1]
    n = a.shape[-1]
    a2 = np.abs(a) ** 2
    a_conj = np.conj(a)

    if init is None:
        uh = np.full(batch + (n, n), prior.mean, dtype=complex)
        uv = np.full(batch + (n, n), float(prior.var))
    else:
        u0, v0 = init
        uh = np.broadcast_to(np.asarray(u0, dtype=complex)[..., None, :], batch + (n, n)).copy()
        uv = np.broadcast_to(np.asarray(v0, dtype=float), batch + (n, n)).copy()
        uv = np.maximum(uv, VAR_FLOOR)
    mu = np.broadcast_to(np.asarray(prior.mean, dtype=complex), batch).copy()

    diverged = np.zeros(batch, dtype=bool)
    streak = np.zeros(batch, dtype=int)
    prev_res = np.full(batch, np.inf)
    u_cons = np.zeros(batch + (n,), dtype=complex)
    sweeps = 0
    for it in range(1, i_max + 1):
        sweeps = it
        au = a * uh
        bt = (b - au.sum(axis=-1))[..., None] + au
        av = a2 * uv
        vt = np.maximum(av.sum(axis=-1, keepdims=True) - av, VAR_FLOOR)
        u_bar, v_bar, prec_sum, num_sum = extrinsic_beliefs(a2, a_conj, bt, vt)
        est, var = gaussian_denoise(u_bar, v_bar, mu[..., None, None], prior.var)
        new_uh = damp(est, uh, beta_u)
        new_uv = np.maximum(damp(var, uv, beta_u), VAR_FLOOR)
        new_cons = weighted_consensus(prec_sum, num_sum)

        res = _relative_residual(a, new_cons, b)
        bad = ~np.isfinite(res) | ~np.all(np.isfinite(new_uh), axis=(-1, -2))
        if patience is not None:
            streak = np.where(res > prev_res, streak + 1, 0)
            bad |= streak >= patience
        newly = bad & ~diverged
        active = ~(diverged | newly)
        # diverged elements keep the last iterate from before the blow-up
        uh = np.where(active[..., None, None], new_uh, uh)
        uv = np.where(active[..., None, None], new_uv, uv)
        u_cons = np.where(active[..., None], new_cons, u_cons)
        prev_res = np.where(active, res, prev_res)
        diverged |= newly
        if em:
            mu = np.where(active, uh.mean(axis=(-1, -2)), mu)
        if diverged.all():
            break

    residual = _relative_residual(a, u_cons, b)
    return GabpSolveResult(u_cons, diverged, residual, sweeps)


def gabp_linear_solve(sys: CombinerSystem, stream: int = 0, prior: PriorGaussian | None = None,
                      beta_u: float = 0.3, i_max: int = 30, patience: int | None = 5):
    """Single-system GaBP combiner; raises :class:`CombinerDivergence` on divergence."""
    b = sys.b[..., stream, :] if sys.b.ndim == sys.a.ndim else sys.b
    res = gabp_solve(sys.a, b, prior=prior, beta_u=beta_u, i_max=i_max, patience=patience)
    if np.any(res.diverged):
        raise CombinerDivergence("GaBP combiner residual kept increasing", res.sweeps, res.u)
    return res.u


def apply_combiner(u, y: RxSignal | np.ndarray, ch: ChannelRealization | np.ndarray, d_hat,
                   kind: NomographicKind = NomographicKind.SUM, real_only: bool = False):
    """Combine the data-cancelled residual: ``f_hat = phi(u^H (y - H d_hat))``.

    ``u`` may be (..., N) for one stream or (..., M, N) for several.
    """
    y = y.y if isinstance(y, RxSignal) else np.asarray(y)
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch)
    resid = y - np.einsum("...nk,...k->...n", h, d_hat)
    u = np.asarray(u)
    if u.ndim == resid.ndim:
        agg = np.sum(np.conj(u) * resid, axis=-1)
    else:
        agg = np.sum(np.conj(u) * resid[..., None, :], axis=-1)
    if real_only:
        agg = agg.real
    return postprocess(kind, agg)


SOLVERS = ("direct", "woodbury", "gabp")


def _exact_solve(h, sigma_s2, omega, noise_var, system, compute_mask):
    try:
        return mmse_combiner_woodbury(h, sigma_s2, omega, noise_var, system.b, compute_mask)
    except SingularSystemError:
        return mmse_combiner_direct(system)


def solve_combiners(ch: ChannelRealization | np.ndarray, cfg: SystemConfig, sigma_d, selectors,
                    *, solver: str = "gabp", omega_mode: str = "as_printed",
                    gabp_tol: float = 1e-3, genie: bool = False):
    """Combiners for every stream of a (possibly batched) set of trials.

    Returns ``(u, converged)`` with ``u`` of shape (..., M, N) and a
    (..., M) flag that is False wherever the GaBP solve diverged or ended
    above ``gabp_tol`` relative residual; those entries are replaced by the
    exact (Woodbury, else direct) solution.  ``genie`` starts the GaBP
    replicas at the exact solution with zero variance.
    """
    if solver not in SOLVERS:
        raise ConfigurationError(f"unknown solver {solver!r}")
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=complex)
    sigma_s2 = cfg.compute_power
    mask = cfg.compute_mask
    omega = error_covariance(sigma_d, omega_mode)
    system = build_normal_system(h, sigma_s2, omega, cfg.noise_var, selectors, mask)
    batch_m = system.b.shape[:-1]
    if solver == "direct":
        return mmse_combiner_direct(system), np.ones(batch_m, dtype=bool)
    if solver == "woodbury":
        return _exact_solve(h, sigma_s2, omega, cfg.noise_var, system, mask), np.ones(batch_m, dtype=bool)

    prior = PriorGaussian(0.0, cfg.sigma_u2)
    exact = None
    init = None
    if genie:
        exact = _exact_solve(h, sigma_s2, omega, cfg.noise_var, system, mask)
        init = (exact, 0.0)
    res = gabp_solve(system.a[..., None, :, :], system.b, prior=prior, beta_u=cfg.beta_u,
                     i_max=cfg.i_max, init=init)
    converged = ~res.diverged & (res.residual <= gabp_tol)
    u = res.u
    if not converged.all():
        if exact is None:
            exact = _exact_solve(h, sigma_s2, omega, cfg.noise_var, system, mask)
        u = np.where(converged[..., None], u, exact)
    return u, converged
