import itertools

import numpy as np
import pytest

from icc.combiner import error_covariance
from icc.metrics import snr_to_noise_var
from icc.model import ChannelRealization, Role, SystemConfig, TransmitFrame, complex_normal, qpsk_demap, qpsk_map
from icc.nomographic import NomographicKind, StreamSelector, evaluate_target, make_selectors
from icc.receiver_icc import (AccessConstraints, EffectiveNoiseProfile, effective_noise_profile,
                              gabp_qpsk_detector, qpsk_gabp, run_data_gabp, run_mf_bound,
                              run_multi_stream, run_single_stream)

from conftest import batch_trials


def test_profile_scalar():
    prof = effective_noise_profile(np.array([[1.0 + 0j]]), 0.5, 1.0)
    np.testing.assert_allclose(prof.per_antenna_var, [1.5])


def test_profile_no_computing(rng):
    h = complex_normal(rng, (6, 3))
    np.testing.assert_array_equal(effective_noise_profile(h, 0.0, 0.7).per_antenna_var, 0.7)


def test_profile_matches_full_covariance_diagonal(rng):
    h = complex_normal(rng, (10, 7))
    full = 0.2 * h @ h.conj().T + 0.3 * np.eye(10)
    prof = effective_noise_profile(ChannelRealization(h), 0.2, 0.3)
    np.testing.assert_allclose(prof.per_antenna_var, np.real(np.diag(full)), rtol=0, atol=1e-12)
    assert np.all(prof.per_antenna_var >= 0.3)


def test_profile_compute_mask(rng):
    h = complex_normal(rng, (5, 3))
    mask = np.array([True, False, True])
    got = effective_noise_profile(h, 0.4, 1.0, mask).per_antenna_var
    np.testing.assert_allclose(got, 0.4 * (np.abs(h[:, 0]) ** 2 + np.abs(h[:, 2]) ** 2) + 1.0)


def test_noiseless_single_user_exact_recovery():
    cfg = SystemConfig(8, 1, roles=("data_only",), noise_var=1e-10)
    ch, frame, y = batch_trials(cfg, 1000)
    prof = effective_noise_profile(ch, cfg.compute_power, cfg.noise_var, cfg.compute_mask)
    d_hat, _ = run_data_gabp(y, ch, prof, cfg)
    np.testing.assert_array_equal(qpsk_demap(d_hat), frame.bits)


def test_all_pinned_gives_zero():
    cfg = SystemConfig(6, 3, roles=("compute_only",) * 3, noise_var=0.1)
    ch, _, y = batch_trials(cfg, 4)
    prof = effective_noise_profile(ch, cfg.compute_power, cfg.noise_var)
    d_hat, sigma_d = run_data_gabp(y, ch, prof, cfg, AccessConstraints.from_config(cfg))
    assert np.all(d_hat == 0) and np.all(sigma_d == 0)


def test_pin_kds_switch():
    cfg = SystemConfig(4, 3, roles=("data_only", "compute_only", "both"))
    np.testing.assert_array_equal(AccessConstraints.from_config(cfg).force_zero_data, [False, True, False])
    np.testing.assert_array_equal(AccessConstraints.from_config(cfg, pin_kds=True).force_zero_data,
                                  [False, True, True])


def test_matches_effective_noise_ml_oracle():
    # exhaustive ML over 4^K hypotheses on the same diagonal effective-noise likelihood
    cfg = SystemConfig(16, 2)
    cfg = cfg.replace(noise_var=snr_to_noise_var(25.0, cfg))
    ch, frame, y = batch_trials(cfg, 1000)
    prof = effective_noise_profile(ch, cfg.compute_power, cfg.noise_var)
    d_hat, _ = run_data_gabp(y, ch, prof, cfg)
    pts = qpsk_map(np.array([[0, 0], [0, 1], [1, 0], [1, 1]]), cfg.data_power)
    hyps = np.array(list(itertools.product(pts, repeat=2)))  # (16, 2)
    resid = y[:, None, :] - np.einsum("tnk,hk->thn", ch.h, hyps)
    metric = np.sum(np.abs(resid) ** 2 / prof.per_antenna_var[:, None, :], axis=-1)
    ml = hyps[np.argmin(metric, axis=1)]
    agree = np.all(qpsk_demap(ml) == qpsk_demap(d_hat), axis=(-1, -2))
    assert agree.mean() >= 0.95


def test_backends_agree():
    cfg = SystemConfig(16, 8, noise_var=0.3)
    ch, _, y = batch_trials(cfg, 30)
    keep = np.ones(8, dtype=bool)
    keep[3] = False
    for weighted in (False, True):
        a = qpsk_gabp(y, ch.h, 0.5, keep, 1.0, 0.5, 30, weighted=weighted, backend="numba")
        b = qpsk_gabp(y, ch.h, 0.5, keep, 1.0, 0.5, 30, weighted=weighted, backend="numpy")
        for x, z in zip(a, b):
            np.testing.assert_allclose(x, z, atol=1e-5)
        assert np.all(a[0][..., 3] == 0)


def test_pure_communication_reduction_bit_identical():
    cfg = SystemConfig(12, 4, roles=("data_only",) * 4, noise_var=0.2)
    ch, frame, y = batch_trials(cfg, 50)
    out = run_single_stream(y, ch, cfg, solver="direct")
    ref, ref_var = gabp_qpsk_detector(y, ch.h, cfg.noise_var, cfg.data_power, cfg.beta_d, cfg.i_max)
    np.testing.assert_array_equal(out.d_hat, ref)
    np.testing.assert_array_equal(out.sigma_d, np.sqrt(ref_var))


def test_single_stream_equals_multi_stream_with_one_selector():
    cfg = SystemConfig(16, 8)
    cfg = cfg.replace(noise_var=snr_to_noise_var(15, cfg))
    ch, _, y = batch_trials(cfg, 20)
    a = run_single_stream(y, ch, cfg, solver="gabp")
    b = run_multi_stream(y, ch, cfg, [StreamSelector(np.ones(8, dtype=np.int8), 1)], solver="gabp")
    np.testing.assert_array_equal(a.f_hat, b.f_hat)
    np.testing.assert_array_equal(a.d_hat, b.d_hat)


def test_multi_stream_partition_sums_to_merged():
    cfg = SystemConfig(16, 8, n_streams=2)
    cfg = cfg.replace(noise_var=snr_to_noise_var(10, cfg))
    ch, _, y = batch_trials(cfg, 20)
    split = run_multi_stream(y, ch, cfg, solver="direct")
    merged = run_multi_stream(y, ch, cfg, [np.ones(8)], solver="direct")
    np.testing.assert_allclose(split.f_hat.sum(axis=-1), merged.f_hat[..., 0], rtol=0, atol=1e-12)


def test_multi_stream_ground_truth_split():
    cfg = SystemConfig(8, 4, n_streams=2, stream_assignment=(1, 1, 2, 2))
    sels = make_selectors(cfg.roles, cfg.stream_assignment, 2)
    s = np.array([1.0, 2.0, 3.0, 4.0])
    assert evaluate_target(NomographicKind.SUM, s, sels[0]) == 3.0
    assert evaluate_target(NomographicKind.SUM, s, sels[1]) == 7.0


def test_single_stream_requires_one_stream():
    cfg = SystemConfig(4, 2, n_streams=2)
    with pytest.raises(Exception):
        run_single_stream(np.zeros(4), ChannelRealization(np.ones((4, 2))), cfg)


def test_single_stream_large_system_runs():
    cfg = SystemConfig(100, 75)
    cfg = cfg.replace(noise_var=snr_to_noise_var(20, cfg))
    ch, frame, y = batch_trials(cfg, 3)
    out = run_single_stream(y, ch, cfg)
    assert out.f_hat.shape == (3, 1)
    assert np.all(np.isfinite(out.f_hat))


def test_noiseless_perfect_data_nmse_vanishes():
    # perfect data knowledge, Omega = 0: NMSE -> 0 as the noise vanishes
    rng = np.random.default_rng(4)
    n, k = 16, 6
    h = complex_normal(rng, (n, k))
    s = complex_normal(rng, k, 1 / k)
    d = qpsk_map(rng.integers(0, 2, (k, 2)), 1.0)
    from icc.combiner import apply_combiner, build_normal_system, mmse_combiner_direct
    errs = []
    for eps in (1e-2, 1e-4, 1e-6):
        y = h @ (d + s)
        u = mmse_combiner_direct(build_normal_system(h, 1 / k, np.zeros((k, k)), eps), 0)
        errs.append(abs(apply_combiner(u, y, h, d) - s.sum()) ** 2 / k)
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-8


def test_mf_bound_noiseless_zero_ber():
    # without computing interference the truth is a fixed point of the data stage
    cfg = SystemConfig(16, 8, roles=("data_only",) * 8, noise_var=1e-8)
    ch, frame, y = batch_trials(cfg, 50, noise_var=1e-8)
    out = run_mf_bound(y, ch, cfg, frame, solver="direct")
    np.testing.assert_array_equal(qpsk_demap(out.d_hat), frame.bits)


@pytest.mark.slow
def test_mf_bound_nmse_dominates_cold_start():
    base = SystemConfig(16, 8)
    for snr in (5.0, 15.0, 25.0):
        cfg = base.replace(noise_var=snr_to_noise_var(snr, base))
        ch, frame, y = batch_trials(cfg, 10_000)
        f = frame.s.sum(axis=-1)
        cold = run_single_stream(y, ch, cfg, solver="woodbury")
        mf = run_mf_bound(y, ch, cfg, frame, solver="woodbury")
        # paired per-trial errors; dominance up to 3 standard errors of the difference
        diff = (np.abs(mf.f_hat[:, 0] - f) ** 2 - np.abs(cold.f_hat[:, 0] - f) ** 2) / cfg.n_users
        assert diff.mean() <= 3 * diff.std(ddof=1) / np.sqrt(diff.size)


@pytest.mark.slow
def test_pinning_never_hurts_remaining_data_users():
    roles = ("both",) * 6 + ("compute_only",) * 4
    base = SystemConfig(16, 10, roles=roles)
    data = base.data_mask
    for snr in (10.0, 20.0):
        cfg = base.replace(noise_var=snr_to_noise_var(snr, base))
        ch, frame, y = batch_trials(cfg, 10_000)
        prof = effective_noise_profile(ch, cfg.compute_power, cfg.noise_var, cfg.compute_mask)
        pinned, _ = run_data_gabp(y, ch, prof, cfg, AccessConstraints.from_config(cfg))
        free, _ = run_data_gabp(y, ch, prof, cfg, AccessConstraints(np.zeros(10, dtype=bool)))
        bits = frame.bits[:, data]
        total = bits.size
        ber_p = np.count_nonzero(qpsk_demap(pinned[:, data]) != bits) / total
        ber_f = np.count_nonzero(qpsk_demap(free[:, data]) != bits) / total
        sigma = np.sqrt(max(ber_f, 1 / total) * (1 - ber_f) / total)
        assert ber_p <= ber_f + 3 * sigma
