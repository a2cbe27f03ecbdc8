import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icc.errors import ConfigurationError
from icc.model import (ChannelRealization, Role, SystemConfig, TransmitFrame, complex_normal,
                       contiguous_assignment, draw_trial, generate_channel, generate_frame,
                       power_allocation, qpsk_demap, qpsk_map, synthesize_rx, trial_rng)
from icc.nomographic import NomographicKind


@pytest.mark.parametrize("ed,k,expected", [(1.0, 100, 0.01), (1.0, 1, 1.0), (4.0, 8, 0.5)])
def test_power_allocation(ed, k, expected):
    assert power_allocation(ed, k) == pytest.approx(expected, rel=1e-15)


def test_config_defaults_and_masks():
    cfg = SystemConfig(8, 4)
    assert cfg.roles == (Role.BOTH,) * 4
    assert cfg.stream_assignment == (1, 1, 1, 1)
    assert cfg.compute_power == 0.25
    assert cfg.data_mask.all() and cfg.compute_mask.all()


@pytest.mark.parametrize("kwargs", [
    dict(n_antennas=0, n_users=1), dict(n_antennas=1, n_users=0), dict(n_antennas=1, n_users=1, n_streams=0),
    dict(n_antennas=1, n_users=1, beta_d=1.0), dict(n_antennas=1, n_users=1, beta_u=0.0),
    dict(n_antennas=1, n_users=1, noise_var=0.0), dict(n_antennas=1, n_users=1, data_power=-1.0),
    dict(n_antennas=2, n_users=2, roles=("both",)),
    dict(n_antennas=2, n_users=2, n_streams=1, stream_assignment=(1, 2)),
    dict(n_antennas=2, n_users=2, roles=("data_only", "both"), stream_assignment=(1, 1)),
    dict(n_antennas=2, n_users=2, roles=("compute_only", "both"), stream_assignment=(None, 1)),
    dict(n_antennas=1, n_users=1, base_seed=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        SystemConfig(**kwargs)


def test_contiguous_assignment_split():
    roles = [Role.BOTH] * 5
    assert contiguous_assignment(roles, 2) == (1, 1, 2, 2, 2)
    roles = [Role.DATA_ONLY, Role.BOTH, Role.COMPUTE_ONLY, Role.BOTH]
    assert contiguous_assignment(roles, 1) == (None, 1, 1, 1)


def test_channel_moments():
    cfg = SystemConfig(100, 100)
    h = np.concatenate([generate_channel(cfg, trial_rng(0, t, 0)).h.ravel() for t in range(100)])
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.01)
    assert abs(h.real.mean()) < 0.01 and abs(h.imag.mean()) < 0.01
    assert np.var(h.real) == pytest.approx(0.5, abs=0.01)


def test_xi_is_row_energy():
    ch = generate_channel(SystemConfig(1, 1), np.random.default_rng(3))
    assert ch.xi[0] == np.abs(ch.h[0, 0]) ** 2
    ch = generate_channel(SystemConfig(7, 5), np.random.default_rng(3))
    np.testing.assert_allclose(ch.xi, np.linalg.norm(ch.h, axis=1) ** 2, rtol=1e-12)


def test_gray_anchor_and_roundtrip():
    assert qpsk_map(np.zeros((1, 2), dtype=int), 1.0)[0] == pytest.approx((1 + 1j) / np.sqrt(2))
    assert qpsk_map(np.array([[0, 1]]), 1.0)[0] == pytest.approx((1 - 1j) / np.sqrt(2))
    assert qpsk_map(np.array([[1, 0]]), 1.0)[0] == pytest.approx((-1 + 1j) / np.sqrt(2))
    bits = np.random.default_rng(0).integers(0, 2, (50, 2))
    np.testing.assert_array_equal(qpsk_demap(qpsk_map(bits, 3.0)), bits)


def test_frame_roles_and_constellation():
    cfg = SystemConfig(4, 3, roles=("data_only", "compute_only", "both"), data_power=2.0)
    fr = generate_frame(cfg, np.random.default_rng(1))
    assert fr.d[1] == 0 and fr.s[0] == 0
    assert np.all(fr.bits[1] == 0)
    for k in (0, 2):
        assert abs(abs(fr.d[k].real) - 1.0) < 1e-15 and abs(abs(fr.d[k].imag) - 1.0) < 1e-15
    assert fr.e_s == pytest.approx(2.0 / 3)


def test_computing_signal_variance():
    cfg = SystemConfig(1, 100)
    s = np.concatenate([generate_frame(cfg, trial_rng(1, t, 1)).s for t in range(10_000)])
    assert np.var(s) == pytest.approx(0.01, rel=0.01)


def test_product_frame_is_positive_real_with_log_power():
    cfg = SystemConfig(1, 50, kind=NomographicKind.PRODUCT)
    s = np.concatenate([generate_frame(cfg, trial_rng(1, t, 1)).s for t in range(2000)])
    assert np.all(s.real > 0) and np.all(s.imag == 0)
    assert np.var(np.log2(s.real)) == pytest.approx(cfg.compute_power, rel=0.05)


def test_synthesize_noiseless_single_user():
    h = np.array([[0.3 - 0.2j], [1.1 + 0.5j]])
    d = np.array([(1 + 1j) / np.sqrt(2)])
    fr = TransmitFrame(np.zeros((1, 2), dtype=np.int8), d, np.zeros(1, complex), 1.0)
    y = synthesize_rx(ChannelRealization(h), fr, 1e-30, np.random.default_rng(0)).y
    np.testing.assert_allclose(y, h[:, 0] * d[0], atol=1e-14)


def test_synthesize_zero_channel_and_noise_variance():
    fr = TransmitFrame(np.zeros((2, 2), dtype=np.int8), np.ones(2, complex), np.ones(2, complex), 0.5)
    ch = ChannelRealization(np.zeros((4, 2)))
    y1 = synthesize_rx(ch, fr, 0.7, np.random.default_rng(5)).y
    w = complex_normal(np.random.default_rng(5), 4) * np.sqrt(0.7)
    np.testing.assert_array_equal(y1, w)
    big = ChannelRealization(np.zeros((200_000, 2)))
    y = synthesize_rx(big, fr, 0.7, np.random.default_rng(6)).y
    assert np.var(y) == pytest.approx(0.7, rel=0.01)


def test_synthesize_dimension_mismatch():
    fr = TransmitFrame(np.zeros((2, 2), dtype=np.int8), np.ones(2, complex), np.zeros(2, complex), 0.5)
    with pytest.raises(ConfigurationError):
        synthesize_rx(ChannelRealization(np.ones((3, 3))), fr, 1.0, np.random.default_rng(0))


def test_signal_power_identities():
    # E||Hd||^2 = N K E_D and E||Hs||^2 = N E_D, within 2% at 1e5 trials
    cfg = SystemConfig(4, 5, data_power=2.0)
    rng = np.random.default_rng(9)
    t = 100_000
    h = complex_normal(rng, (t, 4, 5))
    bits = rng.integers(0, 2, (t, 5, 2))
    d = qpsk_map(bits, cfg.data_power)
    s = complex_normal(rng, (t, 5), cfg.compute_power)
    p_d = np.mean(np.sum(np.abs(np.einsum("tnk,tk->tn", h, d)) ** 2, axis=1))
    p_s = np.mean(np.sum(np.abs(np.einsum("tnk,tk->tn", h, s)) ** 2, axis=1))
    assert p_d == pytest.approx(4 * 5 * 2.0, rel=0.02)
    assert p_s == pytest.approx(4 * 2.0, rel=0.02)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), trial=st.integers(0, 10**9))
def test_trial_draws_are_reproducible(seed, trial):
    cfg = SystemConfig(3, 2, base_seed=seed)
    a, b = draw_trial(cfg, trial), draw_trial(cfg, trial)
    np.testing.assert_array_equal(a[0].h, b[0].h)
    np.testing.assert_array_equal(a[1].x, b[1].x)
    np.testing.assert_array_equal(a[2], b[2])


def test_roles_do_not_shift_other_users_draws():
    base = SystemConfig(3, 3)
    mixed = SystemConfig(3, 3, roles=("data_only", "both", "compute_only"))
    fa = draw_trial(base, 4)[1]
    fb = draw_trial(mixed, 4)[1]
    assert fa.d[0] == fb.d[0] and fa.s[1] == fb.s[1] and fa.d[1] == fb.d[1]


def test_stack_preserves_fields():
    cfg = SystemConfig(3, 2)
    tr = [draw_trial(cfg, t) for t in range(3)]
    ch = ChannelRealization.stack([t[0] for t in tr])
    fr = TransmitFrame.stack([t[1] for t in tr])
    assert ch.h.shape == (3, 3, 2) and ch.xi.shape == (3, 3)
    assert fr.x.shape == (3, 2)
