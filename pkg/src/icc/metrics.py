"""Error-rate and estimation-quality metrics, SNR bookkeeping and analytic references."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb
from scipy.stats import binomtest

from .errors import ConfigurationError
from .model import SystemConfig

UNDEFINED = math.nan  # marker for metrics that have no samples (e.g. BER with no data users)


@dataclass
class TrialMetrics:
    """Additive per-trial (or aggregated) counters.

    ``nmse_num`` is the sum over trials of the per-trial NMSE, and
    ``trials`` the number of trials contributing to it.
    """

    bit_errors: int = 0
    bits_total: int = 0
    nmse_num: float = 0.0
    streams: int = 0
    trials: int = 0
    diverged: int = 0
    converged: list = field(default_factory=list)

    def __post_init__(self):
        if self.bit_errors > self.bits_total:
            raise ConfigurationError("bit_errors cannot exceed bits_total")

    def merge(self, other: "TrialMetrics") -> "TrialMetrics":
        return TrialMetrics(self.bit_errors + other.bit_errors, self.bits_total + other.bits_total,
                            self.nmse_num + other.nmse_num, max(self.streams, other.streams),
                            self.trials + other.trials, self.diverged + other.diverged,
                            self.converged + other.converged)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else UNDEFINED

    @property
    def nmse(self) -> float:
        return self.nmse_num / self.trials if self.trials else UNDEFINED


def ber(d_hat_bits, true_bits, data_mask=None) -> float:
    """Fraction of mismatched bits; ``data_mask`` (length K) drops users with no data.

    Bits are (..., K, 2).  Returns NaN when no data bits remain.
    """
    a = np.asarray(d_hat_bits)
    b = np.asarray(true_bits)
    if a.shape != b.shape:
        raise ConfigurationError(f"bit arrays differ in shape: {a.shape} vs {b.shape}")
    if data_mask is not None:
        mask = np.asarray(data_mask, dtype=bool)
        a = a[..., mask, :]
        b = b[..., mask, :]
    if a.size == 0:
        return UNDEFINED
    return float(np.count_nonzero(a != b)) / a.size


def nmse(f_hat, f_true, n_users: int) -> float:
    """Squared error of the function estimates summed over streams, divided by K."""
    f_hat = np.asarray(f_hat)
    f_true = np.asarray(f_true)
    if f_hat.shape != f_true.shape:
        raise ConfigurationError(f"estimate and truth differ in shape: {f_hat.shape} vs {f_true.shape}")
    return float(np.sum(np.abs(f_true - f_hat) ** 2)) / n_users


def nmse_db(value: float) -> float:
    if value == 0:
        return -math.inf
    return 10.0 * math.log10(value) if value > 0 else UNDEFINED


def computing_signal_power(cfg: SystemConfig) -> float:
    """Expected ``||H s||^2`` per stream: N K E_S = N E_D."""
    return cfg.n_antennas * cfg.n_users * cfg.compute_power


def snr_to_noise_var(target_snr_s_db: float, cfg: SystemConfig) -> float:
    """Noise variance giving the requested computing SNR (with the factor M for several streams)."""
    return cfg.n_streams * computing_signal_power(cfg) / 10.0 ** (target_snr_s_db / 10.0)


def noise_var_to_snr_db(noise_var: float, cfg: SystemConfig) -> float:
    return 10.0 * math.log10(cfg.n_streams * computing_signal_power(cfg) / noise_var)


def sinr_d(cfg: SystemConfig, noise_var: float, alpha_s: int = 1) -> float:
    """Data SINR; ``alpha_s = 1`` counts the computing stream as interference, 0 cancels it."""
    if alpha_s not in (0, 1):
        raise ConfigurationError(f"alpha_s must be 0 or 1, got {alpha_s!r}")
    signal = cfg.n_antennas * cfg.n_users * cfg.data_power
    return signal / (alpha_s * cfg.n_streams * computing_signal_power(cfg) + noise_var)


def analytic_mrc_qpsk_ber(n_branches: int, snr_per_branch: float) -> float:
    """Average bit error rate of Gray QPSK with maximal-ratio combining in iid Rayleigh fading.

    ``snr_per_branch`` is the linear symbol SNR ``E_D / sigma_w^2`` of one
    branch.  Each quadrature is a BPSK bit at half that SNR, whose L-branch
    error probability has the classical closed form
    ``((1-mu)/2)^L * sum_l C(L-1+l, l) ((1+mu)/2)^l`` with
    ``mu = sqrt(g / (1 + g))``.
    """
    if n_branches < 1:
        raise ConfigurationError("n_branches must be >= 1")
    if snr_per_branch < 0:
        raise ConfigurationError("snr_per_branch must be >= 0")
    if math.isinf(snr_per_branch):
        return 0.0
    g = snr_per_branch / 2.0
    mu = math.sqrt(g / (1.0 + g))
    lo = (1.0 - mu) / 2.0
    hi = (1.0 + mu) / 2.0
    total = sum(comb(n_branches - 1 + l, l, exact=True) * hi ** l for l in range(n_branches))
    return lo ** n_branches * total


def wilson_interval(errors: int, total: int, confidence: float = 0.95) -> tuple[float, float]:
    if total == 0:
        return UNDEFINED, UNDEFINED
    ci = binomtest(int(errors), int(total)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def wilson_halfwidth(errors: int, total: int, confidence: float = 0.95) -> float:
    lo, hi = wilson_interval(errors, total, confidence)
    return (hi - lo) / 2.0


def normal_interval(samples, confidence: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval for the mean of per-trial samples."""
    from scipy.stats import norm

    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return UNDEFINED, UNDEFINED
    half = norm.ppf(0.5 + confidence / 2.0) * x.std(ddof=1) / math.sqrt(x.size)
    return float(x.mean() - half), float(x.mean() + half)
