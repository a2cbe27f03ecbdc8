"""Uplink SIMO signal model: configuration, channels, frames, received signals.

Arrays may carry leading batch dimensions (one entry per Monte Carlo trial);
every function here operates on the trailing ``(N, K)`` / ``(K,)`` / ``(N,)``
axes so that a stack of trials can be pushed through the receivers at once.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .nomographic import NomographicKind, preprocess


class Modulation(str, enum.Enum):
    QPSK = "qpsk"


class Algorithm(str, enum.Enum):
    BENCHMARK = "benchmark"
    SINGLE_STREAM = "single_stream"
    MULTI_STREAM = "multi_stream"
    MF_BOUND = "mf_bound"


class Role(str, enum.Enum):
    DATA_ONLY = "data_only"
    COMPUTE_ONLY = "compute_only"
    BOTH = "both"


# substream tags for per-trial seed derivation
TAG_CHANNEL = 0
TAG_FRAME = 1
TAG_NOISE = 2


def contiguous_assignment(roles: Sequence[Role], n_streams: int) -> tuple[int | None, ...]:
    """Split the computing users, in index order, into ``n_streams`` contiguous groups.

    With every user computing and two streams this reproduces the
    ``k' = floor(K/2)`` split: the first ``k'`` users feed stream 1.
    """
    computing = [k for k, r in enumerate(roles) if r is not Role.DATA_ONLY]
    out: list[int | None] = [None] * len(roles)
    n_c = len(computing)
    for m in range(n_streams):
        for k in computing[(m * n_c) // n_streams:((m + 1) * n_c) // n_streams]:
            out[k] = m + 1
    return tuple(out)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, powers, damping factors and algorithm selection for one run.

    ``roles`` defaults to every user transmitting both data and computing
    signals; ``stream_assignment`` defaults to a contiguous split of the
    computing users over ``n_streams`` streams (1-based stream indices,
    ``None`` for data-only users).
    """

    n_antennas: int
    n_users: int
    n_streams: int = 1
    data_power: float = 1.0
    noise_var: float = 1.0
    i_max: int = 30
    beta_d: float = 0.5
    beta_s: float = 0.8
    beta_u: float = 0.3
    base_seed: int = 0
    modulation: Modulation = Modulation.QPSK
    algorithm: Algorithm = Algorithm.SINGLE_STREAM
    roles: tuple[Role, ...] | None = None
    stream_assignment: tuple[int | None, ...] | None = None
    sigma_u2: float = 1.0
    kind: NomographicKind = NomographicKind.SUM

    def __post_init__(self):
        for name in ("n_antennas", "n_users", "n_streams", "i_max"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if not self.data_power > 0:
            raise ConfigurationError(f"data_power must be > 0, got {self.data_power!r}")
        if not self.noise_var > 0:
            raise ConfigurationError(f"noise_var must be > 0, got {self.noise_var!r}")
        if not self.sigma_u2 > 0:
            raise ConfigurationError(f"sigma_u2 must be > 0, got {self.sigma_u2!r}")
        for name in ("beta_d", "beta_s", "beta_u"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationError(f"{name} must lie strictly inside (0, 1), got {value!r}")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigurationError("base_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "modulation", Modulation(self.modulation))
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "kind", NomographicKind(self.kind))

        roles = self.roles
        if roles is None:
            roles = (Role.BOTH,) * self.n_users
        roles = tuple(Role(r) for r in roles)
        if len(roles) != self.n_users:
            raise ConfigurationError(f"roles has {len(roles)} entries, expected {self.n_users}")
        object.__setattr__(self, "roles", roles)

        assignment = self.stream_assignment
        if assignment is None:
            assignment = contiguous_assignment(roles, self.n_streams)
        assignment = tuple(None if a is None else int(a) for a in assignment)
        if len(assignment) != self.n_users:
            raise ConfigurationError(
                f"stream_assignment has {len(assignment)} entries, expected {self.n_users}")
        for k, (role, a) in enumerate(zip(roles, assignment)):
            if role is Role.DATA_ONLY and a is not None:
                raise ConfigurationError(f"data-only user {k} must not have a stream index")
            if role is not Role.DATA_ONLY and (a is None or not 1 <= a <= self.n_streams):
                raise ConfigurationError(
                    f"computing user {k} needs a stream index in 1..{self.n_streams}, got {a!r}")
        object.__setattr__(self, "stream_assignment", assignment)

    @property
    def compute_power(self) -> float:
        """Per-user computing power E_S (equals the receiver's sigma_s^2)."""
        return power_allocation(self.data_power, self.n_users)

    @property
    def data_mask(self) -> np.ndarray:
        return np.array([r is not Role.COMPUTE_ONLY for r in self.roles])

    @property
    def compute_mask(self) -> np.ndarray:
        return np.array([r is not Role.DATA_ONLY for r in self.roles])

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelRealization:
    """Channel matrix ``h`` of shape (..., N, K) and row energies ``xi`` (..., N)."""

    h: np.ndarray
    xi: np.ndarray = field(default=None)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim < 2:
            raise ConfigurationError("channel matrix must have at least two dimensions")
        object.__setattr__(self, "h", h)
        if self.xi is None:
            object.__setattr__(self, "xi", np.sum(np.abs(h) ** 2, axis=-1))

    @property
    def n_antennas(self) -> int:
        return self.h.shape[-2]

    @property
    def n_users(self) -> int:
        return self.h.shape[-1]

    @classmethod
    def stack(cls, items: Sequence["ChannelRealization"]) -> "ChannelRealization":
        return cls(np.stack([c.h for c in items]), np.stack([c.xi for c in items]))


@dataclass(frozen=True)
class TransmitFrame:
    """Bits (..., K, 2), QPSK symbols d (..., K), computing signals s (..., K).

    ``x`` is the superimposed transmit signal ``d + psi(s)``; for the sum
    function psi is the identity.
    """

    bits: np.ndarray
    d: np.ndarray
    s: np.ndarray
    e_s: float
    kind: NomographicKind = NomographicKind.SUM

    @property
    def x(self) -> np.ndarray:
        s = self.s
        if self.kind is NomographicKind.SUM:
            return self.d + s
        # data-only users carry s == 0, which has no logarithm
        psi = np.where(s != 0, preprocess(self.kind, np.where(s != 0, s, 1.0)), 0.0)
        return self.d + psi

    @classmethod
    def stack(cls, items: Sequence["TransmitFrame"]) -> "TransmitFrame":
        first = items[0]
        return cls(np.stack([f.bits for f in items]), np.stack([f.d for f in items]),
                   np.stack([f.s for f in items]), first.e_s, first.kind)


@dataclass(frozen=True)
class RxSignal:
    y: np.ndarray


def power_allocation(data_power: float, n_users: int) -> float:
    """Per-user computing power so that the aggregate computing stream gets E_D."""
    return data_power / n_users


def trial_rng(base_seed: int, trial_index: int, tag: int) -> np.random.Generator:
    """Independent stream for one (trial, substream) pair, order-independent."""
    seq = np.random.SeedSequence([int(base_seed), int(trial_index), int(tag)])
    return np.random.Generator(np.random.PCG64(seq))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric CN(0, var) samples."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def qpsk_map(bits: np.ndarray, data_power: float) -> np.ndarray:
    """Gray QPSK: bit 0 -> positive, bit 1 -> negative, on (real, imag)."""
    bits = np.asarray(bits)
    c = np.sqrt(data_power / 2.0)
    return c * ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1]))


def qpsk_demap(symbols: np.ndarray) -> np.ndarray:
    """Hard decision back to bits (..., K, 2); ties at zero decode as bit 0."""
    symbols = np.asarray(symbols)
    return np.stack([(symbols.real < 0), (symbols.imag < 0)], axis=-1).astype(np.int8)


def generate_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    return ChannelRealization(complex_normal(rng, (cfg.n_antennas, cfg.n_users)))


def generate_frame(cfg: SystemConfig, rng: np.random.Generator) -> TransmitFrame:
    """Draw bits, QPSK data and computing signals for every user.

    All users draw from the same stream layout regardless of role, so
    changing roles never shifts the random numbers of other users.  For the
    product function the computing signal is positive real, ``s = 2**g`` with
    ``g ~ N(0, E_S)``, so its pre-processed value has power E_S.
    """
    k = cfg.n_users
    e_s = cfg.compute_power
    bits = rng.integers(0, 2, size=(k, 2), dtype=np.int8)
    if cfg.kind is NomographicKind.SUM:
        s = complex_normal(rng, k, e_s)
    else:
        s = (2.0 ** (np.sqrt(e_s) * rng.standard_normal(k))).astype(complex)
    data_mask = cfg.data_mask
    bits = bits * data_mask[:, None].astype(np.int8)
    d = np.where(data_mask, qpsk_map(bits, cfg.data_power), 0.0)
    s = np.where(cfg.compute_mask, s, 0.0)
    return TransmitFrame(bits, d, s, e_s, cfg.kind)


def synthesize_rx(ch: ChannelRealization, frame: TransmitFrame, noise_var: float,
                  rng: np.random.Generator) -> RxSignal:
    """y = H x + w with w ~ CN(0, noise_var I)."""
    x = frame.x
    if ch.h.shape[-1] != x.shape[-1]:
        raise ConfigurationError(
            f"channel has {ch.h.shape[-1]} users but frame has {x.shape[-1]}")
    w_unit = complex_normal(rng, ch.h.shape[:-1], 1.0)
    return RxSignal(superpose(ch.h, x, w_unit, noise_var))


def superpose(h: np.ndarray, x: np.ndarray, w_unit: np.ndarray, noise_var: float) -> np.ndarray:
    """``H x + sqrt(noise_var) w_unit``; the single place received samples are formed."""
    return np.einsum("...nk,...k->...n", h, x) + w_unit * np.sqrt(noise_var)


def draw_trial(cfg: SystemConfig, trial_index: int):
    """Channel, frame and unit-variance noise for one trial.

    The noise is returned at unit variance so the same draw can be scaled to
    every point of an SNR grid (common random numbers across the grid).
    """
    base = cfg.base_seed
    ch = generate_channel(cfg, trial_rng(base, trial_index, TAG_CHANNEL))
    frame = generate_frame(cfg, trial_rng(base, trial_index, TAG_FRAME))
    w_unit = complex_normal(trial_rng(base, trial_index, TAG_NOISE), cfg.n_antennas)
    return ch, frame, w_unit
