"""Nomographic pre/post-processing pairs, target evaluation and stream selectors."""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError


class NomographicKind(str, enum.Enum):
    SUM = "sum"
    PRODUCT = "product"


@dataclass(frozen=True)
class StreamSelector:
    p: np.ndarray  # 0/1 vector of length K
    stream_index: int  # 1-based


class EmptySelectorWarning(UserWarning):
    pass


def preprocess(kind: NomographicKind, s):
    """psi(s): identity for the sum, principal-branch log2 for the product."""
    kind = NomographicKind(kind)
    if kind is NomographicKind.SUM:
        return s
    s = np.asarray(s, dtype=complex)
    if np.any(s == 0):
        raise DomainError("log2 pre-processing is undefined at zero")
    out = np.log(s) / np.log(2.0)
    return out.item() if out.ndim == 0 else out


def postprocess(kind: NomographicKind, aggregate):
    """phi(.): identity for the sum, 2**aggregate for the product."""
    kind = NomographicKind(kind)
    if kind is NomographicKind.SUM:
        return aggregate
    return np.power(2.0, aggregate)


def evaluate_target(kind: NomographicKind, s, sel: StreamSelector | np.ndarray):
    """Ground-truth f_m(s) = phi(sum over selected users of psi(s_k)).

    ``s`` may carry leading batch axes; the selector applies to the last one.
    """
    p = np.asarray(sel.p if isinstance(sel, StreamSelector) else sel)
    s = np.asarray(s)
    if p.shape[-1] != s.shape[-1]:
        raise ConfigurationError(f"selector length {p.shape[-1]} does not match K={s.shape[-1]}")
    mask = p.astype(bool)
    if not mask.any():
        warnings.warn("empty stream selector", EmptySelectorWarning, stacklevel=2)
        return postprocess(kind, np.zeros(s.shape[:-1], dtype=complex)[()])
    picked = s[..., mask]
    aggregate = np.sum(preprocess(kind, picked), axis=-1)
    return postprocess(kind, aggregate)


def make_selectors(roles: Sequence, stream_assignment: Sequence[int | None],
                   n_streams: int) -> list[StreamSelector]:
    """One 0/1 selector per stream; data-only users appear in none."""
    from .model import Role

    if len(roles) != len(stream_assignment):
        raise ConfigurationError("roles and stream_assignment differ in length")
    k = len(roles)
    p = np.zeros((n_streams, k), dtype=np.int8)
    for user, (role, m) in enumerate(zip(roles, stream_assignment)):
        if Role(role) is Role.DATA_ONLY:
            continue
        if m is None or not 1 <= m <= n_streams:
            raise ConfigurationError(f"user {user} assigned to stream {m!r}, valid range 1..{n_streams}")
        p[m - 1, user] = 1
    return [StreamSelector(p[m], m + 1) for m in range(n_streams)]
