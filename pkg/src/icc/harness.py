"""Scenario-driven Monte Carlo campaigns and CSV output.

Every trial draws its channel, frame and unit-variance noise from seeds
derived from ``(base_seed, trial_index)``, so results do not depend on how
trials are grouped or scheduled.  Trials are processed in fixed-size chunks
(batched through the receivers) and merged in trial order, which keeps the
CSV byte-identical for any worker count.
"""
from __future__ import annotations

import csv
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import metrics
from .combiner import OMEGA_MODES, SOLVERS
from .errors import ConfigurationError, NumericalDivergence, OutputError
from .model import (Algorithm, ChannelRealization, Role, SystemConfig, TransmitFrame, draw_trial,
                    qpsk_demap, superpose)
from .nomographic import EmptySelectorWarning, evaluate_target, make_selectors
from .receiver_benchmark import run_benchmark
from .receiver_icc import CONSENSUS_MODES, AccessConstraints, run_mf_bound, run_multi_stream

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

CSV_HEADER = ("algorithm", "solver_mode", "N", "K", "M", "snr_db", "trials", "ber", "ber_ci95",
              "nmse", "nmse_db", "diverged_fraction", "elapsed_ms")
DEFAULT_CHUNK = 64


@dataclass(frozen=True)
class Scenario:
    """A system configuration plus the sweep and receiver options of one campaign.

    ``config.noise_var`` is ignored: each grid point sets it from the target
    computing SNR.  ``algorithms`` defaults to ``(config.algorithm,)``.
    ``record_timing`` adds wall-clock times to the output, which makes the
    CSV non-reproducible, so it is off by default.
    """

    config: SystemConfig
    snr_grid_db: tuple[float, ...]
    trials: int
    solver_mode: str = "gabp"
    omega_mode: str = "as_printed"
    pin_kds: bool = False
    output_path: str | None = None
    algorithms: tuple[Algorithm, ...] = ()
    consensus: str = "average"
    record_timing: bool = False
    chunk_size: int = DEFAULT_CHUNK
    name: str = ""

    def __post_init__(self):
        grid = tuple(float(x) for x in self.snr_grid_db)
        if not grid:
            raise ConfigurationError("snr_grid_db must not be empty")
        if not all(math.isfinite(x) for x in grid):
            raise ConfigurationError("snr_grid_db entries must be finite")
        object.__setattr__(self, "snr_grid_db", grid)
        if isinstance(self.trials, bool) or not isinstance(self.trials, (int, np.integer)) or self.trials < 1:
            raise ConfigurationError(f"trials must be a positive integer, got {self.trials!r}")
        if self.solver_mode not in SOLVERS:
            raise ConfigurationError(f"solver_mode must be one of {SOLVERS}, got {self.solver_mode!r}")
        if self.omega_mode not in OMEGA_MODES:
            raise ConfigurationError(f"omega_mode must be one of {OMEGA_MODES}, got {self.omega_mode!r}")
        if self.consensus not in CONSENSUS_MODES:
            raise ConfigurationError(f"consensus must be one of {CONSENSUS_MODES}, got {self.consensus!r}")
        if not isinstance(self.chunk_size, (int, np.integer)) or self.chunk_size < 1:
            raise ConfigurationError("chunk_size must be a positive integer")
        algs = tuple(Algorithm(a) for a in (self.algorithms or (self.config.algorithm,)))
        if (Algorithm.SINGLE_STREAM in algs or Algorithm.BENCHMARK in algs) and self.config.n_streams != 1:
            raise ConfigurationError("single_stream and benchmark need n_streams = 1")
        object.__setattr__(self, "algorithms", algs)


@dataclass(frozen=True)
class ResultRow:
    algorithm: str
    solver_mode: str
    N: int
    K: int
    M: int
    snr_db: float
    trials: int
    ber: float
    ber_ci95: float
    nmse: float
    nmse_db: float
    diverged_fraction: float
    elapsed_ms: float


# ---------------------------------------------------------------- scenario files

_SYSTEM_KEYS = {f.name for f in fields(SystemConfig)} - {"noise_var"}
_CAMPAIGN_KEYS = {f.name for f in fields(Scenario)} - {"config"}
_ROLE_ORDER = (Role.DATA_ONLY, Role.COMPUTE_ONLY, Role.BOTH)


def roles_from_counts(counts: dict) -> tuple[Role, ...]:
    """Roles listed as data-only users, then compute-only, then both."""
    unknown = set(counts) - {r.value for r in _ROLE_ORDER}
    if unknown:
        raise ConfigurationError(f"unknown role names in role_counts: {sorted(unknown)}")
    out: list[Role] = []
    for role in _ROLE_ORDER:
        n = counts.get(role.value, 0)
        if not isinstance(n, int) or n < 0:
            raise ConfigurationError(f"role count for {role.value} must be a non-negative integer")
        out.extend([role] * n)
    return tuple(out)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a scenario from flat keys or ``[system]`` / ``[campaign]`` tables.

    Unknown keys are rejected.  ``role_counts = {data_only=.., compute_only=..,
    both=..}`` is accepted in place of an explicit ``roles`` list, and a
    ``stream_assignment`` entry of 0 stands for "no stream".
    """
    flat: dict = {}
    for key, value in data.items():
        if key in ("system", "campaign") and isinstance(value, dict):
            for sub, v in value.items():
                if sub in flat:
                    raise ConfigurationError(f"key {sub!r} given twice")
                flat[sub] = v
        elif key in flat:
            raise ConfigurationError(f"key {key!r} given twice")
        else:
            flat[key] = value
    if "noise_var" in flat:
        raise ConfigurationError("noise_var is derived from snr_grid_db and cannot be set")
    unknown = set(flat) - _SYSTEM_KEYS - _CAMPAIGN_KEYS - {"role_counts"}
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")

    sys_kwargs = {k: v for k, v in flat.items() if k in _SYSTEM_KEYS}
    if "role_counts" in flat:
        if "roles" in flat:
            raise ConfigurationError("give either roles or role_counts, not both")
        sys_kwargs["roles"] = roles_from_counts(flat["role_counts"])
        sys_kwargs.setdefault("n_users", len(sys_kwargs["roles"]))
    if "stream_assignment" in sys_kwargs:
        sys_kwargs["stream_assignment"] = tuple(None if a in (0, None) else a
                                                for a in sys_kwargs["stream_assignment"])
    for required in ("n_antennas", "n_users"):
        if required not in sys_kwargs:
            raise ConfigurationError(f"scenario is missing {required!r}")
    try:
        cfg = SystemConfig(**sys_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    camp = {k: v for k, v in flat.items() if k in _CAMPAIGN_KEYS}
    for required in ("snr_grid_db", "trials"):
        if required not in camp:
            raise ConfigurationError(f"scenario is missing {required!r}")
    if "algorithms" in camp:
        try:
            camp["algorithms"] = tuple(Algorithm(a) for a in camp["algorithms"])
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
    return Scenario(config=cfg, **camp)


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise OutputError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def apply_env_overrides(scenario: Scenario, env=None) -> Scenario:
    """``ICC_SEED`` replaces the base seed."""
    env = os.environ if env is None else env
    raw = env.get("ICC_SEED")
    if raw is None or raw == "":
        return scenario
    try:
        seed = int(raw, 0)
    except ValueError as exc:
        raise ConfigurationError(f"ICC_SEED must be an integer, got {raw!r}") from exc
    return replace(scenario, config=scenario.config.replace(base_seed=seed))


# ---------------------------------------------------------------- campaign


@dataclass
class _ChunkResult:
    """Per-trial outcomes of one chunk, arrays shaped (n_algorithms, n_snr, n_trials)."""

    bit_errors: np.ndarray
    bits: np.ndarray
    nmse: np.ndarray
    diverged: np.ndarray
    elapsed: np.ndarray = field(default=None)


def _draw_chunk(cfg: SystemConfig, start: int, stop: int):
    draws = [draw_trial(cfg, t) for t in range(start, stop)]
    ch = ChannelRealization.stack([d[0] for d in draws])
    frame = TransmitFrame.stack([d[1] for d in draws])
    w_unit = np.stack([d[2] for d in draws])
    return ch, frame, w_unit


def _run_receiver(alg: Algorithm, y, ch, frame, cfg: SystemConfig, sc: Scenario, sels, constraints):
    """Returns ``(d_hat, f_hat, combiner_converged)`` for a batch of trials."""
    if alg is Algorithm.BENCHMARK:
        out = run_benchmark(y, ch, cfg, solver=sc.solver_mode, omega_mode=sc.omega_mode,
                            selectors=sels)
    elif alg is Algorithm.MF_BOUND:
        out = run_mf_bound(y, ch, cfg, frame, sels, solver=sc.solver_mode,
                           omega_mode=sc.omega_mode, constraints=constraints,
                           consensus=sc.consensus)
    else:
        out = run_multi_stream(y, ch, cfg, sels, solver=sc.solver_mode, omega_mode=sc.omega_mode,
                               constraints=constraints, consensus=sc.consensus)
    return out.d_hat, out.f_hat, out.converged


def _take(ch, frame, y, idx):
    return (ChannelRealization(ch.h[idx], ch.xi[idx]),
            TransmitFrame(frame.bits[idx], frame.d[idx], frame.s[idx], frame.e_s, frame.kind),
            y[idx])


def _run_chunk(args) -> _ChunkResult:
    sc, start, stop = args
    cfg = sc.config
    n_t = stop - start
    n_a, n_s = len(sc.algorithms), len(sc.snr_grid_db)
    res = _ChunkResult(np.zeros((n_a, n_s, n_t), dtype=np.int64), np.zeros((n_a, n_s, n_t), dtype=np.int64),
                       np.full((n_a, n_s, n_t), np.nan), np.zeros((n_a, n_s, n_t), dtype=bool),
                       np.zeros((n_a, n_s)))
    ch, frame, w_unit = _draw_chunk(cfg, start, stop)
    sels = make_selectors(cfg.roles, cfg.stream_assignment, cfg.n_streams)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySelectorWarning)
        f_true = np.stack([evaluate_target(cfg.kind, frame.s, sel) for sel in sels], axis=-1)
    constraints = AccessConstraints.from_config(cfg, sc.pin_kds)
    data_mask = cfg.data_mask
    bits_per_trial = 2 * int(data_mask.sum())

    for j, snr in enumerate(sc.snr_grid_db):
        nv = metrics.snr_to_noise_var(snr, cfg)
        c = cfg.replace(noise_var=nv)
        y = superpose(ch.h, frame.x, w_unit, nv)
        for a, alg in enumerate(sc.algorithms):
            t0 = time.perf_counter()
            try:
                batches = [(np.arange(n_t), _run_receiver(alg, y, ch, frame, c, sc, sels, constraints))]
            except NumericalDivergence:
                # isolate the offending trials; the others keep their results
                batches = []
                for t in range(n_t):
                    sub_ch, sub_frame, sub_y = _take(ch, frame, y, slice(t, t + 1))
                    try:
                        out = _run_receiver(alg, sub_y, sub_ch, sub_frame, c, sc, sels, constraints)
                        batches.append((np.array([t]), out))
                    except NumericalDivergence:
                        res.diverged[a, j, t] = True
            for idx, (d_hat, f_hat, conv) in batches:
                wrong = qpsk_demap(d_hat) != frame.bits[idx]
                res.bit_errors[a, j, idx] = np.count_nonzero(wrong[..., data_mask, :], axis=(-1, -2))
                res.bits[a, j, idx] = bits_per_trial
                err = np.abs(f_true[idx] - f_hat) ** 2
                res.nmse[a, j, idx] = err.sum(axis=-1) / cfg.n_users
                res.diverged[a, j, idx] |= ~np.all(conv, axis=-1)
            res.elapsed[a, j] += time.perf_counter() - t0
    return res


def _chunks(trials: int, size: int):
    return [(s, min(s + size, trials)) for s in range(0, trials, size)]


def run_campaign(scenario: Scenario, threads: int = 1) -> list[ResultRow]:
    """Run every (SNR point, algorithm) pair; rows ordered by SNR, then algorithm."""
    if not isinstance(scenario, Scenario):
        raise ConfigurationError("run_campaign needs a Scenario")
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    tasks = [(scenario, s, e) for s, e in _chunks(scenario.trials, scenario.chunk_size)]
    if threads == 1 or len(tasks) == 1:
        parts = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, tasks))

    bit_errors = np.concatenate([p.bit_errors for p in parts], axis=-1)
    bits = np.concatenate([p.bits for p in parts], axis=-1)
    nmse = np.concatenate([p.nmse for p in parts], axis=-1)
    diverged = np.concatenate([p.diverged for p in parts], axis=-1)
    elapsed = np.sum([p.elapsed for p in parts], axis=0)

    cfg = scenario.config
    rows = []
    for j, snr in enumerate(scenario.snr_grid_db):
        for a, alg in enumerate(scenario.algorithms):
            errs, total = int(bit_errors[a, j].sum()), int(bits[a, j].sum())
            ok = np.isfinite(nmse[a, j])
            m = metrics.TrialMetrics(errs, total, float(np.sum(nmse[a, j][ok])),
                                     cfg.n_streams, int(ok.sum()), int(diverged[a, j].sum()))
            ber = m.ber
            ci = metrics.wilson_halfwidth(errs, total) if total else metrics.UNDEFINED
            rows.append(ResultRow(
                algorithm=alg.value, solver_mode=scenario.solver_mode, N=cfg.n_antennas,
                K=cfg.n_users, M=cfg.n_streams, snr_db=snr, trials=scenario.trials, ber=ber,
                ber_ci95=ci, nmse=m.nmse, nmse_db=metrics.nmse_db(m.nmse),
                diverged_fraction=m.diverged / scenario.trials,
                elapsed_ms=1e3 * float(elapsed[a, j]) if scenario.record_timing else metrics.UNDEFINED,
            ))
    return rows


# ---------------------------------------------------------------- CSV


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def write_csv(rows, path: str) -> None:
    """UTF-8 CSV with a fixed header; floats carry 9 significant digits."""
    rows = list(rows)
    if not rows:
        raise ConfigurationError("no rows to write")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in rows:
                writer.writerow([_fmt(getattr(row, name)) for name in CSV_HEADER])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from exc


def read_csv(path: str) -> list[ResultRow]:
    types = {f.name: f.type for f in fields(ResultRow)}
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_HEADER:
                raise ConfigurationError(f"{path}: unexpected header {header}")
            out = []
            for rec in reader:
                kw = {}
                for name, text in zip(header, rec):
                    kind = types[name]
                    kw[name] = int(text) if kind == "int" else float(text) if kind == "float" else text
                out.append(ResultRow(**kw))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror}") from exc
    return out


# ---------------------------------------------------------------- presets

_SNR_GRID = tuple(float(x) for x in range(0, 31, 5))
_PRESET_TRIALS = 1000


def _preset(name, n, k, *, algorithms, grid=_SNR_GRID, roles=None, **cfg_kwargs):
    cfg = SystemConfig(n_antennas=n, n_users=k, roles=roles, **cfg_kwargs)
    return Scenario(config=cfg, snr_grid_db=grid, trials=_PRESET_TRIALS, algorithms=algorithms,
                    name=name)


def _fig2(n, ks, name):
    algs = (Algorithm.BENCHMARK, Algorithm.MF_BOUND)
    return [_preset(f"{name}-K{k}", n, k, algorithms=algs) for k in ks]


def _fig4():
    algs = (Algorithm.BENCHMARK, Algorithm.SINGLE_STREAM, Algorithm.MF_BOUND)
    return [_preset(f"fig4-K{k}", 100, k, algorithms=algs) for k in (75, 100, 125)]


def _fig5():
    algs = (Algorithm.BENCHMARK, Algorithm.SINGLE_STREAM, Algorithm.MF_BOUND)
    return [_preset(f"fig5-K{k}", 100, k, algorithms=algs, grid=(20.0,)) for k in range(20, 121, 20)]


def _fig7():
    out = []
    for kd, ks, kds in ((25, 25, 25), (30, 30, 40), (40, 40, 45)):
        roles = roles_from_counts({"data_only": kd, "compute_only": ks, "both": kds})
        out.append(_preset(f"fig7-{kd}-{ks}-{kds}", 100, len(roles),
                           algorithms=(Algorithm.SINGLE_STREAM,), roles=roles))
    return out


PRESETS = {
    "fig2a": (lambda: _fig2(100, (75, 100, 125), "fig2a"), "benchmark receiver, N=100, K in 75/100/125"),
    "fig2b": (lambda: _fig2(200, (150, 200), "fig2b"), "benchmark receiver, N=200, K in 150/200"),
    "fig4": (_fig4, "single-stream vs benchmark vs MF bound, N=100"),
    "fig5": (_fig5, "NMSE against load K = 20..120, N=100, 20 dB"),
    "fig7": (_fig7, "multi-access role splits (K_D, K_S, K_DS), N=100"),
}


def preset_scenarios(name: str) -> list[Scenario]:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name][0]()
