"""Monte Carlo sweeps: Rayleigh channels, precoder design, QPSK transmission.

SNR convention: every budget is fixed at ``tau = N`` and one SNR value
``rho`` (dB) sets both noise levels, ``sigma_r^2 = N / rho`` (MAC phase,
``rho_1 = rho_2 = tau / sigma_r^2``) and ``sigma^2 = N / rho`` (BC phase,
``rho_r = tau_r / sigma^2``).

Randomness is split with :class:`numpy.random.SeedSequence` spawn keys so
that every draw depends only on the master seed and its position in the
sweep, never on scheduling:

* channel of trial ``t``: key ``(0, t)``, shared by all SNR points and
  schemes (common random numbers for comparisons);
* symbols and noise of trial ``t`` at SNR point ``k``: key ``(1, k, t)``.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cp import CpOptions, run_algorithm2
from .errors import ConfigurationError, PrecodingError
from .iterative import IterativeOptions, run_algorithm1, run_best_of
from .model import (
    ChannelSet,
    SystemConfig,
    identity_precoders,
    total_mmse_residual,
    with_mmse_decoders,
)
from .sas import SasOptions, run_algorithm3

SCHEMES = ("iterative", "cp", "cp-uniform", "sas", "none")
STREAM_MODES = ("multi", "single")
DEFAULT_SNR_DB = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
FAILURE_LIMIT = 0.10

_CHANNEL_KEY = 0
_SYMBOL_KEY = 1
_RESTART_KEY = 2


def config_for_snr(n, m, snr_db):
    """System configuration for one point of the single SNR axis."""
    rho = 10.0 ** (snr_db / 10.0)
    noise = n / rho
    return SystemConfig(N=n, M=m, tau1=n, tau2=n, taur=n,
                        sigma1_sq=noise, sigma2_sq=noise, sigmar_sq=noise)


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: antenna counts, SNR grid, schemes and Monte Carlo sizes.

    `schemes` may hold several entries; they are then evaluated on the
    same channel and noise draws.  `restarts` > 0 replaces the identity
    start of the iterative scheme by the best of that many random starts.
    """

    N: int = 2
    M: int = 2
    snr_db: tuple = DEFAULT_SNR_DB
    schemes: tuple = ("iterative",)
    streams: str = "multi"
    trials: int = 100
    symbols_per_trial: int = 1000
    seed: int = 0
    reciprocal: bool = True
    restarts: int = 0
    max_iters: int = 500
    rel_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "snr_db",
                           tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        self.validate()

    def validate(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigurationError(f"N must be a positive integer, "
                                     f"got {self.N}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError(f"M must be a positive integer, "
                                     f"got {self.M}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.symbols_per_trial < 0:
            raise ConfigurationError("symbols_per_trial must be >= 0")
        if not self.snr_db:
            raise ConfigurationError("snr_db must not be empty")
        if not all(math.isfinite(s) for s in self.snr_db):
            raise ConfigurationError("snr_db values must be finite")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")
        if self.streams not in STREAM_MODES:
            raise ConfigurationError(f"streams must be one of "
                                     f"{STREAM_MODES}, got {self.streams!r}")
        if not self.schemes:
            raise ConfigurationError("at least one scheme is required")
        if self.restarts < 0 or self.max_iters < 1 or not self.rel_tol > 0:
            raise ConfigurationError("invalid iterative-scheme settings")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigurationError(f"unknown scheme {s!r}; expected "
                                         f"one of {SCHEMES}")
            if s in ("cp", "cp-uniform"):
                if self.M != self.N:
                    raise ConfigurationError(
                        f"scheme {s!r} requires M == N (channel "
                        f"parallelization), got N={self.N}, M={self.M}")
                if self.streams != "multi":
                    raise ConfigurationError(f"scheme {s!r} requires "
                                             f"streams='multi'")
            if s == "sas" and self.streams != "single":
                raise ConfigurationError("scheme 'sas' requires "
                                         "streams='single'")
            if s == "iterative" and self.M < self.N:
                raise ConfigurationError("scheme 'iterative' requires "
                                         "M >= N")

    @property
    def stream_count(self):
        return self.N if self.streams == "multi" else 1


@dataclass
class TransmitResult:
    """Bit errors and squared symbol errors of one transmission block.

    Index 0 refers to the data of source 1 (decoded at node 2) and index 1
    to the data of source 2 (decoded at node 1).
    """

    bit_errors: np.ndarray
    bits: int
    symbols: int
    squared_error: np.ndarray
    squared_error_sq: np.ndarray = None

    @property
    def ber(self):
        return self.bit_errors / self.bits

    @property
    def mse(self):
        """Empirical MSE per symbol vector, summed over streams."""
        return self.squared_error / self.symbols

    @property
    def mse_stderr(self):
        """Standard error of :attr:`mse` (i.i.d. symbol vectors)."""
        mean = self.mse
        var = self.squared_error_sq / self.symbols - mean ** 2
        return np.sqrt(np.maximum(var, 0.0) / self.symbols)


@dataclass
class PointResult:
    snr_db: float
    scheme: str
    mean_total_mse: float
    mean_ber_s1: float
    mean_ber_s2: float
    trials: int
    failures: int
    mean_iters: float
    mean_empirical_mse: float

    @property
    def mean_ber(self):
        return 0.5 * (self.mean_ber_s1 + self.mean_ber_s2)

    @property
    def flagged(self):
        return self.failures > FAILURE_LIMIT * self.trials


@dataclass
class SweepResult:
    """Aggregates per (SNR point, scheme) in grid order, plus the per-trial
    samples behind them (NaN marks a failed trial)."""

    spec: ExperimentSpec
    points: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)

    @property
    def flagged(self):
        return any(p.flagged for p in self.points)

    def point(self, snr_db, scheme):
        for p in self.points:
            if p.snr_db == snr_db and p.scheme == scheme:
                return p
        raise KeyError((snr_db, scheme))


def draw_channels(n, m, reciprocal, rng):
    """I.i.d. CN(0, 1) channels; ``G_i = H_i^T`` when `reciprocal`."""

    def cn(rows, cols):
        return (rng.standard_normal((rows, cols))
                + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)

    H1 = cn(m, n)
    H2 = cn(m, n)
    if reciprocal:
        return ChannelSet(H1, H2, H1.T.copy(), H2.T.copy())
    return ChannelSet(H1, H2, cn(n, m), cn(n, m))


def qpsk_modulate(bits):
    """Gray-mapped unit-power QPSK; `bits` has shape ``(2, ...)``."""
    return ((1.0 - 2.0 * bits[0]) + 1j * (1.0 - 2.0 * bits[1])) / np.sqrt(2)


def qpsk_demodulate(z):
    """Hard decisions; a component at exactly zero decides bit 0."""
    return np.stack([(z.real < 0).astype(np.int8),
                     (z.imag < 0).astype(np.int8)])


def transmit_qpsk(cfg, ch, p, symbols, rng):
    """Send `symbols` QPSK vectors per source through the relay chain.

    Each destination removes its own back-propagated signal
    ``G_i A_r H_i A_i s_i`` exactly and applies its decoder ``W_i``.

    Returns
    -------
    TransmitResult
    """
    if symbols < 1:
        raise ValueError("symbols must be positive")
    if p.W1 is None or p.W2 is None:
        raise ValueError("precoder set carries no decoders")
    d, n, m = p.streams, ch.N, ch.M
    bits = rng.integers(0, 2, size=(2, 2, d, symbols), dtype=np.int8)
    s = [qpsk_modulate(bits[0]), qpsk_modulate(bits[1])]

    def noise(rows, var):
        return np.sqrt(var / 2.0) * (rng.standard_normal((rows, symbols))
                                     + 1j * rng.standard_normal((rows,
                                                                 symbols)))

    n_r = noise(m, cfg.sigmar_sq)
    n_d = [noise(n, cfg.sigma1_sq), noise(n, cfg.sigma2_sq)]
    tx = [p.A1 @ s[0], p.A2 @ s[1]]
    relay_out = p.Ar @ (ch.H1 @ tx[0] + ch.H2 @ tx[1] + n_r)

    errors = np.zeros(2, dtype=np.int64)
    sq = np.zeros(2)
    sq2 = np.zeros(2)
    for i in (1, 2):
        j = 3 - i
        own = ch.G(i) @ (p.Ar @ (ch.H(i) @ tx[i - 1]))
        y = ch.G(i) @ relay_out + n_d[i - 1] - own
        est = p.W(i) @ y
        decided = qpsk_demodulate(est)
        errors[j - 1] = int(np.count_nonzero(decided != bits[j - 1]))
        per_vector = np.sum(np.abs(est - s[j - 1]) ** 2, axis=0)
        sq[j - 1] = float(per_vector.sum())
        sq2[j - 1] = float(per_vector @ per_vector)
    return TransmitResult(bit_errors=errors, bits=2 * d * symbols,
                          symbols=symbols, squared_error=sq,
                          squared_error_sq=sq2)


def design(spec, scheme, cfg, ch, seed_seq=None):
    """Run one precoding scheme; return ``(PrecoderSet with MMSE decoders,
    iterations)``."""
    d = spec.stream_count
    if scheme == "iterative":
        opts = IterativeOptions(max_iters=spec.max_iters,
                                rel_tol=spec.rel_tol, streams=d)
        if spec.restarts > 0:
            p, trace = run_best_of(cfg, ch, spec.restarts,
                                   seed=seed_seq, opts=opts)
        else:
            p, trace = run_algorithm1(cfg, ch, opts)
        return p, trace.iterations
    if scheme in ("cp", "cp-uniform"):
        mode = "optimized" if scheme == "cp" else "uniform"
        p, trace = run_algorithm2(cfg, ch, CpOptions(mode=mode))
        return p, trace.iterations
    if scheme == "sas":
        res = run_algorithm3(cfg, ch, SasOptions())
        p = with_mmse_decoders(cfg, ch, res.precoders(cfg, ch.N))
        return p, int(res.iterations[res.pair])
    if scheme == "none":
        return with_mmse_decoders(cfg, ch, identity_precoders(cfg, ch, d)), 0
    raise ConfigurationError(f"unknown scheme {scheme!r}")


def _trial(args):
    """All schemes for one (trial, SNR point); pure function of its
    arguments so it can run in any worker."""
    spec, point, trial = args
    chan_rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(_CHANNEL_KEY, trial)))
    ch = draw_channels(spec.N, spec.M, spec.reciprocal, chan_rng)
    cfg = config_for_snr(spec.N, spec.M, spec.snr_db[point])
    out = []
    for scheme in spec.schemes:
        restart_seed = np.random.SeedSequence(
            spec.seed, spawn_key=(_RESTART_KEY, point, trial))
        try:
            p, iters = design(spec, scheme, cfg, ch, restart_seed)
            value = total_mmse_residual(cfg, ch, p)
        except (PrecodingError, np.linalg.LinAlgError):
            out.append(None)
            continue
        ber = (np.nan, np.nan)
        emp = np.nan
        if spec.symbols_per_trial > 0:
            sym_rng = np.random.default_rng(np.random.SeedSequence(
                spec.seed, spawn_key=(_SYMBOL_KEY, point, trial)))
            tr = transmit_qpsk(cfg, ch, p, spec.symbols_per_trial, sym_rng)
            ber = tuple(tr.ber)
            emp = float(tr.mse.sum())
        out.append((value, ber[0], ber[1], iters, emp))
    return out


def _mean(values):
    return float(np.mean(values)) if len(values) else math.nan


def run_sweep(spec, threads=1):
    """Run every (SNR point, trial, scheme) of `spec`.

    Per-trial solver failures are counted and left out of the means.
    Results do not depend on `threads`.
    """
    spec.validate()
    jobs = [(spec, k, t) for k in range(len(spec.snr_db))
            for t in range(spec.trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_trial, jobs, chunksize=1))
    else:
        results = [_trial(j) for j in jobs]

    sweep = SweepResult(spec=spec)
    for k, snr in enumerate(spec.snr_db):
        block = results[k * spec.trials:(k + 1) * spec.trials]
        for s_idx, scheme in enumerate(spec.schemes):
            rows = [r[s_idx] for r in block]
            ok = [r for r in rows if r is not None]
            sweep.samples[(snr, scheme)] = np.array(
                [r[0] if r is not None else np.nan for r in rows])
            sweep.points.append(PointResult(
                snr_db=snr, scheme=scheme,
                mean_total_mse=_mean([r[0] for r in ok]),
                mean_ber_s1=_mean([r[1] for r in ok]),
                mean_ber_s2=_mean([r[2] for r in ok]),
                trials=spec.trials,
                failures=len(rows) - len(ok),
                mean_iters=_mean([r[3] for r in ok]),
                mean_empirical_mse=_mean([r[4] for r in ok])))
    return sweep
