"""The (N, M, N) amplify-and-forward two-way relay model.

Two sources with `N` antennas exchange ``d`` unit-power i.i.d. streams each
(``d = N`` for full multiplexing, ``d = 1`` in single-stream mode) through
an `M`-antenna relay.  Source ``i`` transmits ``A_i s_i``; the relay
forwards ``A_r (H_1 A_1 s_1 + H_2 A_2 s_2 + n_r)`` and destination ``i``,
after cancelling its own back-propagated signal, observes

    y_i = F_i s_ibar + G_i A_r n_r + n_i,   F_i = G_i A_r H_ibar A_ibar.

Sides are the integers 1 and 2; ``ibar`` is the other one.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError
from .linalg import as_matrix, herm, hermitian_part, solve_hermitian_psd

POWER_RTOL = 1e-9
COND_WARN = 1e12


def other(i):
    """Index of the opposite side."""
    if i not in (1, 2):
        raise ValueError(f"side must be 1 or 2, got {i!r}")
    return 3 - i


@dataclass(frozen=True)
class SystemConfig:
    """Antenna counts, power budgets and noise variances (all linear)."""

    N: int
    M: int
    tau1: float
    tau2: float
    taur: float
    sigma1_sq: float
    sigma2_sq: float
    sigmar_sq: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        for name in ("tau1", "tau2", "taur",
                     "sigma1_sq", "sigma2_sq", "sigmar_sq"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    def tau(self, i):
        return self.tau1 if i == 1 else self.tau2

    def sigma_sq(self, i):
        return self.sigma1_sq if i == 1 else self.sigma2_sq

    def scaled(self, factor):
        """Copy with all three power budgets multiplied by `factor`."""
        return replace(self, tau1=self.tau1 * factor,
                       tau2=self.tau2 * factor, taur=self.taur * factor)


@dataclass(frozen=True)
class ChannelSet:
    """MAC channels `H1`, `H2` (``M x N``) and BC channels `G1`, `G2`
    (``N x M``) of one realization."""

    H1: np.ndarray
    H2: np.ndarray
    G1: np.ndarray
    G2: np.ndarray

    def __post_init__(self):
        for name in ("H1", "H2", "G1", "G2"):
            object.__setattr__(self, name,
                               as_matrix(getattr(self, name), name))
        m, n = self.H1.shape
        if self.H2.shape != (m, n):
            raise DimensionError(f"H2 has shape {self.H2.shape}, "
                                 f"expected {(m, n)}")
        for name in ("G1", "G2"):
            if getattr(self, name).shape != (n, m):
                raise DimensionError(f"{name} has shape "
                                     f"{getattr(self, name).shape}, "
                                     f"expected {(n, m)}")
        for name in ("H1", "H2", "G1", "G2"):
            if np.linalg.cond(getattr(self, name)) > COND_WARN:
                warnings.warn(f"channel {name} is nearly rank deficient",
                              RuntimeWarning, stacklevel=3)

    @property
    def N(self):
        return self.H1.shape[1]

    @property
    def M(self):
        return self.H1.shape[0]

    def H(self, i):
        return self.H1 if i == 1 else self.H2

    def G(self, i):
        return self.G1 if i == 1 else self.G2


@dataclass(frozen=True)
class PrecoderSet:
    """Source precoders ``A_i`` (``N x d``), relay precoder ``A_r``
    (``M x M``) and, optionally, decoders ``W_i`` (``d x N``)."""

    A1: np.ndarray
    A2: np.ndarray
    Ar: np.ndarray
    W1: np.ndarray = None
    W2: np.ndarray = None

    def __post_init__(self):
        for name in ("A1", "A2", "Ar"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=complex))
        if self.A1.shape != self.A2.shape:
            raise DimensionError("A1 and A2 must have the same shape")
        if self.Ar.shape[0] != self.Ar.shape[1]:
            raise DimensionError(f"Ar must be square, got {self.Ar.shape}")
        for name in ("W1", "W2"):
            w = getattr(self, name)
            if w is not None:
                w = np.asarray(w, dtype=complex)
                if w.shape != (self.streams, self.A1.shape[0]):
                    raise DimensionError(f"{name} has shape {w.shape}, "
                                         f"expected "
                                         f"{(self.streams, self.A1.shape[0])}")
                object.__setattr__(self, name, w)

    @property
    def streams(self):
        return self.A1.shape[1]

    def A(self, i):
        return self.A1 if i == 1 else self.A2

    def W(self, i):
        return self.W1 if i == 1 else self.W2

    def with_decoders(self, W1, W2):
        return replace(self, W1=W1, W2=W2)


def _check_conformal(ch, p):
    n, m = ch.N, ch.M
    if p.A1.shape[0] != n or p.Ar.shape != (m, m):
        raise DimensionError(f"precoders {p.A1.shape}/{p.Ar.shape} do not "
                             f"match an (N={n}, M={m}) channel")


def equivalent_channel(ch, p, i):
    """End-to-end channel ``F_i = G_i A_r H_ibar A_ibar`` seen at side i."""
    _check_conformal(ch, p)
    j = other(i)
    return ch.G(i) @ p.Ar @ ch.H(j) @ p.A(j)


def relay_noise_covariance(cfg, ch, Ar, i):
    """``sigma_i^2 I + sigma_r^2 G_i A_r A_r^H G_i^H``."""
    ga = ch.G(i) @ Ar
    return (cfg.sigma_sq(i) * np.eye(ch.N)
            + cfg.sigmar_sq * (ga @ herm(ga)))


def relay_input_covariance(cfg, ch, A1, A2):
    """Relay receive covariance ``R_x = sum_i H_i A_i A_i^H H_i^H +
    sigma_r^2 I``."""
    h1a1 = ch.H1 @ A1
    h2a2 = ch.H2 @ A2
    return (h1a1 @ herm(h1a1) + h2a2 @ herm(h2a2)
            + cfg.sigmar_sq * np.eye(ch.M))


def mse(cfg, ch, p, i):
    """MSE ``J_i`` at side i for the decoder stored in `p`."""
    w = p.W(i)
    if w is None:
        raise ValueError(f"precoder set has no decoder W{i}")
    f = equivalent_channel(ch, p, i)
    wf = w @ f
    wga = w @ ch.G(i) @ p.Ar
    d = p.streams
    value = (np.vdot(wf, wf).real
             - 2.0 * np.trace(wf).real
             + cfg.sigmar_sq * np.vdot(wga, wga).real
             + cfg.sigma_sq(i) * np.vdot(w, w).real
             + d)
    return float(value)


def total_mse(cfg, ch, p):
    """Total-MSE ``J_1 + J_2`` with the decoders stored in `p`."""
    return mse(cfg, ch, p, 1) + mse(cfg, ch, p, 2)


def mmse_decoder(cfg, ch, p, i):
    """Wiener decoder ``W_i = F_i^H R_{w_i}^{-1}``."""
    f = equivalent_channel(ch, p, i)
    r_w = hermitian_part(f @ herm(f) + relay_noise_covariance(cfg, ch,
                                                              p.Ar, i))
    return herm(solve_hermitian_psd(r_w, f))


def with_mmse_decoders(cfg, ch, p):
    """Copy of `p` carrying the MMSE decoders for its precoders."""
    return p.with_decoders(mmse_decoder(cfg, ch, p, 1),
                           mmse_decoder(cfg, ch, p, 2))


def mmse_residual(cfg, ch, p, i):
    """MSE left at side i after MMSE decoding,
    ``Tr{[I + F^H (sigma_i^2 I + sigma_r^2 G A_r A_r^H G^H)^{-1} F]^{-1}}``.
    """
    f = equivalent_channel(ch, p, i)
    c = relay_noise_covariance(cfg, ch, p.Ar, i)
    e = np.eye(p.streams) + herm(f) @ solve_hermitian_psd(
        hermitian_part(c), f)
    e = hermitian_part(e)
    return float(np.trace(np.linalg.inv(e)).real)


def total_mmse_residual(cfg, ch, p):
    return mmse_residual(cfg, ch, p, 1) + mmse_residual(cfg, ch, p, 2)


def source_power(p, i):
    """``Tr(A_i A_i^H)``."""
    a = p.A(i)
    return float(np.vdot(a, a).real)


def relay_power(cfg, ch, p):
    """Relay transmit power ``Tr{A_r R_x A_r^H}``."""
    _check_conformal(ch, p)
    r_x = relay_input_covariance(cfg, ch, p.A1, p.A2)
    return float(np.trace(p.Ar @ r_x @ herm(p.Ar)).real)


def is_feasible(cfg, ch, p, rtol=POWER_RTOL):
    """True when all three power budgets hold to relative slack `rtol`."""
    return (source_power(p, 1) <= cfg.tau1 * (1 + rtol)
            and source_power(p, 2) <= cfg.tau2 * (1 + rtol)
            and relay_power(cfg, ch, p) <= cfg.taur * (1 + rtol))


def theorem1_floor(cfg):
    """Lower bound ``2 max(N - M, 0)`` on the Total-MSE; zero for M >= N."""
    return 2.0 * max(cfg.N - cfg.M, 0)


def identity_precoders(cfg, ch, streams=None):
    """Identity-shaped precoders scaled to meet every budget exactly.

    ``A_i = sqrt(tau_i / N) I`` (or the all-ones vector scaled the same way
    when ``streams == 1``) and ``A_r = sqrt(tau_r / Tr R_x) I``.
    """
    n = ch.N
    streams = n if streams is None else streams
    if streams == n:
        shape = np.eye(n)
    elif streams == 1:
        shape = np.ones((n, 1))
    else:
        raise ValueError(f"streams must be 1 or N, got {streams}")
    a1 = np.sqrt(cfg.tau1 / n) * shape
    a2 = np.sqrt(cfg.tau2 / n) * shape
    r_x = relay_input_covariance(cfg, ch, a1, a2)
    ar = np.sqrt(cfg.taur / np.trace(r_x).real) * np.eye(ch.M)
    return PrecoderSet(a1.astype(complex), a2.astype(complex),
                       ar.astype(complex))


def scale_to_budgets(cfg, ch, A1, A2, Ar):
    """Scale arbitrary matrices so that every budget is met with equality."""
    A1 = A1 * np.sqrt(cfg.tau1 / np.vdot(A1, A1).real)
    A2 = A2 * np.sqrt(cfg.tau2 / np.vdot(A2, A2).real)
    r_x = relay_input_covariance(cfg, ch, A1, A2)
    Ar = Ar * np.sqrt(cfg.taur / np.trace(Ar @ r_x @ herm(Ar)).real)
    return PrecoderSet(A1, A2, Ar)
