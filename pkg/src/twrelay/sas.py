"""Single-stream precoding by source antenna selection.

Each source sends its single stream from one antenna at full power, so
``A_1 = sqrt(tau_1) e_n`` and ``A_2 = sqrt(tau_2) e_m``.  For every pair
``(n, m)`` the decoders and the relay precoder are alternated in closed
form; the pair with the smallest Total-MSE wins.
"""

from dataclasses import dataclass

import numpy as np

from .iterative import RelaySubproblem
from .linalg import herm, hermitian_part, solve_hermitian_psd
from .model import PrecoderSet, relay_input_covariance, total_mmse_residual


@dataclass
class SasOptions:
    """`init` is ``"identity"`` (scaled identity relay) or ``"random"``."""

    max_iters: int = 200
    rel_tol: float = 1e-6
    init: str = "identity"
    seed: int = None
    bisection_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0 or not self.bisection_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.init not in ("identity", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class SasResult:
    """Selected antennas (0-based), their solution and the full table of
    per-pair Total-MSE values (rows: source 1 antenna, columns: source 2)."""

    pair: tuple
    Ar: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    total_mse: float
    table: np.ndarray
    iterations: np.ndarray
    init: str

    def precoders(self, cfg, n_antennas):
        """The equivalent :class:`PrecoderSet` (single stream)."""
        A1, A2 = selection_precoders(cfg, n_antennas, self.pair)
        return PrecoderSet(A1, A2, self.Ar, herm(self.w1[:, None]),
                           herm(self.w2[:, None]))


def selection_precoders(cfg, n, pair):
    """``(sqrt(tau_1) e_n, sqrt(tau_2) e_m)`` as ``N x 1`` columns."""
    A1 = np.zeros((n, 1), dtype=complex)
    A2 = np.zeros((n, 1), dtype=complex)
    A1[pair[0], 0] = np.sqrt(cfg.tau1)
    A2[pair[1], 0] = np.sqrt(cfg.tau2)
    return A1, A2


def sas_decoder_update(cfg, ch, Ar, pair):
    """Wiener decoding vectors for the selected antennas.

    ``w_i = [G_i A_r R_x,ibar A_r^H G_i^H + sigma_i^2 I_N]^{-1}
    sqrt(tau_ibar) G_i A_r h_ibar``, where ``h_ibar`` is the selected column
    of ``H_ibar`` and ``R_x,ibar = tau_ibar h h^H + sigma_r^2 I_M``.

    Returns
    -------
    (w1, w2) : ndarray
        Length-``N`` vectors; the decoder applied to ``y_i`` is ``w_i^H``.
    """
    out = []
    for i in (1, 2):
        j = 3 - i
        h = ch.H(j)[:, pair[j - 1]]
        tau = cfg.tau(j)
        ga = ch.G(i) @ Ar
        r_x = tau * np.outer(h, h.conj()) + cfg.sigmar_sq * np.eye(ch.M)
        cov = hermitian_part(ga @ r_x @ herm(ga)
                             + cfg.sigma_sq(i) * np.eye(ch.N))
        out.append(solve_hermitian_psd(cov, np.sqrt(tau) * (ga @ h)))
    return out[0], out[1]


def sas_relay_update(cfg, ch, w1, w2, pair, bisection_tol=1e-10,
                     full_output=False):
    """Optimal relay precoder for fixed decoding vectors and antennas.

    Same multiplier logic as :func:`twrelay.iterative.relay_update`:
    the unconstrained solution when it meets the budget, otherwise a
    bisection on ``[0, sqrt(Tr{M R_x^{-1} M^H} / tau_r)]``.
    """
    A1, A2 = selection_precoders(cfg, ch.N, pair)
    sub = RelaySubproblem(cfg, ch, A1, A2, herm(w1[:, None]),
                          herm(w2[:, None]))
    ar, lam = sub.solve(bisection_tol)
    return (ar, lam) if full_output else ar


def _initial_relay(cfg, ch, A1, A2, opts, rng):
    r_x = relay_input_covariance(cfg, ch, A1, A2)
    if opts.init == "identity":
        return np.sqrt(cfg.taur / np.trace(r_x).real) * np.eye(ch.M,
                                                               dtype=complex)
    m = ch.M
    ar = (rng.standard_normal((m, m))
          + 1j * rng.standard_normal((m, m))) / np.sqrt(2)
    return ar * np.sqrt(cfg.taur / np.trace(ar @ r_x @ herm(ar)).real)


def solve_pair(cfg, ch, pair, opts=None, rng=None):
    """Alternate decoder and relay updates for one antenna pair.

    Returns
    -------
    (Ar, w1, w2, values)
        `values` is the Total-MSE after each pass, starting with the
        initial relay precoder.
    """
    opts = SasOptions() if opts is None else opts
    A1, A2 = selection_precoders(cfg, ch.N, pair)
    ar = _initial_relay(cfg, ch, A1, A2, opts, rng)
    values = [total_mmse_residual(cfg, ch, PrecoderSet(A1, A2, ar))]
    w1, w2 = sas_decoder_update(cfg, ch, ar, pair)
    for _ in range(opts.max_iters):
        w1, w2 = sas_decoder_update(cfg, ch, ar, pair)
        ar = sas_relay_update(cfg, ch, w1, w2, pair, opts.bisection_tol)
        value = total_mmse_residual(cfg, ch, PrecoderSet(A1, A2, ar))
        prev = values[-1]
        values.append(value)
        if abs(prev - value) <= opts.rel_tol * abs(value):
            break
    w1, w2 = sas_decoder_update(cfg, ch, ar, pair)
    return ar, w1, w2, values


def run_algorithm3(cfg, ch, opts=None):
    """Exhaustive source-antenna selection with closed-form updates.

    Returns
    -------
    SasResult
        Ties in the per-pair table go to the lowest ``(n, m)``.
    """
    opts = SasOptions() if opts is None else opts
    n = ch.N
    rng = np.random.default_rng(opts.seed)
    table = np.empty((n, n))
    iters = np.empty((n, n), dtype=int)
    best = None
    for a in range(n):
        for b in range(n):
            ar, w1, w2, values = solve_pair(cfg, ch, (a, b), opts, rng)
            table[a, b] = values[-1]
            iters[a, b] = len(values) - 1
            if best is None or values[-1] < best[0]:
                best = (values[-1], (a, b), ar, w1, w2)
    value, pair, ar, w1, w2 = best
    return SasResult(pair=pair, Ar=ar, w1=w1, w2=w2, total_mse=value,
                     table=table, iterations=iters, init=opts.init)
