"""Channel-parallelization precoding with per-stream power allocation.

A GSVD of the MAC pair and an SVD of the stacked BC channel turn the link
into ``N`` scalar sub-channels when

    A_i = U_hi diag(sqrt p_Ai),   A_r = U_g diag(sqrt p_Ar) V_h^{-1}.

The design then reduces to choosing the powers ``p_A1, p_A2, p_Ar`` against
a diagonal upper bound of the Total-MSE.  The relay powers follow a
water-filling rule and the source powers a convex problem with three
budgets; the two are alternated.  Only ``M == N`` is supported: with more
relay antennas the GSVD pairs strong streams of one source with weak
streams of the other.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import (
    ConfigurationError,
    ConstraintError,
    IllConditionedError,
    InfeasibleBudgetError,
    SolverError,
)
from .linalg import gsvd, herm, svd
from .model import PrecoderSet, mmse_residual, with_mmse_decoders

FEASIBILITY_RTOL = 1e-9
NEWTON_STEPS = 100


@dataclass(frozen=True)
class ParallelizedChannels:
    """Per-stream gains, noise-shaping terms and the unitary factors.

    `p_h1`, `p_h2` and `p_g` are the squared diagonal gains of the MAC
    GSVD and the BC SVD; `lambda_bh`, `lambda_bg1`, `lambda_bg2` the
    diagonals of ``(V_h^H V_h)^{-1}`` and ``(Vt_gi^H Vt_gi)^{-1}``.
    """

    p_h1: np.ndarray
    p_h2: np.ndarray
    p_g: np.ndarray
    lambda_bh: np.ndarray
    lambda_bg1: np.ndarray
    lambda_bg2: np.ndarray
    U_h1: np.ndarray
    U_h2: np.ndarray
    U_g: np.ndarray
    V_h: np.ndarray
    V_g: np.ndarray

    @property
    def N(self):
        return self.p_g.size

    def p_h(self, i):
        return self.p_h1 if i == 1 else self.p_h2

    def lambda_bg(self, i):
        return self.lambda_bg1 if i == 1 else self.lambda_bg2


@dataclass(frozen=True)
class PowerAllocation:
    p_A1: np.ndarray
    p_A2: np.ndarray
    p_Ar: np.ndarray

    def __post_init__(self):
        for name in ("p_A1", "p_A2", "p_Ar"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, v)
        if not (self.p_A1.size == self.p_A2.size == self.p_Ar.size):
            raise ValueError("power vectors differ in length")

    def p_A(self, i):
        return self.p_A1 if i == 1 else self.p_A2


def relay_coefficients(cfg, pc, p_A1, p_A2):
    """Per-stream relay power per unit ``p_Ar``,
    ``p_h1 p_A1 + p_h2 p_A2 + sigma_r^2 lambda_Bh``."""
    return pc.p_h1 * p_A1 + pc.p_h2 * p_A2 + cfg.sigmar_sq * pc.lambda_bh


def allocation_relay_power(cfg, pc, pa):
    return float(pa.p_Ar @ relay_coefficients(cfg, pc, pa.p_A1, pa.p_A2))


def is_feasible_allocation(cfg, pc, pa, rtol=FEASIBILITY_RTOL):
    return (pa.p_A1.sum() <= cfg.tau1 * (1 + rtol)
            and pa.p_A2.sum() <= cfg.tau2 * (1 + rtol)
            and allocation_relay_power(cfg, pc, pa) <= cfg.taur * (1 + rtol))


def parallelize(cfg, ch):
    """Factor the channels into parallel sub-channels.

    Raises
    ------
    ConfigurationError
        If ``M != N``.
    IllConditionedError
        If a channel or a block of the BC factor is rank deficient.
    """
    n, m = ch.N, ch.M
    if m != n:
        raise ConfigurationError(f"channel parallelization needs M == N, "
                                 f"got N={n}, M={m}")
    mac = gsvd(ch.H1, ch.H2)
    bc = svd(np.vstack([ch.G1, ch.G2]))
    vt1 = bc.U[:n, :n]
    vt2 = bc.U[n:, :n]

    def inv_gram(v, name):
        gram = herm(v) @ v
        if np.linalg.cond(gram) > 1e12:
            raise IllConditionedError(f"{name} is singular")
        return np.linalg.inv(gram)

    return ParallelizedChannels(
        p_h1=mac.lambda1 ** 2,
        p_h2=mac.lambda2 ** 2,
        p_g=bc.S ** 2,
        lambda_bh=np.diag(inv_gram(mac.V, "V_h")).real.copy(),
        lambda_bg1=np.diag(inv_gram(vt1, "upper BC block")).real.copy(),
        lambda_bg2=np.diag(inv_gram(vt2, "lower BC block")).real.copy(),
        U_h1=mac.U1, U_h2=mac.U2, U_g=bc.V, V_h=mac.V, V_g=bc.U)


def assemble_precoders(cfg, pc, pa):
    """Precoders of the parallelizing structure for allocation `pa`.

    Raises
    ------
    ConstraintError
        If `pa` violates a budget.
    """
    if not is_feasible_allocation(cfg, pc, pa):
        raise ConstraintError("power allocation violates a budget")
    A1 = pc.U_h1 * np.sqrt(pa.p_A1)[None, :]
    A2 = pc.U_h2 * np.sqrt(pa.p_A2)[None, :]
    Ar = (pc.U_g * np.sqrt(pa.p_Ar)[None, :]) @ np.linalg.inv(pc.V_h)
    return PrecoderSet(A1, A2, Ar)


def upper_bound_terms(cfg, pc, pa, i):
    """Per-stream terms of the upper bound on the MSE at side i."""
    j = 3 - i
    signal = pc.p_g * pa.p_Ar * pc.p_h(j) * pa.p_A(j)
    noise = (cfg.sigma_sq(i) * pc.lambda_bg(i)
             + cfg.sigmar_sq * pc.lambda_bh * pc.p_g * pa.p_Ar)
    return 1.0 / (1.0 + signal / noise)


def upper_bound_side(cfg, pc, pa, i):
    return float(upper_bound_terms(cfg, pc, pa, i).sum())


def upper_bound_mse(cfg, pc, pa):
    """Diagonal upper bound ``J_1^u + J_2^u`` on the Total-MSE."""
    return upper_bound_side(cfg, pc, pa, 1) + upper_bound_side(cfg, pc, pa, 2)


def uniform_allocation(cfg, pc):
    """Equal source powers and an equal relay power on every stream, each
    scaled to meet its budget."""
    n = pc.N
    p1 = np.full(n, cfg.tau1 / n)
    p2 = np.full(n, cfg.tau2 / n)
    c = relay_coefficients(cfg, pc, p1, p2)
    pr = np.full(n, cfg.taur / c.sum())
    return PowerAllocation(p1, p2, pr)


class _RelayWaterfill:
    """Per-stream data of the relay water-filling problem.

    The MSE bound of stream ``n`` at side i is ``(a + b x) / (a + k x)``
    with ``x = p_Ar``; its slope is ``-a e / (a + k x)^2`` where
    ``e = k - b`` is the signal gain.
    """

    def __init__(self, cfg, pc, p_A1, p_A2):
        self.c = relay_coefficients(cfg, pc, p_A1, p_A2)
        a, e, k = [], [], []
        for i in (1, 2):
            j = 3 - i
            ai = cfg.sigma_sq(i) * pc.lambda_bg(i)
            bi = cfg.sigmar_sq * pc.lambda_bh * pc.p_g
            ei = pc.p_g * pc.p_h(j) * (p_A1 if j == 1 else p_A2)
            a.append(ai)
            e.append(ei)
            k.append(bi + ei)
        self.a, self.e, self.k = np.array(a), np.array(e), np.array(k)
        # Marginal decrease of the bound at x = 0.
        self.slope0 = np.sum(self.e / self.a, axis=0)

    def marginal(self, x):
        """``sum_i a_i e_i / (a_i + k_i x)^2`` per stream."""
        return np.sum(self.a * self.e / (self.a + self.k * x) ** 2, axis=0)

    def streams_for(self, mu):
        """Relay power per stream for the multiplier `mu`.

        Newton's method runs on ``marginal(x)^(-1/2) - target^(-1/2)``: a
        weighted power mean of the affine terms ``a_i + k_i x``, hence
        concave and increasing, so iterates started at ``x = 0`` climb
        monotonically to the root.  With one side active it is affine and
        a single step is exact.
        """
        target = mu * self.c
        on = self.slope0 > target
        x = np.zeros_like(self.c)
        if not on.any():
            return x
        a, e, k = self.a[:, on], self.e[:, on], self.k[:, on]
        goal = target[on] ** -0.5
        z = np.zeros(on.sum())
        for _ in range(NEWTON_STEPS):
            d = a + k * z
            m = np.sum(a * e / d ** 2, axis=0)
            dm = -2.0 * np.sum(a * e * k / d ** 3, axis=0)
            phi = m ** -0.5 - goal
            dphi = -0.5 * m ** -1.5 * dm
            step = -phi / dphi
            z = z + step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(z, 1e-300)):
                break
        x[on] = z
        return x

    def power(self, mu):
        return float(self.streams_for(mu) @ self.c)


def relay_waterfill(cfg, pc, p_A1, p_A2, tol=1e-12, full_output=False):
    """Relay powers minimizing the MSE bound for fixed source powers.

    Each active stream solves ``mu c_n = sum_i a_i e_i / (a_i + k_i x)^2``;
    a stream is switched off when ``mu c_n`` exceeds the right-hand side at
    ``x = 0``.  The total relay power is decreasing in ``mu``; the
    multiplier is found by a bracketed root search on ``log mu``, and the
    final powers are rescaled onto the budget.

    Returns
    -------
    p_Ar : ndarray
        Or ``(p_Ar, mu)`` when `full_output` is set.

    Raises
    ------
    SolverError
        If the multiplier bracket cannot be established.
    """
    p_A1 = np.asarray(p_A1, dtype=float)
    p_A2 = np.asarray(p_A2, dtype=float)
    wf = _RelayWaterfill(cfg, pc, p_A1, p_A2)
    if not np.any(wf.slope0 > 0):
        # No signal reaches either side; the bound does not depend on p_Ar.
        x = np.zeros(pc.N)
        return (x, 0.0) if full_output else x
    taur = cfg.taur
    hi = float(np.max(wf.slope0 / wf.c))       # every stream off
    lo = hi
    for _ in range(2000):
        lo *= 0.5
        if wf.power(lo) >= taur:
            break
    else:
        raise SolverError("relay water level could not be bracketed")
    if wf.power(hi) == taur:
        mu = hi
    else:
        log_mu = scipy.optimize.brentq(
            lambda t: np.log(wf.power(np.exp(t)) / taur)
            if wf.power(np.exp(t)) > 0 else -np.inf,
            np.log(lo), np.log(hi), xtol=1e-15,
            rtol=max(tol, 4 * np.finfo(float).eps))
        mu = float(np.exp(log_mu))
    x = wf.streams_for(mu)
    # Rescale the tiny residual mismatch onto the budget.
    used = float(x @ wf.c)
    if used > 0:
        x = x * (taur / used)
    if not np.any(x > 0):
        raise SolverError("all relay streams switched off with budget left")
    return (x, mu) if full_output else x


def waterfill_kkt_residual(cfg, pc, p_A1, p_A2, p_Ar, mu):
    """Largest relative violation of the water-filling KKT conditions."""
    wf = _RelayWaterfill(cfg, pc, np.asarray(p_A1), np.asarray(p_A2))
    target = mu * wf.c
    on = p_Ar > 0
    res = 0.0
    if on.any():
        m = wf.marginal(p_Ar)
        res = max(res, float(np.max(np.abs(m[on] - target[on])
                                    / target[on])))
    if (~on).any():
        res = max(res, float(np.max(np.maximum(
            wf.slope0[~on] - target[~on], 0.0) / target[~on])))
    return res


def _decreasing_root(f, hi, tol):
    """Root of a non-increasing `f` on ``(0, hi]`` with ``f(hi) <= 0``,
    where ``f`` may be infinite at 0."""
    lo = hi
    for _ in range(2000):
        lo *= 0.5
        if f(lo) > 0:
            break
    else:
        return 0.0
    return scipy.optimize.brentq(f, lo, 2.0 * lo if 2.0 * lo < hi else hi,
                                 xtol=1e-300, rtol=tol)


class _SourcePowers:
    """Source-power sub-problem for fixed relay powers.

    Stream ``n`` of source j contributes ``beta / (beta + alpha y)`` to the
    bound at the opposite side, with ``y = p_Aj^n``.  Stationarity with
    multipliers ``eta_j`` (source budget) and ``nu`` (relay budget) gives

        y = max(0, (sqrt(alpha beta / (eta_j + nu w)) - beta) / alpha),

    where ``w = p_Ar p_hj`` is the relay power per unit ``y``.
    """

    def __init__(self, cfg, pc, p_Ar):
        self.cfg = cfg
        self.alpha, self.beta, self.w = {}, {}, {}
        for j in (1, 2):
            i = 3 - j
            self.w[j] = p_Ar * pc.p_h(j)
            self.alpha[j] = pc.p_g * self.w[j]
            self.beta[j] = (cfg.sigma_sq(i) * pc.lambda_bg(i)
                            + cfg.sigmar_sq * pc.lambda_bh * pc.p_g * p_Ar)
        self.budget = cfg.taur - cfg.sigmar_sq * float(p_Ar @ pc.lambda_bh)

    def powers(self, j, eta, nu):
        alpha, beta, w = self.alpha[j], self.beta[j], self.w[j]
        price = eta + nu * w
        y = np.zeros_like(alpha)
        live = alpha > 0
        with np.errstate(divide="ignore"):
            root = np.sqrt(alpha[live] * beta[live] / price[live])
        y[live] = np.maximum(0.0, (root - beta[live]) / alpha[live])
        return y

    def _source(self, j, nu, tol):
        tau = self.cfg.tau(j)
        if nu > 0:
            y = self.powers(j, 0.0, nu)
            if y.sum() <= tau:
                return y, 0.0
        live = self.alpha[j] > 0
        if not live.any():
            return np.zeros_like(self.alpha[j]), 0.0
        hi = float(np.max(self.alpha[j][live] / self.beta[j][live]))
        eta = _decreasing_root(lambda t: self.powers(j, t, nu).sum() - tau,
                               hi, tol)
        return self.powers(j, eta, nu), eta

    def given(self, nu, tol):
        y1, eta1 = self._source(1, nu, tol)
        y2, eta2 = self._source(2, nu, tol)
        used = float(self.w[1] @ y1 + self.w[2] @ y2)
        return y1, y2, eta1, eta2, used

    def solve(self, tol):
        if self.budget <= 0:
            if self.budget < -FEASIBILITY_RTOL * self.cfg.taur:
                raise InfeasibleBudgetError(
                    "amplified relay noise exceeds the relay budget")
            z = np.zeros_like(self.alpha[1])
            return z, z.copy(), np.zeros(3)
        y1, y2, eta1, eta2, used = self.given(0.0, tol)
        nu = 0.0
        if used > self.budget:
            hi = 0.0
            for j in (1, 2):
                live = self.w[j] > 0
                if live.any():
                    hi = max(hi, float(np.max(
                        self.alpha[j][live]
                        / (self.beta[j][live] * self.w[j][live]))))
            nu = _decreasing_root(
                lambda t: self.given(t, tol)[4] - self.budget, hi, tol)
            y1, y2, eta1, eta2, used = self.given(nu, tol)
            if used > self.budget:
                shrink = self.budget / used
                y1, y2 = y1 * shrink, y2 * shrink
        return y1, y2, np.array([eta1, eta2, nu])

    def kkt_residual(self, y1, y2, mult):
        """Largest stationarity violation, relative to the gradient scale."""
        res = 0.0
        for j, y, eta in ((1, y1, mult[0]), (2, y2, mult[1])):
            alpha, beta = self.alpha[j], self.beta[j]
            live = alpha > 0
            grad = alpha[live] * beta[live] / (beta[live]
                                               + alpha[live] * y[live]) ** 2
            price = eta + mult[2] * self.w[j][live]
            on = y[live] > 0
            scale = max(float(grad.max(initial=0.0)), 1e-300)
            if on.any():
                res = max(res, float(np.max(np.abs(grad[on] - price[on])))
                          / scale)
            if (~on).any():
                res = max(res, float(np.max(np.maximum(
                    grad[~on] - price[~on], 0.0))) / scale)
        return res


def source_power_update(cfg, pc, p_Ar, tol=1e-12, full_output=False):
    """Source powers minimizing the MSE bound for fixed relay powers.

    Solved exactly through the KKT conditions: for fixed multipliers the
    per-stream optimum is closed form, and each multiplier is found by a
    monotone one-dimensional root search.

    Returns
    -------
    (p_A1, p_A2)
        Or ``(p_A1, p_A2, multipliers, kkt_residual)`` with `full_output`;
        multipliers are ordered source 1, source 2, relay.

    Raises
    ------
    InfeasibleBudgetError
        If amplified relay noise alone exceeds the relay budget.
    """
    sp = _SourcePowers(cfg, pc, np.asarray(p_Ar, dtype=float))
    y1, y2, mult = sp.solve(tol)
    if full_output:
        return y1, y2, mult, sp.kkt_residual(y1, y2, mult)
    return y1, y2


@dataclass
class CpOptions:
    """`mode` is ``"optimized"`` (alternate the two power updates) or
    ``"uniform"`` (equal powers, no optimization)."""

    max_iters: int = 100
    rel_tol: float = 1e-8
    mode: str = "optimized"
    tol: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.mode not in ("optimized", "uniform"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class CpTrace:
    """Upper-bound objective (`values`) and exact Total-MSE with MMSE
    decoders (`exact_values`) per pass; index 0 is the uniform start."""

    values: list = field(default_factory=list)
    exact_values: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    allocation: PowerAllocation = None

    def is_monotone(self, slack=1e-9):
        return bool(np.all(np.diff(self.values) <= slack))


def _exact(cfg, ch, p):
    return mmse_residual(cfg, ch, p, 1) + mmse_residual(cfg, ch, p, 2)


def run_algorithm2(cfg, ch, opts=None):
    """Channel-parallelization precoding.

    Starts from the uniform allocation and alternates relay water-filling
    with the source-power update until the bound changes by less than
    ``rel_tol`` relative.

    Returns
    -------
    precoders : PrecoderSet
        With MMSE decoders attached.
    trace : CpTrace
    """
    opts = CpOptions() if opts is None else opts
    pc = parallelize(cfg, ch)
    pa = uniform_allocation(cfg, pc)
    p = assemble_precoders(cfg, pc, pa)
    trace = CpTrace(values=[upper_bound_mse(cfg, pc, pa)],
                    exact_values=[_exact(cfg, ch, p)])
    if opts.mode == "optimized":
        for k in range(1, opts.max_iters + 1):
            p_ar = relay_waterfill(cfg, pc, pa.p_A1, pa.p_A2, opts.tol)
            cand = PowerAllocation(pa.p_A1, pa.p_A2, p_ar)
            p1, p2 = source_power_update(cfg, pc, p_ar, opts.tol)
            cand2 = PowerAllocation(p1, p2, p_ar)
            # Keep the previous half-step if round-off made this one worse.
            if upper_bound_mse(cfg, pc, cand) <= trace.values[-1]:
                pa = cand
            if upper_bound_mse(cfg, pc, cand2) <= upper_bound_mse(cfg, pc,
                                                                   pa):
                pa = cand2
            value = upper_bound_mse(cfg, pc, pa)
            prev = trace.values[-1]
            trace.values.append(value)
            trace.exact_values.append(
                _exact(cfg, ch, assemble_precoders(cfg, pc, pa)))
            trace.iterations = k
            if abs(prev - value) <= opts.rel_tol * abs(value):
                trace.converged = True
                break
    else:
        trace.converged = True
    trace.allocation = pa
    p = assemble_precoders(cfg, pc, pa)
    return with_mmse_decoders(cfg, ch, p), trace
