"""Alternating minimization of the Total-MSE over decoders, relay and sources.

Each pass updates the two Wiener decoders, then the relay precoder in
closed form (with a bisection on the power multiplier when the budget is
active), then both source precoders jointly from the convex QCQP of
:mod:`twrelay.qcqp`, by default through its partial dual.  Every step
solves its sub-problem optimally, so the Total-MSE sequence is
non-increasing.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    ConfigurationError,
    InfeasibleBudgetError,
    PrecodingError,
    SolverError,
)
from .linalg import herm, hermitian_part, mat, vec
from .model import (
    PrecoderSet,
    identity_precoders,
    mmse_decoder,
    other,
    scale_to_budgets,
    total_mmse_residual,
    total_mse,
)
from .qcqp import (
    QcqpSolution,
    embed_source_problem,
    solve_qcqp,
    source_terms,
    stack_precoders,
    unstack_precoders,
)

# Generalized eigenvalues below this fraction of the largest are treated as
# exact zeros of the relay normal equations.
NULL_RTOL = 1e-12


@dataclass
class IterativeOptions:
    """Knobs for :func:`run_algorithm1`.

    `init` is ``"identity"``, ``"random"`` (drawn from `seed`) or
    ``"provided"`` (use `initial`).  `streams` defaults to ``N``.
    """

    max_iters: int = 500
    rel_tol: float = 1e-6
    init: str = "identity"
    seed: int = None
    initial: PrecoderSet = None
    streams: int = None
    bisection_tol: float = 1e-10
    qcqp_tol: float = 1e-8
    source_method: str = "dual"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0 or not self.bisection_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.source_method not in ("dual", "barrier"):
            raise ValueError(f"unknown source_method {self.source_method!r}")
        if self.init not in ("identity", "random", "provided"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.initial is None:
            raise ValueError("init='provided' needs an initial PrecoderSet")


@dataclass
class IterationTrace:
    """Total-MSE per pass and the multipliers of the last pass.

    `multiplier` belongs to the relay budget in the relay step;
    `source_multipliers` to the source-1, source-2 and relay budgets in the
    source step.
    """

    values: list = field(default_factory=list)
    multiplier: float = 0.0
    source_multipliers: np.ndarray = None
    converged: bool = False
    iterations: int = 0

    def is_monotone(self, slack=1e-9):
        v = np.asarray(self.values)
        return bool(np.all(np.diff(v) <= slack))


class RelaySubproblem:
    """Relay-precoder sub-problem for fixed source precoders and decoders.

    Minimizes ``J_1 + J_2`` over ``A_r`` subject to
    ``Tr{A_r R_x A_r^H} <= tau_r``.  In the coordinates
    ``z = (C^H (x) I) vec(A_r)`` with ``R_x^T = C C^H``, the relay power is
    ``||z||^2`` and the stationarity condition for multiplier ``lam`` reads
    ``(K + lam I) z = r``; one Hermitian eigendecomposition of ``K`` then
    gives ``A_r(lam)`` and its power for every ``lam``.
    """

    def __init__(self, cfg, ch, A1, A2, W1, W2):
        m = ch.M
        self.cfg = cfg
        self.m = m
        s2r = cfg.sigmar_sq
        h1a1 = ch.H1 @ A1
        h2a2 = ch.H2 @ A2
        eye = np.eye(m)
        r_x1 = h1a1 @ herm(h1a1) + s2r * eye
        r_x2 = h2a2 @ herm(h2a2) + s2r * eye
        self.r_x = hermitian_part(r_x1 + r_x2 - s2r * eye)
        wg1 = W1 @ ch.G1
        wg2 = W2 @ ch.G2
        r_r1 = herm(wg1) @ wg1
        r_r2 = herm(wg2) @ wg2
        self.r_r = herm(wg1) @ herm(h2a2) + herm(wg2) @ herm(h1a1)

        # vec(R1 X R2) = (R2^T kron R1) vec(X)
        k0 = np.kron(r_x2.T, r_r1) + np.kron(r_x1.T, r_r2)
        chol = np.linalg.cholesky(self.r_x.T)
        self._lift = np.kron(chol, eye)          # R_x^T kron I = L L^H
        rhs = vec(self.r_r)
        w = scipy.linalg.solve_triangular(self._lift, k0, lower=True)
        k_tilde = scipy.linalg.solve_triangular(self._lift, herm(w),
                                                lower=True)
        r_tilde = scipy.linalg.solve_triangular(self._lift, rhs, lower=True)
        d, e = np.linalg.eigh(hermitian_part(k_tilde))
        d = np.maximum(d, 0.0)
        c = herm(e) @ r_tilde
        scale = max(d[-1], np.finfo(float).tiny)
        null = d <= NULL_RTOL * scale
        c_norm = np.linalg.norm(c)
        self._unbounded = bool(
            np.linalg.norm(c[null]) > 1e-10 * max(c_norm, 1e-300))
        c = np.where(null & ~self._unbounded, 0.0, c)
        self._d, self._e, self._c, self._null = d, e, c, null
        self._c2 = np.abs(c) ** 2
        self.zero = c_norm == 0.0

    def power(self, lam):
        """Relay power ``g(lam)`` of the stationary point for `lam`."""
        if self.zero:
            return 0.0
        denom = self._d + lam
        if lam == 0.0:
            if self._unbounded:
                return np.inf
            keep = ~self._null
            return float(self._c2[keep] @ denom[keep] ** -2.0)
        return float(self._c2 @ denom ** -2.0)

    def precoder(self, lam):
        """Relay precoder ``A_r(lam)``."""
        if self.zero:
            return np.zeros((self.m, self.m), dtype=complex)
        denom = self._d + lam
        if lam == 0.0:
            z = np.where(self._null, 0.0, self._c / np.where(self._null, 1.0,
                                                             denom))
        else:
            z = self._c / denom
        x = scipy.linalg.solve_triangular(herm(self._lift), self._e @ z,
                                          lower=False)
        return mat(x, self.m, self.m)

    def multiplier_bound(self):
        """Upper bound on the optimal multiplier,
        ``sqrt(Tr{R_r R_x^{-1} R_r^H} / tau_r)``."""
        t = np.trace(self.r_r @ np.linalg.solve(self.r_x, herm(self.r_r)))
        return float(np.sqrt(max(t.real, 0.0) / self.cfg.taur))

    def solve(self, tol=1e-10, max_iter=100):
        """Return ``(A_r, lam)`` minimizing the relay sub-problem.

        The unconstrained stationary point is used when it meets the
        budget; otherwise ``lam`` is bisected on ``[0, multiplier_bound]``
        until the relay power matches ``tau_r`` to relative `tol`.
        """
        taur = self.cfg.taur
        if self.zero:
            return self.precoder(0.0), 0.0
        if self.power(0.0) <= taur:
            return self.precoder(0.0), 0.0
        lo, hi = 0.0, self.multiplier_bound()
        if not self.power(hi) <= taur * (1 + tol):
            raise SolverError(f"relay multiplier bound {hi:.3e} does not "
                              f"bracket the budget")
        lam = hi
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            g = self.power(mid)
            if abs(g - taur) <= tol * taur:
                lam = mid
                break
            if g > taur:
                lo = mid
            else:
                hi = mid
            lam = hi
        return self.precoder(lam), lam


def relay_update(cfg, ch, A1, A2, W1, W2, bisection_tol=1e-10,
                 full_output=False):
    """Optimal relay precoder for fixed source precoders and decoders.

    Returns ``A_r``, or ``(A_r, lam)`` when `full_output` is set.
    """
    ar, lam = RelaySubproblem(cfg, ch, A1, A2, W1, W2).solve(bisection_tol)
    return (ar, lam) if full_output else ar


class SourceSubproblem:
    """Joint source-precoder sub-problem solved through its partial dual.

    For a fixed relay-budget multiplier ``nu`` the problem separates into
    one problem per source,

        min Tr{(R1 + nu Rp) A A^H} - 2 Re Tr{R2 A}  s.t.  Tr{A A^H} <= tau,

    whose minimizer is ``A = (R1 + nu Rp + eta I)^{-1} R2^H`` with the
    source multiplier ``eta`` fixed by a one-dimensional root search.  The
    relay-budget use of that minimizer is non-increasing in ``nu``, so an
    outer root search on ``nu`` enforces complementary slackness.
    """

    def __init__(self, cfg, ch, Ar, W1, W2):
        self.residual_budget = (cfg.taur
                                - cfg.sigmar_sq * np.vdot(Ar, Ar).real)
        if self.residual_budget <= 0:
            raise InfeasibleBudgetError(
                f"relay noise amplification alone uses the relay budget "
                f"(residual {self.residual_budget:.3e})")
        self.n = ch.N
        self.terms = {}
        for i, W in ((1, W1), (2, W2)):
            r1, r2, _ = source_terms(cfg, ch, Ar, W, i)
            j = other(i)
            ah = Ar @ ch.H(j)
            self.terms[j] = (hermitian_part(r1), herm(r2),
                             hermitian_part(herm(ah) @ ah), cfg.tau(j))

    @staticmethod
    def _single(r, rhs, tau, tol):
        """Minimize over one source for the combined quadratic `r`."""
        d, e = np.linalg.eigh(r)
        d = np.maximum(d, 0.0)
        c2 = np.sum(np.abs(herm(e) @ rhs) ** 2, axis=1)
        total = c2.sum()
        if total == 0.0:
            return np.zeros_like(rhs), 0.0
        null = d <= NULL_RTOL * max(d[-1], np.finfo(float).tiny)
        unbounded = c2[null].sum() > 1e-20 * total

        eta = 0.0
        active = False
        if unbounded:
            # phi(0) = 0 with slope 1/sqrt(null energy): first Newton step.
            eta = np.sqrt(c2[null].sum() / tau)
            active = True
        elif float(c2[~null] @ d[~null] ** -2.0) > tau:
            active = True
        if active:
            # phi(eta) = power(eta)^(-1/2) is concave and increasing, so
            # Newton steps from the left rise monotonically to the root.
            target = 1.0 / np.sqrt(tau)
            for _ in range(100):
                keep = ~null if eta == 0.0 else slice(None)
                q = c2[keep] / (d[keep] + eta) ** 2
                p = q.sum()
                slope = p ** -1.5 * float(q @ (1.0 / (d[keep] + eta)))
                step = (target - p ** -0.5) / slope
                if step <= 0.0:
                    break
                eta += step
                if step <= tol * eta:
                    break
        if eta > 0.0:
            inv = 1.0 / (d + eta)
        else:
            inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, d))
        a = e @ (inv[:, None] * (herm(e) @ rhs))
        used = np.vdot(a, a).real
        if used > tau:
            a *= np.sqrt(tau / used)
        return a, eta

    def _solve_given(self, nu, tol):
        out = {}
        used = 0.0
        for j in (1, 2):
            r1, rhs, rp, tau = self.terms[j]
            a, eta = self._single(r1 + nu * rp, rhs, tau, tol)
            out[j] = (a, eta)
            used += np.vdot(a, rp @ a).real
        return out, used

    def solve(self, tol=1e-12, nu_hint=None):
        """Return ``(A1, A2, multipliers)`` with multipliers ordered
        source 1, source 2, relay.

        `nu_hint`, typically the relay multiplier of the previous outer
        pass, only narrows the initial bracket.
        """
        budget = self.residual_budget
        out, used = self._solve_given(0.0, tol)
        nu = 0.0
        if used > budget:
            lo = 0.0
            hi = 1.0 if not nu_hint or nu_hint <= 0 else 1.25 * nu_hint
            while self._solve_given(hi, tol)[1] > budget:
                lo = hi
                hi *= 4.0
                if hi > 1e300:
                    raise SolverError("relay multiplier of the source "
                                      "problem is unbounded")
            if lo == 0.0 and nu_hint and nu_hint > 0:
                probe = 0.8 * nu_hint
                if self._solve_given(probe, tol)[1] > budget:
                    lo = probe

            def gap(t):
                return (1.0 / np.sqrt(max(self._solve_given(t, tol)[1],
                                          1e-300))
                        - 1.0 / np.sqrt(budget))

            nu = scipy.optimize.brentq(gap, lo, hi, xtol=1e-300, rtol=tol)
            out, used = self._solve_given(nu, tol)
        (a1, eta1), (a2, eta2) = out[1], out[2]
        return a1, a2, np.array([eta1, eta2, nu])


def source_update(cfg, ch, Ar, W1, W2, tol=1e-8, method="dual",
                  full_output=False, nu_hint=None):
    """Optimal source precoders ``(A1, A2)`` for fixed relay and decoders.

    Parameters
    ----------
    method : {"dual", "barrier"}
        ``"dual"`` solves the KKT system directly through the separable
        partial dual; ``"barrier"`` hands the real QCQP embedding to
        :func:`twrelay.qcqp.solve_qcqp`.  Both reach the same minimizer.
    full_output : bool
        Also return a :class:`~twrelay.qcqp.QcqpSolution` describing the
        point on the real embedding.
    nu_hint : float, optional
        Guess for the relay-budget multiplier (dual method only).

    Raises
    ------
    InfeasibleBudgetError
        If amplified relay noise already exhausts the relay budget.
    SolverError
        If the sub-problem solver does not converge.
    """
    streams = W1.shape[0]
    if method == "barrier":
        q = embed_source_problem(cfg, ch, Ar, W1, W2)
        sol = solve_qcqp(q, tol=tol, full_output=True)
        A1, A2 = unstack_precoders(sol.x, ch.N, streams)
        return (A1, A2, sol) if full_output else (A1, A2)
    if method != "dual":
        raise ValueError(f"unknown method {method!r}")
    A1, A2, lam = SourceSubproblem(cfg, ch, Ar, W1, W2).solve(
        nu_hint=nu_hint)
    if not full_output:
        return A1, A2
    q = embed_source_problem(cfg, ch, Ar, W1, W2)
    x = stack_precoders(A1, A2)
    sol = QcqpSolution(x=x, objective=q.objective(x), multipliers=lam,
                       kkt_residual=q.kkt_residual(x, lam))
    if sol.kkt_residual > tol:
        raise SolverError(f"source sub-problem KKT residual "
                          f"{sol.kkt_residual:.3e} > tol {tol:.1e}",
                          residual=sol.kkt_residual)
    return A1, A2, sol


def initial_precoders(cfg, ch, opts):
    streams = ch.N if opts.streams is None else opts.streams
    if opts.init == "provided":
        return opts.initial
    if opts.init == "identity":
        return identity_precoders(cfg, ch, streams)
    rng = np.random.default_rng(opts.seed)

    def cn(*shape):
        return (rng.standard_normal(shape)
                + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    n, m = ch.N, ch.M
    return scale_to_budgets(cfg, ch, cn(n, streams), cn(n, streams),
                            cn(m, m))


def run_algorithm1(cfg, ch, opts=None):
    """Iterative joint decoder / relay / source precoding.

    Parameters
    ----------
    cfg : SystemConfig
    ch : ChannelSet
    opts : IterativeOptions, optional

    Returns
    -------
    precoders : PrecoderSet
        Final precoders with their MMSE decoders attached.
    trace : IterationTrace
        ``values[0]`` is the Total-MSE (MMSE decoders) at the initial
        point, ``values[k]`` after pass ``k``.

    Raises
    ------
    ConfigurationError
        If ``M < N``.
    SolverError
        If a sub-problem fails; ``iteration`` records the pass.
    """
    opts = IterativeOptions() if opts is None else opts
    if ch.M < ch.N:
        raise ConfigurationError(f"iterative precoding needs M >= N, got "
                                 f"N={ch.N}, M={ch.M}")
    p = initial_precoders(cfg, ch, opts)
    A1, A2, Ar = p.A1, p.A2, p.Ar
    trace = IterationTrace(values=[total_mmse_residual(cfg, ch, p)])
    lam = 0.0
    src_mult = np.zeros(3)
    for k in range(1, opts.max_iters + 1):
        try:
            cur = PrecoderSet(A1, A2, Ar)
            W1 = mmse_decoder(cfg, ch, cur, 1)
            W2 = mmse_decoder(cfg, ch, cur, 2)
            Ar, lam = relay_update(cfg, ch, A1, A2, W1, W2,
                                   opts.bisection_tol, full_output=True)
            before = total_mse(cfg, ch, PrecoderSet(A1, A2, Ar, W1, W2))
            if opts.source_method == "dual":
                new1, new2, src_mult = SourceSubproblem(
                    cfg, ch, Ar, W1, W2).solve(nu_hint=src_mult[2])
            else:
                new1, new2, sol = source_update(
                    cfg, ch, Ar, W1, W2, opts.qcqp_tol, "barrier",
                    full_output=True)
                src_mult = sol.multipliers
            after = total_mse(cfg, ch, PrecoderSet(new1, new2, Ar, W1, W2))
            # The current sources are feasible for the source sub-problem,
            # so a solver answer that is worse only reflects its tolerance.
            if after <= before:
                A1, A2 = new1, new2
            value = total_mmse_residual(cfg, ch, PrecoderSet(A1, A2, Ar))
        except PrecodingError as exc:
            raise SolverError(f"pass {k}: {exc}", iteration=k) from exc
        prev = trace.values[-1]
        trace.values.append(value)
        trace.iterations = k
        if abs(prev - value) <= opts.rel_tol * abs(value):
            trace.converged = True
            break
    trace.multiplier = lam
    trace.source_multipliers = src_mult
    final = PrecoderSet(A1, A2, Ar)
    final = final.with_decoders(mmse_decoder(cfg, ch, final, 1),
                                mmse_decoder(cfg, ch, final, 2))
    return final, trace


def run_best_of(cfg, ch, restarts, seed=None, opts=None):
    """Best of `restarts` random initializations (by final Total-MSE).

    `seed` is an integer or a :class:`numpy.random.SeedSequence`; each
    start draws from its own spawned child.
    """
    opts = IterativeOptions() if opts is None else opts
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seeds = seed.spawn(restarts)
    best = None
    for ss in seeds:
        run_opts = replace(opts, init="random",
                           seed=int(ss.generate_state(1)[0]))
        p, trace = run_algorithm1(cfg, ch, run_opts)
        if best is None or trace.values[-1] < best[1].values[-1]:
            best = (p, trace)
    return best
