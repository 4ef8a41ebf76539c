"""Convex QCQP for the joint source-precoder update.

With the relay precoder and both decoders fixed, the Total-MSE is a convex
quadratic in ``(A_1, A_2)`` and the three budgets (two source powers and the
relay power left over after noise amplification) are convex quadratics as
well.  :func:`embed_source_problem` rewrites that complex problem over the
real vector

    a = [Re vec(A1); Im vec(A1); Re vec(A2); Im vec(A2)]

as ``min a^T P a + b^T a + c  s.t.  a^T Q_k a <= r_k``, and
:func:`solve_qcqp` solves it with a log-barrier interior method.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import DimensionError, InfeasibleBudgetError, SolverError
from .linalg import herm, is_psd, vec
from .model import other

DEFAULT_TOL = 1e-8
PSD_TOL = 1e-9
NEWTON_REG = 1e-12


@dataclass(frozen=True)
class RealQcqp:
    """``min x^T P x + b^T x + c`` subject to ``x^T Q_k x <= r_k``."""

    P: np.ndarray
    b: np.ndarray
    c: float
    constraints: tuple

    def __post_init__(self):
        n = self.b.size
        if self.P.shape != (n, n):
            raise DimensionError(f"P has shape {self.P.shape}, expected "
                                 f"{(n, n)}")
        for k, (q, r) in enumerate(self.constraints):
            if q.shape != (n, n):
                raise DimensionError(f"Q_{k + 1} has shape {q.shape}")
            if not r > 0:
                raise ValueError(f"bound r_{k + 1} must be positive, got {r}")

    @property
    def dim(self):
        return self.b.size

    def validate(self, tol=PSD_TOL):
        """Raise ValueError unless `P` and every `Q_k` are PSD."""
        scale = max(1.0, np.abs(self.P).max())
        if not is_psd(self.P, tol * scale):
            raise ValueError("objective matrix P is not PSD")
        for k, (q, _) in enumerate(self.constraints):
            if not is_psd(q, tol * max(1.0, np.abs(q).max())):
                raise ValueError(f"constraint matrix Q_{k + 1} is not PSD")

    def objective(self, x):
        return float(x @ self.P @ x + self.b @ x + self.c)

    def constraint_values(self, x):
        return np.array([x @ q @ x for q, _ in self.constraints])

    def bounds(self):
        return np.array([r for _, r in self.constraints])

    def multipliers(self, x):
        """Nonnegative multipliers minimizing :meth:`kkt_residual` at `x`.

        Stationarity is fitted by NNLS over every candidate active set;
        fitting over all constraints at once can lean on an inactive one
        and leave a complementary-slackness term that never vanishes.
        """
        cols = np.column_stack([2.0 * (q @ x) for q, _ in self.constraints])
        rhs = -(2.0 * self.P @ x + self.b)
        m = len(self.constraints)
        best, best_res = np.zeros(m), np.inf
        for subset in itertools.product((False, True), repeat=m):
            on = np.array(subset)
            lam = np.zeros(m)
            if on.any():
                lam[on], _ = scipy.optimize.nnls(cols[:, on], rhs)
            res = self.kkt_residual(x, lam)
            if res < best_res:
                best, best_res = lam, res
        return best

    def kkt_residual(self, x, multipliers):
        """Stationarity norm plus total complementary slackness."""
        grad = 2.0 * self.P @ x + self.b
        for lam, (q, _) in zip(multipliers, self.constraints):
            grad = grad + 2.0 * lam * (q @ x)
        slack = self.bounds() - self.constraint_values(x)
        return float(np.linalg.norm(grad)
                     + np.sum(np.abs(np.asarray(multipliers) * slack)))


@dataclass
class QcqpSolution:
    x: np.ndarray
    objective: float
    multipliers: np.ndarray
    kkt_residual: float
    outer_objectives: list = field(default_factory=list)
    newton_steps: int = 0


def _real_embedding(h):
    """Real symmetric form of the Hermitian quadratic ``z^H h z``."""
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def stack_precoders(A1, A2):
    """Real variable vector for a pair of source precoders."""
    v1, v2 = vec(A1), vec(A2)
    return np.concatenate([v1.real, v1.imag, v2.real, v2.imag])


def unstack_precoders(x, n, streams):
    """Inverse of :func:`stack_precoders`."""
    k = n * streams
    if x.size != 4 * k:
        raise DimensionError(f"vector of size {x.size} does not hold two "
                             f"{n} x {streams} precoders")
    parts = x.reshape(4, k)
    A1 = (parts[0] + 1j * parts[1]).reshape((n, streams), order="F")
    A2 = (parts[2] + 1j * parts[3]).reshape((n, streams), order="F")
    return A1, A2


def source_terms(cfg, ch, Ar, W, i):
    """The three coefficient matrices of the MSE at side i as a function of
    the opposite source precoder ``A_ibar``:

    ``J_i = Tr{R1 A A^H} - 2 Re Tr{R2 A} + Tr{R3}``.
    """
    j = other(i)
    wga = W @ ch.G(i) @ Ar           # d x M
    r2 = wga @ ch.H(j)               # d x N
    r1 = herm(r2) @ r2               # N x N
    d = W.shape[0]
    r3 = (cfg.sigmar_sq * (wga @ herm(wga)) + cfg.sigma_sq(i) * (W @ herm(W))
          + np.eye(d))
    return r1, r2, r3


def embed_source_problem(cfg, ch, Ar, W1, W2):
    """Real QCQP whose minimizer gives the optimal source precoders.

    Parameters
    ----------
    cfg : SystemConfig
    ch : ChannelSet
    Ar : ndarray
        Fixed relay precoder.
    W1, W2 : ndarray
        Fixed decoders, ``d x N``.

    Returns
    -------
    RealQcqp
        Objective equal to ``J_1 + J_2`` at ``stack_precoders(A1, A2)``.
        Constraints, in order: source 1 power, source 2 power, relay power
        net of amplified relay noise.

    Raises
    ------
    InfeasibleBudgetError
        If ``tau_r - sigma_r^2 Tr(A_r A_r^H) <= 0``.
    """
    n = ch.N
    d = W1.shape[0]
    residual_budget = cfg.taur - cfg.sigmar_sq * np.vdot(Ar, Ar).real
    if residual_budget <= 0:
        raise InfeasibleBudgetError(
            f"relay noise amplification alone uses the relay budget "
            f"(residual {residual_budget:.3e})")
    eye_d = np.eye(d)

    blocks_p, lin, const = {}, {}, 0.0
    for i, W in ((1, W1), (2, W2)):
        r1, r2, r3 = source_terms(cfg, ch, Ar, W, i)
        j = other(i)
        blocks_p[j] = _real_embedding(np.kron(eye_d, r1))
        bhat = vec(r2.T)
        lin[j] = np.concatenate([-2.0 * bhat.real, 2.0 * bhat.imag])
        const += np.trace(r3).real

    k = 2 * n * d
    zeros = np.zeros((k, k))
    P = np.block([[blocks_p[1], zeros], [zeros, blocks_p[2]]])
    b = np.concatenate([lin[1], lin[2]])

    eye = np.eye(k)
    q1 = np.block([[eye, zeros], [zeros, zeros]])
    q2 = np.block([[zeros, zeros], [zeros, eye]])
    relay_blocks = []
    for i in (1, 2):
        ah = Ar @ ch.H(i)
        relay_blocks.append(_real_embedding(np.kron(eye_d, herm(ah) @ ah)))
    q3 = np.block([[relay_blocks[0], zeros], [zeros, relay_blocks[1]]])
    return RealQcqp(P=P, b=b, c=float(const),
                    constraints=((q1, float(cfg.tau1)),
                                 (q2, float(cfg.tau2)),
                                 (q3, float(residual_budget))))


def _strictly_feasible(q, x0):
    r = q.bounds()
    if x0 is None:
        return np.zeros(q.dim)
    g = q.constraint_values(x0)
    ratio = np.max(g / r)
    if ratio < 1.0:
        return x0.copy()
    return x0 * (0.5 / np.sqrt(ratio))


def solve_qcqp(q, tol=DEFAULT_TOL, x0=None, max_newton=80, mu0=1.0,
               mu_factor=10.0, full_output=False):
    """Solve a convex QCQP with a log-barrier method.

    The barrier weight starts at `mu0` and is divided by `mu_factor` after
    each centering step; centering uses damped Newton steps.  Intermediate
    centers are computed loosely; the last one, reached once the duality
    gap bound ``m * mu`` is below `tol`, is polished until the KKT residual
    is below `tol` as well.

    Parameters
    ----------
    q : RealQcqp
    tol : float
        Target on the objective gap and on the KKT residual.
    x0 : ndarray, optional
        Starting point; shrunk towards the origin if not strictly feasible.
        Defaults to the origin, which is strictly feasible because every
        bound is positive.
    full_output : bool
        Return a :class:`QcqpSolution` instead of the bare minimizer.

    Raises
    ------
    SolverError
        If the final centering cannot push the KKT residual below `tol`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, b = q.P, q.b
    qs = np.stack([qk for qk, _ in q.constraints])
    r = q.bounds()
    m = len(r)
    n = q.dim
    x = _strictly_feasible(q, x0)
    two_p = 2.0 * P + NEWTON_REG * np.eye(n)

    def slack(x):
        return r - np.einsum("i,kij,j->k", x, qs, x)

    def barrier(x, mu):
        s = slack(x)
        if np.any(s <= 0):
            return np.inf
        return x @ P @ x + b @ x - mu * np.sum(np.log(s))

    def center(x, mu, final):
        nsteps = 0
        for _ in range(max_newton):
            qx = qs @ x
            s = r - qx @ x
            w = 2.0 * mu / s
            grad = 2.0 * P @ x + b + w @ qx
            if final and q.kkt_residual(x, q.multipliers(x)) <= tol:
                break
            hess = (two_p + np.tensordot(w, qs, 1)
                    + (qx.T * (w / s)) @ qx * 2.0)
            try:
                cf = scipy.linalg.cho_factor(hess, check_finite=False)
                step = -scipy.linalg.cho_solve(cf, grad, check_finite=False)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            decrement = -grad @ step
            if not final and decrement <= 1e-8:
                break
            if decrement <= 1e-30:
                break
            phi = barrier(x, mu)
            t = 1.0
            while t >= 1e-12:
                cand = x + t * step
                phi_c = barrier(cand, mu)
                if phi_c <= phi - 0.25 * t * decrement:
                    break
                # Armijo may fail from round-off once the decrement is
                # tiny; accept any strictly feasible full step then.
                if t == 1.0 and decrement < 1e-14 and np.isfinite(phi_c):
                    break
                t *= 0.5
            else:
                break
            x = cand
            nsteps += 1
        return x, nsteps

    mu = mu0
    outer = []
    steps = 0
    while True:
        final = m * mu <= 0.1 * tol
        x, k = center(x, mu, final)
        steps += k
        outer.append(q.objective(x))
        if final:
            break
        mu /= mu_factor
    # mu / slack loses precision once the slack is ~1e-9 of the bound, so
    # the reported multipliers come from the stationarity system instead.
    lam = q.multipliers(x)
    kkt = q.kkt_residual(x, lam)
    if kkt > tol:
        raise SolverError(f"barrier method stalled with KKT residual "
                          f"{kkt:.3e} > tol {tol:.1e}", residual=kkt)
    sol = QcqpSolution(x=x, objective=q.objective(x), multipliers=lam,
                       kkt_residual=kkt, outer_objectives=outer,
                       newton_steps=steps)
    return sol if full_output else x
