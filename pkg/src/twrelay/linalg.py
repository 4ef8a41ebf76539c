"""Dense complex linear algebra shared by the precoding solvers.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``; numpy
stores them row-major, but every vectorization in this package uses
column stacking (Fortran order), which is the convention under which

    vec(A @ X @ B) == kron(B.T, A) @ vec(X)

holds.  The relay-precoder solution relies on that identity.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DecompositionError,
    DefinitenessError,
    DimensionError,
    IllConditionedError,
)

# Rank test used before the GSVD; random Rayleigh draws sit many orders of
# magnitude above this.
RANK_RTOL = 1e-12


def as_matrix(a, name="matrix"):
    """Return `a` as a finite 2-D complex array.

    Raises
    ------
    DimensionError
        If `a` is not two-dimensional or has an empty axis.
    ValueError
        If any entry is NaN or infinite.
    """
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, "
                             f"got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def herm(a):
    """Conjugate transpose."""
    return a.conj().T


@dataclass(frozen=True)
class SvdResult:
    """Full SVD ``A = U @ diag(S) @ V^H`` with `S` non-increasing."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        m, n = self.U.shape[0], self.V.shape[0]
        core = np.zeros((m, n), dtype=complex)
        k = self.S.size
        core[:k, :k] = np.diag(self.S)
        return self.U @ core @ herm(self.V)


@dataclass(frozen=True)
class GsvdResult:
    """Joint factorization of an ``M x N`` pair sharing a left factor.

    ``A = V @ Sigma1 @ U1^H`` and ``B = V @ Sigma2 @ U2^H`` where `V` is a
    non-singular ``M x M`` matrix, `U1`, `U2` are ``N x N`` unitary and

    * ``Sigma1 = [0_{(M-N) x N}; diag(lambda1)]``
    * ``Sigma2 = [diag(lambda2); 0_{(M-N) x N}]``
    * ``Sigma1 @ Sigma1.T + Sigma2 @ Sigma2.T = I_M``

    For ``M == N`` the last line is the same as
    ``Sigma1.T @ Sigma1 + Sigma2.T @ Sigma2 = I_N``.
    """

    V: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray

    @property
    def lambda1(self):
        m, n = self.Sigma1.shape
        return np.diag(self.Sigma1[m - n:, :]).real.copy()

    @property
    def lambda2(self):
        n = self.Sigma2.shape[1]
        return np.diag(self.Sigma2[:n, :]).real.copy()


def svd(a):
    """Full singular value decomposition of a complex matrix.

    Parameters
    ----------
    a : array_like
        ``m x n`` complex matrix.

    Returns
    -------
    SvdResult
        Unitary `U` (``m x m``) and `V` (``n x n``) and the ``min(m, n)``
        singular values in non-increasing order.

    Raises
    ------
    DecompositionError
        If LAPACK fails to converge.
    """
    a = as_matrix(a)
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"SVD did not converge: {exc}") from exc
    return SvdResult(U=u, S=s, V=herm(vh))


def _check_full_column_rank(a, name):
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        raise IllConditionedError(f"{name} is rank deficient "
                                  f"(singular values {s})")


def gsvd(a, b):
    """Generalized SVD of an ``M x N`` pair with ``N <= M <= 2N``.

    The textbook statement factors a wide pair ``{A^H, B^H}`` (``N x M``)
    as ``U_A Sigma_A V^H``.  Conjugate-transposing that statement gives the
    tall form returned here, ``A = V Sigma_A^T U_A^H``; so `Sigma1` below is
    ``Sigma_A^T`` and its zero block sits on top.

    The algorithm is a QR factorization of the stacked pair followed by a
    CS decomposition of the two orthonormal blocks, the latter assembled
    from an SVD of the lower block and a QR of the rotated upper block.

    Parameters
    ----------
    a, b : array_like
        ``M x N`` complex matrices, each of full column rank, whose stacked
        conjugate transposes ``[a^H; b^H]`` have rank `M`.

    Returns
    -------
    GsvdResult

    Raises
    ------
    DimensionError
        Mismatched shapes or ``M`` outside ``[N, 2N]``.
    IllConditionedError
        Either input or the stacked pair is rank deficient.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape != b.shape:
        raise DimensionError(f"GSVD operands differ in shape: "
                             f"{a.shape} vs {b.shape}")
    m, n = a.shape
    if m < n:
        raise DimensionError(f"GSVD requires M >= N, got M={m}, N={n}")
    if m > 2 * n:
        raise DimensionError(f"GSVD requires M <= 2N, got M={m}, N={n}")
    _check_full_column_rank(a, "A")
    _check_full_column_rank(b, "B")

    stacked = np.vstack([herm(a), herm(b)])  # 2N x M
    try:
        q, r = np.linalg.qr(stacked, mode="reduced")
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"QR did not converge: {exc}") from exc
    rs = np.linalg.svd(r, compute_uv=False)
    if rs[-1] <= RANK_RTOL * rs[0]:
        raise IllConditionedError("stacked pair [A^H; B^H] does not have "
                                  f"rank M={m}")
    q1, q2 = q[:n], q[n:]

    # Lower block: Q2 = U2 [diag(c2), 0] Z^H with c2 non-increasing.
    try:
        u2, c2, zh = np.linalg.svd(q2, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"CS step did not converge: {exc}") from exc
    z = herm(zh)

    # Upper block rotated by Z has mutually orthogonal columns; the first
    # M - N vanish because the matching c2 entries equal one.
    t = q1 @ z
    u1, rt = np.linalg.qr(t[:, m - n:])
    d = np.diag(rt)
    phase = np.where(np.abs(d) > 0, d / np.where(d == 0, 1, np.abs(d)), 1.0)
    u1 = u1 * phase[None, :]
    c1 = np.abs(d)

    sigma1 = np.zeros((m, n))
    sigma1[m - n:, :] = np.diag(c1)
    sigma2 = np.zeros((m, n))
    sigma2[:n, :] = np.diag(c2)
    v = herm(r) @ z
    return GsvdResult(V=v, U1=u1, U2=u2, Sigma1=sigma1, Sigma2=sigma2)


def kron(a, b):
    """Kronecker product of two complex matrices."""
    return np.kron(as_matrix(a, "A"), as_matrix(b, "B"))


def vec(a):
    """Column-stacking vectorization, returned as a 1-D array."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise DimensionError(f"vec expects a 2-D array, got ndim={a.ndim}")
    return a.reshape(-1, order="F")


def mat(v, rows, cols):
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise DimensionError(f"cannot reshape {v.size} entries into "
                             f"{rows} x {cols}")
    return v.reshape((rows, cols), order="F")


def solve_hermitian_psd(a, b, herm_rtol=1e-10):
    """Solve ``a @ x = b`` for Hermitian positive definite `a`.

    Parameters
    ----------
    a : array_like
        ``n x n`` Hermitian positive definite matrix.
    b : array_like
        Right-hand side, ``n`` or ``n x k``.
    herm_rtol : float
        Allowed relative deviation from Hermitian symmetry.

    Raises
    ------
    DimensionError
        If `a` is not square or `b` does not conform.
    DefinitenessError
        If `a` is not Hermitian or its Cholesky factorization fails.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, "
                             f"expected {a.shape[0]}")
    scale = np.abs(a).max()
    if np.abs(a - herm(a)).max() > herm_rtol * max(scale, 1e-300):
        raise DefinitenessError("matrix is not Hermitian")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError(f"matrix is not positive definite: {exc}") \
            from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def is_psd(a, tol=1e-9):
    """True iff the smallest eigenvalue of Hermitian `a` is ``>= -tol``."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    w = np.linalg.eigvalsh(0.5 * (a + herm(a)))
    return bool(w[0] >= -tol)


def hermitian_part(a):
    """``(a + a^H) / 2``; strips round-off asymmetry from covariances."""
    return 0.5 * (a + herm(a))
