"""Dense symmetric linear algebra kernels.

Symmetric vectorization (svec/smat), deterministic spectral decomposition,
projection onto the PSD cone, two-sided Sylvester solves for definite block
pairs, and exponentials of skew-symmetric matrices. Everything operates on
plain float64 ndarrays; symmetry is enforced by averaging at entry points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailureError

SQRT2 = float(np.sqrt(2.0))

# Largest block edge solved through the explicit Kronecker-sum system;
# bigger blocks go through the Schur-based solver.
_KRON_BLOCK_LIMIT = 64


def symmetrize(a):
    """Return the symmetric part (A + A.T) / 2 as a float64 array."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def require_finite(a, what="matrix"):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")
    return a


def svec_dim(n):
    return n * (n + 1) // 2


def svec(a):
    """Isometric vectorization of a symmetric matrix.

    Off-diagonal entries are scaled by sqrt(2) so that
    ``svec(A) @ svec(B) == <A, B>`` for symmetric A, B. Entries are ordered
    row-major over the lower triangle: (0,0), (1,0), (1,1), (2,0), ...
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    rows, cols = np.tril_indices(n)
    v = a[rows, cols].copy()
    v[rows != cols] *= SQRT2
    return v


def smat(v):
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    t = v.shape[0]
    n = int(round((np.sqrt(8.0 * t + 1.0) - 1.0) / 2.0))
    if svec_dim(n) != t:
        raise ValueError(f"vector length {t} is not a triangular number")
    rows, cols = np.tril_indices(n)
    w = v.copy()
    w[rows != cols] /= SQRT2
    a = np.zeros((n, n))
    a[rows, cols] = w
    a[cols, rows] = w
    return a


def svec_stack(mats):
    """svec applied along the first axis of an (m, n, n) stack; returns (t(n), m)."""
    mats = np.asarray(mats, dtype=float)
    m, n, _ = mats.shape
    rows, cols = np.tril_indices(n)
    out = mats[:, rows, cols].T.copy()
    out[rows != cols, :] *= SQRT2
    return out


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigendecomposition A = Q diag(lam) Q.T with lam sorted descending.

    The decomposition is deterministic: eigenvector signs are fixed so the
    largest-magnitude component of each column is positive.
    """

    Q: np.ndarray
    lam: np.ndarray

    @property
    def n(self):
        return self.lam.shape[0]

    def matrix(self):
        """Reconstruct Q diag(lam) Q.T."""
        return symmetrize((self.Q * self.lam) @ self.Q.T)


def eig_sym(a):
    """Deterministic spectral decomposition of a symmetric matrix.

    Raises
    ------
    NumericalFailureError
        If the underlying eigen-iteration does not converge; ``details``
        carries the dimension and norm of the input.
    """
    a = symmetrize(a)
    require_finite(a)
    try:
        lam, q = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            f"symmetric eigendecomposition failed: {exc}",
            n=a.shape[0],
            fro_norm=float(np.linalg.norm(a)),
        ) from exc
    lam = lam[::-1].copy()
    q = q[:, ::-1]
    # Fix signs: largest-magnitude entry of each eigenvector made positive.
    lead = np.argmax(np.abs(q), axis=0)
    signs = np.sign(q[lead, np.arange(q.shape[1])])
    signs[signs == 0.0] = 1.0
    return SpectralDecomp(Q=q * signs, lam=lam)


def psd_project(a):
    """Orthogonal projection onto the PSD cone: zero out negative eigenvalues."""
    dec = eig_sym(a)
    pos = np.clip(dec.lam, 0.0, None)
    return symmetrize((dec.Q * pos) @ dec.Q.T)


def psd_split(dec: SpectralDecomp):
    """Return (Pi(Z), Pi(-Z)) from one decomposition of Z.

    The two parts share eigenvectors with disjoint eigenvalue supports, so
    their inner product vanishes identically.
    """
    pos = np.clip(dec.lam, 0.0, None)
    neg = np.clip(-dec.lam, 0.0, None)
    plus = symmetrize((dec.Q * pos) @ dec.Q.T)
    minus = symmetrize((dec.Q * neg) @ dec.Q.T)
    return plus, minus


def rotate_to_eigenbasis(dec: SpectralDecomp, a):
    """Q.T @ A @ Q."""
    return dec.Q.T @ a @ dec.Q


def rotate_from_eigenbasis(dec: SpectralDecomp, a):
    """Q @ A @ Q.T."""
    return dec.Q @ a @ dec.Q.T


def sylvester_solve(zx, zs, zo, cond_limit=1e14):
    """Solve ``W @ Zx + (-Zs) @ W = Zo`` for W.

    Parameters
    ----------
    zx : (r, r) symmetric positive definite array
    zs : (s, s) symmetric negative definite array
    zo : (s, r) array, right-hand side

    The definiteness gap lam_min(Zx) - lam_max(Zs) > 0 makes the Kronecker-sum
    system positive definite, hence uniquely solvable. Blocks with edge up to
    64 go through the dense Kronecker-sum linear system; larger blocks use the
    Schur-based solver from scipy.

    Raises
    ------
    ValueError
        If a definiteness precondition fails.
    NumericalFailureError
        If the Kronecker-sum system is estimated worse-conditioned than
        ``cond_limit``.
    """
    zx = symmetrize(zx)
    zs = symmetrize(zs)
    zo = np.asarray(zo, dtype=float)
    r = zx.shape[0]
    s = zs.shape[0]
    if zo.shape != (s, r):
        raise ValueError(f"off-block has shape {zo.shape}, expected {(s, r)}")
    lam_x = np.linalg.eigvalsh(zx)
    lam_s = np.linalg.eigvalsh(zs)
    if lam_x[0] <= 0.0:
        raise ValueError(f"first block not positive definite (lam_min = {lam_x[0]:.3e})")
    if lam_s[-1] >= 0.0:
        raise ValueError(f"second block not negative definite (lam_max = {lam_s[-1]:.3e})")
    sep = lam_x[0] - lam_s[-1]
    spread = lam_x[-1] - lam_s[0]
    if spread / sep > cond_limit:
        raise NumericalFailureError(
            f"Kronecker-sum system too ill-conditioned (estimate {spread / sep:.3e})",
            cond_estimate=float(spread / sep),
        )
    if max(r, s) <= _KRON_BLOCK_LIMIT:
        # vec is column-major: vec(W Zx) = (Zx (x) I) vec(W),
        # vec(-Zs W) = (I (x) -Zs) vec(W).
        kron_sum = np.kron(zx, np.eye(s)) + np.kron(np.eye(r), -zs)
        w = np.linalg.solve(kron_sum, zo.reshape(-1, order="F"))
        return w.reshape((s, r), order="F")
    return scipy.linalg.solve_sylvester(-zs, zx, zo)


def skew_exp(w):
    """Matrix exponential of a skew-symmetric matrix; the result is orthogonal.

    Raises ValueError if the input is not skew-symmetric to within
    1e-12 * max(1, ||W||_F).
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    defect = np.linalg.norm(w + w.T)
    if defect > 1e-12 * max(1.0, np.linalg.norm(w)):
        raise ValueError(f"matrix is not skew-symmetric (||W + W.T||_F = {defect:.3e})")
    return scipy.linalg.expm(w)
