"""Post-hoc and in-loop run analysis.

Strict-complementarity and nondegeneracy classification of a limit point,
projections measuring how far iterates sit outside the minimal faces of the
PSD cone, rank-identification detection on traces, log-linear rate fitting,
and the additive terms of the regularized backward-error bound for the
scaled KKT system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    SpectralDecomp,
    eig_sym,
    rotate_to_eigenbasis,
    svec_dim,
    svec_stack,
    symmetrize,
)
from .problem import ConstraintKernel, SdpProblem, project_null, project_range

DEFAULT_RANK_TAU = 1e-8


@dataclass
class ComplementarityReport:
    """Numerical ranks of the limit pair and the strict-complementarity verdict.

    r and s are the counted positive / negative eigenvalues of Zstar at the
    rank threshold; sc_holds iff r + s = n, equivalently Zstar is numerically
    nonsingular.
    """

    n: int
    r: int
    s: int
    lam_min_abs_z: float
    eigengap: float
    sc_holds: bool


def _split_counts(lam, tau):
    thr = tau * max(1.0, float(np.max(np.abs(lam))) if lam.size else 1.0)
    r = int(np.sum(lam > thr))
    s = int(np.sum(lam < -thr))
    return r, s


def sc_check(zstar, tau=DEFAULT_RANK_TAU) -> ComplementarityReport:
    """Classify strict complementarity from the spectrum of Zstar."""
    dec = eig_sym(zstar)
    lam = dec.lam
    n = lam.shape[0]
    r, s = _split_counts(lam, tau)
    pos_edge = float(lam[r - 1]) if r > 0 else np.inf
    neg_edge = float(-lam[n - s]) if s > 0 else np.inf
    return ComplementarityReport(
        n=n,
        r=r,
        s=s,
        lam_min_abs_z=float(np.min(np.abs(lam))),
        eigengap=float(min(pos_edge, neg_edge)),
        sc_holds=(r + s == n),
    )


@dataclass
class NondegeneracyReport:
    """Rank-condition test of primal and dual nondegeneracy.

    For each side, nondegeneracy holds iff rank(W1) + rank(W2) equals the rank
    of the joined stack, where W1 spans range(A*) (primal) / null(A) (dual) and
    W2 spans the normal space of the primal (resp. dual) limit in svec
    coordinates.
    """

    rank_w1: int
    rank_w2: int
    rank_joint: int
    dual_rank_w1: int
    dual_rank_w2: int
    dual_rank_joint: int
    primal_nd: bool
    dual_nd: bool


def _numerical_rank(mat, tau):
    if mat.size == 0 or min(mat.shape) == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tau * sv[0]))


def _embedded_block_basis(q, idx):
    """svec columns of Q E_hat_{ij} Q.T over the symmetric elementary basis
    of the principal block indexed by ``idx`` (orthonormal columns)."""
    n = q.shape[0]
    k = len(idx)
    cols = np.zeros((k * (k + 1) // 2, n, n))
    pos = 0
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for a in range(k):
        for c in range(a, k):
            e = np.zeros((n, n))
            if a == c:
                e[idx[a], idx[a]] = 1.0
            else:
                e[idx[a], idx[c]] = inv_sqrt2
                e[idx[c], idx[a]] = inv_sqrt2
            cols[pos] = q @ e @ q.T
            pos += 1
    return svec_stack(cols)


def nd_check(p: SdpProblem, dec: SpectralDecomp, tau=DEFAULT_RANK_TAU) -> NondegeneracyReport:
    """Rank test for primal and dual nondegeneracy at the split of ``dec``.

    ``dec`` is the eigendecomposition of the limit Zstar; its positive block
    carries the primal rank r and its negative block the dual rank s.
    """
    if dec.n != p.n:
        raise ValueError(f"decomposition dimension {dec.n} != problem dimension {p.n}")
    lam = dec.lam
    n = p.n
    r, s = _split_counts(lam, tau)
    w1 = svec_stack(p.A) if p.m > 0 else np.zeros((svec_dim(n), 0))

    # Primal side: range(A*) against the normal space of Xstar (trailing block).
    w2 = _embedded_block_basis(dec.Q, list(range(r, n)))
    rank_w1 = _numerical_rank(w1, tau)
    rank_w2 = _numerical_rank(w2, tau)
    rank_joint = _numerical_rank(np.hstack([w1, w2]), tau)

    # Dual side: null(A) against the normal space of Sstar (leading block).
    if p.m > 0:
        u, sv, _ = np.linalg.svd(w1, full_matrices=True)
        col_rank = int(np.sum(sv > tau * sv[0])) if sv.size else 0
        null_basis = u[:, col_rank:]
    else:
        null_basis = np.eye(svec_dim(n))
    w2d = _embedded_block_basis(dec.Q, list(range(n - s)))
    dual_rank_w1 = _numerical_rank(null_basis, tau)
    dual_rank_w2 = _numerical_rank(w2d, tau)
    dual_rank_joint = _numerical_rank(np.hstack([null_basis, w2d]), tau)

    return NondegeneracyReport(
        rank_w1=rank_w1,
        rank_w2=rank_w2,
        rank_joint=rank_joint,
        dual_rank_w1=dual_rank_w1,
        dual_rank_w2=dual_rank_w2,
        dual_rank_joint=dual_rank_joint,
        primal_nd=(rank_w1 + rank_w2 == rank_joint),
        dual_nd=(dual_rank_w1 + dual_rank_w2 == dual_rank_joint),
    )


# ---------------------------------------------------------------------------
# Minimal-face projections.
# ---------------------------------------------------------------------------


def tangent_s_part(dec: SpectralDecomp, mat, tau=DEFAULT_RANK_TAU):
    """Component of ``mat`` outside the minimal face of the primal limit.

    In the eigenbasis of Zstar, zeroes the leading r x r block (r = counted
    positive eigenvalues) and keeps the rest. When the split is singular the
    near-zero eigenvalues are lumped with the negative block.
    """
    r, _ = _split_counts(dec.lam, tau)
    t = rotate_to_eigenbasis(dec, np.asarray(mat, dtype=float)).copy()
    t[:r, :r] = 0.0
    return dec.Q @ t @ dec.Q.T


def tangent_x_part(dec: SpectralDecomp, mat, tau=DEFAULT_RANK_TAU):
    """Component of ``mat`` outside the minimal face of the (scaled) dual limit.

    Zeroes the trailing s x s block (s = counted negative eigenvalues); near-zero
    eigenvalues are lumped with the positive block.
    """
    _, s = _split_counts(dec.lam, tau)
    n = dec.n
    t = rotate_to_eigenbasis(dec, np.asarray(mat, dtype=float)).copy()
    t[n - s :, n - s :] = 0.0
    return dec.Q @ t @ dec.Q.T


def offblock_norm(dec: SpectralDecomp, h, tau=DEFAULT_RANK_TAU):
    """Frobenius norm of the lower-left off-diagonal block of H in the
    eigenbasis of the reference (rows below the positive block, columns in it)."""
    r, _ = _split_counts(dec.lam, tau)
    t = rotate_to_eigenbasis(dec, np.asarray(h, dtype=float))
    return float(np.linalg.norm(t[r:, :r]))


def face_projections(dec: SpectralDecomp, x, s_mat, sigma, tau=DEFAULT_RANK_TAU):
    """Norms of the minimal-face projections at the split of ``dec``.

    Returns ``(||outside primal face of X||_F, ||outside dual face of
    sigma*S||_F, ||H_O||_F)`` where H = X - sigma*S - Zstar and H_O is its
    off-diagonal block in the eigenbasis of Zstar.
    """
    x = np.asarray(x, dtype=float)
    sig_s = sigma * np.asarray(s_mat, dtype=float)
    face_x = float(np.linalg.norm(tangent_s_part(dec, x, tau)))
    face_s = float(np.linalg.norm(tangent_x_part(dec, sig_s, tau)))
    h = x - sig_s - dec.matrix()
    return face_x, face_s, offblock_norm(dec, h, tau)


# ---------------------------------------------------------------------------
# Trace analysis.
# ---------------------------------------------------------------------------


def rank_trace(records, final: ComplementarityReport):
    """First iteration index from which both iterate ranks stay at the
    converged values (r, s) of ``final``; None if they never stabilize."""
    k_id = None
    for rec in reversed(list(records)):
        if rec.rank_x == final.r and rec.rank_s == final.s:
            k_id = rec.k
        else:
            break
    return k_id


@dataclass
class RateFit:
    """Least-squares geometric rate of a positive sequence tail."""

    window: tuple
    rho_hat: float
    r2: float
    sequence_name: str = ""


def rate_fit(values, window, ks=None, name="") -> RateFit:
    """Fit log(values) over the trailing ``window`` points.

    rho_hat = exp(slope) is the per-step ratio; when ``ks`` gives the
    iteration index of each value the slope is taken per iteration, which
    makes fits of strided traces comparable. An all-equal tail fits exactly
    with rho_hat = 1.
    """
    values = np.asarray(values, dtype=float)
    if window < 10:
        raise ValueError(f"window must be at least 10, got {window}")
    if values.shape[0] < window:
        raise ValueError(f"sequence has {values.shape[0]} points, window needs {window}")
    tail = values[-window:]
    if np.any(tail <= 0.0) or not np.all(np.isfinite(tail)):
        raise ValueError("rate fit needs a positive finite tail")
    if ks is None:
        x = np.arange(window, dtype=float)
        lo, hi = values.shape[0] - window, values.shape[0] - 1
    else:
        ks = np.asarray(ks, dtype=float)
        if ks.shape != values.shape:
            raise ValueError("ks must align with values")
        x = ks[-window:]
        lo, hi = int(ks[-window]), int(ks[-1])
    y = np.log(tail)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return RateFit(window=(lo, hi), rho_hat=float(np.exp(slope)), r2=r2, sequence_name=name)


def trailing_window(total, k_id_index=0, frac=0.3, min_window=10):
    """Window length for a tail fit: ``frac`` of the points past rank
    identification, at least ``min_window``, capped by what is available."""
    usable = total - k_id_index
    return max(min_window, min(usable, int(round(frac * usable))))


# ---------------------------------------------------------------------------
# Regularized backward-error terms.
# ---------------------------------------------------------------------------


def backward_error_terms(
    p: SdpProblem,
    kernel: ConstraintKernel,
    dec: SpectralDecomp,
    x,
    s_mat,
    sigma,
    tau=DEFAULT_RANK_TAU,
):
    """Additive terms bounding the distance of (X, sigma S) to optimality.

    Returns an ordered dict of the seven right-hand-side terms: range/null
    feasibility residuals, the scaled duality-gap term, the negative-eigenvalue
    defects of X and sigma*S, and the two minimal-face projections. All vanish
    at an optimal pair.
    """
    x = symmetrize(x)
    sig_s = sigma * symmetrize(s_mat)
    x_tilde = kernel.at_pinv_b
    gap = abs(
        float(np.sum(x * (sigma * p.C)))
        + float(np.sum(x_tilde * sig_s))
        - float(np.sum(x_tilde * (sigma * p.C)))
    )
    lam_min_x = float(np.linalg.eigvalsh(x)[0])
    lam_min_s = float(np.linalg.eigvalsh(sig_s)[0])
    face_x, face_s, _ = face_projections(dec, x, s_mat, sigma, tau)
    return {
        "primal_range_residual": float(np.linalg.norm(project_range(kernel, x - x_tilde))),
        "dual_null_residual": float(np.linalg.norm(project_null(kernel, sig_s - sigma * p.C))),
        "gap": gap,
        "x_negative_part": max(0.0, -lam_min_x),
        "s_negative_part": max(0.0, -lam_min_s),
        "x_outside_face": face_x,
        "s_outside_face": face_s,
    }
