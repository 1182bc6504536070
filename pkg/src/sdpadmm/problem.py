"""Standard-form SDP problems.

A problem is min <C, X> s.t. <A_i, X> = b_i (i = 1..m), X PSD, together with
its dual max b'y s.t. A*(y) + S = C, S PSD. This module holds the problem
container, the constraint operator A and its adjoint, the range-space
projector built from a Gram factorization of A A*, sparse SDPA file I/O, and
instance generators that plant a known optimal certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SdpaFormatError, UnsupportedBlockError
from .linalg import (
    require_finite,
    svec_dim,
    svec_stack,
    symmetrize,
)

_INDEPENDENCE_RTOL = 1e-10


@dataclass
class SdpProblem:
    """Coefficients of a standard-form SDP.

    Attributes
    ----------
    C : (n, n) symmetric cost matrix
    A : (m, n, n) stacked symmetric constraint matrices
    b : (m,) right-hand side

    Construction symmetrizes all matrices and validates that the svec images
    of the A_i are linearly independent, so that A A* is invertible.
    """

    C: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.C = symmetrize(self.C)
        a = np.asarray(self.A, dtype=float)
        if a.ndim == 2:
            a = a[None, :, :]
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise ValueError(f"constraint stack has shape {a.shape}, expected (m, n, n)")
        if a.shape[1] != self.C.shape[0]:
            raise ValueError("constraint and cost dimensions disagree")
        self.A = 0.5 * (a + a.transpose(0, 2, 1))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.b.shape != (self.A.shape[0],):
            raise ValueError(f"b has shape {self.b.shape}, expected ({self.A.shape[0]},)")
        require_finite(self.C, "C")
        require_finite(self.A, "A")
        require_finite(self.b, "b")
        n, m = self.n, self.m
        if m > svec_dim(n):
            raise ValueError(f"m = {m} exceeds dim S^n = {svec_dim(n)}")
        if m > 0:
            sv = np.linalg.svd(svec_stack(self.A), compute_uv=False)
            rank = int(np.sum(sv > _INDEPENDENCE_RTOL * sv[0]))
            if rank < m:
                raise ValueError(
                    f"constraint matrices are linearly dependent (rank {rank} < m = {m})"
                )

    @property
    def n(self):
        return self.C.shape[0]

    @property
    def m(self):
        return self.A.shape[0]


def apply_A(p: SdpProblem, x):
    """A X = (<A_1, X>, ..., <A_m, X>)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n, p.n):
        raise ValueError(f"X has shape {x.shape}, expected ({p.n}, {p.n})")
    return np.einsum("ijk,jk->i", p.A, x)


def apply_At(p: SdpProblem, y):
    """Adjoint A* y = sum_i y_i A_i."""
    y = np.asarray(y, dtype=float)
    if y.shape != (p.m,):
        raise ValueError(f"y has shape {y.shape}, expected ({p.m},)")
    if p.m == 0:
        return np.zeros((p.n, p.n))
    return np.einsum("i,ijk->jk", y, p.A)


@dataclass
class ConstraintKernel:
    """Precomputed machinery for the range projector P = A*(AA*)^-1 A.

    Attributes
    ----------
    gram : (m, m) Gram matrix AA* with entries <A_i, A_j>
    gram_cho : Cholesky factorization of ``gram`` (scipy cho_factor tuple)
    basis : (t(n), m) orthonormal basis of range(A*) in svec coordinates
    at_pinv_b : (n, n) particular primal-feasible point A*(AA*)^-1 b
    """

    problem: SdpProblem
    gram: np.ndarray
    gram_cho: tuple
    basis: np.ndarray
    at_pinv_b: np.ndarray


def build_kernel(p: SdpProblem) -> ConstraintKernel:
    """Factor AA* once; raises ValueError if the Gram matrix is singular."""
    stack = svec_stack(p.A) if p.m > 0 else np.zeros((svec_dim(p.n), 0))
    gram = stack.T @ stack
    if p.m > 0:
        try:
            gram_cho = scipy.linalg.cho_factor(gram)
        except scipy.linalg.LinAlgError as exc:
            raise ValueError(f"Gram matrix of the constraints is singular: {exc}") from exc
        basis, _ = np.linalg.qr(stack)
        at_pinv_b = apply_At(p, scipy.linalg.cho_solve(gram_cho, p.b))
    else:
        gram_cho = None
        basis = stack
        at_pinv_b = np.zeros((p.n, p.n))
    return ConstraintKernel(
        problem=p, gram=gram, gram_cho=gram_cho, basis=basis, at_pinv_b=at_pinv_b
    )


def solve_normal(k: ConstraintKernel, v):
    """(AA*)^-1 v."""
    if k.problem.m == 0:
        return np.zeros(0)
    return scipy.linalg.cho_solve(k.gram_cho, np.asarray(v, dtype=float))


def project_range(k: ConstraintKernel, h):
    """Orthogonal projection of H onto range(A*)."""
    h = np.asarray(h, dtype=float)
    if k.problem.m == 0:
        return np.zeros_like(h)
    return apply_At(k.problem, solve_normal(k, apply_A(k.problem, h)))


def project_null(k: ConstraintKernel, h):
    """Orthogonal projection of H onto null(A) = range(A*)^perp."""
    return np.asarray(h, dtype=float) - project_range(k, h)


# ---------------------------------------------------------------------------
# Sparse SDPA (.dat-s) I/O, single PSD block only.
# ---------------------------------------------------------------------------


def _is_comment(line):
    stripped = line.lstrip()
    return stripped.startswith("*") or stripped.startswith('"')


def _clean_tokens(line):
    for ch in "{}(),":
        line = line.replace(ch, " ")
    return line.split()


def load_sdpa(path) -> SdpProblem:
    """Read a problem in sparse SDPA format with exactly one PSD block.

    The file states the problem as max tr(F0 Y) s.t. tr(F_i Y) = c_i,
    Y PSD; this maps onto the standard minimization form via C = -F0,
    A_i = F_i, b = c. Entries give one triangle; the other is mirrored.

    Raises
    ------
    UnsupportedBlockError
        For multi-block files or diagonal (negative-size) blocks.
    SdpaFormatError
        For malformed content, including duplicate (matno, i, j) entries.
    ValueError
        If the assembled constraint matrices are linearly dependent.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    data_lines = [ln for ln in lines if not _is_comment(ln)]
    if len(data_lines) < 3:
        raise SdpaFormatError("file truncated before block descriptor")
    try:
        m = int(_clean_tokens(data_lines[0])[0])
        nblocks = int(_clean_tokens(data_lines[1])[0])
        block_sizes = [int(tok) for tok in _clean_tokens(data_lines[2])]
    except (ValueError, IndexError) as exc:
        raise SdpaFormatError(f"malformed header: {exc}") from exc
    if len(block_sizes) != nblocks:
        raise SdpaFormatError(
            f"declared {nblocks} blocks but found {len(block_sizes)} block sizes"
        )
    if nblocks != 1:
        raise UnsupportedBlockError(
            f"only a single semidefinite block is supported, file declares {nblocks} "
            f"(first unsupported: block 2)"
        )
    if block_sizes[0] < 0:
        raise UnsupportedBlockError(
            f"block 1 has negative size {block_sizes[0]} (diagonal/LP block), unsupported"
        )
    n = block_sizes[0]

    tokens = []
    for ln in data_lines[3:]:
        tokens.extend(_clean_tokens(ln))
    if len(tokens) < m:
        raise SdpaFormatError(f"expected {m} right-hand-side values, found {len(tokens)}")
    try:
        b = np.array([float(tok) for tok in tokens[:m]])
    except ValueError as exc:
        raise SdpaFormatError(f"malformed right-hand side: {exc}") from exc
    entry_tokens = tokens[m:]
    if len(entry_tokens) % 5 != 0:
        raise SdpaFormatError("entry section is not a sequence of 5-tuples")

    mats = np.zeros((m + 1, n, n))
    seen = set()
    for pos in range(0, len(entry_tokens), 5):
        tok = entry_tokens[pos : pos + 5]
        try:
            matno = int(tok[0])
            blkno = int(tok[1])
            i = int(tok[2])
            j = int(tok[3])
            value = float(tok[4])
        except ValueError as exc:
            raise SdpaFormatError(f"malformed entry {' '.join(tok)!r}: {exc}") from exc
        if not 0 <= matno <= m:
            raise SdpaFormatError(f"matrix index {matno} outside 0..{m}")
        if blkno != 1:
            raise SdpaFormatError(f"entry refers to block {blkno}, file declares 1 block")
        if not (1 <= i <= n and 1 <= j <= n):
            raise SdpaFormatError(f"entry indices ({i}, {j}) outside 1..{n}")
        key = (matno, min(i, j), max(i, j))
        if key in seen:
            raise SdpaFormatError(f"duplicate entry for matrix {matno} at ({i}, {j})")
        seen.add(key)
        mats[matno, i - 1, j - 1] = value
        mats[matno, j - 1, i - 1] = value

    return SdpProblem(C=-mats[0], A=mats[1:], b=b)


def _fmt(x):
    return repr(float(x))


def write_sdpa(p: SdpProblem, path, comment=None):
    """Write a problem in sparse SDPA format (single PSD block).

    Values are formatted with shortest round-trip precision, so
    ``load_sdpa(write_sdpa(p))`` reproduces the coefficients bit for bit.
    """
    lines = []
    if comment:
        lines.append(f"* {comment}")
    lines.append(str(p.m))
    lines.append("1")
    lines.append(str(p.n))
    lines.append(" ".join(_fmt(v) for v in p.b))
    mats = np.concatenate([-p.C[None, :, :], p.A], axis=0)
    for matno in range(p.m + 1):
        mat = mats[matno]
        for i in range(p.n):
            for j in range(i, p.n):
                if mat[i, j] != 0.0:
                    lines.append(f"{matno} 1 {i + 1} {j + 1} {_fmt(mat[i, j])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Instance generators.
# ---------------------------------------------------------------------------


@dataclass
class PlantedCertificate:
    """Known optimal triple planted by :func:`generate_planted`.

    Satisfies the KKT system A(Xstar) = b, A*(ystar) + Sstar = C,
    <Xstar, Sstar> = 0 by construction, with Xstar, Sstar PSD of ranks
    r and s = n - r.
    """

    Xstar: np.ndarray
    ystar: np.ndarray
    Sstar: np.ndarray
    Qstar: np.ndarray
    r: int
    s: int

    def zstar(self, sigma):
        """Fixed point Xstar - sigma * Sstar of the one-step iteration."""
        return self.Xstar - sigma * self.Sstar

    def kkt_residuals(self, p: SdpProblem):
        """(primal, dual, complementarity) residual norms against ``p``."""
        rp = float(np.linalg.norm(apply_A(p, self.Xstar) - p.b))
        rd = float(np.linalg.norm(apply_At(p, self.ystar) + self.Sstar - p.C))
        comp = abs(float(np.sum(self.Xstar * self.Sstar)))
        return rp, rd, comp


def haar_orthogonal(n, rng):
    """Haar-distributed orthogonal matrix, deterministic for a given generator."""
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def generate_planted(
    n,
    m,
    r,
    seed,
    degeneracy="none",
    spectrum_floor=0.5,
    spectrum_ceil=2.0,
):
    """Random instance with a planted strictly complementary optimum.

    Draws a random orthogonal Qstar and positive spectra for the rank-r
    primal block and the rank-(n-r) dual block (uniform in
    [spectrum_floor, spectrum_ceil], bounded away from zero by default so the
    instance never sits near a strict-complementarity failure; lower the floor
    to probe that regime). Constraint matrices are random symmetric Gaussians,
    b is defined as A(Xstar) and C as A*(ystar) + Sstar, so the certificate
    satisfies the KKT system exactly by construction.

    With ``degeneracy="primal_nd_fail"`` the last constraint matrix is
    replaced by an element of the lower-right block space at Qstar (made
    trace-orthogonal to the dual spectrum block), planting a nonzero
    intersection between range(A*) and the normal space of Xstar: the primal
    nondegeneracy test fails while feasibility is untouched.

    The PRNG is numpy's default (PCG64) seeded with ``seed``; instances are
    reproducible across platforms.

    Returns (SdpProblem, PlantedCertificate).
    """
    if not 1 <= r < n:
        raise ValueError(f"rank r = {r} must satisfy 1 <= r < n = {n}")
    if not 1 <= m <= svec_dim(n) - 1:
        raise ValueError(f"m = {m} must satisfy 1 <= m <= {svec_dim(n) - 1}")
    if degeneracy not in ("none", "primal_nd_fail"):
        raise ValueError(f"unknown degeneracy mode {degeneracy!r}")
    if not 0 < spectrum_floor <= spectrum_ceil:
        raise ValueError("need 0 < spectrum_floor <= spectrum_ceil")
    rng = np.random.default_rng(seed)
    q = haar_orthogonal(n, rng)
    lam_x = rng.uniform(spectrum_floor, spectrum_ceil, size=r)
    lam_s = rng.uniform(spectrum_floor, spectrum_ceil, size=n - r)
    xstar = symmetrize((q[:, :r] * lam_x) @ q[:, :r].T)
    sstar = symmetrize((q[:, r:] * lam_s) @ q[:, r:].T)

    a = np.empty((m, n, n))
    for i in range(m):
        a[i] = symmetrize(rng.standard_normal((n, n)))
    if degeneracy == "primal_nd_fail":
        g = symmetrize(rng.standard_normal((n - r, n - r)))
        d = np.diag(lam_s)
        g -= (np.sum(g * d) / np.sum(d * d)) * d
        witness = np.zeros((n, n))
        witness[r:, r:] = g
        a[m - 1] = symmetrize(q @ witness @ q.T)

    prob = SdpProblem(C=np.zeros((n, n)), A=a, b=np.zeros(m))
    prob.b = apply_A(prob, xstar)
    ystar = rng.standard_normal(m)
    prob.C = apply_At(prob, ystar) + sstar

    cert = PlantedCertificate(Xstar=xstar, ystar=ystar, Sstar=sstar, Qstar=q, r=r, s=n - r)
    rp, rd, comp = cert.kkt_residuals(prob)
    scale = max(1.0, float(np.linalg.norm(xstar)), float(np.linalg.norm(prob.C)))
    if max(rp, rd, comp) > 1e-10 * scale:
        raise AssertionError(
            f"planted certificate violates KKT: rp={rp:.2e} rd={rd:.2e} comp={comp:.2e}"
        )
    return prob, cert


def generate_maxcut(adjacency) -> SdpProblem:
    """Max-cut relaxation min <C, X>, diag(X) = 1 with C = -(D - W) / 4.

    ``adjacency`` must be a symmetric 0/1 matrix with zero diagonal; minus the
    optimal value upper-bounds the maximum cut of the graph.
    """
    w = np.asarray(adjacency, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"adjacency has shape {w.shape}, expected square")
    if not np.array_equal(w, w.T):
        raise ValueError("adjacency matrix must be symmetric")
    if np.any(np.diag(w) != 0.0):
        raise ValueError("adjacency matrix must have zero diagonal")
    require_finite(w, "adjacency")
    n = w.shape[0]
    laplacian = np.diag(w.sum(axis=1)) - w
    a = np.zeros((n, n, n))
    for i in range(n):
        a[i, i, i] = 1.0
    return SdpProblem(C=-laplacian / 4.0, A=a, b=np.ones(n))
