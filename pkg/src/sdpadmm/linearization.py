"""Local linearization of the fixed-point map at a reference point.

At a nonsingular reference Zstar with r positive eigenvalues, the PSD
projection is differentiable with differential H -> Q (Omega o (Q'HQ)) Q',
where Omega carries an all-ones leading r x r block, a zero trailing block,
and off-diagonal weights Theta_ij = lam_j / (lam_j - lam_{i+r}) in (0, 1).
The one-step map then linearizes as

    Z+ - Zstar = M(Z - Zstar) + Psi,   M(H) = P(Omega^c o H) + Pnull(Omega o H),

with a residual Psi that is second order in the off-diagonal block of the
error. M is firmly nonexpansive; its fixed subspace and the operator norms
||M|| and ||M - Pi_Fix|| govern the local contraction rate. A singular
reference is handled through the directional derivative of the projection,
which adds a small-eigenvalue index block and stays positively homogeneous.

All Hadamard products act in the rotated coordinates of the reference
eigenbasis; the range projector P acts in the original coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailureError
from .linalg import (
    SpectralDecomp,
    psd_project,
    smat,
    svec,
    svec_stack,
    symmetrize,
)
from .problem import ConstraintKernel, project_range

POWER_TOL = 1e-10
POWER_MAX_ITER = 100_000
FIX_NULLSPACE_RTOL = 1e-9


@dataclass
class OmegaStructure:
    """Hadamard multipliers of the projection differential at a nonsingular
    reference: Q, eigenvalues (descending, no zeros), rank split r, the
    multiplier matrix ``omega`` and its off-diagonal block ``theta``; the
    complements are ``1 - omega`` and ``1 - theta``."""

    Q: np.ndarray
    lam: np.ndarray
    r: int
    omega: np.ndarray
    theta: np.ndarray

    @property
    def n(self):
        return self.lam.shape[0]

    @property
    def omega_comp(self):
        return 1.0 - self.omega

    @property
    def theta_comp(self):
        return 1.0 - self.theta

    def zstar(self):
        return symmetrize((self.Q * self.lam) @ self.Q.T)

    def proj_zstar(self):
        pos = np.clip(self.lam, 0.0, None)
        return symmetrize((self.Q * pos) @ self.Q.T)

    def rotate_in(self, h):
        return self.Q.T @ h @ self.Q

    def rotate_out(self, h):
        return self.Q @ h @ self.Q.T

    def offblock(self, h):
        """Lower-left (n - r) x r block of Q'HQ."""
        return self.rotate_in(h)[self.r :, : self.r]


def build_omega(dec: SpectralDecomp, gap_tol=1e-12) -> OmegaStructure:
    """Assemble the multiplier structure from a sorted spectral decomposition.

    Requires a nonsingular reference: every eigenvalue must clear
    ``gap_tol * max|lam|`` in magnitude, otherwise the caller should switch to
    the directional-derivative path (:func:`build_directional`).
    """
    lam = dec.lam
    n = lam.shape[0]
    lam_max = float(np.max(np.abs(lam))) if n else 0.0
    if lam_max == 0.0 or np.min(np.abs(lam)) <= gap_tol * lam_max:
        raise ValueError(
            "reference matrix is numerically singular "
            f"(min |lam| = {float(np.min(np.abs(lam))) if n else 0.0:.3e}); "
            "use the directional-derivative structure instead"
        )
    r = int(np.sum(lam > 0.0))
    pos = lam[:r]
    neg = lam[r:]
    theta = pos[None, :] / (pos[None, :] - neg[:, None])
    omega = np.zeros((n, n))
    omega[:r, :r] = 1.0
    omega[r:, :r] = theta
    omega[:r, r:] = theta.T
    return OmegaStructure(Q=dec.Q.copy(), lam=lam.copy(), r=r, omega=omega, theta=theta)


def hadamard(os_: OmegaStructure, mask, h):
    """Q (mask o (Q'HQ)) Q'."""
    return os_.rotate_out(mask * os_.rotate_in(h))


def apply_M(os_: OmegaStructure, kernel: ConstraintKernel, h):
    """M(H) = P(Omega^c o H) + Pnull(Omega o H), written with one projection
    as G + P(H - 2G) for G = Omega o H."""
    g = hadamard(os_, os_.omega, h)
    return g + project_range(kernel, h - 2.0 * g)


def apply_M_adjoint(os_: OmegaStructure, kernel: ConstraintKernel, g):
    """Adjoint M*(G) = Omega^c o (PG) + Omega o (Pnull G)."""
    pg = project_range(kernel, g)
    return pg + hadamard(os_, os_.omega, g - 2.0 * pg)


def psi_residual(os_: OmegaStructure, kernel: ConstraintKernel, z, zstar):
    """Quadratic remainder of the linearization at the reference.

    Psi = (Id - 2P)(Pi(Z) - Pi(Zstar) - Omega o (Z - Zstar)); the reflection
    preserves the Frobenius norm, and Z+ - Zstar = M(Z - Zstar) + Psi holds
    exactly along the iteration.
    """
    z = symmetrize(z)
    zstar = symmetrize(zstar)
    e = psd_project(z) - os_.proj_zstar() - hadamard(os_, os_.omega, z - zstar)
    return e - 2.0 * project_range(kernel, e)


def _sym_gaussian(n, seed):
    rng = np.random.default_rng(seed)
    h = symmetrize(rng.standard_normal((n, n)))
    return h / np.linalg.norm(h)


def _power_opnorm(apply_op, apply_op_adj, n, seed=0, tol=POWER_TOL, max_iter=POWER_MAX_ITER):
    """Operator norm via power iteration on the self-adjoint composition
    T = op* o op; successive Rayleigh quotients must agree to ``tol``.

    Iterates are re-symmetrized every step: the operators live on S^n, and a
    skew component seeded by roundoff would otherwise survive the Hadamard
    masks undamped and pollute the estimate.
    """
    h = _sym_gaussian(n, seed)
    prev = np.inf
    for _ in range(max_iter):
        th = symmetrize(apply_op_adj(apply_op(h)))
        ray = float(np.sum(h * th))
        if abs(ray - prev) < tol:
            return float(np.sqrt(max(ray, 0.0)))
        prev = ray
        nrm = float(np.linalg.norm(th))
        if nrm == 0.0:
            return 0.0
        h = th / nrm
    raise NumericalFailureError(
        "power iteration did not converge",
        last_estimates=(float(np.sqrt(max(prev, 0.0))), float(np.sqrt(max(ray, 0.0)))),
    )


def op_norm_M(os_: OmegaStructure, kernel: ConstraintKernel, seed=0, tol=POWER_TOL):
    """||M|| by power iteration on M* o M. At most 1 + O(tol) by firm
    nonexpansiveness; strictly below 1 exactly when Fix(M) = {0}."""
    return _power_opnorm(
        lambda h: apply_M(os_, kernel, h),
        lambda g: apply_M_adjoint(os_, kernel, g),
        os_.n,
        seed=seed,
        tol=tol,
    )


@dataclass
class FixSubspace:
    """Orthonormal basis of the fixed subspace of M.

    Members have zero off-diagonal block in the reference basis, a leading
    block whose embedding annihilates A, and a trailing block whose embedding
    lies in range(A*).
    """

    basis: np.ndarray  # (dim, n, n)
    dim: int

    def project(self, h):
        if self.dim == 0:
            return np.zeros_like(h)
        coef = np.einsum("kij,ij->k", self.basis, h)
        return np.einsum("k,kij->ij", coef, self.basis)


def _embedded_sym_basis_svec(q, lo, hi):
    """svec columns of Q [sym basis of block lo:hi] Q' (orthonormal)."""
    n = q.shape[0]
    k = hi - lo
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    cols = []
    for a in range(k):
        for c in range(a, k):
            e = np.zeros((n, n))
            if a == c:
                e[lo + a, lo + a] = 1.0
            else:
                e[lo + a, lo + c] = inv_sqrt2
                e[lo + c, lo + a] = inv_sqrt2
            cols.append(svec(q @ e @ q.T))
    if not cols:
        return np.zeros((n * (n + 1) // 2, 0))
    return np.stack(cols, axis=1)


def _nullspace(mat, rtol=FIX_NULLSPACE_RTOL):
    if mat.shape[0] == 0:
        return np.eye(mat.shape[1])
    _, sv, vt = np.linalg.svd(mat, full_matrices=True)
    if sv.size == 0 or sv[0] == 0.0:
        return vt.T
    rank = int(np.sum(sv > rtol * sv[0]))
    return vt[rank:].T


def fix_basis(os_: OmegaStructure, kernel: ConstraintKernel) -> FixSubspace:
    """Construct Fix(M) explicitly.

    Two independent families: leading-block members come from the nullspace of
    A restricted to the embedded block, trailing-block members from the
    intersection of the embedded block space with range(A*). The families live
    in orthogonal coordinate blocks, so stacking keeps orthonormality.
    """
    n, r = os_.n, os_.r
    emb_x = _embedded_sym_basis_svec(os_.Q, 0, r)
    emb_s = _embedded_sym_basis_svec(os_.Q, r, n)
    # A acting on the embedded leading block, in svec coordinates.
    w1 = kernel.basis  # orthonormal basis of range(A*)
    if kernel.problem.m > 0:
        a_stack = svec_stack(kernel.problem.A)
        null_x = _nullspace(a_stack.T @ emb_x)
    else:
        null_x = np.eye(emb_x.shape[1])
    # Trailing block: directions whose orthogonal part against range(A*) vanishes.
    resid_s = emb_s - w1 @ (w1.T @ emb_s)
    null_s = _nullspace(resid_s)

    members = []
    for vec in (emb_x @ null_x).T:
        members.append(smat(vec))
    for vec in (emb_s @ null_s).T:
        members.append(smat(vec))
    if members:
        basis = np.stack(members, axis=0)
    else:
        basis = np.zeros((0, n, n))
    return FixSubspace(basis=basis, dim=basis.shape[0])


def op_norm_M_minus_fix(
    os_: OmegaStructure, kernel: ConstraintKernel, fix: FixSubspace, seed=0, tol=POWER_TOL
):
    """||M - Pi_Fix||, strictly below one; raises NumericalFailureError if the
    computed value does not clear 1 - 1e-8."""
    value = _power_opnorm(
        lambda h: apply_M(os_, kernel, h) - fix.project(h),
        lambda g: apply_M_adjoint(os_, kernel, g) - fix.project(g),
        os_.n,
        seed=seed,
        tol=tol,
    )
    if value >= 1.0 - 1e-8:
        raise NumericalFailureError(
            f"||M - Pi_Fix|| = {value!r} is not separated from 1", value=value
        )
    return value


# ---------------------------------------------------------------------------
# Singular reference: directional derivative path.
# ---------------------------------------------------------------------------


@dataclass
class DirectionalStructure:
    """Index split (alpha, beta, gamma) of a possibly singular reference and
    the off-corner Hadamard weights between the definite blocks."""

    Q: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta_t: np.ndarray  # (|gamma|, |alpha|), entries in (0, 1)

    @property
    def n(self):
        return self.lam.shape[0]

    @property
    def theta_t_comp(self):
        return 1.0 - self.theta_t


def build_directional(dec: SpectralDecomp, tau=1e-8) -> DirectionalStructure:
    """Split the spectrum at threshold tau * max|lam| into positive (alpha),
    near-zero (beta) and negative (gamma) index sets."""
    lam = dec.lam
    lam_max = float(np.max(np.abs(lam))) if lam.size else 0.0
    thr = tau * lam_max
    alpha = np.flatnonzero(lam > thr)
    gamma = np.flatnonzero(lam < -thr)
    beta = np.flatnonzero(np.abs(lam) <= thr)
    pos = lam[alpha]
    neg = lam[gamma]
    theta_t = (
        pos[None, :] / (pos[None, :] - neg[:, None])
        if alpha.size and gamma.size
        else np.zeros((gamma.size, alpha.size))
    )
    return DirectionalStructure(
        Q=dec.Q.copy(), lam=lam.copy(), alpha=alpha, beta=beta, gamma=gamma, theta_t=theta_t
    )


def directional_derivative(ds: DirectionalStructure, h):
    """One-sided derivative of the PSD projection at the reference, applied
    to H: block copy on alpha, Hadamard weights on the gamma-alpha corner, a
    small PSD projection on the beta block, zeros elsewhere. Positively
    homogeneous in H."""
    ht = ds.Q.T @ np.asarray(h, dtype=float) @ ds.Q
    a, b, g = ds.alpha, ds.beta, ds.gamma
    out = np.zeros_like(ht)
    out[np.ix_(a, a)] = ht[np.ix_(a, a)]
    out[np.ix_(b, a)] = ht[np.ix_(b, a)]
    out[np.ix_(a, b)] = ht[np.ix_(a, b)]
    out[np.ix_(g, a)] = ds.theta_t * ht[np.ix_(g, a)]
    out[np.ix_(a, g)] = out[np.ix_(g, a)].T
    if b.size:
        out[np.ix_(b, b)] = psd_project(ht[np.ix_(b, b)])
    return ds.Q @ out @ ds.Q.T


def apply_M_directional(ds: DirectionalStructure, kernel: ConstraintKernel, h):
    """Nonlinear analogue of M at a singular reference:
    P(H - D(H)) + Pnull(D(H)) with D the directional derivative."""
    d = directional_derivative(ds, h)
    return d + project_range(kernel, h - 2.0 * d)


def _sphere_ascent(objective, h0, max_iter=200, fd_step=1e-5):
    """Maximize a positively homogeneous objective over the unit sphere by
    projected finite-difference gradient ascent with backtracking."""
    h = h0 / np.linalg.norm(h0)
    val = objective(h)
    n = h.shape[0]
    rows, cols = np.tril_indices(n)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    step = 0.5
    for _ in range(max_iter):
        grad = np.zeros_like(h)
        for i, j in zip(rows, cols):
            e = np.zeros_like(h)
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = inv_sqrt2
            hp = h + fd_step * e
            hm = h - fd_step * e
            plus = objective(hp / np.linalg.norm(hp))
            minus = objective(hm / np.linalg.norm(hm))
            grad += ((plus - minus) / (2.0 * fd_step)) * e
        grad -= np.sum(grad * h) * h
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-14:
            break
        improved = False
        trial_step = step
        for _ in range(30):
            cand = h + trial_step * grad / gnorm
            cand /= np.linalg.norm(cand)
            cand_val = objective(cand)
            if cand_val > val + 1e-15:
                h, val = cand, cand_val
                step = min(trial_step * 2.0, 4.0)
                improved = True
                break
            trial_step *= 0.5
        if not improved:
            break
    return val, h


def rho_nd_estimate(
    ds: DirectionalStructure, kernel: ConstraintKernel, samples, seed=0, max_ascent=200
):
    """Sampled lower bound on the sphere supremum of ||P(H - D(H)) + Pnull(D(H))||.

    Random unit-sphere starts followed by projected finite-difference gradient
    ascent; positive homogeneity makes the sphere restriction lossless. The
    result is an estimate from ``samples`` starts, not a certified supremum.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    n = ds.n

    def objective(h):
        return float(np.linalg.norm(apply_M_directional(ds, kernel, h)))

    best = 0.0
    for _ in range(samples):
        h0 = symmetrize(rng.standard_normal((n, n)))
        val, _ = _sphere_ascent(objective, h0, max_iter=max_ascent)
        best = max(best, val)
    return best
