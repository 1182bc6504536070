import itertools

import numpy as np
import pytest

from sdpadmm.errors import SdpaFormatError, UnsupportedBlockError
from sdpadmm.linalg import svec, svec_stack
from sdpadmm.problem import (
    SdpProblem,
    apply_A,
    apply_At,
    build_kernel,
    generate_maxcut,
    generate_planted,
    load_sdpa,
    project_null,
    project_range,
    write_sdpa,
)

from conftest import random_sym


def cycle_adjacency(n):
    adj = np.zeros((n, n))
    for i in range(n):
        adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = 1.0
    return adj


def brute_force_maxcut(adj):
    n = adj.shape[0]
    best = 0.0
    for bits in itertools.product([-1.0, 1.0], repeat=n):
        x = np.array(bits)
        best = max(best, 0.25 * float(x @ (np.diag(adj.sum(1)) - adj) @ x))
    return best


# -- problem container -------------------------------------------------------


def test_problem_validates_independence():
    a = np.stack([np.eye(2), 2.0 * np.eye(2)])
    with pytest.raises(ValueError, match="linearly dependent"):
        SdpProblem(C=np.eye(2), A=a, b=np.zeros(2))


def test_problem_rejects_too_many_constraints():
    a = np.stack([random_sym(2, np.random.default_rng(i)) for i in range(4)])
    with pytest.raises(ValueError, match="exceeds"):
        SdpProblem(C=np.eye(2), A=a, b=np.zeros(4))


def test_problem_symmetrizes_inputs():
    a = np.array([[[1.0, 2.0], [0.0, 3.0]]])
    p = SdpProblem(C=np.array([[1.0, 1.0], [0.0, 1.0]]), A=a, b=np.ones(1))
    assert np.array_equal(p.A[0], p.A[0].T)
    assert np.array_equal(p.C, p.C.T)


# -- constraint operator -----------------------------------------------------


def test_apply_A_maxcut_identity():
    p = generate_maxcut(cycle_adjacency(4))
    assert np.array_equal(apply_A(p, np.eye(4)), np.ones(4))
    assert np.array_equal(apply_A(p, np.zeros((4, 4))), np.zeros(4))


def test_apply_A_matches_svec_product(small_planted):
    p, _, _ = small_planted
    rng = np.random.default_rng(0)
    x = random_sym(p.n, rng)
    stack = svec_stack(p.A)
    assert np.allclose(apply_A(p, x), stack.T @ svec(x), atol=1e-12)


def test_apply_At_unit_vectors(small_planted):
    p, _, _ = small_planted
    e1 = np.zeros(p.m)
    e1[0] = 1.0
    assert np.array_equal(apply_At(p, e1), p.A[0])
    assert np.array_equal(apply_At(p, np.zeros(p.m)), np.zeros((p.n, p.n)))


def test_adjoint_identity(small_planted):
    p, _, _ = small_planted
    rng = np.random.default_rng(1)
    for _ in range(20):
        y = rng.standard_normal(p.m)
        x = random_sym(p.n, rng)
        lhs = np.sum(apply_At(p, y) * x)
        rhs = y @ apply_A(p, x)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), abs(rhs))


def test_apply_A_dimension_mismatch(small_planted):
    p, _, _ = small_planted
    with pytest.raises(ValueError):
        apply_A(p, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        apply_At(p, np.zeros(p.m + 1))


# -- range projector ---------------------------------------------------------


def test_project_range_fixes_span(small_planted):
    p, _, kern = small_planted
    rng = np.random.default_rng(2)
    h = apply_At(p, rng.standard_normal(p.m))
    assert np.linalg.norm(project_range(kern, h) - h) <= 1e-10 * np.linalg.norm(h)


def test_project_range_kills_orthogonal_complement(small_planted):
    p, _, kern = small_planted
    rng = np.random.default_rng(3)
    h = project_null(kern, random_sym(p.n, rng))
    assert np.linalg.norm(project_range(kern, h)) <= 1e-10 * max(1.0, np.linalg.norm(h))


def test_projector_orthogonality_and_idempotence(small_planted):
    p, _, kern = small_planted
    rng = np.random.default_rng(4)
    h = random_sym(p.n, rng)
    ph = project_range(kern, h)
    assert abs(np.sum(ph * project_null(kern, h))) <= 1e-10 * np.sum(h * h)
    assert np.linalg.norm(project_range(kern, ph) - ph) <= 1e-10 * max(1.0, np.linalg.norm(ph))
    assert np.array_equal(ph + project_null(kern, h), ph + (h - ph))


def test_kernel_gram_factorization(small_planted):
    p, _, kern = small_planted
    stack = svec_stack(p.A)
    assert np.allclose(kern.gram, stack.T @ stack, rtol=1e-10, atol=0)
    assert np.linalg.norm(kern.basis.T @ kern.basis - np.eye(p.m)) <= 1e-10
    assert np.linalg.norm(apply_A(p, kern.at_pinv_b) - p.b) <= 1e-10 * max(
        1.0, np.linalg.norm(p.b)
    )


def test_kernel_rejects_dependent_constraints():
    # Dependence is caught at problem construction, before any kernel exists.
    with pytest.raises(ValueError):
        SdpProblem(C=np.eye(2), A=np.stack([np.eye(2), np.eye(2)]), b=np.zeros(2))


def test_empty_constraint_set():
    p = SdpProblem(C=np.eye(3), A=np.zeros((0, 3, 3)), b=np.zeros(0))
    kern = build_kernel(p)
    h = random_sym(3, np.random.default_rng(5))
    assert np.array_equal(project_range(kern, h), np.zeros((3, 3)))
    assert np.array_equal(kern.at_pinv_b, np.zeros((3, 3)))


# -- SDPA I/O ----------------------------------------------------------------

MINIMAL_SDPA = """\
* tiny instance
1
1
2
1.0
0 1 1 1 -1.0
0 1 2 2 -2.0
1 1 1 1 1.0
1 1 2 2 1.0
"""


def test_load_sdpa_minimal(tmp_path):
    path = tmp_path / "tiny.dat-s"
    path.write_text(MINIMAL_SDPA)
    p = load_sdpa(path)
    assert p.n == 2 and p.m == 1
    assert np.array_equal(p.C, np.diag([1.0, 2.0]))  # C = -F0
    assert np.array_equal(p.A[0], np.eye(2))
    assert np.array_equal(p.b, np.array([1.0]))


def test_load_sdpa_multiblock_rejected(tmp_path):
    path = tmp_path / "two.dat-s"
    path.write_text("1\n2\n2 2\n1.0\n1 1 1 1 1.0\n")
    with pytest.raises(UnsupportedBlockError):
        load_sdpa(path)


def test_load_sdpa_lp_block_rejected(tmp_path):
    path = tmp_path / "lp.dat-s"
    path.write_text("1\n1\n-3\n1.0\n1 1 1 1 1.0\n")
    with pytest.raises(UnsupportedBlockError, match="block 1"):
        load_sdpa(path)


def test_load_sdpa_duplicate_entry_rejected(tmp_path):
    path = tmp_path / "dup.dat-s"
    path.write_text("1\n1\n2\n1.0\n1 1 1 2 1.0\n1 1 2 1 1.0\n")
    with pytest.raises(SdpaFormatError, match="duplicate"):
        load_sdpa(path)


def test_load_sdpa_rank_deficient_rejected(tmp_path):
    path = tmp_path / "dep.dat-s"
    path.write_text("2\n1\n2\n1.0 2.0\n1 1 1 1 1.0\n2 1 1 1 2.0\n")
    with pytest.raises(ValueError, match="linearly dependent"):
        load_sdpa(path)


def test_sdpa_roundtrip_bit_exact(tmp_path):
    prob, _ = generate_planted(6, 9, 2, seed=7)
    path = tmp_path / "roundtrip.dat-s"
    write_sdpa(prob, path)
    back = load_sdpa(path)
    assert np.array_equal(back.C, prob.C)
    assert np.array_equal(back.A, prob.A)
    assert np.array_equal(back.b, prob.b)


# -- generators --------------------------------------------------------------


def test_generate_planted_certificate():
    prob, cert = generate_planted(10, 20, 3, seed=1)
    rp, rd, comp = cert.kkt_residuals(prob)
    assert max(rp, rd, comp) <= 1e-10
    lam_x = np.linalg.eigvalsh(cert.Xstar)
    lam_s = np.linalg.eigvalsh(cert.Sstar)
    assert lam_x[0] >= -1e-12 and lam_s[0] >= -1e-12
    assert np.sum(lam_x > 1e-8) == 3 and np.sum(lam_s > 1e-8) == 7
    assert np.linalg.norm(cert.Qstar.T @ cert.Qstar - np.eye(10)) <= 1e-12


def test_generate_planted_reproducible():
    p1, _ = generate_planted(6, 8, 2, seed=42)
    p2, _ = generate_planted(6, 8, 2, seed=42)
    assert np.array_equal(p1.C, p2.C) and np.array_equal(p1.A, p2.A)


def test_generate_planted_degenerate_witness():
    prob, cert = generate_planted(8, 14, 3, seed=2, degeneracy="primal_nd_fail")
    # Last constraint matrix lives in the trailing block at Qstar: it kills
    # Xstar and is trace-orthogonal to Sstar's spectrum block.
    w = cert.Qstar.T @ prob.A[-1] @ cert.Qstar
    assert np.linalg.norm(w[: cert.r, :]) <= 1e-12
    assert abs(np.sum(prob.A[-1] * cert.Xstar)) <= 1e-12
    rp, rd, comp = cert.kkt_residuals(prob)
    assert max(rp, rd, comp) <= 1e-10


def test_generate_planted_bad_rank():
    with pytest.raises(ValueError):
        generate_planted(5, 6, 5, seed=0)
    with pytest.raises(ValueError):
        generate_planted(5, 15, 2, seed=0)  # m = t(n) leaves no slack


def test_generate_planted_spectrum_floor():
    _, cert = generate_planted(6, 8, 2, seed=3, spectrum_floor=1e-6, spectrum_ceil=1e-5)
    lam = np.linalg.eigvalsh(cert.zstar(1.0))
    assert np.min(np.abs(lam)) < 1e-4  # near strict-complementarity failure


def test_generate_maxcut_cycle():
    adj = cycle_adjacency(4)
    p = generate_maxcut(adj)
    lap = np.diag(adj.sum(1)) - adj
    assert np.array_equal(p.C, -lap / 4.0)
    assert np.array_equal(p.b, np.ones(4))
    assert brute_force_maxcut(adj) == 4.0
    # feasible rank-one cut certificate: relaxation value reaches -4
    x = np.array([1.0, -1.0, 1.0, -1.0])
    assert np.sum(p.C * np.outer(x, x)) == -4.0


def test_generate_maxcut_single_edge():
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = generate_maxcut(adj)
    assert brute_force_maxcut(adj) == 1.0
    x = np.array([1.0, -1.0])
    assert np.sum(p.C * np.outer(x, x)) == -1.0


def test_generate_maxcut_empty_graph():
    p = generate_maxcut(np.zeros((3, 3)))
    assert np.array_equal(p.C, np.zeros((3, 3)))
    assert np.sum(p.C * np.eye(3)) == 0.0  # any feasible point is optimal


def test_generate_maxcut_rejects_bad_input():
    with pytest.raises(ValueError):
        generate_maxcut(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        generate_maxcut(np.eye(3))
