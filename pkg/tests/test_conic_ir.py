import math

import numpy as np
import pytest

from rsbeam.conic_ir import (
    ConicProblem,
    HermExpr,
    LinExpr,
    embed_hermitian,
    real_embedding,
    residual_report,
    solve,
)


def test_one_variable_lp():
    # maximize t subject to t <= 1
    p = ConicProblem(1, LinExpr.variable(0))
    p.add_linear(LinExpr.variable(0), "<=", 1.0)
    out = solve(p)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(1.0, abs=1e-7)


def test_psd_determinant_boundary():
    # maximize x subject to [[1, x], [x, 1]] >= 0  ->  x = 1
    p = ConicProblem(1, LinExpr.variable(0))
    body = HermExpr(2, {0: np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)}, np.eye(2))
    p.add_psd(body)
    p.add_linear(LinExpr.variable(0), "<=", 10.0)
    out = solve(p)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(1.0, abs=1e-6)


def test_exponential_cone_tight_point():
    # minimize v subject to exp(1) <= v, i.e. maximize -v
    p = ConicProblem(1, LinExpr.variable(0, -1.0))
    p.add_exp_epigraph(LinExpr.constant(1.0), LinExpr.variable(0))
    out = solve(p)
    assert out.status == "optimal"
    assert out.primal[0] == pytest.approx(math.e, abs=1e-6)


def test_log_hypograph():
    # maximize v subject to v <= ln(1+u), u <= 3
    p = ConicProblem(2, LinExpr.variable(1))
    p.add_log_hypograph(LinExpr.variable(0), LinExpr.variable(1))
    p.add_linear(LinExpr.variable(0), "<=", 3.0)
    out = solve(p)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(math.log(4.0), abs=1e-6)


def test_infeasible_status():
    p = ConicProblem(1, LinExpr.variable(0))
    p.add_linear(LinExpr.variable(0), "<=", 0.0)
    p.add_linear(LinExpr.variable(0, -1.0), "<=", -1.0)  # x >= 1
    out = solve(p)
    assert out.status == "infeasible"
    assert out.primal is None


def test_equality_rows():
    p = ConicProblem(2, LinExpr.variable(1))
    p.add_linear(LinExpr({0: 1.0, 1: 1.0}), "==", 2.0)
    p.add_linear(LinExpr.variable(0, -1.0), "<=", 0.0)
    p.add_linear(LinExpr.variable(1), "<=", 1.5)
    out = solve(p)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(1.5, abs=1e-7)


def test_determinism():
    p = ConicProblem(1, LinExpr.variable(0))
    body = HermExpr(2, {0: np.array([[0, 1], [1, 0]], dtype=complex)}, np.eye(2))
    p.add_psd(body)
    p.add_linear(LinExpr.variable(0), "<=", 10.0)
    a = solve(p)
    b = solve(p)
    assert a.objective_value == b.objective_value
    assert np.array_equal(a.primal, b.primal)


def test_validate_rejects_out_of_range_indices():
    p = ConicProblem(1, LinExpr.variable(3))
    with pytest.raises(ValueError, match="out of range"):
        p.validate()


class TestRealEmbedding:
    def test_identity(self):
        E = embed_hermitian(np.eye(3, dtype=complex))
        assert np.allclose(E, np.eye(6))

    def test_eigenvalues_doubled(self):
        # Hermitian with eigenvalues {-1, 2}: embedding has {-1, -1, 2, 2}
        H = np.array([[0.5, 1.5j], [-1.5j, 0.5]], dtype=complex)
        vals = np.sort(np.linalg.eigvalsh(H))
        evals = np.sort(np.linalg.eigvalsh(embed_hermitian(H)))
        assert vals == pytest.approx([-1.0, 2.0], abs=1e-12)
        assert evals == pytest.approx([-1.0, -1.0, 2.0, 2.0], abs=1e-12)

    def test_min_eigenvalue_preserved_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            H = 0.5 * (A + A.conj().T)
            lam = np.linalg.eigvalsh(H)
            lam_e = np.linalg.eigvalsh(embed_hermitian(H))
            assert lam_e[0] == pytest.approx(lam[0], abs=1e-10)
            assert lam_e[-1] == pytest.approx(lam[-1], abs=1e-10)

    def test_affine_map_embedding(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        H = 0.5 * (A + A.conj().T)
        expr = HermExpr(3, {0: H}, np.eye(3, dtype=complex))
        emb = real_embedding(expr)
        assert emb.size == 6
        x = np.array([0.7])
        direct = embed_hermitian(expr.value(x))
        assert np.allclose(emb.value(x).real, direct)

    def test_complex_block_solved_through_embedding(self):
        # maximize x subject to [[1, j x], [-j x, 1]] >= 0  ->  x = 1
        body = HermExpr(2, {0: np.array([[0, 1j], [-1j, 0]])}, np.eye(2, dtype=complex))
        p = ConicProblem(1, LinExpr.variable(0))
        p.add_psd(body)
        p.add_linear(LinExpr.variable(0), "<=", 5.0)
        out = solve(p)
        assert out.status == "optimal"
        assert out.objective_value == pytest.approx(1.0, abs=1e-6)


def test_residual_report_flags_violations():
    p = ConicProblem(1, LinExpr.variable(0))
    p.add_linear(LinExpr.variable(0), "<=", 1.0)
    p.add_exp_epigraph(LinExpr.variable(0), LinExpr.constant(1.0))
    report = residual_report(p, np.array([2.0]))
    assert report["linear"] == pytest.approx(1.0)
    assert report["cone"] > 1.0


def test_col_scale_transparent():
    p = ConicProblem(1, LinExpr.variable(0))
    p.add_linear(LinExpr.variable(0), "<=", 1000.0)
    p.col_scale = np.array([1000.0])
    out = solve(p)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(1000.0, rel=1e-7)


def test_dump_roundtrip(tmp_path):
    p = ConicProblem(2, LinExpr.variable(0))
    p.add_linear(LinExpr({0: 1.0, 1: 2.0}, 0.5), "<=", 1.0)
    p.add_psd(HermExpr(2, {1: np.eye(2, dtype=complex)}, np.zeros((2, 2))))
    path = tmp_path / "problem.json"
    solve(p, dump_path=str(path))
    import json

    doc = json.loads(path.read_text())
    assert doc["n_vars"] == 2
    assert doc["linear_constraints"][0]["rhs"] == 1.0
    assert doc["psd_blocks"][0]["size"] == 2
