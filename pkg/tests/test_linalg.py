import numpy as np
import pytest
import scipy.sparse as sp

from eddytv.errors import SingularMatrixError
from eddytv.linalg import (RESIDUAL_CONTRACT, CGReport, Factorization,
                           cg_solve, dump_matrix, factorize, finalize_csr,
                           solve)


def random_complex_symmetric(rng, n, density=0.05):
    a = sp.random(n, n, density=density, random_state=np.random.RandomState(7),
                  format="csr")
    a = a + a.T + sp.eye(n) * n  # diagonally dominant, well conditioned
    b = sp.random(n, n, density=density, random_state=np.random.RandomState(8),
                  format="csr")
    return (a + 1j * (b + b.T)).tocsr()


class TestFinalizeCsr:
    def test_sums_duplicates_and_drops_zeros(self):
        rows = [0, 0, 1, 1]
        cols = [0, 0, 1, 1]
        vals = [1.0, 2.0, 5.0, -5.0]
        m = finalize_csr(sp.coo_matrix((vals, (rows, cols)), shape=(2, 2)))
        assert m.nnz == 1
        assert m[0, 0] == 3.0
        assert m.has_sorted_indices

    def test_leaves_input_untouched(self):
        m = sp.coo_matrix(([1.0, 1.0], ([0, 0], [0, 0])), shape=(1, 1))
        finalize_csr(m)
        assert m.nnz == 2


class TestFactorization:
    def test_solve_meets_residual_contract(self, rng):
        m = random_complex_symmetric(rng, 200)
        fact = factorize(m)
        b = rng.normal(size=200) + 1j * rng.normal(size=200)
        x = solve(fact, b)
        assert fact.residual(x, b) <= RESIDUAL_CONTRACT

    def test_many_rhs_reuse_one_factorization(self, rng):
        m = random_complex_symmetric(rng, 80)
        fact = Factorization(m)
        for _ in range(5):
            b = rng.normal(size=80) + 1j * rng.normal(size=80)
            assert fact.residual(fact.solve(b), b) <= RESIDUAL_CONTRACT

    def test_real_matrix_real_rhs(self, rng):
        a = sp.random(50, 50, density=0.2,
                      random_state=np.random.RandomState(3)).tocsr()
        m = a + a.T + sp.eye(50) * 50
        fact = Factorization(m)
        b = rng.normal(size=50)
        assert fact.residual(fact.solve(b), b) <= RESIDUAL_CONTRACT

    def test_singular_matrix_raises(self):
        m = sp.coo_matrix(([1.0], ([0], [0])), shape=(3, 3)).tocsr()
        with pytest.raises(SingularMatrixError):
            Factorization(m)

    def test_rectangular_rejected(self):
        with pytest.raises(ValueError):
            Factorization(sp.eye(3).tocsr()[:2])

    def test_wrong_rhs_length_rejected(self):
        fact = Factorization(sp.eye(4, format="csr") * 2.0)
        with pytest.raises(ValueError):
            fact.solve(np.ones(5))

    def test_residual_zero_rhs(self):
        fact = Factorization(sp.eye(3, format="csr"))
        assert fact.residual(np.zeros(3), np.zeros(3)) == 0.0

    def test_indefinite_saddle_block(self, rng):
        # [[A, B], [B^T, 0]] with SPD A stays solvable
        a = sp.eye(30) * 4 + sp.diags(np.ones(29), 1) + sp.diags(np.ones(29), -1)
        b = sp.random(30, 10, density=0.3,
                      random_state=np.random.RandomState(5))
        m = sp.bmat([[a, b], [b.T, None]], format="csr")
        fact = Factorization(m)
        rhs = rng.normal(size=40)
        assert fact.residual(fact.solve(rhs), rhs) <= RESIDUAL_CONTRACT


class TestCgSolve:
    def make_spd(self, n):
        main = np.full(n, 4.0)
        off = np.full(n - 1, -1.0)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")

    def test_converges_on_spd(self, rng):
        m = self.make_spd(120)
        b = rng.normal(size=120)
        x, rep = cg_solve(m, b, tol=1e-12)
        assert rep.converged
        assert rep.residual <= 1e-11
        np.testing.assert_allclose(m @ x, b, atol=1e-9)

    def test_zero_rhs_short_circuits(self):
        x, rep = cg_solve(self.make_spd(10), np.zeros(10))
        assert rep == CGReport(True, 0, 0.0)
        np.testing.assert_array_equal(x, np.zeros(10))

    def test_warm_start_reduces_iterations(self, rng):
        m = self.make_spd(150)
        b = rng.normal(size=150)
        x, rep_cold = cg_solve(m, b, tol=1e-12)
        _, rep_warm = cg_solve(m, b, tol=1e-12, x0=x)
        assert rep_warm.iterations < rep_cold.iterations

    def test_budget_exhaustion_reported(self, rng):
        m = self.make_spd(200)
        b = rng.normal(size=200)
        x, rep = cg_solve(m, b, tol=1e-14, max_iter=2)
        assert not rep.converged
        assert rep.iterations <= 2
        assert np.isfinite(x).all()

    def test_linear_operator_input(self, rng):
        import scipy.sparse.linalg as spla

        m = self.make_spd(60)
        op = spla.aslinearoperator(m)
        b = rng.normal(size=60)
        x, rep = cg_solve(op, b)
        assert rep.converged
        np.testing.assert_allclose(m @ x, b, atol=1e-8)


class TestDumpMatrix:
    def test_round_trips_entries(self, tmp_path):
        m = sp.csr_matrix(np.array([[1.5, 0.0], [0.0, -2.0 + 3.0j]]))
        path = tmp_path / "m.txt"
        dump_matrix(m, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 2
        r, c, re, im = lines[1].split()
        assert (int(r), int(c)) == (1, 1)
        assert complex(float(re), float(im)) == -2.0 + 3.0j
