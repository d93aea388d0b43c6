"""QP solver: hand KKT cases, random problems vs a dual projected-gradient oracle."""

import numpy as np
import pytest

from hybridpv.qp import QpProblem, QpSolution, QpSolver, solve_qp

from oracles import dual_projected_gradient_batch, random_qp


def random_problem(rng, n, m):
    h, f, a, b, z_interior = random_qp(rng, n, m)
    return QpProblem(h=h, f=f, a_ineq=a, b_ineq=b), z_interior


class TestBasics:
    def test_unconstrained_projection(self):
        z0 = np.array([1.5, -2.0, 0.25])
        prob = QpProblem(h=2 * np.eye(3), f=-2 * z0,
                         a_ineq=np.zeros((0, 3)), b_ineq=np.zeros(0))
        sol = solve_qp(prob)
        assert sol.status == "optimal"
        assert np.allclose(sol.z, z0, atol=1e-10)

    def test_single_bound_kkt_by_hand(self):
        # min z^2 s.t. z >= 1  ->  z = 1, multiplier 2
        prob = QpProblem(h=np.array([[2.0]]), f=np.array([0.0]),
                         a_ineq=np.array([[-1.0]]), b_ineq=np.array([-1.0]))
        sol = solve_qp(prob)
        assert sol.status == "optimal"
        assert sol.z[0] == pytest.approx(1.0, abs=1e-10)
        assert sol.multipliers[0] == pytest.approx(2.0, abs=1e-8)

    def test_lower_bound_field(self):
        prob = QpProblem(h=np.eye(2), f=np.array([1.0, 1.0]),
                         a_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0),
                         lb=np.array([0.0, -np.inf]))
        sol = solve_qp(prob)
        assert sol.z[0] == pytest.approx(0.0, abs=1e-10)
        assert sol.z[1] == pytest.approx(-1.0, abs=1e-10)

    def test_infeasible_detected(self):
        prob = QpProblem(h=np.eye(1), f=np.zeros(1),
                         a_ineq=np.array([[1.0], [-1.0]]),
                         b_ineq=np.array([-2.0, 1.0]))  # z <= -2 and z >= -1
        assert solve_qp(prob).status == "infeasible"

    def test_asymmetric_hessian_rejected(self):
        prob = QpProblem(h=np.array([[1.0, 0.5], [0.0, 1.0]]), f=np.zeros(2),
                         a_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0))
        with pytest.raises(ValueError):
            solve_qp(prob)


class TestAgainstOracle:
    def test_twenty_random_qps(self):
        rng = np.random.default_rng(42)
        probs = []
        for _ in range(20):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, 17))
            probs.append(random_problem(rng, n, m)[0])
        refs = dual_projected_gradient_batch(probs)
        for prob, z_ref in zip(probs, refs):
            sol = solve_qp(prob)
            assert sol.status == "optimal"
            assert np.max(np.abs(sol.z - z_ref)) <= 1e-4

    def test_kkt_residuals(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            prob, _ = random_problem(rng, int(rng.integers(2, 9)), int(rng.integers(1, 17)))
            sol = solve_qp(prob)
            assert sol.status == "optimal"
            assert sol.kkt_residual <= 1e-6

    def test_beats_random_feasible_points(self):
        rng = np.random.default_rng(17)

        def objective(prob, z):
            return 0.5 * z @ prob.h @ z + prob.f @ z

        for _ in range(5):
            prob, z_int = random_problem(rng, 4, 10)
            sol = solve_qp(prob)
            best = objective(prob, sol.z)
            found = 0
            while found < 1000:
                z = z_int + rng.normal(scale=1.5, size=4)
                if np.all(prob.a_ineq @ z <= prob.b_ineq):
                    found += 1
                    assert best <= objective(prob, z) + 1e-9


class TestWarmStart:
    def test_warm_start_does_not_change_solution(self):
        rng = np.random.default_rng(5)
        solver = QpSolver()
        for _ in range(10):
            prob, _ = random_problem(rng, 6, 12)
            cold = solve_qp(prob)
            solver.reset()
            solver.solve(prob)          # populate memory
            warm = solver.solve(prob)   # re-solve warm
            assert cold.status == warm.status == "optimal"
            assert np.max(np.abs(cold.z - warm.z)) <= 1e-8

    def test_screening_matches_full(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            prob, _ = random_problem(rng, 5, 16)
            a = solve_qp(prob, screen=True)
            b = solve_qp(prob, screen=False)
            assert np.max(np.abs(a.z - b.z)) <= 1e-8
