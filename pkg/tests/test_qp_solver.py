"""Interior-point QP against closed forms and an active-set enumeration."""

import itertools
import logging

import numpy as np
import pytest

from lstm_nmpc.qp_solver import CONVERGED, MAX_ITER, CondensedQp, solve_qp


def _enumerate_active_sets(qp: CondensedQp):
    """Reference solution: try every active set, keep the best KKT point."""
    n, m = qp.n_variables, qp.n_constraints
    best_value, best_z = np.inf, None
    for size in range(0, min(n, m) + 1):
        for active in itertools.combinations(range(m), size):
            rows = list(active)
            G_a = qp.G[rows]
            kkt = np.block([[qp.H, G_a.T], [G_a, np.zeros((size, size))]])
            rhs = np.concatenate([-qp.g, qp.h[rows]])
            try:
                solution = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = solution[:n], solution[n:]
            if np.any(lam < -1e-9) or np.any(qp.G @ z > qp.h + 1e-9):
                continue
            value = qp.objective(z)
            if value < best_value:
                best_value, best_z = value, z
    return best_value, best_z


def _random_qp(rng: np.random.Generator) -> CondensedQp:
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 9))
    factor = rng.standard_normal((n, n))
    H = factor @ factor.T + 0.1 * np.eye(n)
    g = 3.0 * rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    # a known interior point keeps every instance feasible
    z_feasible = rng.standard_normal(n)
    h = G @ z_feasible + rng.uniform(0.1, 2.0, m)
    return CondensedQp(H, g, G, h, constant=float(rng.standard_normal()))


def test_unconstrained_identity():
    solution = solve_qp(CondensedQp(np.eye(2), [-1.0, -2.0], np.zeros((0, 2)), []))
    np.testing.assert_allclose(solution.z, [1.0, 2.0], atol=1e-12)
    assert solution.status == CONVERGED
    assert solution.iterations == 0
    assert solution.duals.size == 0


def test_single_active_bound():
    qp = CondensedQp(np.eye(2), [-3.0, 0.0], [[1.0, 0.0]], [1.0])
    solution = solve_qp(qp)
    assert solution.converged
    np.testing.assert_allclose(solution.z, [1.0, 0.0], atol=1e-8)
    assert solution.duals[0] == pytest.approx(2.0, abs=1e-7)
    assert solution.objective == pytest.approx(0.5 - 3.0, abs=1e-8)


def test_inactive_bound_has_zero_dual():
    qp = CondensedQp(np.eye(2), [-0.5, 0.0], [[1.0, 0.0]], [1.0])
    solution = solve_qp(qp)
    np.testing.assert_allclose(solution.z, [0.5, 0.0], atol=1e-8)
    assert solution.duals[0] == pytest.approx(0.0, abs=1e-8)


def test_matches_active_set_enumeration_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        qp = _random_qp(rng)
        reference_value, reference_z = _enumerate_active_sets(qp)
        solution = solve_qp(qp)
        assert solution.converged
        assert solution.kkt_norm <= 1e-8
        assert np.all(qp.G @ solution.z <= qp.h + 1e-8)
        assert solution.objective == pytest.approx(
            reference_value, abs=1e-7 * (1.0 + abs(reference_value))
        )
        np.testing.assert_allclose(solution.z, reference_z, atol=1e-5)


def test_heavily_penalised_slack_meets_absolute_tolerance():
    # z <= 1 + s is softened by s with an l1 weight of 1e4; the hard row z >= 3 forces s = 2
    qp = CondensedQp(
        np.diag([1.0, 200.0]),
        [-10.0, 1e4],
        [[1.0, -1.0], [-1.0, 0.0], [0.0, -1.0]],
        [1.0, -3.0, 0.0],
    )
    solution = solve_qp(qp)
    assert solution.converged
    np.testing.assert_allclose(solution.z, [3.0, 2.0], atol=1e-8)
    assert solution.kkt_norm <= 1e-8
    assert solution.duals[0] == pytest.approx(1e4 + 400.0, rel=1e-9)


def test_iteration_limit_reports_status_and_warns(caplog):
    qp = CondensedQp(np.eye(2), [-3.0, -3.0], [[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
    with caplog.at_level(logging.WARNING, logger="lstm_nmpc.qp_solver"):
        solution = solve_qp(qp, max_iters=1)
    assert solution.status == MAX_ITER
    assert not solution.converged
    assert solution.iterations == 1
    assert "iteration limit" in caplog.text
    assert np.isfinite(solution.kkt_norm)


def test_objective_includes_constant():
    qp = CondensedQp(np.eye(1), [0.0], np.zeros((0, 1)), [], constant=4.0)
    assert qp.objective(np.zeros(1)) == 4.0
    assert solve_qp(qp).objective == pytest.approx(4.0)


@pytest.mark.parametrize(
    "H, g, G, h",
    [
        ([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), []),
        (np.eye(3), [0.0, 0.0], np.zeros((0, 2)), []),
        (np.eye(2), [0.0, 0.0], [[1.0, 0.0]], [1.0, 2.0]),
    ],
)
def test_malformed_problems_rejected(H, g, G, h):
    with pytest.raises(ValueError):
        CondensedQp(H, g, G, h)
