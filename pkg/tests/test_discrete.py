"""Tests for discrete OT/UOT solvers against exact oracles."""

import itertools

import numpy as np
import pytest

from otcomplete.costs import CostKind, cost
from otcomplete.discrete import (
    CostMatrix,
    Coupling,
    Histogram,
    SolverConfig,
    cost_matrix,
    cross_class_mass,
    rescaling_factors,
    sinkhorn,
    solve_exact_assignment,
    solve_lp_small,
    unbalanced_sinkhorn,
)
from otcomplete.errors import ContractError
from otcomplete.geometry import PointCloud


def brute_force_assignment(C, tol=1e-12):
    """All m! permutations; ties resolved to the lexicographically smallest."""
    m = C.shape[0]
    best_val = None
    best_perm = None
    for perm in itertools.permutations(range(m)):
        val = sum(C[i, perm[i]] for i in range(m))
        if best_val is None or val < best_val - tol or \
                (abs(val - best_val) <= tol and perm < best_perm):
            best_val, best_perm = min(val, best_val) if best_val is not None else val, perm
    return best_val, best_perm


def kkt_residual(plan, a, b, C_norm, eps, rho1, rho2):
    """Entrywise stationarity residual of the eps-KL unbalanced objective.

    d/dpi [ <pi,C> + eps*KL(pi|a x b) + rho1*KL(pi0|a) + rho2*KL(pi1|b) ]
    must vanish at an interior optimum.
    """
    pi0 = plan.sum(axis=1)
    pi1 = plan.sum(axis=0)
    grad = (C_norm
            + eps * np.log(plan / np.outer(a, b))
            + rho1 * np.log(pi0 / a)[:, None]
            + rho2 * np.log(pi1 / b)[None, :])
    return float(np.abs(grad).max())


def rand_instance(rng, m, n, uniform=False):
    C = CostMatrix(rng.uniform(0.0, 1.0, size=(m, n)))
    if uniform:
        return Histogram.uniform(m), Histogram.uniform(n), C
    a = rng.uniform(0.2, 1.0, size=m)
    b = rng.uniform(0.2, 1.0, size=n)
    a /= a.sum()
    b /= b.sum()
    return Histogram(a), Histogram(b), C


# --- cost_matrix ------------------------------------------------------------


def clouds(rng, k, n=6):
    return [PointCloud(rng.normal(size=(n, 3)), class_label=i % 2) for i in range(k)]


def test_cost_matrix_zero_diagonal_for_identical_lists():
    rng = np.random.default_rng(0)
    X = clouds(rng, 3)
    M = cost_matrix(CostKind("chamfer_l1"), X, X)
    assert np.allclose(np.diag(M.entries), 0.0)


def test_cost_matrix_single_entry_matches_direct_call():
    rng = np.random.default_rng(1)
    X, Y = clouds(rng, 1), clouds(rng, 1)
    kind = CostKind("infocd")
    M = cost_matrix(kind, X, Y)
    assert M.entries[0, 0] == cost(kind, X[0], Y[0])


def test_cost_matrix_matches_elementwise_recompute():
    rng = np.random.default_rng(2)
    X, Y = clouds(rng, 4), clouds(rng, 4)
    kind = CostKind("chamfer_l2")
    M = cost_matrix(kind, X, Y)
    for i in range(4):
        for j in range(4):
            assert M.entries[i, j] == cost(kind, X[i], Y[j])


# --- exact assignment -------------------------------------------------------


def test_assignment_zero_matrix_lexicographic():
    out = solve_exact_assignment(CostMatrix(np.zeros((4, 4))))
    assert out.objective == 0.0
    assert np.array_equal(out.plan.argmax(axis=1), [0, 1, 2, 3])


def test_assignment_swap_matrix():
    out = solve_exact_assignment(CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert out.objective == 0.0
    assert np.array_equal(out.plan.argmax(axis=1), [0, 1])


def test_assignment_non_square_rejected():
    with pytest.raises(ContractError):
        solve_exact_assignment(CostMatrix(np.zeros((2, 3))))


def test_assignment_matches_brute_force_8x8():
    rng = np.random.default_rng(3)
    for trial in range(5):
        C = rng.uniform(size=(8, 8))
        out = solve_exact_assignment(CostMatrix(C))
        val, perm = brute_force_assignment(C)
        assert abs(out.objective - val / 8) < 1e-12
        assert tuple(out.plan.argmax(axis=1)) == perm


def test_assignment_tie_break_with_structured_ties():
    # two optimal permutations; lexicographically smaller must win
    C = np.array([[1.0, 1.0, 5.0],
                  [1.0, 1.0, 5.0],
                  [5.0, 5.0, 1.0]])
    out = solve_exact_assignment(CostMatrix(C))
    assert tuple(out.plan.argmax(axis=1)) == (0, 1, 2)


# --- small LP ---------------------------------------------------------------


def test_lp_one_by_one():
    out = solve_lp_small(Histogram(np.array([2.0])), Histogram(np.array([2.0])),
                         CostMatrix(np.array([[3.0]])))
    assert np.allclose(out.plan, [[2.0]])
    assert abs(out.objective - 6.0) < 1e-9


def test_lp_uniform_swap_prefers_diagonal():
    out = solve_lp_small(Histogram.uniform(2), Histogram.uniform(2),
                         CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert abs(out.objective) < 1e-9
    assert np.allclose(out.plan, np.diag([0.5, 0.5]), atol=1e-9)


def test_lp_known_unbalanced_marginals():
    a = Histogram(np.array([0.7, 0.3]))
    b = Histogram(np.array([0.5, 0.5]))
    C = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = solve_lp_small(a, b, C)
    # northwest-corner enumeration of basic solutions confirms this optimum
    assert np.allclose(out.plan, [[0.5, 0.2], [0.0, 0.3]], atol=1e-9)
    assert abs(out.objective - 0.2) < 1e-9


def test_lp_mass_mismatch_rejected():
    with pytest.raises(ContractError):
        solve_lp_small(Histogram(np.array([1.0])), Histogram(np.array([2.0])),
                       CostMatrix(np.array([[1.0]])))


def test_lp_size_cap():
    with pytest.raises(ContractError):
        solve_lp_small(Histogram.uniform(9), Histogram.uniform(9),
                       CostMatrix(np.zeros((9, 9))))


# --- sinkhorn ---------------------------------------------------------------


def test_sinkhorn_one_by_one():
    out = sinkhorn(Histogram(np.array([1.5])), Histogram(np.array([1.5])),
                   CostMatrix(np.array([[2.0]])))
    assert abs(out.plan[0, 0] - 1.5) < 1e-9


def test_sinkhorn_close_to_lp_on_swap_instance():
    a, b = Histogram.uniform(2), Histogram.uniform(2)
    C = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = sinkhorn(a, b, C, SolverConfig(epsilon=1e-3))
    assert out.objective < 1e-3


def test_sinkhorn_marginal_violation_within_tol():
    rng = np.random.default_rng(4)
    cfg = SolverConfig(epsilon=1e-2, tol=1e-6)
    for _ in range(100):
        a, b, C = rand_instance(rng, 6, 6)
        out = sinkhorn(a, b, C, cfg)
        assert out.converged
        err_a = np.abs(out.plan.sum(axis=1) - a.weights).max()
        err_b = np.abs(out.plan.sum(axis=0) - b.weights).max()
        assert max(err_a, err_b) <= cfg.tol


def test_sinkhorn_mass_mismatch_rejected():
    with pytest.raises(ContractError):
        sinkhorn(Histogram(np.array([1.0])), Histogram(np.array([2.0])),
                 CostMatrix(np.array([[1.0]])))


def test_sinkhorn_objective_entropic_bound():
    # <plan, C> cannot fall more than the entropic slack below the LP optimum
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b, C = rand_instance(rng, 5, 7)
        eps = 1e-2
        out = sinkhorn(a, b, C, SolverConfig(epsilon=eps))
        lp = _lp_any_size(a, b, C)
        slack = eps * float(np.abs(C.entries).max()) * np.log(5 * 7) + 1e-6
        assert out.objective >= lp - slack


def _lp_any_size(a, b, C):
    from scipy.optimize import linprog

    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    res = linprog(C.entries.ravel(), A_eq=A_eq,
                  b_eq=np.concatenate([a.weights, b.weights]),
                  bounds=(0, None), method="highs")
    return float(res.fun)


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    a, b, C = rand_instance(rng, 5, 5)
    perm = rng.permutation(5)
    out = sinkhorn(a, b, C)
    out_p = sinkhorn(Histogram(a.weights[perm]), b,
                     CostMatrix(C.entries[perm]), SolverConfig())
    assert np.abs(out.plan[perm] - out_p.plan).max() < 1e-12


# --- unbalanced -------------------------------------------------------------


def test_uot_infinite_rho_identical_to_sinkhorn():
    rng = np.random.default_rng(7)
    a, b, C = rand_instance(rng, 4, 4)
    bal = sinkhorn(a, b, C)
    unb = unbalanced_sinkhorn(a, b, C, SolverConfig(rho1=np.inf, rho2=np.inf))
    assert np.array_equal(bal.plan, unb.plan)


def test_uot_large_rho_matches_balanced():
    rng = np.random.default_rng(8)
    a, b = Histogram.uniform(2), Histogram.uniform(2)
    C = CostMatrix(rng.uniform(size=(2, 2)))
    bal = sinkhorn(a, b, C)
    unb = unbalanced_sinkhorn(a, b, C, SolverConfig(rho1=1e8, rho2=1e8))
    assert np.abs(bal.plan - unb.plan).max() < 1e-4


def outlier_instance():
    rng = np.random.default_rng(9)
    a = Histogram(np.array([0.5, 0.25, 0.25]))
    b = Histogram.uniform(2)
    C = np.vstack([np.full(2, 100.0), rng.uniform(0.0, 1.0, size=(2, 2))])
    return a, b, CostMatrix(C)


def test_uot_outlier_mass_dropped():
    a, b, C = outlier_instance()
    cfg = SolverConfig(epsilon=0.05, rho1=0.1, rho2=0.1, tol=1e-8)
    out = unbalanced_sinkhorn(a, b, C, cfg)
    transported = out.plan[0].sum()
    assert transported < 0.01 * a.weights[0]
    # independent first-order optimality check on the normalized objective
    res = kkt_residual(out.plan, a.weights, b.weights,
                       C.entries / np.abs(C.entries).max(),
                       cfg.epsilon, cfg.rho1, cfg.rho2)
    assert res <= 1e-6


def test_uot_kkt_residual_on_random_instances():
    rng = np.random.default_rng(10)
    cfg = SolverConfig(epsilon=0.05, rho1=0.5, rho2=0.8, tol=1e-8)
    for _ in range(10):
        a, b, C = rand_instance(rng, 4, 4)
        out = unbalanced_sinkhorn(a, b, C, cfg)
        cmax = np.abs(C.entries).max()
        res = kkt_residual(out.plan, a.weights, b.weights, C.entries / cmax,
                           cfg.epsilon, cfg.rho1, cfg.rho2)
        assert res <= 1e-6


# --- rescaling factors and cross-class mass ---------------------------------


def test_rescaling_factors_balanced_are_one():
    rng = np.random.default_rng(11)
    a, b, C = rand_instance(rng, 5, 5)
    out = sinkhorn(a, b, C, SolverConfig(tol=1e-8))
    src, tgt = rescaling_factors(out, a, b)
    assert np.abs(src - 1.0).max() < 1e-6
    assert np.abs(tgt - 1.0).max() < 1e-6


def test_rescaling_factors_outlier_small():
    a, b, C = outlier_instance()
    out = unbalanced_sinkhorn(a, b, C, SolverConfig(epsilon=0.05, rho1=0.1, rho2=0.1))
    src, _ = rescaling_factors(out, a, b)
    assert src[0] < 0.01


def test_rescaling_factors_algebraic_identity():
    a, b, C = outlier_instance()
    out = unbalanced_sinkhorn(a, b, C, SolverConfig(epsilon=0.05, rho1=0.1, rho2=0.1))
    src, tgt = rescaling_factors(out, a, b)
    assert np.array_equal(src * a.weights, out.plan.sum(axis=1))
    assert np.array_equal(tgt * b.weights, out.plan.sum(axis=0))


def test_rescaling_zero_weight_rejected():
    plan = np.ones((2, 2)) / 4
    cpl = Coupling(plan, Histogram(plan.sum(axis=1)), Histogram(plan.sum(axis=0)), 0.0)
    with pytest.raises(ContractError):
        rescaling_factors(cpl, Histogram(np.array([0.0, 1.0])), Histogram.uniform(2))


def test_cross_class_mass_block_diagonal_zero():
    plan = np.diag([0.5, 0.5])
    cpl = Coupling(plan, Histogram(plan.sum(axis=1)), Histogram(plan.sum(axis=0)), 0.0)
    assert cross_class_mass(cpl, [0, 1], [0, 1]) == 0.0


def test_cross_class_mass_anti_diagonal_one():
    plan = np.array([[0.0, 0.5], [0.5, 0.0]])
    cpl = Coupling(plan, Histogram(plan.sum(axis=1)), Histogram(plan.sum(axis=0)), 0.0)
    assert cross_class_mass(cpl, [0, 1], [0, 1]) == 1.0


def test_cross_class_mass_dimension_mismatch():
    plan = np.diag([0.5, 0.5])
    cpl = Coupling(plan, Histogram(plan.sum(axis=1)), Histogram(plan.sum(axis=0)), 0.0)
    with pytest.raises(ContractError):
        cross_class_mass(cpl, [0], [0, 1])
