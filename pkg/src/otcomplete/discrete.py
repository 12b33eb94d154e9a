"""Discrete OT/UOT solvers on empirical measures.

Solvers work on max-normalized costs for conditioning (epsilon and the
marginal penalties rho are therefore expressed in normalized cost units);
reported objectives are un-normalized. Scaling iterations run in the log
domain throughout, with the unbalanced exponent rho/(rho + eps) collapsing
to exactly 1 for rho = +inf so the balanced solver is the literal special
case.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .costs import CostKind, cost
from .errors import ContractError
from .geometry import PointCloud

# Above this size the exact-assignment tie-break falls back to the LAP
# solver's deterministic optimum (continuous costs make ties measure-zero).
_LEX_TIEBREAK_MAX = 12


@dataclass(frozen=True)
class Histogram:
    """Nonnegative weights on discrete atoms."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] == 0:
            raise ContractError("histogram needs a nonempty 1-d weight vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ContractError("histogram weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def uniform(n: int, mass: float = 1.0) -> "Histogram":
        return Histogram(np.full(n, mass / n))


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise costs with optional row/column provenance labels."""

    entries: np.ndarray
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ContractError("cost matrix must be 2-d")
        if not np.all(np.isfinite(e)):
            raise ContractError("cost matrix entries must be finite")
        object.__setattr__(self, "entries", e)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass
class Coupling:
    """A transport plan with its achieved marginals and objective."""

    plan: np.ndarray
    row_marginal: Histogram
    col_marginal: Histogram
    objective: float
    converged: bool = True
    residual: float = 0.0
    iterations: int = 0

    @property
    def total_mass(self) -> float:
        return float(self.plan.sum())


@dataclass(frozen=True)
class SolverConfig:
    """Entropic regularization, KL marginal penalties, and stopping rule.

    rho1/rho2 = +inf recovers hard marginal constraints (balanced OT).
    tol bounds the max L-inf violation of the (soft) marginal fixed-point
    condition at return.
    """

    epsilon: float = 1e-2
    rho1: float = np.inf
    rho2: float = np.inf
    max_iters: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0 or self.tol <= 0 or self.max_iters < 1:
            raise ContractError("need epsilon > 0, tol > 0, max_iters >= 1")
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ContractError("rho penalties must be positive (or +inf)")


def cost_matrix(kind: CostKind, X: Sequence[PointCloud], Y: Sequence[PointCloud]) -> CostMatrix:
    """Pairwise cloud-level costs: entries[i][j] = cost(kind, X[i], Y[j])."""
    if len(X) == 0 or len(Y) == 0:
        raise ContractError("cost_matrix needs nonempty cloud lists")
    entries = np.empty((len(X), len(Y)))
    for i, x in enumerate(X):
        for j, y in enumerate(Y):
            try:
                entries[i, j] = cost(kind, x, y)
            except Exception as exc:
                raise type(exc)(f"cost failed at entry ({i}, {j}): {exc}") from exc
    labels_x = tuple(c.class_label for c in X)
    labels_y = tuple(c.class_label for c in Y)
    return CostMatrix(entries, row_labels=labels_x, col_labels=labels_y)


def _lap_value(C: np.ndarray) -> float:
    if C.size == 0:
        return 0.0
    r, c = linear_sum_assignment(C)
    return float(C[r, c].sum())


def _lex_assignment(C: np.ndarray) -> np.ndarray:
    """Lexicographically smallest optimal permutation (greedy row fixing)."""
    m = C.shape[0]
    total = _lap_value(C)
    tol = 1e-9 * max(1.0, float(np.abs(C).max()) * m)
    free = list(range(m))
    perm = np.empty(m, dtype=np.int64)
    acc = 0.0
    for i in range(m):
        rest_rows = np.arange(i + 1, m)
        for j in free:
            rest_cols = [c for c in free if c != j]
            v_rest = _lap_value(C[np.ix_(rest_rows, rest_cols)])
            if acc + C[i, j] + v_rest <= total + tol:
                perm[i] = j
                acc += C[i, j]
                free.remove(j)
                break
        else:  # pragma: no cover - optimal value always admits a completion
            raise AssertionError("no feasible column found in lexicographic greedy")
    return perm


def solve_exact_assignment(C: CostMatrix) -> Coupling:
    """Exact EMD for uniform equal-size marginals: an optimal permutation.

    objective = (minimal assignment cost) / m. Ties between optimal
    permutations are broken toward the lexicographically smallest one for
    m <= 12; larger instances return the LAP solver's deterministic
    optimum.
    """
    E = C.entries
    m, n = E.shape
    if m != n:
        raise ContractError(f"exact assignment needs a square matrix, got {m}x{n}")
    if m <= _LEX_TIEBREAK_MAX:
        perm = _lex_assignment(E)
    else:
        perm = linear_sum_assignment(E)[1].astype(np.int64)
    plan = np.zeros((m, m))
    plan[np.arange(m), perm] = 1.0 / m
    uniform = Histogram.uniform(m)
    objective = float(E[np.arange(m), perm].sum() / m)
    return Coupling(plan, uniform, uniform, objective)


def solve_lp_small(a: Histogram, b: Histogram, C: CostMatrix) -> Coupling:
    """Exact Kantorovich LP on tiny instances (m, n <= 8)."""
    m, n = C.shape
    if m > 8 or n > 8:
        raise ContractError("solve_lp_small handles at most 8x8 instances")
    if len(a) != m or len(b) != n:
        raise ContractError("histogram sizes must match the cost matrix")
    if abs(a.total_mass - b.total_mass) > 1e-9 * max(1.0, a.total_mass):
        raise ContractError("balanced OT needs equal total masses")
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([a.weights, b.weights])
    res = linprog(C.entries.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs")
    if not res.success:
        raise ContractError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(m, n)
    return Coupling(
        plan,
        Histogram(plan.sum(axis=1)),
        Histogram(plan.sum(axis=0)),
        float((plan * C.entries).sum()),
    )


def _lse_rows(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=1)
    return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))


def _lse_cols(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=0)
    return mx + np.log(np.exp(M - mx[None, :]).sum(axis=0))


def _scaling_iterations(a, b, Ct, eps, rho1, rho2, max_iters, tol, phi, psi):
    """Log-domain (generalized) scaling iterations on normalized costs Ct.

    Returns (phi, psi, converged, residual, iterations). phi/psi are
    log-scalings; the plan is exp(log a_i + log b_j + phi_i + psi_j - Ct/eps).

    The column-side fixed-point condition holds exactly right after the psi
    update, so convergence only needs the row-side residual: the L-inf
    marginal violation when rho1 = +inf, else the stationarity residual
    eps*phi + rho1*log(pi_0/a), which equals the entrywise KKT residual of
    the eps-KL objective at the returned plan.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    G = -Ct / eps
    Gb = G + log_b[None, :]
    Ga = G + log_a[:, None]
    fi1 = 1.0 if np.isinf(rho1) else rho1 / (rho1 + eps)
    fi2 = 1.0 if np.isinf(rho2) else rho2 / (rho2 + eps)
    residual = np.inf
    check_every = 10
    it = 0
    for it in range(1, max_iters + 1):
        phi = -fi1 * _lse_rows(Gb + psi[None, :])
        psi = -fi2 * _lse_cols(Ga + phi[:, None])
        if it % check_every == 0 or it == max_iters:
            L = _lse_rows(Gb + psi[None, :])
            if np.isinf(rho1):
                residual = float(np.abs(a * np.expm1(phi + L)).max())
            else:
                residual = float(np.abs(eps * phi + rho1 * (phi + L)).max())
            if residual <= tol:
                return phi, psi, True, residual, it
    return phi, psi, residual <= tol, residual, it


def _solve_scaling(a: Histogram, b: Histogram, C: CostMatrix, cfg: SolverConfig,
                   rho1: float, rho2: float) -> Coupling:
    aw, bw = a.weights, b.weights
    m, n = C.shape
    if len(a) != m or len(b) != n:
        raise ContractError("histogram sizes must match the cost matrix")
    if np.any(aw == 0) or np.any(bw == 0):
        raise ContractError("scaling solvers need strictly positive weights")
    cmax = float(np.abs(C.entries).max())
    Ct = C.entries / cmax if cmax > 0 else C.entries
    phi = np.zeros(m)
    psi = np.zeros(n)
    # warm-start annealing: iterate briefly at larger eps, halving down to
    # the target while carrying the dual potentials eps*phi across levels;
    # the final fixed point is unchanged
    eps_levels = []
    level = 0.1
    while level > cfg.epsilon * 1.999:
        eps_levels.append(level)
        level /= 2
    prev_eps = None
    for eps in eps_levels:
        if prev_eps is not None:
            phi *= prev_eps / eps
            psi *= prev_eps / eps
        phi, psi, _, _, _ = _scaling_iterations(
            aw, bw, Ct, eps, rho1, rho2, 50, cfg.tol, phi, psi)
        prev_eps = eps
    if prev_eps is not None:
        phi *= prev_eps / cfg.epsilon
        psi *= prev_eps / cfg.epsilon
    phi, psi, converged, residual, iters = _scaling_iterations(
        aw, bw, Ct, cfg.epsilon, rho1, rho2, cfg.max_iters, cfg.tol, phi, psi)
    G = -Ct / cfg.epsilon
    log_plan = (np.log(aw) + phi)[:, None] + (np.log(bw) + psi)[None, :] + G
    plan = np.exp(log_plan)
    return Coupling(
        plan,
        Histogram(plan.sum(axis=1)),
        Histogram(plan.sum(axis=0)),
        float((plan * C.entries).sum()),
        converged=converged,
        residual=residual,
        iterations=iters,
    )


def sinkhorn(a: Histogram, b: Histogram, C: CostMatrix, cfg: SolverConfig = SolverConfig()) -> Coupling:
    """Entropic OT via log-domain Sinkhorn scaling.

    Stops when the max L-inf marginal violation is <= tol; on hitting
    max_iters the best iterate is returned flagged converged=False with
    its residual.
    """
    if abs(a.total_mass - b.total_mass) > 1e-9 * max(1.0, a.total_mass):
        raise ContractError("balanced sinkhorn needs equal total masses")
    return _solve_scaling(a, b, C, cfg, np.inf, np.inf)


def unbalanced_sinkhorn(a: Histogram, b: Histogram, C: CostMatrix,
                        cfg: SolverConfig = SolverConfig()) -> Coupling:
    """KL-penalized UOT via generalized scaling with exponent rho/(rho+eps).

    rho1 = rho2 = +inf reduces exactly to balanced sinkhorn (the exponent
    becomes exactly 1). Total plan mass may differ from the input masses.
    """
    return _solve_scaling(a, b, C, cfg, cfg.rho1, cfg.rho2)


def rescaling_factors(coupling: Coupling, a: Histogram, b: Histogram):
    """Per-atom mass rescaling applied by the plan: marginal / input weight.

    Balanced OT gives all factors 1 (within solver tolerance); UOT's
    factors are the empirical counterpart of the conjugate-derivative
    reweighting that absorbs class imbalance.
    """
    if np.any(a.weights <= 0) or np.any(b.weights <= 0):
        raise ContractError("rescaling factors need strictly positive input weights")
    src = coupling.plan.sum(axis=1) / a.weights
    tgt = coupling.plan.sum(axis=0) / b.weights
    return src, tgt


def cross_class_mass(coupling: Coupling, source_labels: Sequence[int],
                     target_labels: Sequence[int]) -> float:
    """Fraction of plan mass transported between differently-labeled atoms."""
    sl = np.asarray(source_labels)
    tl = np.asarray(target_labels)
    if sl.shape[0] != coupling.plan.shape[0] or tl.shape[0] != coupling.plan.shape[1]:
        raise ContractError("label arrays must match the plan dimensions")
    total = coupling.plan.sum()
    if total == 0:
        return 0.0
    mismatch = sl[:, None] != tl[None, :]
    return float(coupling.plan[mismatch].sum() / total)


def coupling_to_csv(coupling: Coupling, path: str | Path) -> None:
    """Serialize a plan as (row, col, mass) rows."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "mass"])
        m, n = coupling.plan.shape
        for i in range(m):
            for j in range(n):
                w.writerow([i, j, "%.17g" % coupling.plan[i, j]])


def factors_to_csv(src: np.ndarray, tgt: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "index", "factor"])
        for i, f in enumerate(src):
            w.writerow(["source", i, "%.17g" % f])
        for j, f in enumerate(tgt):
            w.writerow(["target", j, "%.17g" % f])
