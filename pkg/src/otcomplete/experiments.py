"""Desk-scale experiment harnesses on synthetic data.

Five analyses: cost-minimizer retrieval over a labeled corpus, the
class-imbalance robustness sweep (discrete solvers and neural training),
the training-cost ablation, the source-mixture ablation, and the
cost-intensity sweep. Every result row carries its seed and config hash so
a cell can be reproduced independently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .costs import CostKind, chamfer_l1, cost
from .discrete import (
    CostMatrix,
    Histogram,
    SolverConfig,
    cost_matrix,
    cross_class_mass,
    sinkhorn,
    solve_lp_small,
    unbalanced_sinkhorn,
)
from .errors import ConfigurationError, ContractError, TrainingDiverged
from .geometry import CloudPair, LabeledDataset, PointCloud, make_dataset, resample
from .seeding import derive_seed, rng_for
from .trainer import TrainerConfig, config_hash, identity_baseline_cd, train

DEFAULT_RETRIEVAL_KINDS = (
    CostKind("l2"),
    CostKind("chamfer_l2"),
    CostKind("chamfer_l2_fwd"),
    CostKind("chamfer_l1"),
    CostKind("infocd"),
    CostKind("emd"),
)


@dataclass(frozen=True)
class RetrievalConfig:
    """Cost-minimizer retrieval: rank the complete pool by c(x, .)."""

    kinds: tuple = DEFAULT_RETRIEVAL_KINDS
    k: int = 3
    n_points: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ContractError("retrieval needs k >= 1 neighbors")


@dataclass(frozen=True)
class ImbalanceSpec:
    """Two-class imbalance sweep: target class 2 subsampled by ratio r."""

    class_pair: tuple = ("sphere", "box")
    base_counts: tuple = (3, 10)  # mirrors a 6.4 : 21.3 proportion split
    ratios: tuple = (0.3, 0.5, 0.7, 1.0)
    n_points: int = 48
    pairs_per_class: int = 24
    seed: int = 0

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios):
            raise ContractError("imbalance ratios must be positive")
        if min(self.base_counts) < 1:
            raise ContractError("base counts must be positive")


@dataclass
class ResultRow:
    experiment: str
    cell: str
    seed: int
    config_hash: str
    metric: str
    value: float
    flag: str = ""


@dataclass
class ResultTable:
    """Labeled experiment results with per-row provenance."""

    rows: list[ResultRow] = field(default_factory=list)
    artifact_version: str = __version__

    def add(self, experiment, cell, seed, cfg_hash, metric, value, flag=""):
        self.rows.append(ResultRow(experiment, cell, int(seed), cfg_hash,
                                   metric, float(value), flag))

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment", "cell", "seed", "config_hash",
                        "metric", "value", "flag"])
            for r in self.rows:
                w.writerow([r.experiment, r.cell, r.seed, r.config_hash,
                            r.metric, "%.17g" % r.value, r.flag])

    def values(self, experiment=None, metric=None, cell_prefix=""):
        out = {}
        for r in self.rows:
            if experiment and r.experiment != experiment:
                continue
            if metric and r.metric != metric:
                continue
            if cell_prefix and not r.cell.startswith(cell_prefix):
                continue
            out[r.cell] = r.value
        return out


# ---------------------------------------------------------------------------
# Cost-minimizer retrieval


def _retrieval_cost_rows(kinds, q_pts: np.ndarray, pool_pts: np.ndarray,
                         pool_sq_norms: np.ndarray) -> dict[str, np.ndarray]:
    """One query's costs against the whole pool for every kind at once.

    q_pts is (q, 3), pool_pts (P, p, 3). The pairwise squared distances are
    computed once per query via a batched matmul and shared by all
    nearest-neighbor kinds. Matches cost(kind, q, pool[j]) entrywise
    (tested against the scalar implementation).
    """
    q_sq = (q_pts**2).sum(axis=1)
    cross = pool_pts @ q_pts.T  # (P, p, q)
    sq = np.maximum(pool_sq_norms[:, :, None] + q_sq[None, None, :] - 2.0 * cross, 0.0)
    fwd_sq = sq.min(axis=1)  # per query point: (P, q)
    bwd_sq = sq.min(axis=2)  # per pool point: (P, p)
    out = {}
    for kind in kinds:
        if kind.variant == "l2":
            vals = ((q_pts[None] - pool_pts) ** 2).sum(axis=(1, 2))
        elif kind.variant == "chamfer_l2":
            vals = fwd_sq.sum(axis=1) + bwd_sq.sum(axis=1)
        elif kind.variant == "chamfer_l2_fwd":
            vals = fwd_sq.sum(axis=1)
        elif kind.variant == "chamfer_l1":
            vals = 0.5 * (np.sqrt(fwd_sq).mean(axis=1) + np.sqrt(bwd_sq).mean(axis=1))
        elif kind.variant == "infocd":
            vals = (_infocd_sides(np.sqrt(fwd_sq), kind, pool_pts.shape[1])
                    + _infocd_sides(np.sqrt(bwd_sq), kind, q_pts.shape[0]))
        elif kind.variant == "emd":
            from scipy.optimize import linear_sum_assignment

            vals = np.empty(len(pool_pts))
            for j in range(len(pool_pts)):
                G = sq[j].T if kind.emd_ground == "sq_euclid" else np.sqrt(sq[j].T)
                r, c = linear_sum_assignment(G)
                vals[j] = G[r, c].sum() / G.shape[0]
        else:
            raise ContractError(f"unknown cost variant {kind.variant!r}")
        out[kind.variant] = kind.intensity_tau * vals
    return out


def _infocd_sides(d: np.ndarray, kind: CostKind, n_other: int) -> np.ndarray:
    t = -d / kind.tau
    mx = t.max(axis=1, keepdims=True)
    lse = (mx + np.log(np.exp(t - mx).sum(axis=1, keepdims=True))).squeeze(1)
    if kind.scale_lambda > 0.0:
        lse = np.logaddexp(lse, np.log(kind.scale_lambda))
    return (d.sum(axis=1) / kind.tau_prime + d.shape[1] * lse) / n_other


def cost_retrieval_eval(dataset: LabeledDataset, cfg: RetrievalConfig) -> tuple[ResultTable, dict]:
    """Rank complete clouds by each cost; score the top hit against the truth.

    The complete pool is shuffled relative to the pairs; every cloud is
    resampled to a common size so index-paired and assignment costs apply.
    Returns the table plus {kind: top-k pool indices per query} for
    qualitative dumps.
    """
    n = len(dataset.pairs)
    if n < cfg.k:
        raise ContractError(f"pool of {n} clouds is smaller than k={cfg.k}")
    rs = lambda c, tag, i: resample(c, cfg.n_points, derive_seed(cfg.seed, tag, i))
    queries = [rs(p.incomplete, "q", i) for i, p in enumerate(dataset.pairs)]
    gts = [p.complete_gt for p in dataset.pairs]
    shuffle = rng_for(cfg.seed, "pool").permutation(n)
    pool_pts = np.stack([rs(gts[j], "p", j).points for j in shuffle])
    pool_full = [gts[j] for j in shuffle]
    labels = [p.class_label if p.class_label is not None else 0
              for p in dataset.pairs]
    cfg_hash = config_hash(cfg)

    table = ResultTable()
    pool_sq_norms = (pool_pts**2).sum(axis=2)
    matrices: dict[str, np.ndarray] = {
        kind.variant: np.empty((n, n)) for kind in cfg.kinds
    }
    for i, q in enumerate(queries):
        rows = _retrieval_cost_rows(cfg.kinds, q.points, pool_pts, pool_sq_norms)
        for variant, row in rows.items():
            matrices[variant][i] = row
    neighbors: dict[str, np.ndarray] = {}
    for kind in cfg.kinds:
        M = matrices[kind.variant]
        order = np.argsort(M, axis=1, kind="stable")
        neighbors[kind.variant] = order[:, : cfg.k]
        gaps = np.array([
            chamfer_l1(pool_full[order[i, 0]], gts[i]) for i in range(n)
        ])
        by_class: dict[int, list[float]] = {}
        for i, lab in enumerate(labels):
            by_class.setdefault(lab, []).append(gaps[i])
        table.add("retrieval", f"{kind.variant}/AVG", cfg.seed, cfg_hash,
                  "cd_l1_gap", gaps.mean())
        for lab in sorted(by_class):
            name = dataset.class_names.get(lab, str(lab))
            table.add("retrieval", f"{kind.variant}/{name}", cfg.seed, cfg_hash,
                      "cd_l1_gap", float(np.mean(by_class[lab])))
    return table, neighbors


# ---------------------------------------------------------------------------
# Class-imbalance benchmark


def build_imbalance_instance(spec: ImbalanceSpec, r: float):
    """Cloud-level source/target pools with target class 2 subsampled by r."""
    n1, n2 = spec.base_counts
    n2_t = max(1, int(round(n2 * r)))
    kinds = spec.class_pair
    src, tgt = [], []
    for label, (kind, count_s, count_t) in enumerate(
            zip(kinds, (n1, n2), (n1, n2_t))):
        ds = make_dataset([kind], pairs_per_class=max(count_s, count_t),
                          n_complete=spec.n_points, n_incomplete=spec.n_points,
                          seed=derive_seed(spec.seed, "imb", kind))
        for i in range(count_s):
            c = ds.pairs[i].incomplete
            src.append(PointCloud(c.points, class_label=label))
        for i in range(count_t):
            c = ds.pairs[i].complete_gt
            tgt.append(PointCloud(c.points, class_label=label))
    return src, tgt


def imbalance_bench_discrete(spec: ImbalanceSpec,
                             cost_kind: CostKind = CostKind("chamfer_l1"),
                             solver: SolverConfig | None = None) -> ResultTable:
    """Cross-class transported mass, OT vs UOT, across the ratio grid."""
    solver = solver or SolverConfig(epsilon=5e-3, tol=1e-8)
    uot_cfg = replace(solver, rho1=0.05, rho2=0.05)
    cfg_hash = config_hash(spec)
    table = ResultTable()
    for r in spec.ratios:
        src, tgt = build_imbalance_instance(spec, r)
        M = cost_matrix(cost_kind, src, tgt)
        a = Histogram.uniform(len(src))
        b = Histogram.uniform(len(tgt))
        sl = [c.class_label for c in src]
        tl = [c.class_label for c in tgt]
        if len(src) <= 8 and len(tgt) <= 8:
            ot_plan = solve_lp_small(a, b, M)
        else:
            ot_plan = sinkhorn(a, b, M, solver)
        uot_plan = unbalanced_sinkhorn(a, b, M, uot_cfg)
        table.add("imbalance_discrete", f"r={r}/ot", spec.seed, cfg_hash,
                  "cross_class_mass", cross_class_mass(ot_plan, sl, tl))
        table.add("imbalance_discrete", f"r={r}/uot", spec.seed, cfg_hash,
                  "cross_class_mass", cross_class_mass(uot_plan, sl, tl))
    return table


def make_two_class_ring_dataset(counts: tuple[int, int], n_complete: int = 64,
                                n_incomplete: int = 32, seed: int = 0) -> LabeledDataset:
    """Two well-separated ring clusters (small radii vs large radii).

    The neural imbalance cells run on this 2D task: it is the cheapest
    dataset on which the trainer demonstrably learns, so the OT-vs-UOT
    comparison measures imbalance handling rather than undertraining.
    """
    rng = np.random.default_rng(derive_seed(seed, "rings2"))
    bands = ((0.35, 0.55), (0.85, 1.15))
    pairs = []
    for label, count in enumerate(counts):
        lo, hi = bands[label]
        for _ in range(count):
            r = rng.uniform(lo, hi)
            theta = rng.uniform(0.0, 2 * np.pi, size=n_complete)
            pts = np.column_stack([r * np.cos(theta), r * np.sin(theta),
                                   np.zeros(n_complete)])
            phase = rng.uniform(0.0, 2 * np.pi)
            t_inc = phase + rng.uniform(0.0, np.pi, size=n_incomplete)
            inc = np.column_stack([r * np.cos(t_inc), r * np.sin(t_inc),
                                   np.zeros(n_incomplete)])
            pairs.append(CloudPair(
                incomplete=PointCloud(inc, class_label=label),
                complete_gt=PointCloud(pts, class_label=label)))
    order = rng.permutation(len(pairs))
    return LabeledDataset(pairs=[pairs[i] for i in order],
                          class_names={0: "ring_small", 1: "ring_large"})


def _neural_imbalance_dataset(spec: ImbalanceSpec):
    # source-side class proportions follow base_counts (the 6.4 : 21.3 split)
    n1, n2 = spec.base_counts
    total = spec.pairs_per_class * 2
    c1 = max(2, int(round(total * n1 / (n1 + n2))))
    return make_two_class_ring_dataset(
        (c1, total - c1), n_complete=64, n_incomplete=32,
        seed=derive_seed(spec.seed, "neural"))


def subsample_complete_pool(dataset: LabeledDataset, indices: list[int],
                            class_label: int, ratio: float,
                            seed: int) -> list[PointCloud]:
    """Keep all completes of other classes, a `ratio` fraction of one class."""
    keep_idx = [i for i in indices
                if dataset.pairs[i].class_label != class_label]
    cls_idx = [i for i in indices
               if dataset.pairs[i].class_label == class_label]
    n_keep = max(1, int(round(len(cls_idx) * ratio)))
    order = rng_for(seed, "subsample", class_label).permutation(len(cls_idx))
    keep_idx += [cls_idx[j] for j in order[:n_keep]]
    return [dataset.pairs[i].complete_gt for i in sorted(keep_idx)]


def ot_variant_config(base_cfg: TrainerConfig) -> TrainerConfig:
    """Identity-conjugate (plain OT) variant of a training config.

    Differs from the unbalanced run only in the conjugate and its
    stabilizers: no density loss, beta1 = 0.9, gradient clipping at norm
    1.0 standing in for the R1/R2 penalties at desk scale. Learning rates
    stay shared so the potential remains live at desk iteration counts
    (a near-frozen potential would erase the imbalance sensitivity the
    benchmark measures).
    """
    return replace(base_cfg, conjugate="identity", grad_clip=1.0,
                   dl_weight=0.0, beta1=0.9)


def imbalance_bench_neural(spec: ImbalanceSpec, base_cfg: TrainerConfig) -> ResultTable:
    """Train the softplus and identity variants per ratio; report best cd_l1."""
    from .trainer import train_val_split

    ds = _neural_imbalance_dataset(spec)
    table = ResultTable()
    for r in spec.ratios:
        for conj, tag in (("softplus_shifted", "uot"), ("identity", "ot")):
            cfg = base_cfg if conj == "softplus_shifted" else ot_variant_config(base_cfg)
            train_idx, _ = train_val_split(ds, cfg)
            pool = subsample_complete_pool(ds, train_idx, class_label=1, ratio=r,
                                           seed=derive_seed(spec.seed, "pool", r))
            cell = f"r={r}/{tag}"
            try:
                res = train(ds, cfg, complete_pool=pool)
                table.add("imbalance_neural", cell, cfg.seed, config_hash(cfg),
                          "cd_l1", res.best_val_cd)
            except TrainingDiverged:
                table.add("imbalance_neural", cell, cfg.seed, config_hash(cfg),
                          "cd_l1", float("nan"), flag="diverged")
    return table


def imbalance_bench(spec: ImbalanceSpec, mode: str,
                    base_cfg: TrainerConfig | None = None) -> ResultTable:
    if mode == "discrete":
        return imbalance_bench_discrete(spec)
    if mode == "neural":
        if base_cfg is None:
            raise ConfigurationError("neural mode needs a trainer config")
        return imbalance_bench_neural(spec, base_cfg)
    raise ConfigurationError(f"unknown imbalance mode {mode!r}")


# ---------------------------------------------------------------------------
# Training ablations


def cost_ablation(dataset: LabeledDataset, kinds: list[CostKind],
                  base_cfg: TrainerConfig) -> ResultTable:
    """Train once per cost kind with identical seeds; report best cd_l1."""
    table = ResultTable()
    for kind in kinds:
        cfg = replace(base_cfg, cost=kind)
        cell = kind.variant
        try:
            res = train(dataset, cfg)
            table.add("cost_ablation", cell, cfg.seed, config_hash(cfg),
                      "cd_l1", res.best_val_cd)
            table.add("cost_ablation", f"{cell}/final", cfg.seed,
                      config_hash(cfg), "cd_l1", res.final_val_cd)
        except TrainingDiverged:
            table.add("cost_ablation", cell, cfg.seed, config_hash(cfg),
                      "cd_l1", float("nan"), flag="diverged")
    return table


def mixture_ablation(dataset: LabeledDataset, base_cfg: TrainerConfig) -> ResultTable:
    """mixture_prob in {0, 0.5} under identical seeds; cd_l1 and F-score."""
    from .trainer import validation_metrics, train_val_split

    table = ResultTable()
    for prob in (0.0, 0.5):
        cfg = replace(base_cfg, mixture_prob=prob)
        res = train(dataset, cfg)
        cfg_hash = config_hash(cfg)
        cell = f"mixture={prob}"
        table.add("mixture_ablation", cell, cfg.seed, cfg_hash, "cd_l1",
                  res.best_val_cd)
        table.add("mixture_ablation", f"{cell}/final", cfg.seed, cfg_hash,
                  "cd_l1", res.final_val_cd)
        _, fs = validation_metrics(res.map_params, dataset, res.val_indices, cfg)
        table.add("mixture_ablation", f"{cell}/fscore", cfg.seed, cfg_hash,
                  "fscore", fs)
    return table


def tau_sweep(dataset: LabeledDataset, base_cfg: TrainerConfig,
              taus: list[float] = (0.02, 0.025, 0.044, 0.1, 0.25)) -> ResultTable:
    """Cost-intensity sweep; one row per tau, identical seeds."""
    if any(t <= 0 for t in taus):
        raise ContractError("tau values must be positive")
    table = ResultTable()
    for tau in taus:
        cfg = replace(base_cfg, cost=replace(base_cfg.cost, intensity_tau=tau))
        cell = f"tau={tau}"
        try:
            res = train(dataset, cfg)
            table.add("tau_sweep", cell, cfg.seed, config_hash(cfg), "cd_l1",
                      res.best_val_cd)
        except TrainingDiverged:
            table.add("tau_sweep", cell, cfg.seed, config_hash(cfg), "cd_l1",
                      float("nan"), flag="diverged")
    return table


# ---------------------------------------------------------------------------
# Toy task: half-circles to circles


def make_toy_dataset(n_pairs: int = 200, n_complete: int = 64,
                     n_incomplete: int = 32, seed: int = 0) -> LabeledDataset:
    """2D rings (z = 0) with random radii; incomplete = a random half-arc."""
    rng = np.random.default_rng(derive_seed(seed, "toy"))
    pairs = []
    for _ in range(n_pairs):
        r = rng.uniform(0.6, 1.0)
        theta = rng.uniform(0.0, 2 * np.pi, size=n_complete)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta),
                               np.zeros(n_complete)])
        phase = rng.uniform(0.0, 2 * np.pi)
        t_inc = phase + rng.uniform(0.0, np.pi, size=n_incomplete)
        inc = np.column_stack([r * np.cos(t_inc), r * np.sin(t_inc),
                               np.zeros(n_incomplete)])
        pairs.append(CloudPair(incomplete=PointCloud(inc, class_label=0),
                               complete_gt=PointCloud(pts, class_label=0)))
    return LabeledDataset(pairs=pairs, class_names={0: "ring"})


def toy_trainer_config(**overrides) -> TrainerConfig:
    """Desk-scale defaults that solve the toy task in about 100 epochs."""
    base = dict(
        cost=CostKind("infocd", intensity_tau=0.1),
        epochs=100, batch_size=4, n_input=32, n_out=64,
        lr_T=2e-3, lr_v=1e-3, dl_weight=10.5, mixture_prob=0.5,
        val_interval=200, seed=0,
    )
    base.update(overrides)
    return TrainerConfig(**base)


def toy_efficacy(n_pairs: int = 200, epochs: int = 100, seed: int = 0,
                 **overrides) -> ResultTable:
    """Train on the toy task; report the identity baseline and val cd_l1."""
    ds = make_toy_dataset(n_pairs=n_pairs, seed=seed)
    cfg = toy_trainer_config(epochs=epochs, seed=seed, **overrides)
    res = train(ds, cfg)
    base = identity_baseline_cd(ds, res.val_indices)
    table = ResultTable()
    cfg_hash = config_hash(cfg)
    table.add("toy_efficacy", "identity_baseline", seed, cfg_hash, "cd_l1", base)
    table.add("toy_efficacy", "trained_best", seed, cfg_hash, "cd_l1",
              res.best_val_cd)
    table.add("toy_efficacy", "trained_final", seed, cfg_hash, "cd_l1",
              res.final_val_cd)
    return table
