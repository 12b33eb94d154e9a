"""Semi-dual UOT min-max training of the completion map.

Each iteration alternates one generator step (map loss: transport cost
minus potential plus density regularizer) and one potential step (conjugate
divergence terms on generated and real complete clouds). The shifted
Softplus conjugate gives the unbalanced objective; swapping it for the
identity recovers the plain semi-dual OT objective. The training source is
a mixture of incomplete and complete clouds with a configurable mixing
probability.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nets
from .costs import CostKind, chamfer_l1, cost, fscore, MetricConfig
from .discrete import CostMatrix, solve_exact_assignment
from .errors import (
    ConfigurationError,
    ContractError,
    NumericalError,
    TrainingDiverged,
)
from .geometry import LabeledDataset, PointCloud, resample
from .seeding import derive_seed, rng_for

CONJUGATE_KINDS = ("softplus_shifted", "identity")

_KNN_K = 4


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters for the alternating min-max loop.

    Defaults follow the reference training setup (Adam with beta1=0.95,
    lr 1e-5, batch 4, InfoCD cost at intensity 0.044, density weight 10.5,
    50% source mixture); desk-scale experiments override sizes and rates.
    """

    cost: CostKind = CostKind("infocd", intensity_tau=0.044)
    conjugate: str = "softplus_shifted"
    lr_T: float = 1e-5
    lr_v: float = 1e-5
    beta1: float = 0.95
    beta2: float = 0.999
    batch_size: int = 4
    epochs: int = 100
    dl_weight: float = 10.5
    mixture_prob: float = 0.5
    seed: int = 0
    n_input: int = 64
    n_out: int = 64
    point_widths: tuple = (3, 64, 128)
    map_head: tuple = (128,)
    pot_head: tuple = (64,)
    val_fraction: float = 0.2
    val_interval: int = 200
    checkpoint_interval: int = 0
    checkpoint_dir: str | None = None
    grad_clip: float | None = None
    abort_threshold: float = 1e6
    fscore_alpha: float = 0.01

    def __post_init__(self):
        if self.conjugate not in CONJUGATE_KINDS:
            raise ConfigurationError(f"unknown conjugate {self.conjugate!r}")
        if not (0.0 <= self.mixture_prob <= 1.0):
            raise ConfigurationError("mixture_prob must lie in [0, 1]")
        if self.lr_T <= 0 or self.lr_v <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("invalid learning rates / batch size / epochs")


@dataclass
class TrainLog:
    """Per-iteration losses plus periodic validation metric rows."""

    rows: list[dict] = field(default_factory=list)

    def append(self, **kw):
        self.rows.append(kw)

    def to_csv(self, path: str | Path) -> None:
        cols = ["iter", "loss_T", "loss_v", "dl", "val_cd_l1", "val_fscore"]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_csv_cell(r.get(c)) for c in cols])

    def validation_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("val_cd_l1") is not None]


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return v


# ---------------------------------------------------------------------------
# Divergence conjugates


def conjugate_graph(t: ad.Tensor, kind: str) -> ad.Tensor:
    if kind == "softplus_shifted":
        return ad.softplus_shifted(t)
    if kind == "identity":
        return t
    raise ConfigurationError(f"unknown conjugate {kind!r}")


def conjugate_value(x: float, kind: str) -> float:
    if kind == "softplus_shifted":
        return float(2.0 * (np.logaddexp(0.0, x) - np.log(2.0)))
    if kind == "identity":
        return float(x)
    raise ConfigurationError(f"unknown conjugate {kind!r}")


def conjugate_derivative(x: float, kind: str) -> float:
    if kind == "softplus_shifted":
        return float(1.0 + np.tanh(0.5 * x))
    if kind == "identity":
        return 1.0
    raise ConfigurationError(f"unknown conjugate {kind!r}")


# ---------------------------------------------------------------------------
# Differentiable point-set costs: gradient flows through the generated cloud


def _pairwise_sq_graph(x_const: ad.Tensor, y: ad.Tensor) -> ad.Tensor:
    n = x_const.shape[0]
    m = y.shape[0]
    diff = ad.sub(ad.reshape(x_const, (n, 1, 3)), ad.reshape(y, (1, m, 3)))
    return ad.reduce_sum(ad.square(diff), axis=2)


def cost_graph(kind: CostKind, x_pts: np.ndarray, y: ad.Tensor) -> ad.Tensor:
    """Graph version of cost(kind, x, y) differentiable in y."""
    tape = y.tape
    x = ad.leaf(tape, x_pts, requires_grad=False)
    if kind.variant == "l2":
        if x_pts.shape[0] != y.shape[0]:
            raise ContractError("l2 cost pairs points by index; sizes differ")
        base = ad.reduce_sum(ad.square(ad.sub(x, y)))
    elif kind.variant in ("chamfer_l2", "chamfer_l2_fwd", "chamfer_l1"):
        sq = _pairwise_sq_graph(x, y)
        fwd_min = ad.reduce_min(sq, axis=1)
        if kind.variant == "chamfer_l2_fwd":
            base = ad.reduce_sum(fwd_min)
        elif kind.variant == "chamfer_l2":
            base = ad.add(ad.reduce_sum(fwd_min),
                          ad.reduce_sum(ad.reduce_min(sq, axis=0)))
        else:
            base = ad.scale(
                ad.add(ad.reduce_mean(ad.sqrt(fwd_min)),
                       ad.reduce_mean(ad.sqrt(ad.reduce_min(sq, axis=0)))), 0.5)
    elif kind.variant == "infocd":
        sq = _pairwise_sq_graph(x, y)
        d_xy = ad.sqrt(ad.reduce_min(sq, axis=1))
        d_yx = ad.sqrt(ad.reduce_min(sq, axis=0))
        base = ad.add(
            _infocd_side_graph(d_xy, y.shape[0], kind),
            _infocd_side_graph(d_yx, x_pts.shape[0], kind),
        )
    elif kind.variant == "emd":
        if x_pts.shape[0] != y.shape[0]:
            raise ContractError("EMD training cost needs equal-size clouds")
        sq_np = ((x_pts[:, None, :] - y.values[None, :, :]) ** 2).sum(axis=2)
        ground = sq_np if kind.emd_ground == "sq_euclid" else np.sqrt(sq_np)
        plan = solve_exact_assignment(CostMatrix(ground)).plan
        perm = plan.argmax(axis=1)
        idx = np.repeat(perm[:, None], 3, axis=1)
        y_matched = ad.gather(y, idx, axis=0)
        per_pair = ad.reduce_sum(ad.square(ad.sub(x, y_matched)), axis=1)
        if kind.emd_ground == "euclid":
            per_pair = ad.sqrt(per_pair)
        base = ad.reduce_mean(per_pair)
    else:
        raise ContractError(f"unknown cost variant {kind.variant!r}")
    return ad.scale(base, kind.intensity_tau)


def _infocd_side_graph(d: ad.Tensor, n_other: int, kind: CostKind) -> ad.Tensor:
    k = d.shape[0]
    lse = ad.logsumexp_axis(ad.reshape(ad.scale(d, -1.0 / kind.tau), (1, k)), axis=1)
    lse = ad.reshape(lse, ())
    if kind.scale_lambda > 0.0:
        lse = ad.logaddexp_const(lse, float(np.log(kind.scale_lambda)))
    total = ad.add(ad.scale(ad.reduce_sum(d), 1.0 / kind.tau_prime),
                   ad.scale(lse, float(k)))
    return ad.scale(total, 1.0 / n_other)


# ---------------------------------------------------------------------------
# Density regularizer


def _knn_indices(d: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def density_loss_graph(y: ad.Tensor, k: int = _KNN_K) -> ad.Tensor:
    """Variance of per-point mean k-NN distance, normalized by bbox diagonal."""
    m = y.shape[0]
    if m < k + 1:
        raise ContractError(f"density loss needs at least {k + 1} points")
    sq = _pairwise_sq_graph(y, y)
    big = ad.leaf(y.tape, np.diag(np.full(m, 1e12)), requires_grad=False)
    d = ad.sqrt(ad.add(sq, big))
    idx = _knn_indices(d.values, k)
    knn = ad.gather(d, idx, axis=1)
    mean_knn = ad.reduce_mean(knn, axis=1)
    hi = ad.reduce_max(y, axis=0)
    lo = ad.neg(ad.reduce_max(ad.neg(y), axis=0))
    # tiny guard keeps a fully collapsed cloud from producing 0/0
    diag_sq = ad.add_const(ad.reduce_sum(ad.square(ad.sub(hi, lo))), 1e-12)
    centered = ad.sub(mean_knn, ad.reduce_mean(mean_knn))
    var = ad.reduce_mean(ad.square(centered))
    return ad.divide(var, diag_sq)


def density_loss(cloud: PointCloud | np.ndarray, k: int = _KNN_K) -> float:
    """Plain numpy evaluation of the density regularizer."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    m = pts.shape[0]
    if m < k + 1:
        raise ContractError(f"density loss needs at least {k + 1} points")
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
                + np.diag(np.full(m, 1e12)))
    knn = np.take_along_axis(d, _knn_indices(d, k), axis=1)
    mean_knn = knn.mean(axis=1)
    diag_sq = ((pts.max(axis=0) - pts.min(axis=0)) ** 2).sum() + 1e-12
    centered = mean_knn - mean_knn.mean()
    return float((centered**2).mean() / diag_sq)


# ---------------------------------------------------------------------------
# Losses


def loss_T(batch_x: list[PointCloud], map_params: nets.MapNetParams,
           pot_params: nets.PotentialNetParams, cfg: TrainerConfig):
    """Generator loss: mean of c(x, T(x)) - v(T(x)) + dl_weight * dl(T(x)).

    Gradients flow into the map parameters only; the potential leaves are
    frozen on the tape. Returns (loss value, map gradients, mean dl value).
    """
    if not batch_x:
        raise ContractError("empty batch")
    tape = ad.Tape()
    leaves_T = nets.make_leaves(tape, map_params, trainable=True)
    leaves_v = nets.make_leaves(tape, pot_params, trainable=False)
    terms = []
    dl_sum = 0.0
    for x in batch_x:
        t_out, _, _ = nets.forward_map(map_params, x, tape=tape, leaves=leaves_T)
        c_term = cost_graph(cfg.cost, x.points, t_out)
        v_term, _, _ = nets.forward_potential(pot_params, t_out, tape=tape,
                                              leaves=leaves_v)
        term = ad.sub(c_term, v_term)
        if cfg.dl_weight != 0.0:
            dl = density_loss_graph(t_out)
            dl_sum += float(dl.values)
            term = ad.add(term, ad.scale(dl, cfg.dl_weight))
        terms.append(term)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    total = ad.scale(total, 1.0 / len(batch_x))
    ad.backward(tape, total)
    grads = [ad.grad_or_zero(t) for t in leaves_T]
    return float(total.values), grads, dl_sum / len(batch_x)


def loss_v(batch_x: list[PointCloud], batch_y: list[PointCloud],
           map_params: nets.MapNetParams, pot_params: nets.PotentialNetParams,
           cfg: TrainerConfig):
    """Potential loss: conjugate terms on generated and real complete clouds.

    mean_x Psi*1(-c(x, T(x)) + v(T(x))) + mean_y Psi*2(-v(y)); gradients
    flow into the potential parameters only. Returns (loss value, grads).
    """
    if not batch_x or not batch_y:
        raise ContractError("empty batch")
    tape = ad.Tape()
    leaves_T = nets.make_leaves(tape, map_params, trainable=False)
    leaves_v = nets.make_leaves(tape, pot_params, trainable=True)
    gen_terms = []
    for x in batch_x:
        t_out, _, _ = nets.forward_map(map_params, x, tape=tape, leaves=leaves_T)
        c_val = cost(cfg.cost, x.points, t_out.values)
        v_term, _, _ = nets.forward_potential(pot_params, t_out, tape=tape,
                                              leaves=leaves_v)
        gen_terms.append(conjugate_graph(ad.add_const(v_term, -c_val), cfg.conjugate))
    real_terms = []
    for y in batch_y:
        v_y, _, _ = nets.forward_potential(pot_params, y, tape=tape, leaves=leaves_v)
        real_terms.append(conjugate_graph(ad.neg(v_y), cfg.conjugate))
    total = ad.scale(_sum_tensors(gen_terms), 1.0 / len(batch_x))
    total = ad.add(total, ad.scale(_sum_tensors(real_terms), 1.0 / len(batch_y)))
    ad.backward(tape, total)
    grads = [ad.grad_or_zero(t) for t in leaves_v]
    return float(total.values), grads


def _sum_tensors(ts: list[ad.Tensor]) -> ad.Tensor:
    total = ts[0]
    for t in ts[1:]:
        total = ad.add(total, t)
    return total


# ---------------------------------------------------------------------------
# Sampling and the training loop


def sample_source(dataset: LabeledDataset, cfg: TrainerConfig,
                  rng: np.random.Generator,
                  pair_indices: list[int] | None = None,
                  complete_pool: list[PointCloud] | None = None) -> list[PointCloud]:
    """Draw a source batch: complete clouds w.p. mixture_prob, else incomplete.

    The complete side of the mixture draws from complete_pool when given
    (so a subsampled target distribution also feeds the mixture),
    otherwise from the pairs' own complete clouds.
    """
    idx_pool = list(pair_indices) if pair_indices is not None \
        else list(range(len(dataset.pairs)))
    batch = []
    for _ in range(cfg.batch_size):
        if rng.uniform() < cfg.mixture_prob:
            if complete_pool is not None:
                batch.append(complete_pool[rng.integers(len(complete_pool))])
            else:
                batch.append(dataset.pairs[idx_pool[rng.integers(len(idx_pool))]].complete_gt)
        else:
            batch.append(dataset.pairs[idx_pool[rng.integers(len(idx_pool))]].incomplete)
    return batch


def _resample_batch(batch: list[PointCloud], n: int, seed: int) -> list[PointCloud]:
    return [resample(c, n, derive_seed(seed, "batch", i)) if len(c) != n else c
            for i, c in enumerate(batch)]


def train_val_split(dataset: LabeledDataset, cfg: TrainerConfig):
    """Seeded pair-level split; at least one pair stays on each side."""
    n = len(dataset.pairs)
    order = rng_for(cfg.seed, "split").permutation(n)
    n_val = min(max(1, int(round(cfg.val_fraction * n))), n - 1) if n > 1 else 0
    val_idx = sorted(order[:n_val].tolist())
    train_idx = sorted(order[n_val:].tolist())
    return train_idx, val_idx


@dataclass
class TrainResult:
    map_params: nets.MapNetParams
    pot_params: nets.PotentialNetParams
    log: TrainLog
    val_indices: list[int]
    final_val_cd: float | None = None
    best_val_cd: float | None = None


def validation_metrics(map_params: nets.MapNetParams, dataset: LabeledDataset,
                       indices: list[int], cfg: TrainerConfig):
    """Mean cd_l1 and F-score of T(incomplete) against the ground truth."""
    cds, fss = [], []
    alpha = MetricConfig(cfg.fscore_alpha)
    for i in indices:
        pair = dataset.pairs[i]
        x = resample(pair.incomplete, cfg.n_input, derive_seed(cfg.seed, "val_in", i))
        out = nets.map_cloud(map_params, x)
        cds.append(chamfer_l1(out, pair.complete_gt))
        fss.append(fscore(out, pair.complete_gt, alpha))
    return float(np.mean(cds)), float(np.mean(fss))


def identity_baseline_cd(dataset: LabeledDataset, indices: list[int]) -> float:
    """Mean cd_l1 between the raw incomplete cloud and its ground truth."""
    return float(np.mean([
        chamfer_l1(dataset.pairs[i].incomplete, dataset.pairs[i].complete_gt)
        for i in indices
    ]))


def config_hash(cfg) -> str:
    blob = json.dumps(_cfg_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _cfg_dict(cfg):
    if hasattr(cfg, "__dataclass_fields__"):
        return {k: _cfg_dict(getattr(cfg, k)) for k in cfg.__dataclass_fields__}
    if isinstance(cfg, (tuple, list)):
        return [_cfg_dict(v) for v in cfg]
    if isinstance(cfg, (np.floating, np.integer)):
        return cfg.item()
    return cfg


def _write_train_checkpoint(path, map_params, pot_params, adam_T, adam_v, iteration, cfg):
    arrays = {}
    arrays.update(nets.map_net_to_arrays(map_params, "T"))
    arrays.update(nets.potential_net_to_arrays(pot_params, "v"))
    for tag, st in (("aT", adam_T), ("av", adam_v)):
        for i, (m, v) in enumerate(zip(st.m, st.v)):
            arrays[f"{tag}.m{i:02d}"] = m
            arrays[f"{tag}.v{i:02d}"] = v
    meta = {
        "iteration": iteration,
        "adam_steps": [adam_T.step, adam_v.step],
        "config_hash": config_hash(cfg),
        "n_out": map_params.n_out,
    }
    nets.write_checkpoint(path, arrays, meta)


def load_train_checkpoint(path, cfg: TrainerConfig):
    arrays, meta = nets.read_checkpoint(path)
    map_t = nets.init_map_net(0, n_out=cfg.n_out, point_widths=cfg.point_widths,
                              head_widths=cfg.map_head)
    pot_t = nets.init_potential_net(0, point_widths=cfg.point_widths,
                                    head_widths=cfg.pot_head)
    map_params = nets.map_net_from_arrays(arrays, map_t, "T")
    pot_params = nets.potential_net_from_arrays(arrays, pot_t, "v")
    adam_T = nets.AdamState.for_params(map_params.arrays(), lr=cfg.lr_T,
                                       beta1=cfg.beta1, beta2=cfg.beta2)
    adam_v = nets.AdamState.for_params(pot_params.arrays(), lr=cfg.lr_v,
                                       beta1=cfg.beta1, beta2=cfg.beta2)
    for tag, st in (("aT", adam_T), ("av", adam_v)):
        for i in range(len(st.m)):
            st.m[i] = arrays[f"{tag}.m{i:02d}"]
            st.v[i] = arrays[f"{tag}.v{i:02d}"]
    adam_T.step, adam_v.step = meta["adam_steps"]
    return map_params, pot_params, adam_T, adam_v, meta["iteration"]


def train(dataset: LabeledDataset, cfg: TrainerConfig,
          complete_pool: list[PointCloud] | None = None,
          resume_from: str | Path | None = None) -> TrainResult:
    """Run the alternating min-max loop; fully deterministic per cfg.seed.

    complete_pool overrides the target-side clouds (used by the imbalance
    benchmark); by default the paired complete clouds fill both the mixture
    and the potential's real batches. Raises TrainingDiverged when a loss
    goes non-finite, carrying the last finite parameters and the log.
    """
    if len(dataset.pairs) < 1:
        raise ConfigurationError("dataset is empty")
    train_idx, val_idx = train_val_split(dataset, cfg)
    pool = complete_pool if complete_pool is not None else \
        [dataset.pairs[i].complete_gt for i in train_idx]
    if not pool:
        raise ConfigurationError("empty complete pool")

    if resume_from is not None:
        map_params, pot_params, adam_T, adam_v, start_iter = \
            load_train_checkpoint(resume_from, cfg)
    else:
        map_params = nets.init_map_net(derive_seed(cfg.seed, "init_T"),
                                       n_out=cfg.n_out, point_widths=cfg.point_widths,
                                       head_widths=cfg.map_head)
        pot_params = nets.init_potential_net(derive_seed(cfg.seed, "init_v"),
                                             point_widths=cfg.point_widths,
                                             head_widths=cfg.pot_head)
        adam_T = nets.AdamState.for_params(map_params.arrays(), lr=cfg.lr_T,
                                           beta1=cfg.beta1, beta2=cfg.beta2)
        adam_v = nets.AdamState.for_params(pot_params.arrays(), lr=cfg.lr_v,
                                           beta1=cfg.beta1, beta2=cfg.beta2)
        start_iter = 0

    log = TrainLog()
    iters_per_epoch = max(1, len(train_idx) // cfg.batch_size)
    total_iters = cfg.epochs * iters_per_epoch
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_val = None

    if total_iters == 0 and ckpt_dir:
        _write_train_checkpoint(ckpt_dir / "final.ckpt", map_params, pot_params,
                                adam_T, adam_v, 0, cfg)

    for it in range(start_iter, total_iters):
        # snapshot the array refs: adam_step returns fresh arrays, so these
        # stay valid as the last finite parameters if this iteration blows up
        snap_T = list(map_params.arrays())
        rng = rng_for(cfg.seed, "iter", it)
        batch_x = sample_source(dataset, cfg, rng, pair_indices=train_idx,
                                complete_pool=complete_pool)
        batch_x = _resample_batch(batch_x, cfg.n_input, derive_seed(cfg.seed, "rsx", it))
        y_idx = rng.integers(len(pool), size=cfg.batch_size)
        batch_y = [pool[j] for j in y_idx]

        try:
            lt, grads_T, dl_val = loss_T(batch_x, map_params, pot_params, cfg)
            if not np.isfinite(lt) or abs(lt) > cfg.abort_threshold:
                raise TrainingDiverged(f"map loss diverged at iteration {it}: {lt}")
            if cfg.grad_clip is not None:
                grads_T = nets.clip_grad_norm(grads_T, cfg.grad_clip)
            nets.set_arrays(map_params,
                            nets.adam_step(adam_T, map_params.arrays(), grads_T))

            lv, grads_v = loss_v(batch_x, batch_y, map_params, pot_params, cfg)
            if not np.isfinite(lv) or abs(lv) > cfg.abort_threshold:
                raise TrainingDiverged(
                    f"potential loss diverged at iteration {it}: {lv}")
            if cfg.grad_clip is not None:
                grads_v = nets.clip_grad_norm(grads_v, cfg.grad_clip)
            nets.set_arrays(pot_params,
                            nets.adam_step(adam_v, pot_params.arrays(), grads_v))
        except (TrainingDiverged, NumericalError) as exc:
            frozen = nets.init_map_net(0, n_out=cfg.n_out,
                                       point_widths=cfg.point_widths,
                                       head_widths=cfg.map_head)
            nets.set_arrays(frozen, snap_T)
            if ckpt_dir:
                _write_train_checkpoint(ckpt_dir / "aborted.ckpt", frozen, pot_params,
                                        adam_T, adam_v, it, cfg)
            raise TrainingDiverged(str(exc), params=frozen, log=log) from exc

        row = {"iter": it, "loss_T": lt, "loss_v": lv, "dl": dl_val}
        is_last = it == total_iters - 1
        if val_idx and (it % cfg.val_interval == cfg.val_interval - 1 or is_last):
            cd, fs = validation_metrics(map_params, dataset, val_idx, cfg)
            row["val_cd_l1"] = cd
            row["val_fscore"] = fs
            best_val = cd if best_val is None else min(best_val, cd)
        log.append(**row)
        if ckpt_dir and cfg.checkpoint_interval and \
                (it + 1) % cfg.checkpoint_interval == 0:
            _write_train_checkpoint(ckpt_dir / f"iter_{it + 1:06d}.ckpt", map_params,
                                    pot_params, adam_T, adam_v, it + 1, cfg)
    if ckpt_dir and total_iters > 0:
        _write_train_checkpoint(ckpt_dir / "final.ckpt", map_params, pot_params,
                                adam_T, adam_v, total_iters, cfg)

    final_val = None
    if log.validation_rows():
        final_val = log.validation_rows()[-1]["val_cd_l1"]
    return TrainResult(map_params, pot_params, log, val_idx,
                       final_val_cd=final_val, best_val_cd=best_val)


def complete(map_params: nets.MapNetParams, cloud: PointCloud,
             n_input: int | None = None, seed: int = 0) -> PointCloud:
    """Inference wrapper: resample to the model's input size and map."""
    x = cloud
    if n_input is not None and len(cloud) != n_input:
        x = resample(cloud, n_input, derive_seed(seed, "complete"))
    return nets.map_cloud(map_params, x)


def c_transform_residual(map_params: nets.MapNetParams,
                         pot_params: nets.PotentialNetParams,
                         cloud: PointCloud, pool: list[PointCloud],
                         cfg: TrainerConfig) -> float:
    """How far T(x) is from attaining inf_y [c(x, y) - v(y)] over a pool.

    T(x) itself joins the candidate set, so the residual is >= 0 up to
    floating-point noise.
    """
    t_out = nets.map_cloud(map_params, cloud)
    own = cost(cfg.cost, cloud.points, t_out.points) - \
        nets.potential_value(pot_params, t_out)
    best = own
    for y in pool:
        val = cost(cfg.cost, cloud.points, y.points) - \
            nets.potential_value(pot_params, y)
        best = min(best, val)
    return own - best
