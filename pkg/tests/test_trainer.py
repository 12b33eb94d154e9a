"""Tests for conjugates, losses, the density regularizer, and the train loop."""

import hashlib

import numpy as np
import pytest

from otcomplete import autodiff as ad
from otcomplete import nets
from otcomplete.costs import CostKind, chamfer_l2, cost
from otcomplete.errors import ContractError, TrainingDiverged
from otcomplete.geometry import CloudPair, LabeledDataset, PointCloud
from otcomplete.seeding import derive_seed, rng_for
from otcomplete.trainer import (
    TrainerConfig,
    c_transform_residual,
    complete,
    conjugate_derivative,
    conjugate_graph,
    conjugate_value,
    cost_graph,
    density_loss,
    density_loss_graph,
    identity_baseline_cd,
    loss_T,
    loss_v,
    sample_source,
    train,
    train_val_split,
)

RNG = np.random.default_rng(0)


def rcloud(rng, n, label=None):
    return PointCloud(rng.normal(size=(n, 3)), class_label=label)


def tiny_dataset(n_pairs=8, n_pts=12, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        full = rcloud(rng, n_pts, label=i % 2)
        part = PointCloud(full.points[: n_pts // 2], class_label=i % 2)
        pairs.append(CloudPair(incomplete=part, complete_gt=full))
    return LabeledDataset(pairs=pairs)


def tiny_cfg(**kw):
    base = dict(
        cost=CostKind("chamfer_l2"),
        epochs=2, batch_size=2, n_input=6, n_out=6,
        point_widths=(3, 8, 12), map_head=(8,), pot_head=(8,),
        lr_T=1e-3, lr_v=1e-3, dl_weight=0.0, val_interval=4, seed=3,
    )
    base.update(kw)
    return TrainerConfig(**base)


# --- conjugates --------------------------------------------------------------


def test_softplus_conjugate_zero_conditions():
    assert abs(conjugate_value(0.0, "softplus_shifted")) < 1e-12
    assert abs(conjugate_derivative(0.0, "softplus_shifted") - 1.0) < 1e-12


def test_conjugates_nondecreasing_and_convex_on_grid():
    grid = np.linspace(-10.0, 10.0, 1001)
    for kind in ("softplus_shifted", "identity"):
        vals = np.array([conjugate_value(x, kind) for x in grid])
        diffs = np.diff(vals)
        assert np.all(diffs >= -1e-12)
        second = np.diff(vals, 2)
        assert np.all(second >= -1e-9)


def test_identity_conjugate_is_identity_graph():
    tape = ad.Tape()
    x = ad.leaf(tape, np.array(1.7))
    assert conjugate_graph(x, "identity") is x


# --- differentiable costs ---------------------------------------------------


@pytest.mark.parametrize("variant", ["l2", "chamfer_l2", "chamfer_l2_fwd",
                                     "chamfer_l1", "infocd", "emd"])
def test_cost_graph_matches_numpy_cost(variant):
    rng = np.random.default_rng(1)
    kind = CostKind(variant, intensity_tau=0.37)
    x = rng.normal(size=(10, 3))
    y_np = rng.normal(size=(10, 3))
    tape = ad.Tape()
    y = ad.leaf(tape, y_np)
    val = cost_graph(kind, x, y)
    assert abs(float(val.values) - cost(kind, x, y_np)) < 1e-9


@pytest.mark.parametrize("variant", ["chamfer_l1", "infocd", "chamfer_l2"])
def test_cost_graph_gradient_finite_differences(variant):
    rng = np.random.default_rng(2)
    kind = CostKind(variant)
    x = rng.normal(size=(6, 3))
    y0 = rng.normal(size=(5, 3))
    tape = ad.Tape()
    y = ad.leaf(tape, y0.copy())
    out = cost_graph(kind, x, y)
    ad.backward(tape, out)
    g = y.grad
    h = 1e-6
    flat = y0.ravel()
    for idx in range(flat.size):
        old = flat[idx]
        flat[idx] = old + h
        fp = cost(kind, x, y0)
        flat[idx] = old - h
        fm = cost(kind, x, y0)
        flat[idx] = old
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g.ravel()[idx]) < 1e-5 * max(1.0, abs(fd))


# --- density loss -------------------------------------------------------------


def ring(n=25, radius=1.0):
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(t), radius * np.sin(t), np.zeros(n)])


def test_density_loss_uniform_ring_near_zero():
    # every point of a uniform ring sees identical k-NN distances
    assert density_loss(ring(25)) < 1e-6


def test_density_loss_increases_with_outlier():
    rng = np.random.default_rng(3)
    tight = rng.normal(scale=0.05, size=(20, 3))
    with_outlier = np.vstack([tight, [5.0, 5.0, 5.0]])
    assert density_loss(with_outlier) > density_loss(tight)


def test_density_loss_scale_invariant():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(30, 3))
    assert abs(density_loss(pts) - density_loss(3.0 * pts)) < 1e-9


def test_density_loss_too_few_points():
    with pytest.raises(ContractError):
        density_loss(np.zeros((4, 3)))


def test_density_loss_graph_matches_numpy_and_fd():
    rng = np.random.default_rng(5)
    y0 = rng.normal(size=(8, 3))
    tape = ad.Tape()
    y = ad.leaf(tape, y0.copy())
    out = density_loss_graph(y)
    assert abs(float(out.values) - density_loss(y0)) < 1e-12
    ad.backward(tape, out)
    g = y.grad
    h = 1e-6
    flat = y0.ravel()
    for idx in range(0, flat.size, 3):
        old = flat[idx]
        flat[idx] = old + h
        fp = density_loss(y0)
        flat[idx] = old - h
        fm = density_loss(y0)
        flat[idx] = old
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g.ravel()[idx]) < 1e-5 * max(1.0, abs(fd))


# --- losses -------------------------------------------------------------------


def zeroed(params):
    for a in params.arrays():
        a[:] = 0.0
    return params


def test_loss_T_zero_nets_equals_mean_cost_to_origin():
    cfg = tiny_cfg(dl_weight=0.0)
    mp = zeroed(nets.init_map_net(0, n_out=6, point_widths=(3, 8, 12), head_widths=(8,)))
    pp = zeroed(nets.init_potential_net(0, point_widths=(3, 8, 12), head_widths=(8,)))
    rng = np.random.default_rng(6)
    batch = [rcloud(rng, 6), rcloud(rng, 6)]
    val, grads, dl = loss_T(batch, mp, pp, cfg)
    zeros = np.zeros((6, 3))
    expected = np.mean([cost(cfg.cost, c.points, zeros) for c in batch])
    assert abs(val - expected) < 1e-12
    assert dl == 0.0


def test_loss_T_shifts_linearly_in_constant_potential():
    cfg = tiny_cfg()
    mp = nets.init_map_net(1, n_out=6, point_widths=(3, 8, 12), head_widths=(8,))
    pp0 = zeroed(nets.init_potential_net(0, point_widths=(3, 8, 12), head_widths=(8,)))
    ppk = zeroed(nets.init_potential_net(0, point_widths=(3, 8, 12), head_widths=(8,)))
    ppk.head.biases[-1][:] = 2.5  # v == 2.5 everywhere
    rng = np.random.default_rng(7)
    batch = [rcloud(rng, 6)]
    v0, _, _ = loss_T(batch, mp, pp0, cfg)
    vk, _, _ = loss_T(batch, mp, ppk, cfg)
    assert abs((v0 - vk) - 2.5) < 1e-12


def test_loss_T_gradients_only_for_map():
    cfg = tiny_cfg()
    mp = nets.init_map_net(2, n_out=6, point_widths=(3, 8, 12), head_widths=(8,))
    pp = nets.init_potential_net(3, point_widths=(3, 8, 12), head_widths=(8,))
    before = [a.copy() for a in pp.arrays()]
    rng = np.random.default_rng(8)
    loss_T([rcloud(rng, 6)], mp, pp, cfg)
    for a, b in zip(pp.arrays(), before):
        assert np.array_equal(a, b)


def test_loss_v_zero_cost_zero_potential_is_zero():
    cfg = tiny_cfg(conjugate="softplus_shifted")
    mp = zeroed(nets.init_map_net(0, n_out=6, point_widths=(3, 8, 12), head_widths=(8,)))
    pp = zeroed(nets.init_potential_net(0, point_widths=(3, 8, 12), head_widths=(8,)))
    x = PointCloud(np.zeros((6, 3)))  # T(x) = zeros -> chamfer cost 0
    val, _ = loss_v([x], [x], mp, pp, cfg)
    assert abs(val) < 1e-12
    cfg_id = tiny_cfg(conjugate="identity")
    val_id, _ = loss_v([x], [x], mp, pp, cfg_id)
    assert abs(val_id) < 1e-12


def test_loss_v_identity_reduces_to_semi_dual_ot_form():
    cfg = tiny_cfg(conjugate="identity")
    mp = nets.init_map_net(4, n_out=6, point_widths=(3, 8, 12), head_widths=(8,))
    pp = nets.init_potential_net(5, point_widths=(3, 8, 12), head_widths=(8,))
    rng = np.random.default_rng(9)
    batch_x = [rcloud(rng, 6) for _ in range(3)]
    batch_y = [rcloud(rng, 6) for _ in range(2)]
    val, _ = loss_v(batch_x, batch_y, mp, pp, cfg)
    gen = []
    for x in batch_x:
        tx = nets.map_cloud(mp, x)
        gen.append(-cost(cfg.cost, x.points, tx.points)
                   + nets.potential_value(pp, tx))
    real = [-nets.potential_value(pp, y) for y in batch_y]
    assert abs(val - (np.mean(gen) + np.mean(real))) < 1e-12


def numeric_param_grad(loss_fn, params, rebuild, h=1e-5, stride=7):
    """Central FD over a strided subset of parameter entries."""
    grads = []
    arrays = params.arrays()
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.ravel()
        for idx in range(0, flat.size, stride):
            old = flat[idx]
            flat[idx] = old + h
            fp = loss_fn(rebuild(params))
            flat[idx] = old - h
            fm = loss_fn(rebuild(params))
            flat[idx] = old
            g.ravel()[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def test_loss_T_finite_difference_two_cloud_batch():
    cfg = tiny_cfg(dl_weight=1.0, cost=CostKind("infocd", intensity_tau=0.5))
    mp = nets.init_map_net(6, n_out=6, point_widths=(3, 4, 6), head_widths=(4,))
    pp = nets.init_potential_net(7, point_widths=(3, 4, 6), head_widths=(4,))
    rng = np.random.default_rng(10)
    batch = [rcloud(rng, 6), rcloud(rng, 6)]
    _, grads, _ = loss_T(batch, mp, pp, cfg)
    fd = numeric_param_grad(lambda p: loss_T(batch, p, pp, cfg)[0], mp, lambda p: p)
    gmax = max(np.abs(g).max() for g in grads)
    for g, f in zip(grads, fd):
        mask = f != 0.0
        if mask.any():
            assert np.abs(g[mask] - f[mask]).max() <= 1e-4 * max(1.0, gmax)


def test_loss_v_finite_difference():
    cfg = tiny_cfg(conjugate="softplus_shifted")
    mp = nets.init_map_net(8, n_out=6, point_widths=(3, 4, 6), head_widths=(4,))
    pp = nets.init_potential_net(9, point_widths=(3, 4, 6), head_widths=(4,))
    rng = np.random.default_rng(11)
    batch_x = [rcloud(rng, 6), rcloud(rng, 6)]
    batch_y = [rcloud(rng, 6)]
    _, grads = loss_v(batch_x, batch_y, mp, pp, cfg)
    fd = numeric_param_grad(lambda p: loss_v(batch_x, batch_y, mp, p, cfg)[0],
                            pp, lambda p: p)
    gmax = max(np.abs(g).max() for g in grads)
    for g, f in zip(grads, fd):
        mask = f != 0.0
        if mask.any():
            assert np.abs(g[mask] - f[mask]).max() <= 1e-4 * max(1.0, gmax)


# --- sampling -----------------------------------------------------------------


def test_sample_source_mixture_extremes():
    ds = tiny_dataset()  # incomplete clouds have 6 points, complete 12
    rng = rng_for(0, "s")
    only_inc = sample_source(ds, tiny_cfg(mixture_prob=0.0, batch_size=1000), rng)
    assert all(len(c) == 6 for c in only_inc)
    rng = rng_for(1, "s")
    only_com = sample_source(ds, tiny_cfg(mixture_prob=1.0, batch_size=1000), rng)
    assert all(len(c) == 12 for c in only_com)


def test_sample_source_mixture_fraction_concentrates():
    ds = tiny_dataset()
    rng = rng_for(2, "s")
    batch = sample_source(ds, tiny_cfg(mixture_prob=0.5, batch_size=10_000), rng)
    frac = np.mean([len(c) == 12 for c in batch])
    assert 0.45 <= frac <= 0.55


# --- training loop ------------------------------------------------------------


def hash_arrays(arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(a.tobytes())
    return h.hexdigest()


def test_train_zero_epochs_returns_initial_params():
    ds = tiny_dataset()
    cfg = tiny_cfg(epochs=0)
    res = train(ds, cfg)
    init = nets.init_map_net(derive_seed(cfg.seed, "init_T"), n_out=cfg.n_out,
                             point_widths=cfg.point_widths, head_widths=cfg.map_head)
    assert hash_arrays(res.map_params.arrays()) == hash_arrays(init.arrays())
    assert res.log.rows == []


def test_train_deterministic_per_seed():
    ds = tiny_dataset()
    cfg = tiny_cfg()
    r1 = train(ds, cfg)
    r2 = train(ds, cfg)
    assert r1.log.rows == r2.log.rows
    assert hash_arrays(r1.map_params.arrays()) == hash_arrays(r2.map_params.arrays())


def test_train_alternation_contract():
    # a map step must not touch the potential and vice versa
    ds = tiny_dataset()
    cfg = tiny_cfg()
    mp = nets.init_map_net(0, n_out=cfg.n_out, point_widths=cfg.point_widths,
                           head_widths=cfg.map_head)
    pp = nets.init_potential_net(1, point_widths=cfg.point_widths,
                                 head_widths=cfg.pot_head)
    adam_T = nets.AdamState.for_params(mp.arrays(), lr=cfg.lr_T)
    batch = [ds.pairs[0].incomplete, ds.pairs[1].incomplete]
    batch = [PointCloud(c.points) for c in batch]
    v_hash = hash_arrays(pp.arrays())
    _, grads, _ = loss_T(batch, mp, pp, cfg)
    nets.set_arrays(mp, nets.adam_step(adam_T, mp.arrays(), grads))
    assert hash_arrays(pp.arrays()) == v_hash
    t_hash = hash_arrays(mp.arrays())
    adam_v = nets.AdamState.for_params(pp.arrays(), lr=cfg.lr_v)
    _, grads_v = loss_v(batch, [ds.pairs[0].complete_gt], mp, pp, cfg)
    nets.set_arrays(pp, nets.adam_step(adam_v, pp.arrays(), grads_v))
    assert hash_arrays(mp.arrays()) == t_hash


def test_train_resume_matches_uninterrupted(tmp_path):
    ds = tiny_dataset()
    full_cfg = tiny_cfg(epochs=4)
    direct = train(ds, full_cfg)
    half_cfg = tiny_cfg(epochs=2, checkpoint_dir=str(tmp_path / "ck"))
    train(ds, half_cfg)
    resumed = train(ds, full_cfg, resume_from=tmp_path / "ck" / "final.ckpt")
    assert hash_arrays(direct.map_params.arrays()) == \
        hash_arrays(resumed.map_params.arrays())
    assert hash_arrays(direct.pot_params.arrays()) == \
        hash_arrays(resumed.pot_params.arrays())


def test_train_divergence_abort_carries_params():
    ds = tiny_dataset()
    cfg = tiny_cfg(abort_threshold=1e-12)
    with pytest.raises(TrainingDiverged) as exc:
        train(ds, cfg)
    assert exc.value.params is not None
    assert exc.value.log is not None


def test_train_validation_rows_present():
    ds = tiny_dataset()
    res = train(ds, tiny_cfg(epochs=2, val_interval=2))
    rows = res.log.validation_rows()
    assert rows
    assert all("val_fscore" in r for r in rows)
    assert res.final_val_cd is not None


def test_split_is_seeded_and_disjoint():
    ds = tiny_dataset()
    cfg = tiny_cfg()
    tr1, va1 = train_val_split(ds, cfg)
    tr2, va2 = train_val_split(ds, cfg)
    assert tr1 == tr2 and va1 == va2
    assert set(tr1).isdisjoint(va1)
    assert set(tr1) | set(va1) == set(range(len(ds.pairs)))


# --- inference helpers ----------------------------------------------------------


def test_complete_zero_params_zero_cloud():
    mp = zeroed(nets.init_map_net(0, n_out=6))
    out = complete(mp, rcloud(np.random.default_rng(12), 9), n_input=6)
    assert np.array_equal(out.points, np.zeros((6, 3)))


def test_complete_permutation_invariant():
    rng = np.random.default_rng(13)
    mp = nets.init_map_net(1, n_out=6)
    cloud = rcloud(rng, 6)
    out1 = complete(mp, cloud)
    out2 = complete(mp, PointCloud(cloud.points[::-1].copy()))
    assert np.array_equal(out1.points, out2.points)


def test_c_transform_residual_own_pool_zero():
    rng = np.random.default_rng(14)
    cfg = tiny_cfg()
    mp = nets.init_map_net(2, n_out=6, point_widths=(3, 8, 12), head_widths=(8,))
    pp = nets.init_potential_net(3, point_widths=(3, 8, 12), head_widths=(8,))
    x = rcloud(rng, 6)
    t_out = nets.map_cloud(mp, x)
    assert c_transform_residual(mp, pp, x, [t_out], cfg) == 0.0


def test_c_transform_residual_nonnegative():
    rng = np.random.default_rng(15)
    cfg = tiny_cfg()
    mp = nets.init_map_net(4, n_out=6, point_widths=(3, 8, 12), head_widths=(8,))
    pp = nets.init_potential_net(5, point_widths=(3, 8, 12), head_widths=(8,))
    for _ in range(20):
        x = rcloud(rng, 6)
        pool = [rcloud(rng, 6) for _ in range(5)]
        assert c_transform_residual(mp, pp, x, pool, cfg) >= -1e-9


def test_identity_baseline_positive():
    ds = tiny_dataset()
    assert identity_baseline_cd(ds, list(range(len(ds.pairs)))) > 0.0
