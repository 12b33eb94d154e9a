"""Tests for point-set costs against hand values and brute-force oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otcomplete.costs import (
    CostKind,
    MetricConfig,
    base_cost,
    chamfer_l1,
    chamfer_l2,
    chamfer_l2_fwd,
    cost,
    emd,
    fscore,
    infocd,
    l2_paired,
)
from otcomplete.errors import ContractError
from otcomplete.geometry import PointCloud


def cloud(*pts):
    return PointCloud(np.array(pts, dtype=float))


def random_cloud(rng, n):
    return PointCloud(rng.normal(size=(n, 3)))


# --- oracles: naive double loops, no vectorization -------------------------


def nn_dists_oracle(x, y):
    out = []
    for p in x.points:
        out.append(min(math.dist(p, q) for q in y.points))
    return out


def chamfer_l2_oracle(x, y):
    fwd = sum(min(sum((p - q) ** 2) for q in y.points) for p in x.points)
    bwd = sum(min(sum((p - q) ** 2) for p in x.points) for q in y.points)
    return fwd + bwd


def chamfer_l1_oracle(x, y):
    f = nn_dists_oracle(x, y)
    b = nn_dists_oracle(y, x)
    return 0.5 * (sum(f) / len(f) + sum(b) / len(b))


def infocd_oracle(x, y, tau, tau_prime):
    def side(a, b):
        d = nn_dists_oracle(a, b)
        denom = sum(math.exp(-di / tau) for di in d)
        return -sum(math.log(math.exp(-di / tau_prime) / denom) for di in d) / len(b.points)

    return side(x, y) + side(y, x)


# --- spec examples ----------------------------------------------------------


def test_l2_identical_is_zero():
    c = cloud((0.5, 1, 2), (3, 4, 5))
    assert l2_paired(c, c) == 0.0


def test_l2_single_pair():
    assert l2_paired(cloud((0, 0, 0)), cloud((1, 0, 0))) == 1.0


def test_l2_mismatched_sizes_rejected():
    with pytest.raises(ContractError):
        l2_paired(cloud((0, 0, 0)), cloud((1, 0, 0), (2, 0, 0)))


def test_l2_matches_per_coordinate_accumulation():
    rng = np.random.default_rng(0)
    x, y = random_cloud(rng, 16), random_cloud(rng, 16)
    acc = 0.0
    for p, q in zip(x.points, y.points):
        for k in range(3):
            acc += (p[k] - q[k]) ** 2
    assert abs(l2_paired(x, y) - acc) < 1e-12


def test_chamfer_l2_values():
    x, y = cloud((0, 0, 0)), cloud((1, 0, 0))
    assert chamfer_l2(x, x) == 0.0
    assert chamfer_l2(x, y) == 2.0
    assert chamfer_l2_fwd(x, y) == 1.0
    two = cloud((0, 0, 0), (2, 0, 0))
    assert chamfer_l2(two, y) == 3.0


def test_chamfer_l1_values():
    x, y = cloud((0, 0, 0)), cloud((1, 0, 0))
    assert chamfer_l1(x, x) == 0.0
    assert chamfer_l1(x, y) == 1.0
    assert abs(chamfer_l1(cloud((0, 0, 0), (2, 0, 0)), y) - 1.0) < 1e-12


def test_chamfer_empty_rejected():
    with pytest.raises(Exception):
        chamfer_l2(PointCloud(np.zeros((0, 3))), cloud((0, 0, 0)))


def test_infocd_singletons_closed_form():
    p, q = (0.0, 0.0, 0.0), (0.3, -0.4, 0.0)  # distance 0.5
    val = infocd(cloud(p), cloud(q), tau=2.0, tau_prime=1.0)
    assert abs(val - 0.5) < 1e-12


def test_infocd_identical_clouds_zero_distance_limit():
    rng = np.random.default_rng(1)
    x = random_cloud(rng, 5)
    # all min distances vanish; each direction gives (|x|/|y|) * log|x|
    assert abs(infocd(x, x) - 2.0 * math.log(5)) < 1e-12
    y = PointCloud(np.concatenate([x.points, x.points]))  # same SET, 10 points
    expected = (5 / 10) * math.log(5) + (10 / 5) * math.log(10)
    assert abs(infocd(x, y) - expected) < 1e-12


def test_infocd_not_scale_invariant():
    rng = np.random.default_rng(2)
    x, y = random_cloud(rng, 8), random_cloud(rng, 6)
    a = infocd(x, y)
    b = infocd(PointCloud(2 * x.points), PointCloud(2 * y.points))
    assert abs(a - b) > 1e-6


def test_infocd_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x, y = random_cloud(rng, 7), random_cloud(rng, 9)
        assert abs(infocd(x, y) - infocd_oracle(x, y, 2.0, 1.0)) < 1e-9


def test_infocd_lambda_stabilizer_changes_value_slightly():
    rng = np.random.default_rng(4)
    x, y = random_cloud(rng, 6), random_cloud(rng, 6)
    bare = infocd(x, y)
    stabilized = infocd(x, y, scale_lambda=1e-7)
    assert bare != stabilized
    assert abs(bare - stabilized) < 1e-4


def test_fscore_cases():
    x = cloud((0, 0, 0), (5, 0, 0))
    y = cloud((0, 0, 0))
    assert fscore(x, x, MetricConfig(1e-3)) == 100.0
    far = cloud((10.0, 0, 0))
    assert fscore(cloud((0, 0, 0)), far, MetricConfig(1.0)) == 0.0
    val = fscore(x, y, MetricConfig(1.0))
    assert abs(val - 2 * 50 * 100 / 150) < 0.01


def test_cost_intensity_examples():
    # base chamfer_l2_fwd of singletons at distance 10 is exactly 100
    x, y = cloud((0, 0, 0)), cloud((10, 0, 0))
    kind = CostKind("chamfer_l2_fwd", intensity_tau=0.044)
    assert abs(cost(kind, x, y) - 4.4) < 1e-12
    unit = CostKind("chamfer_l2_fwd", intensity_tau=1.0)
    assert cost(unit, x, y) == base_cost(unit, x, y)
    hi = cost(CostKind("chamfer_l2_fwd", intensity_tau=0.25), x, y)
    lo = cost(CostKind("chamfer_l2_fwd", intensity_tau=0.02), x, y)
    assert abs(hi / lo - 12.5) < 1e-12


def test_emd_requires_equal_sizes():
    with pytest.raises(ContractError):
        emd(cloud((0, 0, 0)), cloud((1, 0, 0), (2, 0, 0)))


def test_emd_simple_matching():
    x = cloud((0, 0, 0), (1, 0, 0))
    y = cloud((1, 0, 0), (0, 0, 0))
    assert emd(x, y) == 0.0
    z = cloud((0, 0, 1), (1, 0, 1))
    assert abs(emd(x, z) - 1.0) < 1e-12  # mean per-point distance


# --- invariants -------------------------------------------------------------


@pytest.mark.parametrize("fn", [chamfer_l2, chamfer_l1, infocd,
                                lambda a, b: fscore(a, b, MetricConfig(0.5)),
                                emd])
def test_symmetry(fn):
    rng = np.random.default_rng(5)
    for _ in range(5):
        x, y = random_cloud(rng, 8), random_cloud(rng, 8)
        assert abs(fn(x, y) - fn(y, x)) < 1e-9


def test_nonnegativity_and_infocd_self_dominance():
    rng = np.random.default_rng(6)
    failures = 0
    for _ in range(1000):
        x, y = random_cloud(rng, 4), random_cloud(rng, 4)
        assert chamfer_l2(x, y) >= 0
        assert chamfer_l1(x, y) >= 0
        if infocd(x, x) > infocd(x, y) + 1e-9:
            failures += 1
    assert failures == 0


def test_permutation_invariance_except_l2():
    rng = np.random.default_rng(7)
    x, y = random_cloud(rng, 12), random_cloud(rng, 12)
    perm = rng.permutation(12)
    xp = PointCloud(x.points[perm])
    assert abs(chamfer_l2(xp, y) - chamfer_l2(x, y)) < 1e-12
    assert abs(chamfer_l1(xp, y) - chamfer_l1(x, y)) < 1e-12
    assert abs(infocd(xp, y) - infocd(x, y)) < 1e-9
    assert abs(emd(xp, y) - emd(x, y)) < 1e-12
    # l2 pairs by index, so permuting one side changes the value
    assert abs(l2_paired(xp, y) - l2_paired(x, y)) > 1e-9


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 24), m=st.integers(1, 24), seed=st.integers(0, 10**6))
def test_brute_force_equivalence(n, m, seed):
    rng = np.random.default_rng(seed)
    x, y = random_cloud(rng, n), random_cloud(rng, m)
    assert abs(chamfer_l2(x, y) - chamfer_l2_oracle(x, y)) < 1e-9
    assert abs(chamfer_l1(x, y) - chamfer_l1_oracle(x, y)) < 1e-9
    assert abs(infocd(x, y) - infocd_oracle(x, y, 2.0, 1.0)) < 1e-9
