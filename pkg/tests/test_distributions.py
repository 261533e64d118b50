import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dbnlab.distributions import (
    Dist,
    MixtureOfProducts,
    PartitionModel,
    empirical_from_samples,
    kl,
    partition_divergences,
    partition_max_kl,
    project_to_partition,
    sample_dirichlet,
    sample_dirichlet_batch,
    sample_states,
)
from dbnlab.errors import DomainError, SchemaError
from dbnlab.state_space import StateSpace

from conftest import dists, spaces

B3 = StateSpace((2, 2, 2))


def test_kl_examples():
    u4 = Dist.uniform(StateSpace((2, 2)))
    assert kl(u4, u4) == 0.0
    assert kl(Dist.point(u4.space, (1, 0)), u4) == pytest.approx(math.log(4), abs=1e-12)
    half = Dist(u4.space, np.array([0.5, 0.5, 0.0, 0.0]))
    assert kl(half, u4) == pytest.approx(math.log(2), abs=1e-12)


def test_kl_support_violation_is_infinite():
    sp = StateSpace((2,))
    assert kl(Dist.uniform(sp), Dist.point(sp, (0,))) == math.inf


def test_kl_space_mismatch():
    with pytest.raises(DomainError):
        kl(Dist.uniform(StateSpace((2,))), Dist.uniform(StateSpace((3,))))


def test_dist_rejects_unnormalized():
    with pytest.raises(DomainError):
        Dist(StateSpace((2,)), np.array([0.5, 0.6]))
    with pytest.raises(DomainError):
        Dist(StateSpace((2,)), np.array([1.5, -0.5]))


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_kl_nonnegative_zero_iff_equal(data):
    sp = data.draw(spaces(max_size=64))
    p = data.draw(dists(sp))
    q = data.draw(dists(sp, allow_zeros=False))
    d = kl(p, q)
    assert d >= 0.0
    assert kl(p, p) == 0.0
    if np.max(np.abs(p.mass - q.mass)) > 1e-6:
        assert d > 0.0


def test_projection_examples():
    pm = PartitionModel.cylinders(B3, [0, 1])
    u = Dist.uniform(B3)
    np.testing.assert_allclose(project_to_partition(u, pm).mass, u.mass, atol=1e-15)
    x = (1, 0, 1)
    r = project_to_partition(Dist.point(B3, x), pm)
    assert r.mass[B3.index(x)] == pytest.approx(0.5)
    assert r.mass[B3.index((1, 0, 0))] == pytest.approx(0.5)
    assert kl(Dist.point(B3, x), r) == pytest.approx(math.log(2), abs=1e-12)
    fine = PartitionModel.cylinders(B3, [0, 1, 2])
    p = sample_dirichlet(B3, 1.0, np.random.default_rng(0))
    np.testing.assert_allclose(project_to_partition(p, fine).mass, p.mass, atol=1e-15)


def test_projection_is_optimal_against_block_constant_grid():
    # brute force over the block-constant simplex: four blocks, weights on a grid
    pm = PartitionModel.cylinders(B3, [0, 1])
    rng = np.random.default_rng(3)
    grid = [np.array(w) / 20 for w in np.ndindex(21, 21, 21) if sum(w) <= 20]
    for _ in range(5):
        p = sample_dirichlet(B3, 1.0, rng)
        best = kl(p, project_to_partition(p, pm))
        for w3 in grid:
            w = np.append(w3, 1 - w3.sum())
            if np.any(w <= 0):
                continue
            r = Dist(B3, w[pm.labels] / 2)
            assert kl(p, r) >= best - 1e-12


def test_partition_max_kl_examples():
    assert partition_max_kl(PartitionModel.cylinders(B3, [0, 1, 2])) == 0.0
    assert partition_max_kl(PartitionModel.cylinders(B3, [0, 1])) == pytest.approx(math.log(2))
    pm = PartitionModel(B3, (np.arange(4), np.array([4, 5]), np.array([6, 7])))
    assert pm.coarseness == 4
    assert partition_max_kl(pm) == pytest.approx(math.log(4))
    worst = max(kl(Dist.point(B3, B3.unindex(i)), project_to_partition(Dist.point(B3, B3.unindex(i)), pm)) for i in range(8))
    assert worst == pytest.approx(math.log(4), abs=1e-12)


def test_partition_must_cover():
    with pytest.raises(SchemaError):
        PartitionModel(B3, (np.arange(4),))
    with pytest.raises(SchemaError):
        PartitionModel(B3, (np.arange(5), np.arange(4, 8)))


@st.composite
def partitions(draw):
    sp = draw(spaces(max_size=64))
    labels = np.array(draw(st.lists(st.integers(0, 3), min_size=sp.size, max_size=sp.size)))
    blocks = tuple(np.flatnonzero(labels == v) for v in np.unique(labels))
    return PartitionModel(sp, blocks)


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_projection_properties(data):
    pm = data.draw(partitions())
    p = data.draw(dists(pm.space))
    r = project_to_partition(p, pm)
    assert kl(p, r) <= partition_max_kl(pm) + 1e-9
    np.testing.assert_allclose(project_to_partition(r, pm).mass, r.mass, atol=1e-14)
    np.testing.assert_allclose(pm.block_masses(r), pm.block_masses(p), atol=1e-14)
    worst = max(kl(Dist.point(pm.space, x), project_to_partition(Dist.point(pm.space, x), pm)) for x in pm.space.states)
    assert abs(worst - math.log(pm.coarseness)) < 1e-9


def test_dirichlet_large_a_concentrates_at_uniform():
    rng = np.random.default_rng(1)
    mean = np.mean([sample_dirichlet(B3, 100.0, rng).mass for _ in range(10_000)], axis=0)
    assert np.max(np.abs(mean - 1 / 8)) < 0.02


def test_dirichlet_one_on_two_states_is_uniform():
    rng = np.random.default_rng(2)
    sp = StateSpace((2,))
    first = [sample_dirichlet(sp, 1.0, rng).mass[0] for _ in range(10_000)]
    assert stats.kstest(first, "uniform").pvalue > 0.01


@given(st.floats(1e-3, 50.0), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_dirichlet_normalized(a, seed):
    p = sample_dirichlet(B3, a, np.random.default_rng(seed))
    assert abs(p.mass.sum() - 1) < 1e-12
    assert np.all(p.mass >= 0)


def test_dirichlet_rejects_bad_a():
    with pytest.raises(DomainError):
        sample_dirichlet(B3, 0.0, np.random.default_rng(0))


def test_empirical_examples():
    sp = StateSpace((2, 2))
    np.testing.assert_allclose(empirical_from_samples(sp, [(0, 0), (0, 0), (1, 1)]).mass, [2 / 3, 0, 0, 1 / 3])
    np.testing.assert_array_equal(empirical_from_samples(sp, [(1, 0)]).mass, Dist.point(sp, (1, 0)).mass)
    np.testing.assert_allclose(empirical_from_samples(sp, sp.states).mass, 0.25)
    with pytest.raises(DomainError):
        empirical_from_samples(sp, [(2, 0)])


def test_sample_states_frequencies():
    rng = np.random.default_rng(4)
    p = sample_dirichlet(B3, 1.0, rng)
    emp = empirical_from_samples(B3, sample_states(p, 200_000, rng))
    assert np.max(np.abs(emp.mass - p.mass)) < 0.01


@st.composite
def mixtures(draw):
    sp = draw(spaces(max_n=3, max_q=3))
    r = draw(st.integers(1, 3))
    w = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=r, max_size=r)))
    factors = []
    for _ in range(r):
        comp = []
        for q in sp.cards:
            f = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=q, max_size=q))) + 1e-3
            comp.append(f / f.sum())
        factors.append(tuple(comp))
    return MixtureOfProducts(sp, w / w.sum(), tuple(factors))


@given(mixtures())
@settings(max_examples=40, deadline=None)
def test_mixture_matches_dense_expansion(mix):
    dense = np.zeros(mix.space.size)
    for w, comp in zip(mix.weights, mix.factors):
        outer = comp[0]
        for f in comp[1:]:
            outer = np.multiply.outer(outer, f)
        dense += w * outer.reshape(-1)
    np.testing.assert_allclose(mix.to_dist().mass, dense, atol=1e-14)
    x = tuple(mix.space.states[-1])
    assert mix.evaluate(x) == pytest.approx(dense[-1], abs=1e-14)


def test_batch_dirichlet_matches_single_draw_stream():
    one = sample_dirichlet(B3, 0.3, np.random.default_rng(9)).mass
    row = sample_dirichlet_batch(B3, 0.3, 1, np.random.default_rng(9))[0]
    np.testing.assert_array_equal(one, row)
    rows = sample_dirichlet_batch(B3, 0.05, 1000, np.random.default_rng(9))
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(rows >= 0)


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_partition_divergences_match_projection(data):
    pm = data.draw(partitions())
    ps = [data.draw(dists(pm.space)) for _ in range(3)]
    got = partition_divergences(np.stack([p.mass for p in ps]), pm)
    want = [kl(p, project_to_partition(p, pm)) for p in ps]
    np.testing.assert_allclose(got, want, atol=1e-12)
