import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbnlab import bounds
from dbnlab.conditional_layers import LayerParams
from dbnlab.dbn import (
    DbnParams,
    chain_messages,
    choose_m_s,
    dbn_log_joint,
    dbn_visible_marginal,
    ideal_forward,
    param_count,
    permute_dbn,
    plan_mass_flow,
    schedule_partition,
    synth_dbn,
)
from dbnlab.distributions import Dist, kl, partition_max_kl, project_to_partition, sample_dirichlet
from dbnlab.errors import ConstraintError, DomainError, SchemaError
from dbnlab.rbm import RbmParams, rbm_visible_marginal
from dbnlab.state_space import StateSpace

LN2 = math.log(2)
B3 = StateSpace((2, 2, 2))


def test_two_layers_reduce_to_rbm(rng):
    rbm = RbmParams.random(B3, B3, rng)
    d = DbnParams((B3, B3), rbm)
    np.testing.assert_allclose(dbn_visible_marginal(d).mass, rbm_visible_marginal(rbm).mass, atol=1e-15)


def test_zero_parameters_uniform():
    d = DbnParams.zeros([StateSpace((3, 2))] * 4)
    np.testing.assert_allclose(dbn_visible_marginal(d).mass, 1 / 6, atol=1e-15)


def test_joint_matches_explicit_product(rng):
    sp = StateSpace((2, 2))
    d = DbnParams.random([sp] * 3, rng)
    logj = dbn_log_joint(d)
    top = np.log(
        np.exp(
            np.array([[x @ d.rbm.W @ y + d.rbm.b @ x + d.rbm.c @ y for y in sp.stats] for x in sp.stats])
        )
    )
    top -= np.log(np.exp(top).sum())
    from dbnlab.conditional_layers import layer_log_matrix

    lower = layer_log_matrix(d.layers[0])  # (|h1|, |v|)
    expected = lower.T[:, :, None] + top[None, :, :]
    np.testing.assert_allclose(logj.reshape(expected.shape), expected, atol=1e-12)


@pytest.mark.parametrize("cards, L", [((2, 2, 2), 3), ((2, 2, 2), 4), ((3, 3), 3)])
def test_composition_equivalence(cards, L):
    rng = np.random.default_rng(L)
    for _ in range(25):
        d = DbnParams.random([StateSpace(cards)] * L, rng, scale=2.0)
        a = dbn_visible_marginal(d, "joint").mass
        b = dbn_visible_marginal(d, "compose").mass
        assert np.max(np.abs(a - b)) < 1e-10


@given(st.lists(st.lists(st.integers(2, 3), min_size=1, max_size=2), min_size=2, max_size=4), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_composition_equivalence_mixed_widths(layer_cards, seed):
    spaces = [StateSpace(tuple(c)) for c in layer_cards]
    d = DbnParams.random(spaces, np.random.default_rng(seed))
    a = dbn_visible_marginal(d, "joint").mass
    b = dbn_visible_marginal(d, "compose").mass
    assert np.max(np.abs(a - b)) < 1e-10
    assert d.n_params == param_count(layer_cards) == d.flat().size


def test_param_count_examples():
    assert param_count([(2, 2, 2)] * 5) == 51
    assert param_count([(2,)] * 2) == 3


def test_flat_round_trip(rng):
    d = DbnParams.random([StateSpace((3, 2)), StateSpace((2,)), StateSpace((2, 2))], rng)
    e = d.with_flat(d.flat())
    np.testing.assert_array_equal(e.flat(), d.flat())


def test_layer_spaces_validated():
    sp = StateSpace((2, 2))
    rbm = RbmParams.zeros(sp, sp)
    with pytest.raises(SchemaError):
        DbnParams((B3, sp, sp), rbm, (LayerParams.zeros(sp, sp),))


def test_permute_dbn(rng):
    sp = StateSpace((3, 2, 2))
    d = DbnParams.random([sp] * 3, rng)
    perm = (2, 0, 1)
    np.testing.assert_allclose(
        dbn_visible_marginal(permute_dbn(d, perm)).mass, dbn_visible_marginal(d).permuted(perm).mass, atol=1e-14
    )


def test_chain_messages_normalised(rng):
    d = DbnParams.random([B3] * 3, rng)
    data = sample_dirichlet(B3, 1.0, rng)
    msg = chain_messages(d, data)
    np.testing.assert_allclose(np.exp(msg.log_model), dbn_visible_marginal(d).mass, atol=1e-13)
    assert msg.top_joint.sum() == pytest.approx(1.0, abs=1e-12)
    assert msg.top_posterior.sum() == pytest.approx(1.0, abs=1e-12)
    for post in msg.layer_posteriors:
        np.testing.assert_allclose(post.sum(axis=0), data.mass, atol=1e-13)


def test_choose_m_s_examples():
    p = choose_m_s((2, 2, 2), 5)
    assert (p.m, p.S, p.bound) == (2, 2, 0.0)
    p = choose_m_s((3, 3), 6)
    assert p.bound == 0.0
    forced = choose_m_s((3, 3), 6, m=2)
    assert (forced.m, forced.S, forced.bound) == (2, 2, 0.0)
    p = choose_m_s((2, 2, 2), 3)
    assert p.S == 1 and p.bound == pytest.approx(LN2)


def test_choose_m_s_rejects_short_networks():
    with pytest.raises(DomainError):
        choose_m_s((2, 2), 1)


def test_schedule_partition_within_bound():
    for cards, L in [((2, 2, 2), 3), ((2, 3, 2), 4), ((2, 2, 2, 2), 4), ((2, 2, 2, 2, 2), 5)]:
        plan = choose_m_s(cards, L)
        pm = schedule_partition(plan.schedule)
        assert partition_max_kl(pm) <= plan.bound + 1e-12
    # passive coordinates are the smaller ones, so the realised partition can beat the formula
    plan = choose_m_s((2, 3, 2), 4)
    assert plan.bound == pytest.approx(math.log(3))
    assert partition_max_kl(schedule_partition(plan.schedule)) == pytest.approx(LN2)


def test_mass_flow_on_seed_support_is_degenerate():
    plan = choose_m_s((2, 2, 2), 5)
    mass = np.zeros(8)
    mass[B3.index((0, 0, 0))] = 0.3
    mass[B3.index((0, 0, 1))] = 0.7
    target = Dist(B3, mass)
    flow = plan_mass_flow(target, plan)
    for tasks in flow.tasks:
        for t in tasks:
            np.testing.assert_allclose(t.targets[:, 0], 1.0)
    np.testing.assert_allclose(flow.top_target.permuted(plan.inverse_perm).mass, target.mass, atol=1e-15)


def test_ideal_forward_uniform():
    plan = choose_m_s((2, 2, 2), 5)
    flow = plan_mass_flow(Dist.uniform(B3), plan)
    assert np.max(np.abs(ideal_forward(flow).mass - 1 / 8)) < 1e-12


@pytest.mark.parametrize("cards, L, m", [((2, 2, 2), 5, None), ((3, 3), 6, 2), ((3, 2, 2), 6, None), ((2, 2, 2, 2, 2), 9, None)])
def test_ideal_forward_reproduces_targets(cards, L, m):
    rng = np.random.default_rng(sum(cards) + L)
    plan = choose_m_s(cards, L, m)
    for _ in range(10):
        target = sample_dirichlet(StateSpace(cards), 0.5, rng)
        assert np.max(np.abs(ideal_forward(plan_mass_flow(target, plan)).mass - target.mass)) < 1e-12


def test_ideal_forward_non_universal_gives_projection():
    rng = np.random.default_rng(5)
    plan = choose_m_s((2, 2, 2), 3)
    pm = schedule_partition(plan.schedule)
    for _ in range(10):
        target = sample_dirichlet(B3, 0.5, rng)
        flow = plan_mass_flow(target, plan)
        proj = project_to_partition(target.permuted(plan.perm), pm).permuted(plan.inverse_perm)
        assert np.max(np.abs(ideal_forward(flow).mass - proj.mass)) < 1e-12


def test_synth_universal():
    rng = np.random.default_rng(11)
    plan = choose_m_s((2, 2, 2), 5)
    for _ in range(5):
        target = sample_dirichlet(B3, 1.0, rng)
        res = synth_dbn(target, plan)
        assert res.divergence < 1e-2
        direct = kl(target, dbn_visible_marginal(res.params))
        assert res.divergence == pytest.approx(direct, abs=1e-12)


def test_synth_non_universal():
    rng = np.random.default_rng(12)
    plan = choose_m_s((2, 2, 2), 3)
    for _ in range(5):
        assert synth_dbn(sample_dirichlet(B3, 1.0, rng), plan).divergence <= LN2 + 1e-2


@pytest.mark.parametrize("cards, L", [((2, 2, 2), 3), ((2, 2, 2), 5), ((3, 3), 3), ((2, 2), 2)])
def test_synth_uniform_is_near_exact(cards, L):
    sp = StateSpace(cards)
    assert synth_dbn(Dist.uniform(sp), choose_m_s(cards, L)).divergence < 1e-6


@pytest.mark.parametrize(
    "cards, L",
    [((2, 2, 2), 2), ((2, 2, 2), 4), ((3, 2), 3), ((2, 3, 2), 4), ((3, 3), 4), ((2, 2, 2, 2), 5), ((3, 2, 2), 5)],
)
def test_synthesis_sound(cards, L):
    rng = np.random.default_rng(len(cards) * 10 + L)
    plan = choose_m_s(cards, L)
    for _ in range(3):
        res = synth_dbn(sample_dirichlet(StateSpace(cards), 0.5, rng), plan)
        assert res.divergence <= plan.bound + 1e-2
        assert res.ideal_divergence <= plan.bound + 1e-12


def test_bound_non_increasing_in_depth():
    for cards in [(2, 2, 2), (3, 3), (3, 2, 2), (2, 2, 2, 2)]:
        bs = [choose_m_s(cards, L).bound for L in range(2, 9)]
        assert all(b <= a + 1e-15 for a, b in zip(bs, bs[1:]))
        assert bs == [bounds.dbn_bound(cards, L) for L in range(2, 9)]


def test_tolerance_doubles_K():
    rng = np.random.default_rng(13)
    plan = choose_m_s((2, 2, 2), 5, K=5.0)
    res = synth_dbn(sample_dirichlet(B3, 0.3, rng), plan, tol=1e-8)
    assert len(res.attempts) >= 2
    assert res.K > 5.0


def test_plan_space_mismatch():
    with pytest.raises(DomainError):
        plan_mass_flow(Dist.uniform(StateSpace((2, 2))), choose_m_s((2, 2, 2), 5))


def test_plan_needs_depth():
    plan = choose_m_s((2, 2, 2), 5)
    short = type(plan)(plan.cards, 4, plan.choice, plan.schedule, plan.K)
    with pytest.raises(ConstraintError):
        synth_dbn(Dist.uniform(B3), short)
