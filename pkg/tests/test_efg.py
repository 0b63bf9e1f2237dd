import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnnlab import efg
from bnnlab.efg import PerfectRecallError
import oracles

KUHN = efg.build_kuhn()
seeds = st.integers(0, 2**31)


def as_policy(tree, profile):
    return {k: np.array([v["p"], v["b"]]) for k, v in efg.profile_to_dict(tree, profile).items()}


def slot_values(tree, values, key):
    i = tree.infoset_keys.index(key)
    s = tree.slot_start[i]
    return values[s:s + len(tree.infoset_actions[i])]


def test_kuhn_shape():
    assert KUHN.num_nodes == 55
    assert KUHN.num_infosets == 12
    assert KUHN.num_slots == 24
    assert set(KUHN.infoset_keys) == set(oracles.kuhn_infosets())


def test_leduc_shape_and_uniform_nash_conv():
    tree = efg.build_leduc()
    assert tree.num_infosets == 936
    # NashConv of uniform play in Leduc hold'em, a widely reproduced reference number
    assert efg.nash_conv_efg(tree, efg.uniform_profile(tree)) == pytest.approx(4.747222222222222, abs=1e-9)


def test_cf_values_match_enumeration_on_100_profiles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        p = efg.random_profile(KUHN, rng)
        ref = oracles.kuhn_cf_values(as_policy(KUHN, p))
        cf = efg.compute_cf_values(KUHN, p)
        for key, val in ref.items():
            worst = max(worst, np.abs(slot_values(KUHN, cf.values, key) - val).max())
    assert worst < 1e-10


@given(seeds, st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_value_and_nash_conv_match_brute_force(seed, bet):
    rng = np.random.default_rng(seed)
    tree = efg.kuhn_at_bet(bet)
    p = efg.random_profile(tree, rng)
    pol = as_policy(tree, p)
    assert efg.game_value(tree, p) == pytest.approx(oracles.kuhn_value(pol, bet), abs=1e-12)
    assert efg.nash_conv_efg(tree, p) == pytest.approx(oracles.kuhn_nash_conv(pol, bet), abs=1e-10)


def test_lp_equilibrium_value_and_zero_nash_conv():
    value, pol = oracles.kuhn_equilibrium()
    assert value == pytest.approx(-1 / 18, abs=1e-9)
    p = efg.profile_from_dict(KUHN, {k: list(v) for k, v in pol.items()})
    assert efg.game_value(KUHN, p) == pytest.approx(-1 / 18, abs=1e-9)
    assert efg.nash_conv_efg(KUHN, p) <= 1e-9
    assert efg.efg_potential(KUHN, p).total <= 1e-12


def test_kuhn_at_bet_matches_fresh_build():
    for bet in (2.0, -2.0, 0.5):
        np.testing.assert_allclose(efg.kuhn_at_bet(bet).payoff, efg.build_kuhn(bet).payoff, atol=1e-15)
    assert efg.kuhn_at_bet(-2.0).metadata["negative_bet"]


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_reach_factorizes(seed):
    rng = np.random.default_rng(seed)
    p = efg.random_profile(KUHN, rng)
    pol = as_policy(KUHN, p)
    reach = efg.compute_reach(KUHN, p)
    total = reach.player1 * reach.player2 * reach.chance
    np.testing.assert_allclose(reach.total, total, atol=1e-12)
    # compare with the rules-based reach at every decision history
    for c1, c2 in oracles.DEALS:
        for hist in oracles.DECISIONS:
            key = oracles.kuhn_key(oracles.DECISIONS[hist], c1 if oracles.DECISIONS[hist] == 1 else c2, hist)
            nodes = KUHN.nodes_in_infoset(KUHN.infoset_keys.index(key))
            expected = oracles.kuhn_reach(pol, c1, c2, hist)
            assert np.any(np.abs(reach.total[nodes] - expected) < 1e-12)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_interior_profiles_have_positive_external_reach(seed):
    p = efg.random_profile(KUHN, np.random.default_rng(seed))
    assert np.all(efg.compute_reach(KUHN, p).infoset_external > 0)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_potential_properties(seed):
    p = efg.random_profile(KUHN, np.random.default_rng(seed))
    pot = efg.efg_potential(KUHN, p)
    cf = efg.compute_cf_values(KUHN, p)
    assert pot.total >= 0
    assert np.all(pot.s_mass**2 >= 2 * cf.external_reach * pot.gamma - 1e-15)
    assert np.all(pot.s_mass**2 >= 2 * pot.gamma - 1e-15)
    assert pot.per_player[1] + pot.per_player[2] == pytest.approx(pot.total, abs=1e-15)


def test_batched_evaluation_matches_single():
    rng = np.random.default_rng(5)
    batch = efg.random_profile(KUHN, rng, size=6)
    nc = efg.nash_conv_efg(KUHN, batch)
    cf = efg.compute_cf_values(KUHN, batch)
    for i in range(6):
        assert nc[i] == pytest.approx(efg.nash_conv_efg(KUHN, batch[i]), abs=1e-14)
        np.testing.assert_allclose(cf.values[i], efg.compute_cf_values(KUHN, batch[i]).values, atol=1e-15)


def matching_pennies():
    # player 2 moves without seeing player 1's move
    return ("C", [("d", 1.0, (1, "1|root", [
        ("L", (2, "2|x", [("l", ("T", 1.0)), ("r", ("T", -1.0))])),
        ("R", (2, "2|x", [("l", ("T", -1.0)), ("r", ("T", 1.0))])),
    ]))])


def nested_kuhn(deals):
    def node(c1, c2, hist):
        u = oracles.kuhn_payoff(c1, c2, hist)
        if u is not None:
            return ("T", u)
        p = oracles.DECISIONS[hist]
        key = oracles.kuhn_key(p, c1 if p == 1 else c2, hist)
        return (p, key, [(a, node(c1, c2, hist + a)) for a in "pb"])
    return ("C", [(f"{c1}{c2}", 1 / 6, node(c1, c2, "")) for c1, c2 in deals])


def test_matching_pennies_tree_equilibrium():
    tree = efg.tree_from_nested("mp", matching_pennies())
    assert efg.nash_conv_efg(tree, efg.uniform_profile(tree)) == pytest.approx(0.0, abs=1e-15)
    p = efg.profile_from_dict(tree, {"1|root": [0.9, 0.1], "2|x": [0.5, 0.5]})
    assert efg.nash_conv_efg(tree, p) == pytest.approx(0.8)


def test_nash_conv_invariant_to_infoset_order():
    fwd = efg.tree_from_nested("kuhn", nested_kuhn(oracles.DEALS))
    rev = efg.tree_from_nested("kuhn", nested_kuhn(oracles.DEALS[::-1]))
    assert fwd.infoset_keys != rev.infoset_keys
    rng = np.random.default_rng(2)
    for _ in range(10):
        d = efg.profile_to_dict(KUHN, efg.random_profile(KUHN, rng))
        a = efg.nash_conv_efg(fwd, efg.profile_from_dict(fwd, d))
        b = efg.nash_conv_efg(rev, efg.profile_from_dict(rev, d))
        c = efg.nash_conv_efg(KUHN, efg.profile_from_dict(KUHN, d))
        assert a == pytest.approx(b, abs=1e-14) and a == pytest.approx(c, abs=1e-14)


def test_perfect_recall_violation_rejected():
    # player 1 forgets its own first move
    forgetful = (1, "1|a", [
        ("L", (1, "1|b", [("x", ("T", 1.0)), ("y", ("T", 0.0))])),
        ("R", (1, "1|b", [("x", ("T", 0.0)), ("y", ("T", 1.0))])),
    ])
    with pytest.raises(PerfectRecallError):
        efg.tree_from_nested("forget", forgetful)


def test_mixed_owner_infoset_rejected():
    bad = (1, "k", [("L", (2, "k", [("x", ("T", 1.0))])), ("R", ("T", 0.0))])
    with pytest.raises(PerfectRecallError):
        efg.tree_from_nested("bad", bad)


def test_dump_tree_lines():
    buf = io.StringIO()
    efg.dump_tree(KUHN, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 1 + KUHN.num_nodes
    assert lines[1].split("\t")[2] == "chance"


def test_profile_validation():
    with pytest.raises(ValueError):
        efg.validate_profile(KUHN, np.full(KUHN.num_slots, 0.7))
    with pytest.raises(Exception):
        efg.profile_from_dict(KUHN, {"nope": [0.5, 0.5]})
