import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnnlab import games
from bnnlab.games import ConfigError, MixedProfile, RpsParams, ShapeError
from oracles import hand_rps, support_enumeration

weights = st.floats(0.1, 20.0)


def test_brps_matrix_matches_hand_written():
    g = games.build_game("brps")
    np.testing.assert_array_equal(g.payoff, hand_rps(12.0, 1.0, 1.0))


def test_fourth_action_is_neutral():
    g = games.build_game("brps_w")
    assert g.payoff.shape == (4, 4)
    assert np.all(g.payoff[3] == 0) and np.all(g.payoff[:, 3] == 0)


@given(weights, weights, weights)
@settings(max_examples=40, deadline=None)
def test_closed_form_equilibrium_matches_support_enumeration(a, b, c):
    g = games.build_rps(RpsParams(a, b, c))
    eqs = support_enumeration(g.payoff)
    assert len(eqs) == 1
    x, y = eqs[0]
    ne = games.rps_equilibrium(RpsParams(a, b, c))
    np.testing.assert_allclose(x, ne, atol=1e-9)
    np.testing.assert_allclose(y, ne, atol=1e-9)
    assert games.nash_conv(g, MixedProfile(x, y)) <= 1e-9


def test_brps_equilibrium_value():
    ne = games.rps_equilibrium(RpsParams(12, 1, 1))
    np.testing.assert_allclose(ne, [1 / 14, 1 / 14, 12 / 14])


@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_nash_conv_nonnegative_and_zero_on_enumerated_equilibria(m, n, seed):
    rng = np.random.default_rng(seed)
    g = games.NormalFormGame(rng.normal(size=(m, n)))
    prof = games.random_profile(g, rng)
    assert games.nash_conv(g, prof) >= -1e-12
    for x, y in support_enumeration(g.payoff):
        assert games.nash_conv(g, MixedProfile(x, y)) <= 1e-9


@given(st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_advantages_average_to_zero(seed):
    rng = np.random.default_rng(seed)
    g = games.build_game("brps")
    p = games.random_profile(g, rng)
    for player in (1, 2):
        adv = games.advantages(g, p, player)
        assert abs(p.strategy(player) @ adv) < 1e-12


def test_batched_matches_single():
    rng = np.random.default_rng(3)
    g = games.build_game("brps")
    batch = games.random_profile(g, rng, size=7)
    nc = games.nash_conv(g, batch)
    for i in range(7):
        single = MixedProfile(batch.pi_1[i], batch.pi_2[i])
        assert nc[i] == games.nash_conv(g, single)


def test_shape_mismatch_raises():
    g = games.build_game("brps")
    with pytest.raises(ShapeError):
        games.nash_conv(g, MixedProfile(np.ones(4) / 4, np.ones(3) / 3))


def test_unknown_game_and_bad_params():
    with pytest.raises(ConfigError):
        games.build_game("chess")
    with pytest.raises(ConfigError):
        games.build_game("rps", [1, 2])
    with pytest.raises(ConfigError):
        games.NormalFormGame([[np.inf]])


def test_case1_schedule_stages():
    s = games.rps_case_schedule(1)
    assert s.stage_starts() == [0, 2500, 5000]
    assert s.params_at(0) == (12.0, 1.0, 1.0)
    assert s.params_at(2500) == (6.5, 6.5, 1.0)
    assert s.params_at(99999) == (1.0, 12.0, 1.0)


def test_continuous_schedule_ramps_linearly():
    s = games.rps_case_schedule(2)
    mid = s.params_at(2500 + 1250)
    np.testing.assert_allclose(mid, [(12 + 6.5) / 2, (1 + 6.5) / 2, 1.0])
    assert s.params_at(2499) == (12.0, 1.0, 1.0)


def test_half_length_cases():
    assert games.rps_case_schedule(3).stage_starts() == [0, 1250, 2500]
    with pytest.raises(ConfigError):
        games.rps_case_schedule(5)
