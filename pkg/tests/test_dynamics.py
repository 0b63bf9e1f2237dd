import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnnlab import dynamics as dy
from bnnlab import efg, games
from bnnlab.games import ConfigError, MixedProfile
from bnnlab.specs import NoiseSpec, StepSchedule

BRPS = games.build_game("brps")
KUHN = efg.build_kuhn()
seeds = st.integers(0, 2**31)


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_bnn_field_is_tangent_and_zero_at_nash(seed):
    p = games.random_profile(BRPS, np.random.default_rng(seed))
    for player in (1, 2):
        assert abs(dy.bnn_field(BRPS, p, player).sum()) < 1e-12
    ne = games.rps_equilibrium(games.RpsParams(12, 1, 1))
    eq = MixedProfile(ne, ne)
    assert np.abs(dy.bnn_field(BRPS, eq, 1)).max() < 1e-12


def test_bnn_field_by_hand():
    # pure Rock vs pure Rock: Paper earns 12 more, Scissors 1 less
    p = MixedProfile(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]))
    np.testing.assert_allclose(dy.bnn_field(BRPS, p, 1), [-12.0, 12.0, 0.0])


@given(seeds, st.sampled_from([0.05, 0.2]), st.sampled_from(["gaussian", "uniform_bounded"]))
@settings(max_examples=30, deadline=None)
def test_noisy_field_is_tangent_and_keeps_draws(seed, sigma, dist):
    rng = np.random.default_rng(seed)
    p = games.random_profile(BRPS, rng)
    sample = dy.noisy_bnn_field(BRPS, p, 1, dy.NoiseModel(sigma, dist, rng))
    assert abs(sample.direction.sum()) < 1e-12
    assert sample.noise_draws.shape == (3,)
    np.testing.assert_array_equal(sample.bias_free_direction, dy.bnn_field(BRPS, p, 1))


def test_zero_noise_matches_exact_field():
    p = games.random_profile(BRPS, np.random.default_rng(0))
    sample = dy.noisy_bnn_field(BRPS, p, 2, dy.NoiseModel(0.0))
    np.testing.assert_array_equal(sample.direction, dy.bnn_field(BRPS, p, 2))


@pytest.mark.parametrize("dist", ["gaussian", "uniform_bounded"])
def test_noise_moments(dist):
    x = dy.NoiseModel(0.3, dist, 1).draw(200_000)
    assert abs(x.mean()) < 4 * 0.3 / np.sqrt(x.size)
    assert x.var() == pytest.approx(0.09, rel=0.02)
    if dist == "uniform_bounded":
        assert np.abs(x).max() <= np.sqrt(3) * 0.3


def test_noise_stream_matches_individual_generators():
    spec = NoiseSpec(0.1)
    a = dy.NoiseStream([np.random.default_rng(1), np.random.default_rng(2)], spec, 4, block=3)
    b = dy.NoiseStream([np.random.default_rng(2)], spec, 4, block=5)
    rows_a = np.array([a.next()[1] for _ in range(11)])
    rows_b = np.array([b.next()[0] for _ in range(11)])
    np.testing.assert_array_equal(rows_a, rows_b)


@given(seeds, st.floats(1e-4, 5.0))
@settings(max_examples=50, deadline=None)
def test_step_stays_on_simplex(seed, eta):
    rng = np.random.default_rng(seed)
    p = games.random_profile(BRPS, rng)
    d = dy.noisy_bnn_field(BRPS, p, 1, dy.NoiseModel(0.2, rng=rng)).direction
    new, _ = dy.step(p.pi_1, d, eta)
    assert games.is_simplex(new, 1e-12)
    assert new.min() >= dy.FLOOR / (1 + eta * np.abs(d).sum())


def test_step_floors_and_flags():
    new, floored = dy.step(np.array([0.5, 0.5]), np.array([-1.0, 1.0]), 1.0)
    assert floored
    assert new[0] > 0 and new.sum() == pytest.approx(1.0)


def test_step_rejects_non_finite():
    with pytest.raises(dy.NumericalError) as err:
        dy.step(np.array([0.5, 0.5]), np.array([np.nan, 0.0]), 0.1)
    assert "profile" in err.value.state


def test_safe_step_keeps_interior():
    p = MixedProfile(np.array([0.98, 0.01, 0.01]), np.array([0.98, 0.01, 0.01]))
    eta = 0.99 * dy.safe_step_bound(BRPS, p)
    new, floored = dy.step(p.pi_1, dy.bnn_field(BRPS, p, 1), eta)
    assert not floored and new.min() > 0


def test_replicator_field_by_hand():
    p = MixedProfile(np.array([0.5, 0.5, 0.0]), np.array([1.0, 0.0, 0.0]))
    # payoffs vs Rock: R 0, P 12, S -1; mean 6
    np.testing.assert_allclose(dy.replicator_field(BRPS, p, 1), [-3.0, 3.0, 0.0])


def test_regularized_field_reduces_to_replicator_at_reference():
    p = games.random_profile(BRPS, np.random.default_rng(4))
    cfg = dy.RegRdConfig(lam=0.3, reference=p)
    np.testing.assert_allclose(dy.regularized_replicator_field(BRPS, p, 1, cfg), dy.replicator_field(BRPS, p, 1),
                               atol=1e-15)


def test_regularized_field_pulls_towards_reference_without_payoffs():
    zero = games.NormalFormGame(np.zeros((3, 3)))
    ref = MixedProfile(np.full(3, 1 / 3), np.full(3, 1 / 3))
    p = MixedProfile(np.array([0.6, 0.3, 0.1]), np.full(3, 1 / 3))
    d = dy.regularized_replicator_field(zero, p, 1, dy.RegRdConfig(lam=1.0, reference=ref))
    assert d[0] < 0 and d[2] > 0


def test_reg_rd_config_validation():
    with pytest.raises(ConfigError):
        dy.RegRdConfig(lam=-1)
    with pytest.raises(ConfigError):
        dy.RegRdConfig(ref_interval=0)
    with pytest.raises(ConfigError):
        dy.RegRdConfig(reference=MixedProfile(np.array([1.0, 0, 0]), np.full(3, 1 / 3)))


def test_step_schedule():
    s = StepSchedule("power", c=1, t0=10)
    assert s.eta(0) == pytest.approx(10 ** (-2 / 3))
    assert s.robbins_monro
    assert not StepSchedule("constant", c=0.1).robbins_monro
    with pytest.raises(ConfigError):
        StepSchedule("power", c=0)


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_efg_field_sums_to_zero_per_infoset(seed):
    rng = np.random.default_rng(seed)
    p = efg.random_profile(KUHN, rng)
    field = dy.efg_bnn_field(KUHN, p)
    assert np.abs(efg.segment_sum(KUHN, field)).max() < 1e-12
    noisy = dy.noisy_efg_bnn_field(KUHN, p, dy.NoiseModel(0.2, rng=rng))
    assert np.abs(efg.segment_sum(KUHN, noisy.direction)).max() < 1e-12
    new, _ = dy.efg_step(KUHN, p, noisy.direction, 0.5)
    efg.validate_profile(KUHN, new)


def test_efg_field_player_mask():
    p = efg.random_profile(KUHN, np.random.default_rng(0))
    f1 = dy.efg_bnn_field(KUHN, p, player=1)
    f2 = dy.efg_bnn_field(KUHN, p, player=2)
    np.testing.assert_allclose(f1 + f2, dy.efg_bnn_field(KUHN, p), atol=1e-15)
    assert np.all(f1[KUHN.slot_player == 2] == 0)


def test_efg_field_matches_normal_form_on_one_shot_game():
    # a one-move tree per player is the normal-form game itself
    spec = ("C", [("d", 1.0, (1, "1|", [
        (a, (2, "2|", [(b, ("T", float(BRPS.payoff[i, j]))) for j, b in enumerate("RPS")]))
        for i, a in enumerate("RPS")
    ]))])
    tree = efg.tree_from_nested("rps", spec)
    p = games.random_profile(BRPS, np.random.default_rng(7))
    flat = efg.profile_from_dict(tree, {"1|": list(p.pi_1), "2|": list(p.pi_2)})
    field = dy.efg_bnn_field(tree, flat)
    cf = efg.compute_cf_values(tree, flat)
    rho2 = cf.external_reach[tree.infoset_keys.index("2|")]
    np.testing.assert_allclose(field[:3], dy.bnn_field(BRPS, p, 1), atol=1e-12)
    np.testing.assert_allclose(field[3:], rho2 * dy.bnn_field(BRPS, p, 2), atol=1e-12)
