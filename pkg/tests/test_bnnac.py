import numpy as np
import pytest

from bnnlab import bnnac, efg
from bnnlab.games import ConfigError
from bnnlab.specs import NoiseSpec, StepSchedule

KUHN = efg.build_kuhn()
PATHS = bnnac.PathIndex(KUHN)


def test_path_index_counts():
    # every Kuhn terminal sits 2 or 3 player moves below the deal
    lengths = np.asarray(PATHS.slots.sum(axis=1)).ravel()
    assert set(lengths.tolist()) == {2, 3}
    assert PATHS.slots.shape == (30, 24)


def test_collect_frequencies_follow_reach():
    rng = np.random.default_rng(0)
    p = efg.random_profile(KUHN, rng)
    data = bnnac.collect(KUHN, p, 200_000, rng, PATHS)
    freq = np.bincount(data.rows, minlength=30) / len(data)
    expected = efg.compute_reach(KUHN, p).total[PATHS.terminals]
    se = np.sqrt(expected * (1 - expected) / len(data))
    assert np.all(np.abs(freq - expected) <= 5 * se + 1e-12)
    np.testing.assert_array_equal(data.payoff, KUHN.payoff[PATHS.terminals[data.rows]])


def test_dataset_tuples():
    data = bnnac.collect(KUHN, efg.uniform_profile(KUHN), 5, np.random.default_rng(1), PATHS)
    tuples = list(data.tuples(KUHN, PATHS))
    assert len(tuples) >= 10
    for key, action, ret, nxt in tuples:
        assert key in KUHN.infoset_keys and action in ("p", "b")
        if nxt is not None:
            assert nxt.split("|")[0] == key.split("|")[0]


def test_critic_update_by_hand():
    critic = bnnac.CriticTable(np.array([0.0, 1.0, 2.0]), np.zeros(3, dtype=np.int64))
    new = bnnac.critic_update(critic, np.array([2.0, 0.0, 1.0]), np.array([4.0, 0.0, -1.0]), 0.5,
                              np.array([True, True, False]))
    np.testing.assert_allclose(new.q, [1.0, 1.0, 2.0])
    np.testing.assert_array_equal(new.visits, [2, 0, 0])


def test_reach_update_by_hand():
    est = bnnac.ReachEstimator(np.array([1.0, 1.0]), np.zeros(2, dtype=np.int64))
    # 10 plays, own reach 0.5, 2 visits: external reach estimate 0.4
    new = bnnac.reach_update(est, np.array([2.0, 50.0]), np.array([0.5, 0.5]), 10, 1.0, np.array([True, True]))
    np.testing.assert_allclose(new.rho, [0.4, 1.0])


def test_reach_estimator_converges_to_external_reach():
    cfg = bnnac.BnnacConfig(batch=64, beta=0.05, iterations=1)
    rng = np.random.default_rng(2)
    p = efg.random_profile(KUHN, rng)
    learners, _ = bnnac.make_learners(KUHN, cfg, 0)
    for lr in learners:
        lr.logits.logits = np.where(lr.mask, np.log(p), 0.0)
        lr.logits.center(lr.mask)
    for _ in range(2000):
        data = bnnac.collect(KUHN, p, cfg.batch, rng, PATHS)
        for lr in learners:
            lr.observe(data, PATHS)
    exact = efg.compute_reach(KUHN, p).infoset_external
    est = np.where(KUHN.infoset_player == 1, learners[0].reach.rho, learners[1].reach.rho)
    assert np.abs(est - exact).max() < 0.05


def test_learner_only_touches_own_slots():
    cfg = bnnac.BnnacConfig(iterations=1)
    learners, rng = bnnac.make_learners(KUHN, cfg, 3)
    before = learners[1].logits.logits.copy()
    data = bnnac.collect(KUHN, bnnac.joint_policy(learners), 32, rng, PATHS)
    learners[0].observe(data, PATHS)
    learners[0].act()
    np.testing.assert_array_equal(learners[1].logits.logits, before)
    assert np.all(learners[0].critic.q[~learners[0].mask] == 0)


def test_oracle_k1_matches_reference_flow():
    cfg = bnnac.BnnacConfig(k_actor=1, backend="oracle", iterations=200, init="random",
                            eta=StepSchedule("power", c=1, t0=10))
    run = bnnac.run_bnnac(KUHN, cfg, 7, keep_policies=True)
    init_rng = np.random.SeedSequence(7).spawn(4)[0]
    start = np.log(efg.random_profile(KUHN, np.random.default_rng(init_rng)))
    ref = bnnac.reference_logit_flow(KUHN, start, cfg.eta, cfg.iterations)
    dev = max(np.abs(a - b).max() for a, b in zip(run.policies, ref))
    assert dev < 1e-6


def test_sampled_run_learns_and_is_deterministic():
    cfg = bnnac.BnnacConfig(batch=32, k_actor=10, iterations=3000, eval_interval=500)
    a = bnnac.run_bnnac(KUHN, cfg, 1).trace
    b = bnnac.run_bnnac(KUHN, cfg, 1).trace
    np.testing.assert_array_equal(a.columns["nash_conv"], b.columns["nash_conv"])
    assert a.columns["nash_conv"][-1, 0] < 0.6 * a.columns["nash_conv"][0, 0]
    efg.validate_profile(KUHN, a.final[0])


def test_noisy_returns_change_the_run():
    base = bnnac.BnnacConfig(iterations=200, eval_interval=100)
    noisy = bnnac.BnnacConfig(iterations=200, eval_interval=100, noise=NoiseSpec(0.5))
    a = bnnac.run_bnnac(KUHN, base, 0).trace.final
    b = bnnac.run_bnnac(KUHN, noisy, 0).trace.final
    assert np.abs(a - b).max() > 0


def test_multi_seed_trace():
    cfg = bnnac.BnnacConfig(iterations=100, eval_interval=50)
    tr = bnnac.run_bnnac_seeds(KUHN, cfg, [0, 1, 2])
    assert tr.columns["nash_conv"].shape == (3, 3)
    assert tr.seeds == (0, 1, 2)


@pytest.mark.parametrize("kwargs", [{"k_actor": 0}, {"alpha": 0}, {"backend": "magic"}, {"policy_floor": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        bnnac.BnnacConfig(**kwargs)
