import dataclasses

import numpy as np
import pytest

from conftest import finger_spec
from masa.config import PpoConfig, RunConfig
from masa.envs import RotReach, VecEnv
from masa.nn import gaussian_logprob
from masa.ppo import (
    PpoLearner,
    RolloutBatch,
    TrainingDiverged,
    clipped_surrogate,
    collect_rollouts,
    compute_gae,
    make_learner,
    ppo_update,
    train_online,
)
from masa.symmetry import build_transform_set
from masa.variants import UnknownVariantError, make_variant, sasa_aux_losses


def small_cfg(**kw) -> PpoConfig:
    base = dict(num_actors=8, horizon_length=16, minibatch_size=64, policy_hidden=(16,), critic_hidden=(16,),
                total_env_steps=512, eval_episodes=4)
    base.update(kw)
    return PpoConfig(**base)


def learner_for(variant="MASA", seed=0, env=None, **kw):
    env = env or RotReach(3, horizon=20)
    cfg = small_cfg(**kw)
    v = make_variant(variant, env.transform_set, cfg.policy_hidden, cfg.critic_hidden, cfg.activation, cfg.log_std_init)
    return PpoLearner.create(v, cfg, seed), env


def rollout(learner, env, seed=0, horizon=16, actors=8):
    return collect_rollouts(learner, VecEnv(env, actors, seed), horizon, np.random.default_rng(seed))


# -- GAE ---------------------------------------------------------------------

def test_gae_hand_example():
    adv, ret = compute_gae([1.0, 1.0], [0.5, 0.5], [0, 0], 0.5, 0.99, 0.95)
    np.testing.assert_allclose(adv, [1.93080, 0.995], atol=1e-5)
    np.testing.assert_allclose(ret, adv + 0.5)


def test_gae_terminal_cut():
    r = np.array([1.0, 2.0, 3.0])
    v = np.array([0.3, 0.1, 0.7])
    adv, _ = compute_gae(r, v, [0, 1, 0], 10.0, 0.99, 0.95)
    assert adv[1] == pytest.approx(r[1] - v[1])


def test_gae_zero_discount():
    rng = np.random.default_rng(0)
    r, v = rng.standard_normal((2, 10, 4))
    adv, _ = compute_gae(r, v, np.zeros((10, 4)), rng.standard_normal(4), 0.0, 0.95)
    np.testing.assert_allclose(adv, r - v)


def test_gae_brute_force_sum():
    rng = np.random.default_rng(1)
    t_len, g, lam = 7, 0.97, 0.9
    r, v = rng.standard_normal((2, t_len))
    boot = 0.4
    adv, _ = compute_gae(r, v, np.zeros(t_len), boot, g, lam)
    vv = np.append(v, boot)
    deltas = r + g * vv[1:] - vv[:-1]
    for t in range(t_len):
        assert adv[t] == pytest.approx(sum((g * lam) ** k * deltas[t + k] for k in range(t_len - t)), abs=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        compute_gae(np.zeros(3), np.zeros(2), np.zeros(3), 0.0, 0.99, 0.95)


# -- surrogate ---------------------------------------------------------------

def test_clip_positive_advantage():
    surr, _, clipped = clipped_surrogate(np.array([1.5]), np.array([2.0]), 0.2)
    assert surr[0] == pytest.approx(1.2 * 2.0) and clipped[0]


def test_clip_negative_advantage_keeps_pessimistic_term():
    surr, d, _ = clipped_surrogate(np.array([1.5, 0.5]), np.array([-1.0, -1.0]), 0.2)
    np.testing.assert_allclose(surr, [-1.5, -0.8])
    assert d[0] == -1.5 and d[1] == 0.0


def test_surrogate_grad_fd():
    rng = np.random.default_rng(0)
    logr = rng.uniform(-0.5, 0.5, 50)
    adv = rng.standard_normal(50)
    _, d, _ = clipped_surrogate(np.exp(logr), adv, 0.2)
    eps = 1e-7
    num = (clipped_surrogate(np.exp(logr + eps), adv, 0.2)[0] - clipped_surrogate(np.exp(logr - eps), adv, 0.2)[0]) / (2 * eps)
    np.testing.assert_allclose(d, num, atol=1e-5)


# -- rollouts ----------------------------------------------------------------

def test_rollout_counts_and_logprobs():
    learner, env = learner_for()
    batch = rollout(learner, env)
    assert batch.obs.shape == (16, 8, env.obs_width)
    assert batch.actions.reshape(-1, env.act_width).shape[0] == 128
    mu, _ = learner.policy.mean(batch.obs.reshape(-1, env.obs_width))
    lp = gaussian_logprob(mu, learner.policy.flat_log_std(), batch.actions.reshape(-1, env.act_width))
    np.testing.assert_allclose(lp, batch.log_probs.reshape(-1), atol=1e-12)


def test_rollout_deterministic():
    learner, env = learner_for()
    a = rollout(learner, env, seed=3)
    learner2, env2 = learner_for()
    b = rollout(learner2, env2, seed=3)
    for f in dataclasses.fields(RolloutBatch):
        if f.name != "episodes":
            assert np.array_equal(getattr(a, f.name), getattr(b, f.name))


def test_rollout_bootstraps_truncation():
    learner, env = learner_for(gamma=0.5)
    env = RotReach(3, horizon=4)
    vec = VecEnv(env, 2, 0)
    batch = collect_rollouts(learner, vec, 4, np.random.default_rng(0))
    assert batch.dones[3].all()
    # rewards at truncation carry gamma * V(final obs)
    raw = VecEnv(env, 2, 0)
    rng = np.random.default_rng(0)
    for t in range(4):
        obs_n = learner.obs_norm(raw.observe())
        act, _ = learner.policy.sample(obs_n, rng)
        _, r, term, trunc, final, _ = raw.step(act)
    expected = r + 0.5 * learner.values(learner.obs_norm(final))
    np.testing.assert_allclose(batch.rewards[3], expected)


def test_rollout_layout_mismatch():
    learner, _ = learner_for()
    with pytest.raises(ValueError):
        collect_rollouts(learner, VecEnv(RotReach(4), 2, 0), 4, np.random.default_rng(0))


# -- update ------------------------------------------------------------------

def run_update(learner, env, seed=0):
    batch = rollout(learner, env, seed)
    learner.obs_norm.update(batch.raw_obs)
    cfg = learner.cfg
    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones, batch.last_values, cfg.gamma, cfg.tau)
    return ppo_update(learner, batch, adv, ret, np.random.default_rng(seed), np.random.default_rng(seed + 1)), batch


@pytest.mark.parametrize("variant", ["SA", "SASA", "MA", "MASA"])
def test_first_ratio_is_one(variant):
    learner, env = learner_for(variant)
    stats, _ = run_update(learner, env)
    assert stats["first_ratio_dev"] <= 1e-10
    for k in ("policy_loss", "value_loss", "approx_kl", "clip_frac"):
        assert np.isfinite(stats[k])


def test_kl_early_stop_reported():
    learner, env = learner_for(learning_rate=1e-2, mini_epochs=5)
    stats, _ = run_update(learner, env)
    assert stats["approx_kl"] > 0.0008
    assert stats["early_stopped"] and stats["epochs_completed"] < 5


def test_no_early_stop_with_huge_threshold():
    learner, env = learner_for(kl_threshold=1e9, mini_epochs=3)
    stats, _ = run_update(learner, env)
    assert not stats["early_stopped"] and stats["epochs_completed"] == 3


def test_zero_advantage_leaves_policy():
    learner, env = learner_for(normalize_advantage=False)
    batch = rollout(learner, env)
    before = [a.copy() for a in learner.policy.arrays]
    zeros = np.zeros_like(batch.rewards)
    ppo_update(learner, batch, zeros, batch.values, np.random.default_rng(0), np.random.default_rng(1))
    for a, b in zip(before, learner.policy.arrays):
        assert np.array_equal(a, b)


def test_nan_loss_aborts():
    learner, env = learner_for()
    batch = rollout(learner, env)
    batch.log_probs[0, 0] = np.nan
    adv = np.ones_like(batch.rewards)
    with pytest.raises(TrainingDiverged):
        ppo_update(learner, batch, adv, adv, np.random.default_rng(0), np.random.default_rng(1))


def test_sasa_with_zero_weights_equals_sa():
    sa, env = learner_for("SA", seed=4)
    sasa, _ = learner_for("SASA", seed=4, sym_loss_weights=(0.0, 0.0))
    s1, _ = run_update(sa, env)
    s2, _ = run_update(sasa, env)
    assert s1["policy_loss"] == s2["policy_loss"]
    for a, b in zip(sa.policy.arrays + sa.critic.arrays, sasa.policy.arrays + sasa.critic.arrays):
        assert np.array_equal(a, b)


def test_masa_stays_equivariant_mid_training():
    learner, env = learner_for("MASA", learning_rate=3e-3)
    for k in range(3):
        run_update(learner, env, seed=k)
    ts = env.transform_set
    raw = env.random_state(np.random.default_rng(0), 20)
    mu = learner.act_deterministic(raw)
    for i in range(ts.n):
        np.testing.assert_allclose(learner.act_deterministic(ts.obs[i].apply(raw)), ts.act[i].apply(mu), atol=1e-6)
        np.testing.assert_allclose(learner.values(learner.obs_norm(ts.obs[i].apply(raw))),
                                   learner.values(learner.obs_norm(raw)), atol=1e-6)


def test_state_dict_round_trip():
    a, env = learner_for(seed=0)
    run_update(a, env)
    b, _ = learner_for(seed=1)
    b.load_state_dict(a.state_dict())
    obs = env.random_state(np.random.default_rng(0), 5)
    np.testing.assert_array_equal(a.act_deterministic(obs), b.act_deterministic(obs))


# -- SASA auxiliary losses ---------------------------------------------------

def test_aux_losses_zero_for_masa():
    ts = build_transform_set(finger_spec(3, 4, True))
    v = make_variant("MASA", ts, (8,), (8,))
    pol, crit = v.make_policy(seed=0), v.make_critic(seed=0)
    obs = np.random.default_rng(0).standard_normal((10, ts.obs[0].width))
    for i in (1, 2):
        p, c = sasa_aux_losses(pol, crit, obs, ts, index=i)
        assert p <= 1e-6 and c <= 1e-6


def test_aux_losses_positive_for_random_sa():
    ts = build_transform_set(finger_spec(3, 4, True))
    v = make_variant("SASA", ts, (8,), (8,))
    pol, crit = v.make_policy(seed=0), v.make_critic(seed=0)
    for a in pol.net_arrays() + crit.net_arrays():
        a[...] = np.random.default_rng(1).standard_normal(a.shape)
    obs = np.random.default_rng(0).standard_normal((10, ts.obs[0].width))
    p, c = sasa_aux_losses(pol, crit, obs, ts, rng=np.random.default_rng(0))
    assert p > 0 and c > 0


def test_aux_value_loss_zero_for_constant_critic():
    ts = build_transform_set(finger_spec(3, 4))
    v = make_variant("SASA", ts, (8,), (8,))
    pol, crit = v.make_policy(seed=0), v.make_critic(seed=0)
    crit.net.weights[-1][:] = 0.0
    obs = np.random.default_rng(0).standard_normal((10, ts.obs[0].width))
    _, c = sasa_aux_losses(pol, crit, obs, ts, index=1)
    assert c == 0.0


def test_aux_loss_grads_fd():
    ts = build_transform_set(finger_spec(3, 2, True))
    v = make_variant("SASA", ts, (5,), (5,))
    pol, crit = v.make_policy(seed=0), v.make_critic(seed=0)
    rng = np.random.default_rng(3)
    for a in pol.net_arrays() + crit.net_arrays():
        a[...] = rng.standard_normal(a.shape) * 0.5
    obs = rng.standard_normal((4, ts.obs[0].width))
    _, _, gp, gc = sasa_aux_losses(pol, crit, obs, ts, index=2, with_grads=True)
    eps = 1e-6
    for arrays, grads, which in ((pol.arrays, gp, 0), (crit.arrays, gc, 1)):
        for arr, g in zip(arrays, grads):
            for idx in list(np.ndindex(arr.shape))[:20]:
                old = arr[idx]
                arr[idx] = old + eps
                lp = sasa_aux_losses(pol, crit, obs, ts, index=2)[which]
                arr[idx] = old - eps
                lm = sasa_aux_losses(pol, crit, obs, ts, index=2)[which]
                arr[idx] = old
                assert g[idx] == pytest.approx((lp - lm) / (2 * eps), abs=1e-6)


def test_aux_transform_sampled_from_nonidentity():
    ts = build_transform_set(finger_spec(4, 2))
    v = make_variant("SASA", ts, (5,), (5,))
    pol, crit = v.make_policy(seed=0), v.make_critic(seed=0)
    obs = np.random.default_rng(0).standard_normal((3, ts.obs[0].width))
    by_index = {i: sasa_aux_losses(pol, crit, obs, ts, index=i) for i in range(1, 4)}
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(60):
        out = sasa_aux_losses(pol, crit, obs, ts, rng=rng)
        seen.add(next(i for i, v in by_index.items() if v == out))
    assert seen == {1, 2, 3}


def test_unknown_variant():
    with pytest.raises(UnknownVariantError):
        make_variant("QMIX", build_transform_set(finger_spec()))


def test_ma_obs_width():
    ts = build_transform_set(finger_spec(3, 4))
    pol = make_variant("MA", ts, (8,), (8,)).make_policy(seed=0)
    assert pol.phi.arch.input_width == ts.obs[0].width + 3


# -- end to end --------------------------------------------------------------

def tiny_run(tmp_path, name, variant="MASA", seed=0):
    cfg = RunConfig(run_name=name, variant=variant, env_params={"n_arms": 3, "horizon": 20},
                    ppo=small_cfg(total_env_steps=384))
    return train_online(cfg.validate(), seed, tmp_path / name)


def test_train_online_deterministic(tmp_path):
    a = tiny_run(tmp_path, "a")
    b = tiny_run(tmp_path, "b")
    ta = (tmp_path / "a" / "metrics.csv").read_text().replace(",a,", ",x,")
    tb = (tmp_path / "b" / "metrics.csv").read_text().replace(",b,", ",x,")
    assert ta == tb
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes()[8:] != b""
    assert a["eval"]["phase"] == "eval"


def test_train_online_rows_per_update(tmp_path):
    out = tiny_run(tmp_path, "c", variant="SASA")
    steps = [r["step"] for r in out["train"]]
    assert steps == [128, 256, 384]


def test_make_learner_seeds_differ():
    cfg = RunConfig(ppo=small_cfg())
    a, _ = make_learner(cfg, 0)
    b, _ = make_learner(cfg, 1)
    assert not np.array_equal(a.policy.arrays[0], b.policy.arrays[0])
