"""PPO with GAE for the SA / SASA / MA / MASA variants."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import arch_meta, save_checkpoint
from .config import PpoConfig, RunConfig
from .envs import SymmetricEnv, VecEnv, make_env
from .metrics import MetricsWriter
from .nets import Critic, GaussianPolicy
from .nn import Adam, clip_by_global_norm
from .normalize import Identity, RunningNorm
from .variants import Variant, make_variant

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def seeded(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


# fixed stream ids so every variant consumes identical randomness
POLICY_STREAM, CRITIC_STREAM, NOISE_STREAM, SHUFFLE_STREAM, SYM_STREAM, ENV_STREAM, EVAL_STREAM = range(1, 8)


@dataclass
class PpoLearner:
    variant: Variant
    policy: GaussianPolicy
    critic: Critic
    obs_norm: RunningNorm | Identity
    value_norm: RunningNorm | Identity
    cfg: PpoConfig
    policy_opt: Adam = field(init=False)
    critic_opt: Adam = field(init=False)

    def __post_init__(self):
        # Adam is elementwise, so two optimizers step exactly like one over the joint list
        self.policy_opt = Adam(self.policy.arrays, self.cfg.learning_rate)
        self.critic_opt = Adam(self.critic.arrays, self.cfg.learning_rate)

    @classmethod
    def create(cls, variant: Variant, cfg: PpoConfig, seed: int) -> "PpoLearner":
        width = variant.tset.spec.obs_layout.total_width
        if cfg.normalize_input:
            obs_norm = RunningNorm(width, variant.tset if variant.pooled_normalizer else None)
        else:
            obs_norm = Identity()
        return cls(
            variant=variant,
            policy=variant.make_policy(seed=seeded(seed, POLICY_STREAM)),
            critic=variant.make_critic(seed=seeded(seed, CRITIC_STREAM)),
            obs_norm=obs_norm,
            value_norm=RunningNorm(1) if cfg.normalize_value else Identity(),
            cfg=cfg,
        )

    def values(self, obs_n: np.ndarray) -> np.ndarray:
        v, _ = self.critic.value(obs_n)
        return self.value_norm.denormalize(v[:, None])[:, 0]

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        mu, _ = self.policy.mean(self.obs_norm(obs))
        return mu

    def state_dict(self) -> dict:
        out = {}
        out.update(self.policy.state_dict())
        out.update(self.critic.state_dict())
        out.update(self.obs_norm.state_dict("obs_norm"))
        out.update(self.value_norm.state_dict("value_norm"))
        return out

    def load_state_dict(self, state: dict) -> None:
        self.policy.load_state_dict(state)
        self.critic.load_state_dict(state)
        self.obs_norm.load_state_dict(state, "obs_norm")
        self.value_norm.load_state_dict(state, "value_norm")


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, A, obs_w), normalized as the policy saw them
    raw_obs: np.ndarray
    actions: np.ndarray  # (T, A, act_w), unclipped samples
    log_probs: np.ndarray  # (T, A)
    rewards: np.ndarray  # (T, A), includes the truncation bootstrap
    dones: np.ndarray
    values: np.ndarray
    last_values: np.ndarray  # (A,)
    episodes: list = field(default_factory=list)

    @property
    def horizon_length(self) -> int:
        return self.obs.shape[0]

    @property
    def num_actors(self) -> int:
        return self.obs.shape[1]


def collect_rollouts(learner: PpoLearner, envs: VecEnv, horizon: int, rng: np.random.Generator) -> RolloutBatch:
    cfg = learner.cfg
    if envs.env.obs_width != learner.variant.tset.spec.obs_layout.total_width:
        raise ValueError("policy and environment layouts disagree")
    a = envs.n
    ow, aw = envs.env.obs_width, envs.env.act_width
    obs_b = np.empty((horizon, a, ow))
    raw_b = np.empty((horizon, a, ow))
    act_b = np.empty((horizon, a, aw))
    logp_b = np.empty((horizon, a))
    rew_b = np.empty((horizon, a))
    done_b = np.empty((horizon, a))
    val_b = np.empty((horizon, a))
    episodes = []
    raw = envs.observe()
    for t in range(horizon):
        obs_n = learner.obs_norm(raw)
        act, logp = learner.policy.sample(obs_n, rng)
        val_b[t] = learner.values(obs_n)
        raw_b[t], obs_b[t], act_b[t], logp_b[t] = raw, obs_n, act, logp
        raw, r, term, trunc, final_obs, finished = envs.step(act)
        r = r.astype(np.float64)
        if cfg.value_bootstrap and trunc.any():
            r = r + cfg.gamma * trunc * learner.values(learner.obs_norm(final_obs))
        rew_b[t] = r
        done_b[t] = term | trunc
        episodes.extend(finished)
    last = learner.values(learner.obs_norm(raw))
    return RolloutBatch(obs_b, raw_b, act_b, logp_b, rew_b, done_b, val_b, last, episodes)


def compute_gae(rewards, values, dones, bootstrap_values, gamma: float, tau: float):
    """A_t = delta_t + gamma*tau*(1 - done_t)*A_{t+1}; returns = A + V.  Leading axis is time."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError("rewards, values and dones must have the same shape")
    adv = np.zeros_like(rewards)
    next_adv = np.zeros_like(rewards[0])
    next_value = np.asarray(bootstrap_values, dtype=np.float64)
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * live * next_value - values[t]
        next_adv = delta + gamma * tau * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, e_clip: float):
    """Per-sample min(r A, clip(r) A) and d/d(log r) of it."""
    clipped = np.clip(ratio, 1.0 - e_clip, 1.0 + e_clip)
    s1, s2 = ratio * adv, clipped * adv
    use_unclipped = s1 <= s2
    return np.minimum(s1, s2), np.where(use_unclipped, s1, 0.0), np.abs(ratio - 1.0) > e_clip


def ppo_update(learner: PpoLearner, batch: RolloutBatch, advantages: np.ndarray, returns: np.ndarray,
               rng: np.random.Generator, sym_rng: np.random.Generator) -> dict:
    cfg = learner.cfg
    policy, critic = learner.policy, learner.critic
    obs = batch.obs.reshape(-1, batch.obs.shape[-1])
    act = batch.actions.reshape(-1, batch.actions.shape[-1])
    logp_old = batch.log_probs.reshape(-1)
    adv = advantages.reshape(-1)
    if cfg.normalize_advantage:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    learner.value_norm.update(returns.reshape(-1, 1))
    targets = learner.value_norm(returns.reshape(-1, 1))[:, 0]
    total = obs.shape[0]
    mb = min(cfg.minibatch_size, total)
    sym_w = cfg.sym_loss_weights if learner.variant.extra_losses is not None else (0.0, 0.0)

    stats = dict(policy_loss=0.0, value_loss=0.0, sym_policy_loss=0.0, sym_value_loss=0.0, clip_frac=0.0,
                 approx_kl=0.0, epochs_completed=0, early_stopped=False, first_ratio_dev=None, grad_norm=0.0)
    steps = 0
    policy_live = True
    for epoch in range(cfg.mini_epochs):
        order = rng.permutation(total)
        for start in range(0, total - mb + 1, mb):
            idx = order[start:start + mb]
            pol_loss = ent_loss = sp = sv = 0.0
            g_pol: list[np.ndarray] = []
            if policy_live:
                logp, cache = policy.log_prob(obs[idx], act[idx])
                ratio = np.exp(logp - logp_old[idx])
                if stats["first_ratio_dev"] is None:
                    stats["first_ratio_dev"] = float(np.max(np.abs(ratio - 1.0)))
                surr, d_surr, clipped = clipped_surrogate(ratio, adv[idx], cfg.e_clip)
                pol_loss = -float(surr.mean())
                g_pol = policy.log_prob_backward(cache, -d_surr / mb)
                if cfg.entropy_coef:
                    # entropy is sum(log_std) + const, so d/d(flat log_std) = 1
                    ent_loss = -cfg.entropy_coef * policy.entropy()
                    ent = policy.backward(None, None, -cfg.entropy_coef * np.ones(policy.structure.width))
                    g_pol = [a + b for a, b in zip(g_pol, ent)]

            v, vtape = critic.value(obs[idx])
            err = v - targets[idx]
            val_loss = float(np.mean(err * err))
            g_crit = critic.backward(vtape, cfg.critic_coef * err / mb)

            if sym_w[0] or sym_w[1]:
                sp, sv, gp, gc = learner.variant.extra_losses(
                    policy, critic, obs[idx], learner.variant.tset, rng=sym_rng, with_grads=True)
                if policy_live:
                    g_pol = [a + sym_w[0] * b for a, b in zip(g_pol, gp)]
                g_crit = [a + sym_w[1] * b for a, b in zip(g_crit, gc)]

            loss = pol_loss + ent_loss + 0.5 * cfg.critic_coef * val_loss + sym_w[0] * sp + sym_w[1] * sv
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss (policy {pol_loss}, value {val_loss}, sym {sp}/{sv}) at epoch {epoch}")
            grads, norm = clip_by_global_norm(g_pol + g_crit, cfg.grad_norm_clip)
            if policy_live:
                learner.policy_opt.step(grads[:len(g_pol)])
            learner.critic_opt.step(grads[len(g_pol):])
            if not policy_live:
                continue
            steps += 1
            stats["policy_loss"] += pol_loss
            stats["value_loss"] += val_loss
            stats["sym_policy_loss"] += sp
            stats["sym_value_loss"] += sv
            stats["clip_frac"] += float(clipped.mean())
            stats["grad_norm"] += norm
        if not policy_live:
            continue
        stats["epochs_completed"] = epoch + 1
        logp_new, _ = policy.log_prob(obs, act)
        kl = float(np.mean(logp_old - logp_new))
        stats["approx_kl"] = kl
        if kl > cfg.kl_threshold and epoch + 1 < cfg.mini_epochs:
            stats["early_stopped"] = True
            if not cfg.critic_epochs_after_stop:
                break
            policy_live = False
    for k in ("policy_loss", "value_loss", "sym_policy_loss", "sym_value_loss", "clip_frac", "grad_norm"):
        stats[k] /= max(steps, 1)
    return stats


def make_learner(cfg: RunConfig, seed: int, env: SymmetricEnv | None = None) -> tuple[PpoLearner, SymmetricEnv]:
    env = env or make_env(cfg.env_id, **cfg.env_params)
    p = cfg.ppo
    variant = make_variant(cfg.variant, env.transform_set, p.policy_hidden, p.critic_hidden, p.activation,
                           p.log_std_init)
    return PpoLearner.create(variant, p, seed), env


def evaluate_learner(learner: PpoLearner, env: SymmetricEnv, episodes: int, seed: int):
    from .offline import evaluate_policy

    return evaluate_policy(learner.act_deterministic, env, episodes, seed)


def train_online(cfg: RunConfig, seed: int, out_dir: str | Path | None = None) -> dict:
    """Train one seed; writes metrics.csv and checkpoint.bin under ``out_dir``."""
    p = cfg.ppo
    out = Path(out_dir) if out_dir is not None else cfg.output_root() / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    learner, env = make_learner(cfg, seed)
    envs = VecEnv(env, p.num_actors, seed * 1_000_003 + ENV_STREAM)
    noise_rng, shuffle_rng, sym_rng = seeded(seed, NOISE_STREAM), seeded(seed, SHUFFLE_STREAM), seeded(seed, SYM_STREAM)
    per_update = p.num_actors * p.horizon_length
    n_updates = max(1, p.total_env_steps // per_update)
    recent: list = []
    history = []
    with MetricsWriter(out / "metrics.csv") as writer:
        for update in range(n_updates):
            batch = collect_rollouts(learner, envs, p.horizon_length, noise_rng)
            learner.obs_norm.update(batch.raw_obs)
            adv, ret = compute_gae(batch.rewards, batch.values, batch.dones, batch.last_values, p.gamma, p.tau)
            stats = ppo_update(learner, batch, adv, ret, shuffle_rng, sym_rng)
            recent = (recent + batch.episodes)[-p.num_actors:]
            row = dict(
                run_id=cfg.run_name, variant=cfg.variant, seed=seed, phase="train",
                step=(update + 1) * per_update,
                episodic_return_mean=float(np.mean([e[0] for e in recent])) if recent else float("nan"),
                success_rate=float(np.mean([e[1] for e in recent])) if recent else float("nan"),
                episodes=len(batch.episodes),
                **{k: stats[k] for k in ("policy_loss", "value_loss", "sym_policy_loss", "sym_value_loss",
                                         "approx_kl", "clip_frac", "epochs_completed")},
            )
            writer.write(row)
            history.append(row)
        success, mean_return = evaluate_learner(learner, env, p.eval_episodes, seed * 1_000_003 + EVAL_STREAM)
        eval_row = dict(run_id=cfg.run_name, variant=cfg.variant, seed=seed, phase="eval",
                        step=n_updates * per_update, episodic_return_mean=mean_return, success_rate=success,
                        episodes=p.eval_episodes)
        writer.write(eval_row)
    arch = arch_meta(cfg.variant, p.policy_hidden, p.critic_hidden, p.activation, p.log_std_init,
                     learner.variant.pooled_normalizer, p.normalize_input)
    save_checkpoint(out / "checkpoint.bin", "ppo", env, learner.state_dict(), arch, {"seed": seed, "config": cfg.to_dict()})
    return {"train": history, "eval": eval_row, "dir": str(out)}
