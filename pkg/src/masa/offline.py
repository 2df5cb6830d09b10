"""Offline pipeline: scripted datasets, symmetric augmentation, BC and IQL."""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import arch_meta, save_checkpoint
from .config import POLICY_KINDS, IqlConfig, RunConfig
from .envs import SymmetricEnv, make_env
from .metrics import MetricsWriter
from .nets import Critic, GaussianPolicy
from .nn import Adam
from .normalize import Identity, RunningNorm
from .symmetry import DimensionError, SymmetrySpec
from .variants import Variant, make_variant

DATASET_FORMAT = "masa-dataset"
DATASET_VERSION = 1
WEAK_NOISE = 5.0  # the expert saturates its commands, so mild noise barely hurts it
MIXED_NOISE = 0.3


class DatasetError(ValueError):
    pass


class UnknownPolicyKindError(ValueError):
    pass


@dataclass
class Dataset:
    """Transitions stored episode-major.  ``dones`` marks the last step of an
    episode (termination or time limit); ``terminals`` only true termination,
    which is what the Bellman targets cut on."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    terminals: np.ndarray
    episode_ids: np.ndarray
    spec: SymmetrySpec
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rewards)

    def validate(self) -> "Dataset":
        m = len(self)
        ow, aw = self.spec.obs_layout.total_width, self.spec.act_layout.total_width
        if self.obs.shape != (m, ow) or self.next_obs.shape != (m, ow):
            raise DimensionError(f"dataset observations must have shape ({m}, {ow})")
        if self.actions.shape != (m, aw):
            raise DimensionError(f"dataset actions must have shape ({m}, {aw})")
        for name in ("dones", "terminals", "episode_ids"):
            if getattr(self, name).shape != (m,):
                raise DimensionError(f"dataset {name} must have shape ({m},)")
        if np.any(self.terminals & ~self.dones):
            raise DatasetError("terminal transition not marked done")
        if m:
            change = self.episode_ids[1:] != self.episode_ids[:-1]
            if np.any(change != self.dones[:-1]) or not self.dones[-1]:
                raise DatasetError("episode boundaries disagree with done flags")
        return self

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx],
                     self.terminals[idx].astype(np.float64))


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


# -- file format ---------------------------------------------------------------

def _enc(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _dec(s: str, width: int, where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(s, validate=True)
    except (ValueError, TypeError):
        raise DatasetError(f"{where}: bad base64 payload") from None
    if len(raw) != 8 * width:
        raise DatasetError(f"{where}: expected {width} float64 values, got {len(raw) / 8:g}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def save_dataset(ds: Dataset, path: str | Path) -> Path:
    path = Path(path)
    header = dict(format=DATASET_FORMAT, version=DATASET_VERSION, spec=ds.spec.to_dict(),
                  obs_width=int(ds.obs.shape[1]), act_width=int(ds.actions.shape[1]), count=len(ds), meta=ds.meta)
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(len(ds)):
            rec = dict(o=_enc(ds.obs[k]), a=_enc(ds.actions[k]), r=float(ds.rewards[k]), o2=_enc(ds.next_obs[k]),
                       done=bool(ds.dones[k]), terminal=bool(ds.terminals[k]), episode=int(ds.episode_ids[k]))
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:1: bad header ({exc.msg})") from None
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise DatasetError(f"{path}:1: not a version-{DATASET_VERSION} {DATASET_FORMAT} file")
    spec = SymmetrySpec.from_dict(header["spec"])
    ow, aw = spec.obs_layout.total_width, spec.act_layout.total_width
    if (header["obs_width"], header["act_width"]) != (ow, aw):
        raise DatasetError(f"{path}:1: widths disagree with the spec layouts")
    body = lines[1:]
    if len(body) != header["count"]:
        raise DatasetError(f"{path}: header says {header['count']} transitions, found {len(body)}")
    m = len(body)
    obs, nxt, act = np.empty((m, ow)), np.empty((m, ow)), np.empty((m, aw))
    rew = np.empty(m)
    done, term = np.empty(m, dtype=bool), np.empty(m, dtype=bool)
    eps = np.empty(m, dtype=np.int64)
    for k, line in enumerate(body):
        where = f"{path}:{k + 2}"
        try:
            rec = json.loads(line)
            obs[k] = _dec(rec["o"], ow, where)
            act[k] = _dec(rec["a"], aw, where)
            nxt[k] = _dec(rec["o2"], ow, where)
            rew[k], done[k], term[k], eps[k] = rec["r"], rec["done"], rec["terminal"], rec["episode"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"{where}: malformed record ({exc})") from None
    return Dataset(obs, act, rew, nxt, done, term, eps, spec, header["meta"]).validate()


# -- generation --------------------------------------------------------------

def _episode_plan(policy_kind: str, episodes: int) -> list[tuple[float, int | None]]:
    """Per-episode (noise std, fixed arm) for each generator category."""
    if policy_kind == "expert":
        return [(0.0, None)] * episodes
    if policy_kind == "weak":
        return [(WEAK_NOISE, None)] * episodes
    if policy_kind == "half-expert":
        half = episodes // 2
        return [(0.0, None)] * half + [(WEAK_NOISE, None)] * (episodes - half)
    if policy_kind == "weak-expert":
        return [(WEAK_NOISE if e % 2 else 0.0, None) for e in range(episodes)]
    if policy_kind == "mixed":
        return [(MIXED_NOISE, None)] * episodes
    if policy_kind == "asym-expert":
        return [(0.0, 0)] * episodes
    raise UnknownPolicyKindError(f"unknown policy kind {policy_kind!r}; expected one of {POLICY_KINDS}")


def generate_dataset(env: SymmetricEnv, policy_kind: str, episodes: int, seed: int) -> Dataset:
    """Roll out a scripted generator; episodes run in lockstep, each with its own RNG stream."""
    plan = _episode_plan(policy_kind, episodes)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rngs = [np.random.default_rng([seed, e]) for e in range(episodes)]
    states = np.stack([env.initial_state(r) for r in rngs])
    noise_std = np.array([p[0] for p in plan])
    arms = [p[1] for p in plan]
    fixed = [e for e in range(episodes) if arms[e] is not None]
    noise = np.stack([r.standard_normal((env.horizon, env.act_width)) for r in rngs])
    active = np.ones(episodes, dtype=bool)
    ep_return = np.zeros(episodes)
    ep_success = np.zeros(episodes, dtype=bool)
    steps: list[tuple] = []
    for t in range(env.horizon):
        live = np.flatnonzero(active)
        if live.size == 0:
            break
        s = states[live]
        a = env.expert_action(s)
        if fixed:
            for k, e in enumerate(live):
                if arms[e] is not None:
                    a[k] = env.expert_action(s[k:k + 1], fixed_arm=arms[e])[0]
        a = np.clip(a + noise_std[live, None] * noise[live, t], -1.0, 1.0)
        nxt, r, term, success = env.dynamics(s, a)
        trunc = ~term & (t + 1 >= env.horizon)
        ep_return[live] += r
        ep_success[live] |= success | (trunc & env.success_on_survival)
        steps.append((live, env.observe(s), a, r, env.observe(nxt), term | trunc, term))
        states[live] = nxt
        active[live[term | trunc]] = False
    ids = np.concatenate([st[0] for st in steps])
    order = np.argsort(ids, kind="stable")
    cat = [np.concatenate([st[k] for st in steps])[order] for k in range(1, 7)]
    meta = dict(policy_kind=policy_kind, env_id=env.env_id, env_params=env.params(), episodes=episodes, seed=seed,
                mean_success=float(ep_success.mean()), mean_return=float(ep_return.mean()),
                episode_success=[bool(x) for x in ep_success])
    return Dataset(cat[0], cat[1], cat[2], cat[3], cat[4].astype(bool), cat[5].astype(bool), ids[order],
                   env.spec, meta).validate()


def augment_symmetric(ds: Dataset) -> Dataset:
    """Append (T_i o, T_i a, r, T_i o') for every non-identity i; originals first and unchanged."""
    from .symmetry import build_transform_set

    tset = build_transform_set(ds.spec)
    if ds.obs.shape[1] != tset.spec.obs_layout.total_width or ds.actions.shape[1] != tset.spec.act_layout.total_width:
        raise DimensionError("dataset widths do not match its symmetry spec")
    stride = int(ds.episode_ids.max()) + 1 if len(ds) else 0
    parts = [(ds.obs, ds.actions, ds.next_obs, ds.episode_ids)]
    for i in range(1, tset.n):
        to, ta = tset.obs[i], tset.act[i]
        parts.append((to.apply(ds.obs), ta.apply(ds.actions), to.apply(ds.next_obs), ds.episode_ids + i * stride))
    n = tset.n
    meta = dict(ds.meta, augmented=True, augment_factor=n)
    return Dataset(
        np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), np.tile(ds.rewards, n),
        np.concatenate([p[2] for p in parts]), np.tile(ds.dones, n), np.tile(ds.terminals, n),
        np.concatenate([p[3] for p in parts]), ds.spec, meta,
    ).validate()


# -- evaluation --------------------------------------------------------------

def evaluate_policy(act_fn: Callable[[np.ndarray], np.ndarray], env: SymmetricEnv, episodes: int, seed: int):
    """Deterministic rollouts of ``act_fn`` (batched obs -> batched action).

    Episode ``e`` starts from ``default_rng([seed, e])``.  Returns (success_rate, mean_return).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    states = np.stack([env.initial_state(np.random.default_rng([seed, e])) for e in range(episodes)])
    active = np.ones(episodes, dtype=bool)
    ep_return = np.zeros(episodes)
    ep_success = np.zeros(episodes, dtype=bool)
    for t in range(env.horizon):
        live = np.flatnonzero(active)
        if live.size == 0:
            break
        a = np.asarray(act_fn(env.observe(states[live])), dtype=np.float64)
        nxt, r, term, success = env.dynamics(states[live], a)
        trunc = ~term & (t + 1 >= env.horizon)
        ep_return[live] += r
        ep_success[live] |= success | (trunc & env.success_on_survival)
        states[live] = nxt
        active[live[term | trunc]] = False
    return float(ep_success.mean()), float(ep_return.mean())


# -- learners ----------------------------------------------------------------

def fit_normalizer(variant: Variant, obs: np.ndarray, enabled: bool = True) -> RunningNorm | Identity:
    if not enabled:
        return Identity()
    norm = RunningNorm(obs.shape[1], variant.tset if variant.pooled_normalizer else None)
    norm.update(obs)
    return norm


def bc_loss(policy: GaussianPolicy, obs: np.ndarray, act: np.ndarray) -> float:
    logp, _ = policy.log_prob(obs, act)
    return -float(logp.mean())


def bc_update(policy: GaussianPolicy, opt: Adam, obs: np.ndarray, act: np.ndarray) -> float:
    """One Adam step on -mean log p(a|o); returns the pre-step loss."""
    if len(obs) == 0:
        raise ValueError("bc_update needs a non-empty batch")
    logp, cache = policy.log_prob(obs, act)
    loss = -float(logp.mean())
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite BC loss {loss}")
    opt.step(policy.log_prob_backward(cache, -np.ones(len(obs)) / len(obs)))
    return loss


def expectile_loss(u: np.ndarray, expectile: float) -> np.ndarray:
    return np.abs(expectile - (u < 0)) * u * u


@dataclass
class IqlLearner:
    policy: GaussianPolicy
    q1: Critic
    q2: Critic
    q1_target: Critic
    q2_target: Critic
    v: Critic
    cfg: IqlConfig
    lr: float

    def __post_init__(self):
        self.q1_target.copy_from(self.q1)
        self.q2_target.copy_from(self.q2)
        self.opt_pi = Adam(self.policy.arrays, self.lr)
        self.opt_q = Adam(self.q1.arrays + self.q2.arrays, self.lr)
        self.opt_v = Adam(self.v.arrays, self.lr)

    @classmethod
    def create(cls, variant: Variant, cfg: IqlConfig, lr: float, seed: int) -> "IqlLearner":
        rng = np.random.default_rng([seed, 11])
        mk_q = lambda: variant.make_critic(seed=rng, mode="Q")  # noqa: E731
        return cls(policy=variant.make_policy(seed=np.random.default_rng([seed, 1])), q1=mk_q(), q2=mk_q(),
                   q1_target=mk_q(), q2_target=mk_q(), v=variant.make_critic(seed=rng), cfg=cfg, lr=lr)

    def target_q(self, obs, act) -> np.ndarray:
        a, _ = self.q1_target.value(obs, act)
        b, _ = self.q2_target.value(obs, act)
        return np.minimum(a, b)

    def state_dict(self) -> dict:
        out = dict(self.policy.state_dict())
        out.update(self.v.state_dict("critic"))
        out.update(self.q1.state_dict("q1"))
        out.update(self.q2.state_dict("q2"))
        return out


def iql_update(learner: IqlLearner, batch: Batch) -> dict:
    """Value (expectile), policy (AWR) and twin-Q (Bellman) steps, then Polyak targets."""
    if len(batch) == 0:
        raise ValueError("iql_update needs a non-empty batch")
    cfg = learner.cfg
    b = len(batch)
    q_t = learner.target_q(batch.obs, batch.actions)

    v, vtape = learner.v.value(batch.obs)
    u = q_t - v
    w_exp = np.abs(cfg.expectile - (u < 0))
    v_loss = float(np.mean(w_exp * u * u))
    learner.opt_v.step(learner.v.backward(vtape, -2.0 * w_exp * u / b))

    v_new, _ = learner.v.value(batch.obs)
    weights = np.minimum(np.exp(cfg.temperature * (q_t - v_new)), cfg.awr_weight_clip)
    logp, cache = learner.policy.log_prob(batch.obs, batch.actions)
    pi_loss = -float(np.mean(weights * logp))
    learner.opt_pi.step(learner.policy.log_prob_backward(cache, -weights / b))

    v_next, _ = learner.v.value(batch.next_obs)
    target = batch.rewards + cfg.discount * (1.0 - batch.terminals) * v_next
    q1, t1 = learner.q1.value(batch.obs, batch.actions)
    q2, t2 = learner.q2.value(batch.obs, batch.actions)
    e1, e2 = q1 - target, q2 - target
    q_loss = float(np.mean(e1 * e1) + np.mean(e2 * e2))
    learner.opt_q.step(learner.q1.backward(t1, 2.0 * e1 / b) + learner.q2.backward(t2, 2.0 * e2 / b))

    rho = cfg.target_update_rate
    for net, tgt in ((learner.q1, learner.q1_target), (learner.q2, learner.q2_target)):
        for p, t in zip(net.arrays, tgt.arrays):
            t *= 1.0 - rho
            t += rho * p
    losses = dict(v_loss=v_loss, policy_loss=pi_loss, q_loss=q_loss)
    if not all(math.isfinite(x) for x in losses.values()):
        raise FloatingPointError(f"non-finite IQL losses {losses}")
    return losses


def train_offline(cfg: RunConfig, seed: int, dataset: Dataset | None = None, out_dir: str | Path | None = None,
                  env: SymmetricEnv | None = None) -> dict:
    """BC or IQL on a dataset file; metrics every ``log_every`` steps, an eval row and a checkpoint at the end."""
    o = cfg.offline
    env = env or make_env(cfg.env_id, **cfg.env_params)
    if dataset is None:
        dataset = load_dataset(o.dataset)
    if dataset.spec.to_dict() != env.spec.to_dict():
        raise DimensionError("dataset symmetry spec does not match the environment")
    if o.augment:
        dataset = augment_symmetric(dataset)
    variant = make_variant(cfg.variant, env.transform_set, o.policy_hidden, o.critic_hidden, o.activation,
                           o.log_std_init)
    norm = fit_normalizer(variant, dataset.obs)
    obs_n, next_n = norm(dataset.obs), norm(dataset.next_obs)
    data = Dataset(obs_n, dataset.actions, dataset.rewards, next_n, dataset.dones, dataset.terminals,
                   dataset.episode_ids, dataset.spec, dataset.meta)
    rng = np.random.default_rng([seed, 2])
    if cfg.algorithm == "bc":
        policy = variant.make_policy(seed=np.random.default_rng([seed, 1]))
        opt = Adam(policy.arrays, o.learning_rate)
        iql = None
    elif cfg.algorithm == "iql":
        iql = IqlLearner.create(variant, o.iql, o.learning_rate, seed)
        policy = iql.policy
    else:
        raise ValueError(f"train_offline does not handle algorithm {cfg.algorithm!r}")

    out = Path(out_dir) if out_dir is not None else cfg.output_root() / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    history = []
    acc: dict[str, float] = {}
    with MetricsWriter(out / "metrics.csv") as writer:
        for step in range(1, o.grad_steps + 1):
            batch = data.take(rng.integers(0, len(data), o.batch_size))
            if iql is None:
                losses = {"bc_loss": bc_update(policy, opt, batch.obs, batch.actions)}
            else:
                losses = iql_update(iql, batch)
            for k, val in losses.items():
                acc[k] = acc.get(k, 0.0) + val
            if step % o.log_every == 0 or step == o.grad_steps:
                count = step - (history[-1]["step"] if history else 0)
                row = dict(run_id=cfg.run_name, variant=cfg.variant, seed=seed, phase="train", step=step,
                           **{k: val / count for k, val in acc.items()})
                writer.write(row)
                history.append(row)
                acc = {}
        act_fn = lambda x: policy.mean(norm(x))[0]  # noqa: E731
        success, mean_return = evaluate_policy(act_fn, env, o.eval_episodes, seed * 1_000_003 + 7)
        eval_row = dict(run_id=cfg.run_name, variant=cfg.variant, seed=seed, phase="eval", step=o.grad_steps,
                        episodic_return_mean=mean_return, success_rate=success, episodes=o.eval_episodes)
        writer.write(eval_row)
    arrays = dict(iql.state_dict() if iql is not None else policy.state_dict())
    arrays.update(norm.state_dict("obs_norm"))
    arch = arch_meta(cfg.variant, o.policy_hidden, o.critic_hidden, o.activation, o.log_std_init,
                     variant.pooled_normalizer, True)
    save_checkpoint(out / "checkpoint.bin", cfg.algorithm, env, arrays, arch, {"seed": seed, "config": cfg.to_dict()})
    return {"train": history, "eval": eval_row, "dir": str(out), "policy": policy, "normalizer": norm}
