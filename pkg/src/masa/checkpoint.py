"""Trained-agent checkpoints: network arrays + normalizer stats + enough
metadata to rebuild the networks, with the env's SymmetrySpec as a JSON sidecar.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import SymmetricEnv, make_env
from .nets import Critic, GaussianPolicy
from .nn import CheckpointError, load_arrays, save_arrays
from .normalize import Identity, RunningNorm
from .symmetry import SymmetrySpec
from .variants import make_variant

KINDS = ("ppo", "bc", "iql", "expert")


def arch_meta(variant: str, policy_hidden, critic_hidden, activation: str, log_std_init: float, pooled: bool,
              normalize: bool) -> dict:
    return dict(variant=variant, policy_hidden=list(policy_hidden), critic_hidden=list(critic_hidden),
                activation=activation, log_std_init=float(log_std_init),
                normalizer=("pooled" if pooled else "plain") if normalize else "none")


def save_checkpoint(path: str | Path, kind: str, env: SymmetricEnv, arrays: dict[str, np.ndarray],
                    arch: dict | None = None, extra: dict | None = None) -> Path:
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    path = Path(path)
    meta = dict(kind=kind, env_id=env.env_id, env_params=env.params(), spec=env.spec.to_dict())
    meta.update(arch or {})
    meta.update(extra or {})
    save_arrays(path, arrays, meta)
    path.with_name(path.stem + ".spec.json").write_text(env.spec.to_json())
    return path


def save_expert_checkpoint(path: str | Path, env: SymmetricEnv) -> Path:
    """The scripted controller as a checkpoint, so ``eval`` can score it like any agent."""
    return save_checkpoint(path, "expert", env, {})


@dataclass
class Checkpoint:
    meta: dict
    env: SymmetricEnv
    policy: GaussianPolicy | None
    critic: Critic | None
    q_critic: Critic | None
    obs_norm: RunningNorm | Identity

    @property
    def kind(self) -> str:
        return self.meta["kind"]

    def act(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic (mean) action."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if self.policy is None:
            return self.env.expert_action(obs)
        mu, _ = self.policy.mean(self.obs_norm(obs))
        return mu

    def value(self, obs: np.ndarray) -> np.ndarray:
        if self.critic is None:
            raise CheckpointError("checkpoint has no value network")
        v, _ = self.critic.value(self.obs_norm(np.atleast_2d(obs)))
        return v


def load_checkpoint(path: str | Path) -> Checkpoint:
    arrays, meta = load_arrays(path)
    if meta.get("kind") not in KINDS:
        raise CheckpointError(f"{path}: unknown checkpoint kind {meta.get('kind')!r}")
    env = make_env(meta["env_id"], **meta["env_params"])
    if SymmetrySpec.from_dict(meta["spec"]).to_dict() != env.spec.to_dict():
        raise CheckpointError(f"{path}: stored symmetry spec does not match env {meta['env_id']}")
    if meta["kind"] == "expert":
        return Checkpoint(meta, env, None, None, None, Identity())
    variant = make_variant(meta["variant"], env.transform_set, meta["policy_hidden"], meta["critic_hidden"],
                           meta["activation"], meta["log_std_init"])
    try:
        policy = variant.make_policy(seed=0)
        policy.load_state_dict(arrays)
        critic = None
        if any(k.startswith("critic.") for k in arrays):
            critic = variant.make_critic(seed=0)
            critic.load_state_dict(arrays, "critic")
        q_critic = None
        if any(k.startswith("q1.") for k in arrays):
            q_critic = variant.make_critic(seed=0, mode="Q")
            q_critic.load_state_dict(arrays, "q1")
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from None
    width = env.obs_width
    if meta["normalizer"] == "none":
        norm = Identity()
    else:
        norm = RunningNorm(width, env.transform_set if meta["normalizer"] == "pooled" else None)
        norm.load_state_dict(arrays, "obs_norm")
    return Checkpoint(meta, env, policy, critic, q_critic, norm)


def read_meta(path: str | Path) -> dict:
    return load_arrays(path)[1]

