from .base import EnvState, SymmetricEnv, VecEnv
from .reward import MissingWeightError, RewardTerms, reward_combine
from .rotreach import RotReach, rotreach_spec
from .thrusterpole import ThrusterPole, thrusterpole_spec

ENVS = {"rotreach": RotReach, "thrusterpole": ThrusterPole}


class UnknownEnvError(KeyError):
    pass


def make_env(env_id: str, **params) -> SymmetricEnv:
    if env_id not in ENVS:
        raise UnknownEnvError(f"unknown env id {env_id!r}; known: {sorted(ENVS)}")
    return ENVS[env_id](**params)


def env_symmetry_spec(env_id: str, **params):
    return make_env(env_id, **params).spec


def rotreach_reset(cfg: dict, seed: int):
    return make_env("rotreach", **cfg).reset(seed)


def thrusterpole_reset(cfg: dict, seed: int):
    return make_env("thrusterpole", **cfg).reset(seed)


__all__ = [
    "ENVS", "EnvState", "MissingWeightError", "RewardTerms", "RotReach", "SymmetricEnv", "ThrusterPole",
    "UnknownEnvError", "VecEnv", "env_symmetry_spec", "make_env", "reward_combine", "rotreach_reset",
    "rotreach_spec", "thrusterpole_reset", "thrusterpole_spec",
]
