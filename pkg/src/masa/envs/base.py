from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..symmetry import DimensionError, SymmetrySpec, TransformSet, build_transform_set


@dataclass
class EnvState:
    vector: np.ndarray
    step_count: int = 0


class SymmetricEnv:
    """Batched pure-function dynamics over state vectors.

    The observation is the full state, so state transforms and
    observation transforms coincide.
    """

    env_id = "base"
    success_on_survival = False
    horizon: int
    spec: SymmetrySpec

    def __init__(self):
        self._tset: TransformSet | None = None

    @property
    def transform_set(self) -> TransformSet:
        if self._tset is None:
            self._tset = build_transform_set(self.spec)
        return self._tset

    @property
    def obs_width(self) -> int:
        return self.spec.obs_layout.total_width

    @property
    def act_width(self) -> int:
        return self.spec.act_layout.total_width

    def params(self) -> dict:
        raise NotImplementedError

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def dynamics(self, states: np.ndarray, actions: np.ndarray):
        """-> (next_states, reward, terminated, success), all batched."""
        raise NotImplementedError

    def random_state(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Arbitrary (not necessarily reachable) states for symmetry probes."""
        raise NotImplementedError

    def observe(self, states: np.ndarray) -> np.ndarray:
        return np.array(states, dtype=np.float64, copy=True)

    def _check_action(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape[-1] != self.act_width:
            raise DimensionError(f"{self.env_id}: action width {actions.shape[-1]} != {self.act_width}")
        return actions

    def reset(self, seed: int) -> tuple[EnvState, np.ndarray]:
        s = self.initial_state(np.random.default_rng(seed))
        return EnvState(s, 0), self.observe(s[None])[0]

    def step(self, state: EnvState, action: np.ndarray):
        """Single-env step -> (state', obs', reward, done)."""
        nxt, r, term, _ = self.dynamics(state.vector[None], self._check_action(action)[None])
        new = EnvState(nxt[0], state.step_count + 1)
        done = bool(term[0]) or new.step_count >= self.horizon
        return new, self.observe(nxt)[0], float(r[0]), done


class VecEnv:
    """``n`` copies of an env with auto-reset and per-actor RNG streams."""

    def __init__(self, env: SymmetricEnv, n: int, seed: int):
        self.env = env
        self.n = n
        self.rngs = [np.random.default_rng([seed, k]) for k in range(n)]
        self.states = np.stack([env.initial_state(r) for r in self.rngs])
        self.steps = np.zeros(n, dtype=np.int64)
        self.ep_return = np.zeros(n)
        self.ep_success = np.zeros(n, dtype=bool)

    def observe(self) -> np.ndarray:
        return self.env.observe(self.states)

    def step(self, actions: np.ndarray):
        """-> (obs, reward, terminated, truncated, final_obs, finished episodes [(return, success)])."""
        nxt, r, term, success = self.env.dynamics(self.states, actions)
        self.steps += 1
        trunc = ~term & (self.steps >= self.env.horizon)
        final_obs = self.env.observe(nxt)
        self.ep_return += r
        self.ep_success |= success | (trunc & self.env.success_on_survival)
        finished = []
        for k in np.flatnonzero(term | trunc):
            finished.append((float(self.ep_return[k]), bool(self.ep_success[k])))
            nxt[k] = self.env.initial_state(self.rngs[k])
            self.steps[k] = 0
            self.ep_return[k] = 0.0
            self.ep_success[k] = False
        self.states = nxt
        return self.observe(), r, term, trunc, final_obs, finished
