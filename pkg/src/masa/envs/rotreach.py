"""RotReach: N two-link planar arms sharing a base at the origin, mounted at
angles 2*pi*k/N, velocity-commanded; any fingertip touching the target ends
the episode.  Rotating the world by 2*pi/N relabels the arms, so the task
is exactly C_N-symmetric.
"""
from __future__ import annotations

import math

import numpy as np

from ..symmetry import AGENT_INDEXED, CENTRAL_VARIANT, PLANAR_ROTATE, Block, BlockLayout, SymmetrySpec
from .base import SymmetricEnv
from .reward import RewardTerms, reward_combine

REWARD_WEIGHTS = {"task": 1.0, "action": -0.01}
# Rotating the target by float cos/sin perturbs distances in the last bits;
# snapping distance and reward to this grid makes them exactly invariant.
REWARD_DECIMALS = 9


def rotreach_spec(n_arms: int) -> SymmetrySpec:
    obs = [Block(f"arm{k}", 4, AGENT_INDEXED, group="arm") for k in range(n_arms)]
    obs.append(Block("target", 2, CENTRAL_VARIANT, PLANAR_ROTATE, pairs=((0, 1),)))
    act = [Block(f"cmd{k}", 2, AGENT_INDEXED, group="cmd") for k in range(n_arms)]
    return SymmetrySpec("cyclic", n_arms, BlockLayout(tuple(obs)), BlockLayout(tuple(act)))


class RotReach(SymmetricEnv):
    env_id = "rotreach"

    def __init__(self, n_arms: int = 3, link_lengths=(0.5, 0.5), horizon: int = 200, dt: float = 0.05,
                 target_radius=(0.3, 0.9), success_radius: float = 0.05, wrap_angles: bool = True):
        super().__init__()
        if not 1 <= int(n_arms) <= 6:
            raise ValueError("rotreach: n_arms must be in 1..6")
        l1, l2 = (float(x) for x in link_lengths)
        r_lo, r_hi = (float(x) for x in target_radius)
        if min(l1, l2) <= 0 or horizon < 1 or dt <= 0:
            raise ValueError("rotreach: link lengths, horizon and dt must be positive")
        if not (abs(l1 - l2) <= r_lo < r_hi <= l1 + l2):
            raise ValueError("rotreach: target annulus must lie inside the reachable annulus")
        self.n_arms = int(n_arms)
        self.l1, self.l2 = l1, l2
        self.horizon = int(horizon)
        self.dt = float(dt)
        self.target_radius = (r_lo, r_hi)
        self.success_radius = float(success_radius)
        self.wrap_angles = bool(wrap_angles)
        self.mount = 2.0 * math.pi * np.arange(self.n_arms) / self.n_arms
        self.spec = rotreach_spec(self.n_arms)

    def params(self) -> dict:
        return {
            "n_arms": self.n_arms,
            "link_lengths": [self.l1, self.l2],
            "horizon": self.horizon,
            "dt": self.dt,
            "target_radius": list(self.target_radius),
            "success_radius": self.success_radius,
            "wrap_angles": self.wrap_angles,
        }

    def _split(self, states):
        n = self.n_arms
        arms = states[:, :4 * n].reshape(-1, n, 4)
        return arms, states[:, 4 * n:4 * n + 2]

    def fingertips(self, states: np.ndarray) -> np.ndarray:
        arms, _ = self._split(np.atleast_2d(states))
        a1 = self.mount + arms[:, :, 0]
        a2 = a1 + arms[:, :, 1]
        x = self.l1 * np.cos(a1) + self.l2 * np.cos(a2)
        y = self.l1 * np.sin(a1) + self.l2 * np.sin(a2)
        return np.stack([x, y], axis=-1)

    def distances(self, states: np.ndarray) -> np.ndarray:
        """(B, N) fingertip-to-target distances."""
        states = np.atleast_2d(states)
        _, target = self._split(states)
        return np.linalg.norm(self.fingertips(states) - target[:, None, :], axis=-1)

    def sample_target(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.target_radius
        r = math.sqrt(rng.uniform(lo * lo, hi * hi))
        phi = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([r * math.cos(phi), r * math.sin(phi)])

    def initial_state(self, rng):
        return np.concatenate([np.zeros(4 * self.n_arms), self.sample_target(rng)])

    def random_state(self, rng, n):
        s = np.empty((n, self.obs_width))
        s[:, :4 * self.n_arms] = rng.uniform(-math.pi, math.pi, (n, 4 * self.n_arms))
        s[:, 4 * self.n_arms:] = rng.uniform(-1.0, 1.0, (n, 2))
        return s

    def dynamics(self, states, actions):
        states = np.asarray(states, dtype=np.float64)
        cmd = np.clip(self._check_action(actions), -1.0, 1.0).reshape(-1, self.n_arms, 2)
        arms, target = self._split(states)
        nxt = np.empty_like(states)
        q = arms[:, :, :2] + self.dt * cmd
        if self.wrap_angles:
            q = np.remainder(q + math.pi, 2.0 * math.pi) - math.pi
        new_arms = np.concatenate([q, cmd], axis=-1)
        nxt[:, :4 * self.n_arms] = new_arms.reshape(len(states), -1)
        nxt[:, 4 * self.n_arms:] = target
        dist = np.round(self.distances(nxt).min(axis=1), REWARD_DECIMALS)
        success = dist < self.success_radius
        terms = RewardTerms({"task": -dist, "action": np.sum(cmd * cmd, axis=(1, 2))}, REWARD_WEIGHTS)
        return nxt, np.round(reward_combine(terms), REWARD_DECIMALS), success, success

    # -- scripted controllers ------------------------------------------------

    def ik_command(self, states: np.ndarray, arm: np.ndarray) -> np.ndarray:
        """Joint-velocity command driving ``arm`` (per row) straight to its IK solution."""
        states = np.atleast_2d(states)
        b = len(states)
        arms, target = self._split(states)
        rows = np.arange(b)
        q = arms[rows, arm, :2]
        phi = self.mount[arm]
        c, s = np.cos(-phi), np.sin(-phi)
        tx = c * target[:, 0] - s * target[:, 1]
        ty = s * target[:, 0] + c * target[:, 1]
        r2 = tx * tx + ty * ty
        c2 = np.clip((r2 - self.l1**2 - self.l2**2) / (2 * self.l1 * self.l2), -1.0, 1.0)
        best = None
        for sign in (1.0, -1.0):
            q2 = sign * np.arccos(c2)
            q1 = np.arctan2(ty, tx) - np.arctan2(self.l2 * np.sin(q2), self.l1 + self.l2 * np.cos(q2))
            d1 = (q1 - q[:, 0] + math.pi) % (2 * math.pi) - math.pi
            d = np.stack([d1, q2 - q[:, 1]], axis=-1)
            cost = np.abs(d).max(axis=-1)
            if best is None:
                best, best_cost = d, cost
            else:
                pick = cost < best_cost
                best = np.where(pick[:, None], d, best)
                best_cost = np.where(pick, cost, best_cost)
        cmd = np.clip(best / self.dt, -1.0, 1.0)
        out = np.zeros((b, self.n_arms, 2))
        out[rows, arm] = cmd
        return out.reshape(b, -1)

    def expert_action(self, states: np.ndarray, fixed_arm: int | None = None) -> np.ndarray:
        """Greedy IK controller steering the arm whose fingertip is nearest (or ``fixed_arm``)."""
        states = np.atleast_2d(states)
        if fixed_arm is None:
            arm = np.argmin(self.distances(states), axis=1)
        else:
            arm = np.full(len(states), int(fixed_arm))
        return self.ik_command(states, arm)
