"""ThrusterPole: cart-pole with a cart force and two tip thrusters pushing
the pole tip left and right.  Mirroring the world negates the cart/pole
coordinates and the cart force and swaps the thrusters.
"""
from __future__ import annotations

import numpy as np

from ..symmetry import AGENT_INDEXED, CENTRAL_VARIANT, SIGN_FLIP, Block, BlockLayout, SymmetrySpec
from .base import SymmetricEnv
from .reward import RewardTerms, reward_combine

REWARD_WEIGHTS = {"alive": 1.0, "posture": 1.0, "action": -0.01}
FALL_REWARD = -1.0


def thrusterpole_spec() -> SymmetrySpec:
    obs = (
        Block("cartpole", 4, CENTRAL_VARIANT, SIGN_FLIP, mask=(1, 1, 1, 1)),
        Block("heat_L", 1, AGENT_INDEXED, group="heat"),
        Block("heat_R", 1, AGENT_INDEXED, group="heat"),
    )
    act = (
        Block("force", 1, CENTRAL_VARIANT, SIGN_FLIP, mask=(1,)),
        Block("thrust_L", 1, AGENT_INDEXED, group="thrust"),
        Block("thrust_R", 1, AGENT_INDEXED, group="thrust"),
    )
    return SymmetrySpec("reflection", 2, BlockLayout(obs), BlockLayout(act))


class ThrusterPole(SymmetricEnv):
    env_id = "thrusterpole"
    success_on_survival = True

    def __init__(self, horizon: int = 500, dt: float = 0.02, cart_mass: float = 1.0, pole_mass: float = 0.1,
                 half_length: float = 0.5, gravity: float = 9.8, force_mag: float = 10.0,
                 thrust_mag: float = 2.0, heat_decay: float = 0.95, fall_angle: float = 0.8):
        super().__init__()
        if horizon < 1 or dt <= 0:
            raise ValueError("thrusterpole: horizon and dt must be positive")
        self.horizon = int(horizon)
        self.dt = float(dt)
        self.cart_mass = float(cart_mass)
        self.pole_mass = float(pole_mass)
        self.half_length = float(half_length)
        self.gravity = float(gravity)
        self.force_mag = float(force_mag)
        self.thrust_mag = float(thrust_mag)
        self.heat_decay = float(heat_decay)
        self.fall_angle = float(fall_angle)
        self.spec = thrusterpole_spec()

    def params(self) -> dict:
        keys = ("horizon", "dt", "cart_mass", "pole_mass", "half_length", "gravity", "force_mag",
                "thrust_mag", "heat_decay", "fall_angle")
        return {k: getattr(self, k) for k in keys}

    def initial_state(self, rng):
        return np.concatenate([rng.uniform(-0.05, 0.05, 4), np.zeros(2)])

    def random_state(self, rng, n):
        s = np.empty((n, 6))
        s[:, 0] = rng.uniform(-2.0, 2.0, n)
        s[:, 1] = rng.uniform(-2.0, 2.0, n)
        s[:, 2] = rng.uniform(-1.0, 1.0, n)
        s[:, 3] = rng.uniform(-3.0, 3.0, n)
        s[:, 4:] = rng.uniform(0.0, 5.0, (n, 2))
        return s

    def dynamics(self, states, actions):
        states = np.asarray(states, dtype=np.float64)
        a = self._check_action(actions)
        force = np.clip(a[:, 0], -1.0, 1.0)
        thrust = np.clip(a[:, 1:3], 0.0, 1.0)
        x, xd, th, thd = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
        f_cart = self.force_mag * force
        f_tip = self.thrust_mag * (thrust[:, 1] - thrust[:, 0])
        m, big_m, l, g = self.pole_mass, self.cart_mass, self.half_length, self.gravity
        sin, cos = np.sin(th), np.cos(th)
        # Lagrangian of cart + uniform pole, horizontal tip force F_t enters as (F_t, 2 l cos(th) F_t)
        a11, a12 = big_m + m, m * l * cos
        a22 = 4.0 / 3.0 * m * l * l
        b1 = f_cart + f_tip + m * l * sin * thd * thd
        b2 = m * g * l * sin + 2.0 * l * cos * f_tip
        det = a11 * a22 - a12 * a12
        xdd = (b1 * a22 - a12 * b2) / det
        thdd = (a11 * b2 - a12 * b1) / det
        nxt = np.empty_like(states)
        nxt[:, 0] = x + self.dt * xd
        nxt[:, 1] = xd + self.dt * xdd
        nxt[:, 2] = th + self.dt * thd
        nxt[:, 3] = thd + self.dt * thdd
        nxt[:, 4:6] = self.heat_decay * states[:, 4:6] + thrust
        fallen = np.abs(nxt[:, 2]) > self.fall_angle
        terms = RewardTerms(
            {
                "alive": np.ones(len(states)),
                "posture": -(0.1 * nxt[:, 0] ** 2 + 0.5 * nxt[:, 2] ** 2),
                # grouped so the mirror swap leaves the float sum bit-identical
                "action": force * force + (thrust[:, 0] ** 2 + thrust[:, 1] ** 2),
            },
            REWARD_WEIGHTS,
        )
        reward = np.where(fallen, FALL_REWARD, reward_combine(terms))
        # surviving to the horizon counts as success; the wrapper truncates
        return nxt, reward, fallen, np.zeros(len(states), dtype=bool)

    def expert_action(self, states: np.ndarray, fixed_arm=None) -> np.ndarray:
        """Linear balancing controller; thrusters stay off (or ``fixed_arm`` side only)."""
        states = np.atleast_2d(states)
        x, xd, th, thd = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
        u = 1.0 * x + 1.5 * xd + 18.0 * th + 3.0 * thd
        out = np.zeros((len(states), 3))
        out[:, 0] = np.clip(u / self.force_mag, -1.0, 1.0)
        if fixed_arm is not None:
            out[:, 1 + int(fixed_arm)] = 0.2
        return out
