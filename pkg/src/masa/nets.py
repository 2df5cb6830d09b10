"""Equivariant shared-parameter policy and invariant critic.

Every agent j looks at the world through T_j, the shared network Phi maps
that view to a central-action proposal and the agent's own limb action,
limb actions are gathered back into the whole-robot action, and central
proposals are averaged after mapping them back with the transform set.
The critic averages shared features Psi(T_j(o)) before the head Theta.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    LOG_2PI,
    LOG_STD_MAX,
    LOG_STD_MIN,
    NetArch,
    NetParams,
    backward,
    forward,
    gaussian_logprob,
    gaussian_logprob_grads,
    init_params,
)
from .symmetry import AGENT_INDEXED, PLANAR_ROTATE, DimensionError, TransformSet

POLICY_OUTPUT_GAIN = 0.01


def _tied_index(blocks_with_offsets, start: int) -> tuple[list[int], int]:
    """Parameter slot per dim, with planar-rotate pairs sharing one slot."""
    index, nxt = [], start
    for b in blocks_with_offsets:
        local = [-1] * b.width
        for a, c in b.pairs if b.rule == PLANAR_ROTATE else ():
            local[a] = local[c] = nxt
            nxt += 1
        for k in range(b.width):
            if local[k] < 0:
                local[k] = nxt
                nxt += 1
        index.extend(local)
    return index, nxt


class ActionStructure:
    """Index bookkeeping for splitting a flat action into central and per-agent parts."""

    def __init__(self, tset: TransformSet):
        self.tset = tset
        layout = tset.spec.act_layout
        self.n = tset.n
        self.width = layout.total_width
        self.central_idx = layout.central_indices()
        self.slot_idx = [layout.agent_indices(j) for j in range(self.n)]
        self.c_width = len(self.central_idx)
        self.s_width = len(self.slot_idx[0]) if self.n else 0

        central_blocks = [b for b in layout.blocks if b.kind != AGENT_INDEXED]
        slot0_blocks = [layout.blocks[m[0]] for m in layout.agent_groups().values()]
        c_index, nxt = _tied_index(central_blocks, 0)
        s_index, nxt = _tied_index(slot0_blocks, nxt)
        self.n_std = nxt
        std_index = np.zeros(self.width, dtype=np.intp)
        std_index[self.central_idx] = c_index
        for j in range(self.n):
            std_index[self.slot_idx[j]] = s_index
        self.std_index = std_index
        # SA networks emit [central | slot 0 | slot 1 | ...]
        self.canonical = np.concatenate([self.central_idx, *self.slot_idx]).astype(np.intp)

    def embed_central(self, yc: np.ndarray) -> np.ndarray:
        flat = np.zeros(yc.shape[:-1] + (self.width,))
        flat[..., self.central_idx] = yc
        return flat

    def embed_slot(self, y: np.ndarray, j: int) -> np.ndarray:
        flat = np.zeros(y.shape[:-1] + (self.width,))
        flat[..., self.slot_idx[j]] = y
        return flat

    def central_apply(self, i: int, yc: np.ndarray) -> np.ndarray:
        return self.tset.act[i % self.n].apply(self.embed_central(yc))[..., self.central_idx]

    def central_apply_transpose(self, i: int, g: np.ndarray) -> np.ndarray:
        return self.tset.act[i % self.n].apply_transpose(self.embed_central(g))[..., self.central_idx]


@dataclass
class JointAction:
    a_c: np.ndarray
    a_s: list[np.ndarray]
    flat: np.ndarray


class GaussianPolicy:
    """Diagonal Gaussian around a deterministic mean with state-independent log-std."""

    structure: ActionStructure
    log_std: np.ndarray

    def __init__(self, structure: ActionStructure, log_std_init: float, log_std_bounds=(LOG_STD_MIN, LOG_STD_MAX)):
        self.structure = structure
        self.log_std_bounds = tuple(log_std_bounds)
        self.log_std = np.full(self._n_std(), float(log_std_init))

    def _n_std(self) -> int:
        return self.structure.n_std

    def _std_index(self) -> np.ndarray:
        return self.structure.std_index

    # subclasses provide these
    def net_arrays(self) -> list[np.ndarray]:
        raise NotImplementedError

    def mean(self, obs: np.ndarray):
        raise NotImplementedError

    def mean_backward(self, tape, g_mean: np.ndarray) -> list[np.ndarray]:
        raise NotImplementedError

    @property
    def arrays(self) -> list[np.ndarray]:
        return self.net_arrays() + [self.log_std]

    def flat_log_std(self) -> np.ndarray:
        lo, hi = self.log_std_bounds
        return np.clip(self.log_std[self._std_index()], lo, hi)

    def backward(self, tape, g_mean=None, g_flat_log_std=None) -> list[np.ndarray]:
        if g_mean is None:
            net = [np.zeros_like(a) for a in self.net_arrays()]
        else:
            net = self.mean_backward(tape, g_mean)
        g_ls = np.zeros_like(self.log_std)
        if g_flat_log_std is not None:
            lo, hi = self.log_std_bounds
            raw = self.log_std[self._std_index()]
            live = (raw >= lo) & (raw <= hi)
            np.add.at(g_ls, self._std_index(), np.where(live, g_flat_log_std, 0.0))
        return net + [g_ls]

    def log_prob(self, obs: np.ndarray, act: np.ndarray):
        mu, tape = self.mean(obs)
        ls = self.flat_log_std()
        return gaussian_logprob(mu, ls, act), (tape, mu, ls, np.asarray(act))

    def log_prob_backward(self, cache, g_logp: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum_b g_logp[b] * logp[b]."""
        tape, mu, ls, act = cache
        d_mu, d_ls = gaussian_logprob_grads(mu, ls, act)
        g = np.asarray(g_logp)[:, None]
        return self.backward(tape, g * d_mu, np.sum(g * d_ls, axis=0))

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Noise is added to the merged flat action."""
        mu, _ = self.mean(obs)
        ls = self.flat_log_std()
        act = mu + np.exp(ls) * rng.standard_normal(mu.shape)
        return act, gaussian_logprob(mu, ls, act)

    def entropy(self) -> float:
        ls = self.flat_log_std()
        return float(np.sum(ls + 0.5 * (LOG_2PI + 1.0)))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"policy.{k}": a for k, a in enumerate(self.arrays)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, a in enumerate(self.arrays):
            src = state[f"policy.{k}"]
            if src.shape != a.shape:
                raise DimensionError(f"policy array {k}: shape {src.shape} != {a.shape}")
            a[...] = src


def _as_batch(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{what}: expected shape (B, {width}), got {x.shape}")
    return x


class MasaPolicy(GaussianPolicy):
    def __init__(self, tset: TransformSet, hidden=(128, 64), activation="elu", seed=0,
                 log_std_init=0.0, log_std_bounds=(LOG_STD_MIN, LOG_STD_MAX)):
        structure = ActionStructure(tset)
        super().__init__(structure, log_std_init, log_std_bounds)
        self.tset = tset
        self.obs_width = tset.spec.obs_layout.total_width
        arch = NetArch((self.obs_width, *hidden, structure.c_width + structure.s_width), activation)
        self.phi = init_params(arch, seed, output_gain=POLICY_OUTPUT_GAIN)

    def net_arrays(self):
        return self.phi.arrays()

    def branch_inputs(self, obs: np.ndarray) -> np.ndarray:
        return np.concatenate([t.apply(obs) for t in self.tset.obs], axis=0)

    def branch_outputs(self, obs: np.ndarray):
        obs = _as_batch(obs, self.obs_width, "observation")
        y, tape = forward(self.phi, self.branch_inputs(obs))
        return y.reshape(self.tset.n, obs.shape[0], -1), tape

    def mean(self, obs):
        st = self.structure
        n = self.tset.n
        y, tape = self.branch_outputs(obs)
        c = st.c_width
        flat = np.zeros((y.shape[1], st.width))
        if c:
            # T_{N-1-j} maps proposal j back, exactly as in the equivariance proof
            acc = sum(st.central_apply(n - 1 - j, y[j, :, :c]) for j in range(n))
            flat[:, st.central_idx] = acc / n
        for j in range(n):
            flat += self.tset.act[(n - j) % n].apply(st.embed_slot(y[j, :, c:], 0))
        return flat, tape

    def mean_backward(self, tape, g_mean):
        st = self.structure
        n = self.tset.n
        c = st.c_width
        g_mean = np.asarray(g_mean)
        g = np.zeros((n, g_mean.shape[0], c + st.s_width))
        if c:
            gc = g_mean[:, st.central_idx] / n
            for j in range(n):
                g[j, :, :c] = st.central_apply_transpose(n - 1 - j, gc)
        for j in range(n):
            g[j, :, c:] = self.tset.act[(n - j) % n].apply_transpose(g_mean)[:, st.slot_idx[0]]
        grads, _ = backward(self.phi, tape, g.reshape(n * g_mean.shape[0], -1))
        return grads.arrays()

    def joint_action(self, o: np.ndarray) -> JointAction:
        o = np.asarray(o, dtype=np.float64)
        flat, _ = self.mean(o[None, :])
        y, _ = self.branch_outputs(o[None, :])
        c = self.structure.c_width
        n = self.tset.n
        if c:
            a_c = sum(self.structure.central_apply(n - 1 - j, y[j, 0, :c]) for j in range(n)) / n
        else:
            a_c = np.zeros(0)
        return JointAction(np.asarray(a_c), [y[j, 0, c:].copy() for j in range(n)], flat[0])

    def split(self, flat: np.ndarray) -> JointAction:
        """Inverse of the gather: recover a_c and each agent's local a_s from a flat action."""
        st = self.structure
        flat = np.asarray(flat, dtype=np.float64)
        a_s = [self.tset.act[j].apply(flat)[..., st.slot_idx[0]] for j in range(self.tset.n)]
        return JointAction(flat[..., st.central_idx], a_s, flat)

    def gather(self, a_c: np.ndarray, a_s: list[np.ndarray]) -> np.ndarray:
        st = self.structure
        n = self.tset.n
        flat = st.embed_central(np.asarray(a_c, dtype=np.float64)) if st.c_width else np.zeros(st.width)
        for j in range(n):
            flat = flat + self.tset.act[(n - j) % n].apply(st.embed_slot(np.asarray(a_s[j]), 0))
        return flat


def masa_policy_mean(policy: MasaPolicy, o: np.ndarray) -> JointAction:
    return policy.joint_action(o)


def masa_policy_sample(policy: MasaPolicy, o: np.ndarray, rng: np.random.Generator):
    act, logp = policy.sample(np.asarray(o, dtype=np.float64)[None, :], rng)
    return policy.split(act[0]), float(logp[0])


class Critic:
    mode: str

    def net_arrays(self) -> list[np.ndarray]:
        raise NotImplementedError

    @property
    def arrays(self) -> list[np.ndarray]:
        return self.net_arrays()

    def value(self, obs, act=None):
        raise NotImplementedError

    def backward(self, tape, g_v) -> list[np.ndarray]:
        raise NotImplementedError

    def _inputs(self, obs, act):
        if self.mode == "Q":
            if act is None:
                raise ValueError("Q-mode critic needs an action")
            return obs, act
        if act is not None:
            raise ValueError("V-mode critic does not take an action")
        return obs, None

    def state_dict(self, prefix="critic") -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": a for k, a in enumerate(self.arrays)}

    def load_state_dict(self, state, prefix="critic") -> None:
        for k, a in enumerate(self.arrays):
            src = state[f"{prefix}.{k}"]
            if src.shape != a.shape:
                raise DimensionError(f"{prefix} array {k}: shape {src.shape} != {a.shape}")
            a[...] = src

    def copy_from(self, other: "Critic") -> None:
        for a, b in zip(self.arrays, other.arrays):
            a[...] = b


def merge_features(features: np.ndarray) -> np.ndarray:
    """Set operator over the agent axis (axis 0): arithmetic mean."""
    return np.mean(features, axis=0)


class MasaCritic(Critic):
    def __init__(self, tset: TransformSet, hidden=(128, 64), activation="elu", seed=0, mode="V"):
        if mode not in ("V", "Q"):
            raise ValueError(f"unknown critic mode {mode!r}")
        self.tset = tset
        self.mode = mode
        self.obs_width = tset.spec.obs_layout.total_width
        self.act_width = tset.spec.act_layout.total_width
        in_w = self.obs_width + (self.act_width if mode == "Q" else 0)
        rng = np.random.default_rng(seed)
        self.psi = init_params(NetArch((in_w, *hidden), activation, output_activation=True), rng)
        self.theta = init_params(NetArch((hidden[-1], 1), activation), rng)

    def net_arrays(self):
        return self.psi.arrays() + self.theta.arrays()

    def branch_inputs(self, obs, act=None):
        obs, act = self._inputs(obs, act)
        obs = _as_batch(obs, self.obs_width, "observation")
        xs = [t.apply(obs) for t in self.tset.obs]
        if act is not None:
            act = _as_batch(act, self.act_width, "action")
            xs = [np.concatenate([x, t.apply(act)], axis=1) for x, t in zip(xs, self.tset.act)]
        return np.concatenate(xs, axis=0)

    def head_input(self, obs, act=None):
        x = self.branch_inputs(obs, act)
        f, tape = forward(self.psi, x)
        return merge_features(f.reshape(self.tset.n, -1, f.shape[-1])), tape

    def value(self, obs, act=None):
        h, psi_tape = self.head_input(obs, act)
        v, theta_tape = forward(self.theta, h)
        return v[:, 0], (psi_tape, theta_tape, h.shape[0])

    def backward(self, tape, g_v):
        psi_tape, theta_tape, b = tape
        g_theta, g_h = backward(self.theta, theta_tape, np.asarray(g_v, dtype=np.float64).reshape(b, 1))
        n = self.tset.n
        g_f = np.broadcast_to(g_h / n, (n,) + g_h.shape).reshape(n * b, -1)
        g_psi, _ = backward(self.psi, psi_tape, g_f)
        return g_psi.arrays() + g_theta.arrays()


def masa_value(critic: MasaCritic, o: np.ndarray) -> float:
    v, _ = critic.value(np.asarray(o, dtype=np.float64)[None, :])
    return float(v[0])


def masa_q(critic: MasaCritic, o: np.ndarray, a: np.ndarray) -> float:
    if critic.mode != "Q":
        raise ValueError("masa_q needs a Q-mode critic")
    v, _ = critic.value(np.asarray(o, dtype=np.float64)[None, :], np.asarray(a, dtype=np.float64)[None, :])
    return float(v[0])


def masa_policy_grad(policy: GaussianPolicy, o: np.ndarray, g_mean: np.ndarray | None = None,
                     g_logp: float = 0.0, action: np.ndarray | None = None) -> list[np.ndarray]:
    """Gradients on (Phi arrays..., log_std) for L = <g_mean, mean(o)> + g_logp * log p(action | o)."""
    o = np.asarray(o, dtype=np.float64)[None, :]
    total = [np.zeros_like(a) for a in policy.arrays]
    if g_mean is not None:
        _, tape = policy.mean(o)
        for t, g in zip(total, policy.backward(tape, np.asarray(g_mean)[None, :])):
            t += g
    if g_logp and action is not None:
        _, cache = policy.log_prob(o, np.asarray(action)[None, :])
        for t, g in zip(total, policy.log_prob_backward(cache, np.array([g_logp]))):
            t += g
    return total


def param_count(arrays: list[np.ndarray]) -> int:
    return int(sum(a.size for a in arrays))


def flat_equivariance_residual(act_fn, tset: TransformSet, obs: np.ndarray) -> float:
    """max_i max |act(T_i o) - T_i act(o)| for a batch of observations."""
    base = act_fn(obs)
    worst = 0.0
    for to, ta in zip(tset.obs, tset.act):
        worst = max(worst, float(np.max(np.abs(act_fn(to.apply(obs)) - ta.apply(base)))))
    return worst

