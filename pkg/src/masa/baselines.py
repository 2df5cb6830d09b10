"""Comparison architectures: a monolithic single-agent network (SA) and a
parameter-shared multi-agent network fed one-hot agent ids without any
symmetry transforms (MA).
"""
from __future__ import annotations

import numpy as np

from .nets import POLICY_OUTPUT_GAIN, ActionStructure, Critic, GaussianPolicy, _as_batch, merge_features
from .nn import LOG_STD_MAX, LOG_STD_MIN, NetArch, backward, forward, init_params
from .symmetry import TransformSet


class SAPolicy(GaussianPolicy):
    """One network over the full observation; one free log-std per action dim."""

    def __init__(self, tset: TransformSet, hidden=(128, 64), activation="elu", seed=0,
                 log_std_init=0.0, log_std_bounds=(LOG_STD_MIN, LOG_STD_MAX)):
        structure = ActionStructure(tset)
        self.obs_width = tset.spec.obs_layout.total_width
        self.act_width = structure.width
        super().__init__(structure, log_std_init, log_std_bounds)
        arch = NetArch((self.obs_width, *hidden, self.act_width), activation)
        self.net = init_params(arch, seed, output_gain=POLICY_OUTPUT_GAIN)
        self._flat_index = np.empty(self.act_width, dtype=np.intp)
        self._flat_index[structure.canonical] = np.arange(self.act_width)

    def _n_std(self):
        return self.structure.width

    def _std_index(self):
        return self._flat_index

    def net_arrays(self):
        return self.net.arrays()

    def mean(self, obs):
        obs = _as_batch(obs, self.obs_width, "observation")
        y, tape = forward(self.net, obs)
        return y[:, self._flat_index], tape

    def mean_backward(self, tape, g_mean):
        g = np.asarray(g_mean)[:, self.structure.canonical]
        grads, _ = backward(self.net, tape, g)
        return grads.arrays()


class SACritic(Critic):
    def __init__(self, tset: TransformSet, hidden=(128, 64), activation="elu", seed=0, mode="V"):
        if mode not in ("V", "Q"):
            raise ValueError(f"unknown critic mode {mode!r}")
        self.mode = mode
        self.obs_width = tset.spec.obs_layout.total_width
        self.act_width = tset.spec.act_layout.total_width
        in_w = self.obs_width + (self.act_width if mode == "Q" else 0)
        self.net = init_params(NetArch((in_w, *hidden, 1), activation), np.random.default_rng(seed))

    def net_arrays(self):
        return self.net.arrays()

    def value(self, obs, act=None):
        obs, act = self._inputs(obs, act)
        x = _as_batch(obs, self.obs_width, "observation")
        if act is not None:
            x = np.concatenate([x, _as_batch(act, self.act_width, "action")], axis=1)
        v, tape = forward(self.net, x)
        return v[:, 0], tape

    def backward(self, tape, g_v):
        grads, _ = backward(self.net, tape, np.asarray(g_v, dtype=np.float64)[:, None])
        return grads.arrays()


def _one_hot_views(x: np.ndarray, n: int) -> np.ndarray:
    b = x.shape[0]
    eye = np.eye(n)
    return np.concatenate([np.concatenate([x, np.repeat(eye[i:i + 1], b, axis=0)], axis=1) for i in range(n)], axis=0)


class MAPolicy(GaussianPolicy):
    """Shared network on [o, one_hot(i)]; central proposals averaged, limb i takes output i as-is."""

    def __init__(self, tset: TransformSet, hidden=(128, 64), activation="elu", seed=0,
                 log_std_init=0.0, log_std_bounds=(LOG_STD_MIN, LOG_STD_MAX)):
        structure = ActionStructure(tset)
        super().__init__(structure, log_std_init, log_std_bounds)
        self.n = tset.n
        self.obs_width = tset.spec.obs_layout.total_width
        self.input_width = self.obs_width + self.n
        arch = NetArch((self.input_width, *hidden, structure.c_width + structure.s_width), activation)
        self.phi = init_params(arch, seed, output_gain=POLICY_OUTPUT_GAIN)

    def net_arrays(self):
        return self.phi.arrays()

    def mean(self, obs):
        obs = _as_batch(obs, self.obs_width, "observation")
        st = self.structure
        y, tape = forward(self.phi, _one_hot_views(obs, self.n))
        y = y.reshape(self.n, obs.shape[0], -1)
        c = st.c_width
        flat = np.zeros((obs.shape[0], st.width))
        if c:
            flat[:, st.central_idx] = y[:, :, :c].mean(axis=0)
        for i in range(self.n):
            flat[:, st.slot_idx[i]] = y[i, :, c:]
        return flat, tape

    def mean_backward(self, tape, g_mean):
        st = self.structure
        g_mean = np.asarray(g_mean)
        c = st.c_width
        g = np.zeros((self.n, g_mean.shape[0], c + st.s_width))
        if c:
            g[:, :, :c] = g_mean[:, st.central_idx] / self.n
        for i in range(self.n):
            g[i, :, c:] = g_mean[:, st.slot_idx[i]]
        grads, _ = backward(self.phi, tape, g.reshape(self.n * g_mean.shape[0], -1))
        return grads.arrays()


class MACritic(Critic):
    def __init__(self, tset: TransformSet, hidden=(128, 64), activation="elu", seed=0, mode="V"):
        if mode not in ("V", "Q"):
            raise ValueError(f"unknown critic mode {mode!r}")
        self.mode = mode
        self.n = tset.n
        self.obs_width = tset.spec.obs_layout.total_width
        self.act_width = tset.spec.act_layout.total_width
        in_w = self.obs_width + (self.act_width if mode == "Q" else 0) + self.n
        rng = np.random.default_rng(seed)
        self.psi = init_params(NetArch((in_w, *hidden), activation, output_activation=True), rng)
        self.theta = init_params(NetArch((hidden[-1], 1), activation), rng)

    def net_arrays(self):
        return self.psi.arrays() + self.theta.arrays()

    def value(self, obs, act=None):
        obs, act = self._inputs(obs, act)
        x = _as_batch(obs, self.obs_width, "observation")
        if act is not None:
            x = np.concatenate([x, _as_batch(act, self.act_width, "action")], axis=1)
        f, psi_tape = forward(self.psi, _one_hot_views(x, self.n))
        h = merge_features(f.reshape(self.n, x.shape[0], -1))
        v, theta_tape = forward(self.theta, h)
        return v[:, 0], (psi_tape, theta_tape, x.shape[0])

    def backward(self, tape, g_v):
        psi_tape, theta_tape, b = tape
        g_theta, g_h = backward(self.theta, theta_tape, np.asarray(g_v, dtype=np.float64).reshape(b, 1))
        g_f = np.broadcast_to(g_h / self.n, (self.n,) + g_h.shape).reshape(self.n * b, -1)
        g_psi, _ = backward(self.psi, psi_tape, g_f)
        return g_psi.arrays() + g_theta.arrays()
