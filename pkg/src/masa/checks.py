"""Symmetry property checks shared by the ``check-symmetry`` command and the tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .envs import SymmetricEnv
from .symmetry import verify_group_axioms

AXIOM_TOL = 1e-12
DYNAMICS_TOL = 1e-8
NETWORK_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def to_dict(self) -> dict:
        return dict(name=self.name, residual=self.residual, tolerance=self.tolerance, ok=self.ok)


def mdp_commutation(env: SymmetricEnv, probes: int = 1000, seed: int = 0) -> dict[str, float]:
    """Replays random (state, action) probes from s and T_i s.

    Returns max state residual |step(T s, T a) - T step(s, a)|, max reward
    difference and the number of disagreeing termination flags.
    """
    ts = env.transform_set
    rng = np.random.default_rng(seed)
    s = env.random_state(rng, probes)
    a = rng.uniform(-1.5, 1.5, (probes, env.act_width))
    nxt, r, term, _ = env.dynamics(s, a)
    out = dict(state=0.0, reward=0.0, termination=0.0)
    for i in range(1, ts.n):
        n2, r2, t2, _ = env.dynamics(ts.obs[i].apply(s), ts.act[i].apply(a))
        out["state"] = max(out["state"], float(np.max(np.abs(env.observe(n2) - ts.obs[i].apply(env.observe(nxt))))))
        out["reward"] = max(out["reward"], float(np.max(np.abs(r2 - r))))
        out["termination"] += float(np.sum(t2 != term))
    return out


def network_residuals(ckpt: Checkpoint, probes: int = 200, seed: int = 0) -> dict[str, float]:
    """Equivariance of the acting policy (mean and log-density) and invariance of V / Q."""
    env = ckpt.env
    ts = env.transform_set
    rng = np.random.default_rng(seed)
    o = env.random_state(rng, probes)
    a = rng.uniform(-1.0, 1.0, (probes, env.act_width))
    mu = ckpt.act(o)
    out = dict(policy_equivariance=0.0)
    for i in range(1, ts.n):
        diff = ckpt.act(ts.obs[i].apply(o)) - ts.act[i].apply(mu)
        out["policy_equivariance"] = max(out["policy_equivariance"], float(np.max(np.abs(diff))))
    if ckpt.policy is not None:
        lp, _ = ckpt.policy.log_prob(ckpt.obs_norm(o), a)
        out["log_density_equivariance"] = max(
            float(np.max(np.abs(ckpt.policy.log_prob(ckpt.obs_norm(ts.obs[i].apply(o)), ts.act[i].apply(a))[0] - lp)))
            for i in range(ts.n))
    if ckpt.critic is not None:
        v = ckpt.value(o)
        out["value_invariance"] = max(float(np.max(np.abs(ckpt.value(ts.obs[i].apply(o)) - v))) for i in range(ts.n))
    if ckpt.q_critic is not None:
        q, _ = ckpt.q_critic.value(ckpt.obs_norm(o), a)
        out["q_invariance"] = max(
            float(np.max(np.abs(ckpt.q_critic.value(ckpt.obs_norm(ts.obs[i].apply(o)), ts.act[i].apply(a))[0] - q)))
            for i in range(ts.n))
    return out


def symmetry_report(env: SymmetricEnv, ckpt: Checkpoint | None = None, probes: int = 1000,
                    seed: int = 0) -> list[CheckResult]:
    results = [CheckResult(f"axiom.{k}", v, AXIOM_TOL)
               for k, v in verify_group_axioms(env.transform_set, probes, seed).items()]
    mdp = mdp_commutation(env, probes, seed)
    results.append(CheckResult("mdp.state", mdp["state"], DYNAMICS_TOL))
    results.append(CheckResult("mdp.reward", mdp["reward"], 0.0))
    results.append(CheckResult("mdp.termination", mdp["termination"], 0.0))
    if ckpt is not None:
        for k, v in network_residuals(ckpt, min(probes, 200), seed).items():
            results.append(CheckResult(f"network.{k}", v, NETWORK_TOL))
    return results
