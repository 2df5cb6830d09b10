"""The four architectures compared throughout: SA, SASA, MA and MASA."""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .baselines import MACritic, MAPolicy, SACritic, SAPolicy
from .nets import Critic, GaussianPolicy, MasaCritic, MasaPolicy
from .symmetry import TransformSet

VARIANTS = ("SA", "SASA", "MA", "MASA")


class UnknownVariantError(ValueError):
    pass


@dataclass
class Variant:
    name: str
    tset: TransformSet
    make_policy: Callable[..., GaussianPolicy]
    make_critic: Callable[..., Critic]
    extra_losses: Callable | None
    pooled_normalizer: bool


def sasa_aux_losses(policy: GaussianPolicy, critic: Critic | None, obs: np.ndarray, tset: TransformSet,
                    rng: np.random.Generator | None = None, index: int | None = None, with_grads: bool = False):
    """Symmetry penalties mean ||T_i(A(o)) - A(T_i(o))||_2 and mean |V(o) - V(T_i(o))|.

    ``i`` is drawn uniformly from the non-identity elements unless given.
    Returns ``(policy_loss, value_loss)`` or, with ``with_grads``,
    ``(policy_loss, value_loss, policy_grads, critic_grads)``.
    """
    n = tset.n
    if n < 2:
        zeros_p = [np.zeros_like(a) for a in policy.arrays]
        zeros_c = [np.zeros_like(a) for a in critic.arrays] if critic is not None else []
        return (0.0, 0.0, zeros_p, zeros_c) if with_grads else (0.0, 0.0)
    if index is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        index = int(rng.integers(1, n))
    t_obs, t_act = tset.obs[index], tset.act[index]
    m = obs.shape[0]
    obs_t = t_obs.apply(obs)

    mu, tape = policy.mean(obs)
    mu_t, tape_t = policy.mean(obs_t)
    d = t_act.apply(mu) - mu_t
    norms = np.linalg.norm(d, axis=1)
    p_loss = float(norms.mean())

    v_loss = 0.0
    if critic is not None:
        v, vtape = critic.value(obs)
        v_t, vtape_t = critic.value(obs_t)
        diff = v - v_t
        v_loss = float(np.abs(diff).mean())
    if not with_grads:
        return p_loss, v_loss

    safe = np.where(norms > 0, norms, 1.0)
    g_d = np.where(norms[:, None] > 0, d / safe[:, None], 0.0) / m
    g_pol = [a + b for a, b in zip(policy.backward(tape, t_act.apply_transpose(g_d)), policy.backward(tape_t, -g_d))]
    g_crit = []
    if critic is not None:
        s = np.sign(diff) / m
        g_crit = [a + b for a, b in zip(critic.backward(vtape, s), critic.backward(vtape_t, -s))]
    return p_loss, v_loss, g_pol, g_crit


def make_variant(variant: str, tset: TransformSet, policy_hidden=(128, 64), critic_hidden=(128, 64),
                 activation: str = "elu", log_std_init: float = 0.0) -> Variant:
    if variant not in VARIANTS:
        raise UnknownVariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    pol_kw = dict(hidden=tuple(policy_hidden), activation=activation, log_std_init=log_std_init)
    crit_kw = dict(hidden=tuple(critic_hidden), activation=activation)
    if variant == "MASA":
        pol_cls, crit_cls = MasaPolicy, MasaCritic
    elif variant == "MA":
        pol_cls, crit_cls = MAPolicy, MACritic
    else:
        pol_cls, crit_cls = SAPolicy, SACritic
    return Variant(
        name=variant,
        tset=tset,
        make_policy=partial(pol_cls, tset, **pol_kw),
        make_critic=partial(crit_cls, tset, **crit_kw),
        extra_losses=sasa_aux_losses if variant == "SASA" else None,
        pooled_normalizer=variant in ("MASA", "SASA"),
    )
