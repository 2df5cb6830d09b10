from __future__ import annotations

import numpy as np

from .symmetry import TransformSet


class RunningNorm:
    """Running per-dimension mean/variance (parallel-moments merge).

    With ``tset`` the statistics are accumulated over every transformed
    view T_j(x) of each sample, so the normalizer commutes with the group
    and keeps equivariant networks equivariant.
    """

    def __init__(self, width: int, tset: TransformSet | None = None, eps: float = 1e-8):
        self.mean = np.zeros(width)
        self.var = np.ones(width)
        self.count = 0.0
        self.tset = tset
        self.eps = eps

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.shape[0])
        if self.tset is not None:
            x = np.concatenate([t.apply(x) for t in self.tset.obs], axis=0)
        n = x.shape[0]
        if n == 0:
            return
        b_mean = x.mean(axis=0)
        b_var = x.var(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        m2 = self.var * self.count + b_var * n + delta * delta * (self.count * n / total)
        self.var = m2 / total
        self.count = total

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / np.sqrt(self.var + self.eps)

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * np.sqrt(self.var + self.eps) + self.mean

    def state_dict(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.mean": self.mean, f"{prefix}.var": self.var, f"{prefix}.count": np.array([self.count])}

    def load_state_dict(self, state: dict, prefix: str) -> None:
        self.mean = np.array(state[f"{prefix}.mean"])
        self.var = np.array(state[f"{prefix}.var"])
        self.count = float(state[f"{prefix}.count"][0])


class Identity:
    def update(self, x) -> None:
        pass

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64)

    def denormalize(self, y):
        return np.asarray(y, dtype=np.float64)

    def state_dict(self, prefix: str) -> dict:
        return {}

    def load_state_dict(self, state: dict, prefix: str) -> None:
        pass
