"""Marginal-preserving categorical diffusion for node and edge types."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .molgraph import MolecularGraph, NO_BOND


def cosine_abar(T: int, s: float = 0.008, floor: float = 1e-6) -> np.ndarray:
    """Cumulative retention for t = 0..T, normalised so abar[0] == 1."""
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(0.5 * np.pi * (t / T + s) / (1 + s)) ** 2
    return np.maximum(f / f[0], floor)


@dataclass
class DiscreteSchedule:
    abar: np.ndarray   # shape (T + 1,)
    m_X: np.ndarray
    m_E: np.ndarray

    def __post_init__(self):
        self.abar = np.asarray(self.abar, dtype=np.float64)
        self.m_X = np.asarray(self.m_X, dtype=np.float64)
        self.m_E = np.asarray(self.m_E, dtype=np.float64)
        if self.abar[0] != 1.0 or np.any(np.diff(self.abar) > 0):
            raise ValueError("abar must start at 1 and be non-increasing")
        if np.any(self.abar <= 0):
            raise ValueError("abar must stay positive")
        for name in ("m_X", "m_E"):
            m = getattr(self, name)
            if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector")

    @classmethod
    def cosine(cls, T, m_X, m_E, s=0.008):
        return cls(cosine_abar(T, s), m_X, m_E)

    @property
    def T(self) -> int:
        return len(self.abar) - 1

    def marginal(self, which: str) -> np.ndarray:
        if which == "node":
            return self.m_X
        if which == "edge":
            return self.m_E
        raise ValueError(f"which must be 'node' or 'edge', got {which!r}")

    def alpha(self, t: int) -> float:
        return float(self.abar[t] / self.abar[t - 1])


def _check_t(t, lo, hi):
    if not lo <= t <= hi:
        raise ValueError(f"timestep {t} outside [{lo}, {hi}]")


def marginal_matrix(a: float, m: np.ndarray) -> np.ndarray:
    """a * I + (1 - a) * 1 m^T."""
    K = len(m)
    return a * np.eye(K) + (1.0 - a) * np.broadcast_to(m, (K, K))


def transition_matrix(t: int, s: DiscreteSchedule, which: str) -> np.ndarray:
    _check_t(t, 1, s.T)
    return marginal_matrix(s.alpha(t), s.marginal(which))


def cumulative_transition(t: int, s: DiscreteSchedule, which: str) -> np.ndarray:
    _check_t(t, 0, s.T)
    return marginal_matrix(float(s.abar[t]), s.marginal(which))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of the trailing axis."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
    idx = (u >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def noise_types(x: np.ndarray, t: int, s: DiscreteSchedule, which: str, rng) -> np.ndarray:
    Qb = cumulative_transition(t, s, which)
    return sample_categorical(Qb[x], rng)


def noise_edges(e: np.ndarray, t: int, s: DiscreteSchedule, rng) -> np.ndarray:
    """Noise a (..., n, n) edge-type array on the upper triangle and mirror it."""
    n = e.shape[-1]
    iu = np.triu_indices(n, 1)
    upper = noise_types(e[..., iu[0], iu[1]], t, s, "edge", rng)
    out = np.zeros_like(e)
    out[..., iu[0], iu[1]] = upper
    out[..., iu[1], iu[0]] = upper
    return out


def noise_graph(g: MolecularGraph, t: int, s: DiscreteSchedule, rng) -> MolecularGraph:
    _check_t(t, 1, s.T)
    nodes = noise_types(g.nodes, t, s, "node", rng)
    edges = noise_edges(g.edges, t, s, rng)
    return MolecularGraph(nodes, edges)


def posterior_table(t: int, s: DiscreteSchedule, which: str) -> np.ndarray:
    """P[x_clean, x_t, k] = q(x^{t-1} = k | x_clean, x^t); rows with zero
    normaliser (x^t unreachable from x_clean) are left all-zero."""
    _check_t(t, 1, s.T)
    Qt = transition_matrix(t, s, which)
    Qb = cumulative_transition(t - 1, s, which)
    num = Qb[:, None, :] * Qt.T[None, :, :]
    den = num.sum(axis=-1, keepdims=True)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def discrete_posterior(x_clean: int, x_t: int, t: int, s: DiscreteSchedule, which: str) -> np.ndarray:
    post = posterior_table(t, s, which)[x_clean, x_t]
    if post.sum() == 0:
        raise ValueError("x_t is unreachable from x_clean under this schedule")
    return post


def denoising_distribution(p_hat: np.ndarray, x_t, t: int, s: DiscreteSchedule, which: str,
                           table: np.ndarray | None = None) -> np.ndarray:
    """Mixture of exact posteriors weighted by the predicted clean distribution.

    ``p_hat`` has shape (..., K) and ``x_t`` the matching (...) category array.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if np.any(p_hat < 0) or np.any(np.abs(p_hat.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("p_hat rows must be probability vectors")
    if table is None:
        table = posterior_table(t, s, which)
    post = np.moveaxis(table[:, np.asarray(x_t)], 0, -2)   # (..., K_clean, K)
    mix = np.einsum("...x,...xk->...k", p_hat, post)
    z = mix.sum(axis=-1, keepdims=True)
    # renormalise the mass lost to unreachable clean categories
    K = p_hat.shape[-1]
    fallback = np.eye(K)[np.asarray(x_t)]
    return np.where(z > 0, mix / np.where(z > 0, z, 1.0), fallback)
