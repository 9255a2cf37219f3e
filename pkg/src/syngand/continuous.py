"""Variance-preserving Gaussian diffusion over standardized property channels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def cosine_alpha(T: int, floor: float = 1e-3) -> np.ndarray:
    t = np.arange(T + 1, dtype=np.float64)
    return np.maximum(np.cos(0.5 * np.pi * t / T), floor)


@dataclass
class ContinuousSchedule:
    alpha: np.ndarray   # shape (T + 1,)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha[0] != 1.0 or np.any(np.diff(self.alpha) > 0):
            raise ValueError("alpha must start at 1 and be non-increasing")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha must stay positive")
        self.sigma = np.sqrt(1.0 - self.alpha ** 2)

    @classmethod
    def cosine(cls, T):
        return cls(cosine_alpha(T))

    @property
    def T(self) -> int:
        return len(self.alpha) - 1


@dataclass
class PropertyVector:
    """Standardized values plus observed flags; unobserved entries hold 0."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("property values must be finite")

    @property
    def d(self) -> int:
        return int(self.values.shape[-1])


@dataclass
class Standardizer:
    names: list
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)

    @classmethod
    def fit(cls, names, values, mask):
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        mean = np.zeros(len(names))
        std = np.ones(len(names))
        for c in range(len(names)):
            obs = values[mask[:, c], c]
            if len(obs):
                mean[c] = obs.mean()
            if len(obs) > 1 and obs.std() > 0:
                std[c] = obs.std()
        return cls(list(names), mean, std)

    def standardize(self, raw):
        return (np.asarray(raw, dtype=np.float64) - self.mean) / self.std

    def destandardize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["mean"], d["std"])


def _check_t(t, lo, hi):
    if not lo <= t <= hi:
        raise ValueError(f"timestep {t} outside [{lo}, {hi}]")


def transition_coefficients(t: int, s: ContinuousSchedule):
    """(alpha_{t|t-1}, sigma_{t|t-1}) of the one-step kernel."""
    _check_t(t, 1, s.T)
    a = s.alpha[t] / s.alpha[t - 1]
    var = s.sigma[t] ** 2 - a ** 2 * s.sigma[t - 1] ** 2
    return float(a), float(np.sqrt(max(var, 0.0)))


def noise_y(y, t: int, s: ContinuousSchedule, rng):
    """Return (y_t, eps) with y_t = alpha_t y + sigma_t eps."""
    y = np.asarray(y, dtype=np.float64)
    if t == 0:
        return y.copy(), np.zeros_like(y)
    _check_t(t, 1, s.T)
    eps = rng.standard_normal(y.shape)
    return s.alpha[t] * y + s.sigma[t] * eps, eps


def posterior_params(y, y_t, t: int, s: ContinuousSchedule):
    """Mean and std of q(y^{t-1} | y, y^t)."""
    _check_t(t, 2, s.T)
    a, sig_ts = transition_coefficients(t, s)
    var_t = s.sigma[t] ** 2
    mu = (a * s.sigma[t - 1] ** 2 / var_t) * np.asarray(y_t) \
        + (s.alpha[t - 1] * sig_ts ** 2 / var_t) * np.asarray(y)
    return mu, sig_ts * s.sigma[t - 1] / s.sigma[t]


def y_from_noise(y_t, eps_hat, t: int, s: ContinuousSchedule):
    _check_t(t, 1, s.T)
    return (np.asarray(y_t) - s.sigma[t] * np.asarray(eps_hat)) / s.alpha[t]


def reverse_step_y(z_t, eps_hat, t: int, s: ContinuousSchedule, rng=None):
    """One ancestral step z_t -> z_{t-1}; t == 1 returns the clean estimate."""
    if t == 1:
        return y_from_noise(z_t, eps_hat, 1, s)
    a, sig_ts = transition_coefficients(t, s)
    z_t = np.asarray(z_t, dtype=np.float64)
    mean = z_t / a - (sig_ts ** 2 / (a * s.sigma[t])) * np.asarray(eps_hat)
    std = sig_ts * s.sigma[t - 1] / s.sigma[t]
    if rng is None:
        return mean
    return mean + std * rng.standard_normal(z_t.shape)
