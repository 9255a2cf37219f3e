"""Joint graph/property generation and property infilling for fixed ligands."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .continuous import reverse_step_y
from .denoiser import GraphBatch
from .discrete import (cumulative_transition, denoising_distribution, posterior_table,
                       sample_categorical)
from .molgraph import MolecularGraph


@dataclass
class InfillConfig:
    M: int = 10        # outer iterations
    N: int = 50        # reverse steps per iteration
    y_init: str = "mean-impute"

    def check(self, T: int):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not 1 <= self.N < T:
            raise ValueError(f"N must satisfy 1 <= N < T (N={self.N}, T={T})")
        if self.y_init not in ("mean-impute", "provided"):
            raise ValueError(f"unknown y_init policy {self.y_init!r}")


def sample_node_count(hist: dict, rng, size=None):
    """Draw node counts from an empirical {count: weight} histogram."""
    if not hist:
        raise ValueError("empty node-count histogram")
    keys = np.array(sorted(hist), dtype=np.int64)
    w = np.array([hist[k] for k in keys], dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("node-count histogram has no mass")
    p = w / w.sum()
    if size is None:
        return int(keys[sample_categorical(p, rng)])
    return keys[sample_categorical(np.broadcast_to(p, (size, len(p))), rng)]


def _sample_edges(probs, rng):
    """Sample (B, n, n, K) edge distributions on the upper triangle, mirrored."""
    n = probs.shape[1]
    iu = np.triu_indices(n, 1)
    upper = sample_categorical(probs[:, iu[0], iu[1]], rng)
    E = np.zeros(probs.shape[:3], dtype=np.int64)
    E[:, iu[0], iu[1]] = upper
    E[:, iu[1], iu[0]] = upper
    return E


def _check_rows(p, name):
    if np.any(np.abs(p.sum(-1) - 1.0) > 1e-6):
        raise FloatingPointError(f"{name} sampling rows do not sum to 1")


def reverse_step(model, batch: GraphBatch, z, t: int, rng, on_step=None):
    """One joint reverse step t -> t-1 on a padded batch.

    Channels without training coverage are pinned at 0 (the standardized
    mean): their noise head was never fitted, and letting them drift would
    feed out-of-range values back into the network.
    """
    cov = model.sample_mask
    z = np.where(cov, z, 0.0)
    out = model.denoise(batch, z, np.broadcast_to(cov, z.shape), t)
    ds = model.discrete
    pX = denoising_distribution(out.pX, batch.X, t, ds, "node", posterior_table(t, ds, "node"))
    pE = denoising_distribution(out.pE, batch.E, t, ds, "edge", posterior_table(t, ds, "edge"))
    _check_rows(pX, "node")
    _check_rows(pE, "edge")
    nm = batch.nm
    X = np.where(nm, sample_categorical(pX, rng), 0)
    E = _sample_edges(pE, rng) * (nm[:, :, None] & nm[:, None, :])
    z = np.where(cov, reverse_step_y(z, out.eps, t, model.continuous, rng), 0.0)
    if on_step is not None:
        on_step(t)
    return GraphBatch(X, E, nm), z


def _generate_chunk(model, count, seed):
    rng = np.random.default_rng(seed)
    sizes = sample_node_count(model.node_hist, rng, size=count)
    n = int(sizes.max())
    nm = np.arange(n)[None, :] < sizes[:, None]
    ds = model.discrete
    X = np.where(nm, sample_categorical(np.broadcast_to(ds.m_X, (count, n, len(ds.m_X))), rng), 0)
    E = _sample_edges(np.broadcast_to(ds.m_E, (count, n, n, len(ds.m_E))), rng)
    E = E * (nm[:, :, None] & nm[:, None, :])
    batch = GraphBatch(X, E, nm)
    z = rng.standard_normal((count, model.cfg.d))
    for t in range(model.T, 0, -1):
        batch, z = reverse_step(model, batch, z, t, rng)
    return batch.graphs(), _uncovered_nan(model, model.standardizer.destandardize(z))


def _uncovered_nan(model, y):
    return np.where(model.sample_mask, y, np.nan)


def _chunk_seeds(rng, n_chunks):
    return [int(s) for s in rng.integers(2 ** 63 - 1, size=n_chunks)]


def _run_chunks(fn, jobs, args):
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def generate(model, count: int, rng, chunk: int = 64, jobs: int = 1):
    """Sample ``count`` new (graph, de-standardized property vector) pairs.

    Chunks draw their own seeds up front, so output does not depend on ``jobs``.
    """
    sizes = [min(chunk, count - i) for i in range(0, count, chunk)]
    seeds = _chunk_seeds(rng, len(sizes))
    results = _run_chunks(_generate_chunk, jobs, [(model, c, s) for c, s in zip(sizes, seeds)])
    graphs, ys = [], []
    for gs, y in results:
        graphs.extend(gs)
        ys.extend(y)
    return list(zip(graphs, ys))


def _infill_chunk(model, graphs, y0, cfg: InfillConfig, seed, on_step=None):
    rng = np.random.default_rng(seed)
    clean = GraphBatch.collate(graphs)
    nm = clean.nm
    em = nm[:, :, None] & nm[:, None, :]
    ds = model.discrete
    cs = model.continuous
    N = cfg.N
    y = np.array(y0, dtype=np.float64)
    QbX = cumulative_transition(N, ds, "node")
    QbE = cumulative_transition(N, ds, "edge")
    for _ in range(cfg.M, 0, -1):
        X = np.where(nm, sample_categorical(QbX[clean.X], rng), 0)
        E = _sample_edges(QbE[clean.E], rng) * em
        batch = GraphBatch(X, E, nm)
        z = cs.alpha[N] * y + cs.sigma[N] * rng.standard_normal(y.shape)
        for t in range(N, 0, -1):
            batch, z = reverse_step(model, batch, z, t, rng, on_step)
        y = z
    return y


def infill_properties(model, graphs, y_init, cfg: InfillConfig, rng, chunk: int = 64,
                      jobs: int = 1, on_step=None, standardized=False):
    """Property infilling by repeated partial noising and denoising.

    ``y_init`` holds standardized starting values (0 for mean-imputed
    channels). Each outer iteration re-noises the clean input graph to level
    N; only the property vector carries over. Returns de-standardized values
    unless ``standardized`` is set.
    """
    cfg.check(model.T)
    for g in graphs:
        g.validate(model.cfg.max_nodes)
    y_init = np.asarray(y_init, dtype=np.float64).reshape(len(graphs), model.cfg.d)
    if cfg.y_init == "mean-impute":
        y_init = np.zeros_like(y_init)
    starts = list(range(0, len(graphs), chunk))
    seeds = _chunk_seeds(rng, len(starts))
    if on_step is not None:
        jobs = 1
    args = [(model, graphs[i:i + chunk], y_init[i:i + chunk], cfg, s) for i, s in zip(starts, seeds)]
    if on_step is not None:
        parts = [_infill_chunk(*a, on_step=on_step) for a in args]
    else:
        parts = _run_chunks(_infill_chunk, jobs, args)
    y = np.concatenate(parts, axis=0) if parts else np.zeros((0, model.cfg.d))
    y = y if standardized else model.standardizer.destandardize(y)
    return _uncovered_nan(model, y)
