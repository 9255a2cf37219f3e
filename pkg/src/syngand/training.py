"""Training loop for the joint graph/property denoiser."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Model
from .continuous import ContinuousSchedule, Standardizer
from .denoiser import DenoiserConfig, GraphBatch, backward, forward, init_params
from .discrete import DiscreteSchedule, cumulative_transition, sample_categorical
from .features import batch_aux_features
from .loss import DivergenceError, composite_loss
from .datapipe import edge_marginals, node_count_hist, node_marginals
from .molgraph import relaxed_validity
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    lambda_E: float = 5.0
    lambda_y: float = 1.0
    seed: int = 0
    val_fraction: float = 0.1
    val_samples: int = 64
    validate_every: int = 1     # epochs between sampled-validity checks

    def __post_init__(self):
        for name in ("epochs", "batch_size", "validate_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.val_fraction <= 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5]")
        if self.lr < 0 or self.val_samples < 0:
            raise ValueError("lr and val_samples must be non-negative")


@dataclass
class TrainData:
    """Training records: graphs plus standardized, zero-imputed properties."""

    graphs: list
    y: np.ndarray          # (N, d) standardized, 0 where unobserved
    mask: np.ndarray       # (N, d) bool
    standardizer: Standardizer

    def __len__(self):
        return len(self.graphs)

    @classmethod
    def from_raw(cls, graphs, raw, mask, names, standardizer=None):
        raw = np.asarray(raw, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        std = standardizer or Standardizer.fit(names, np.where(mask, raw, 0.0), mask)
        y = np.where(mask, std.standardize(np.where(mask, raw, std.mean)), 0.0)
        return cls(list(graphs), y, mask, std)

    def node_marginals(self):
        return node_marginals(self.graphs)

    def edge_marginals(self):
        return edge_marginals(self.graphs)

    def node_hist(self):
        return node_count_hist(self.graphs)


@dataclass
class TrainLog:
    lambda_E: float
    lambda_y: float
    vertex: list = field(default_factory=list)
    edge: list = field(default_factory=list)
    prop: list = field(default_factory=list)
    validity: list = field(default_factory=list)
    train_total: list = field(default_factory=list)

    @property
    def total(self):
        return [v + self.lambda_E * e + self.lambda_y * p
                for v, e, p in zip(self.vertex, self.edge, self.prop)]

    def rows(self):
        for i, (v, e, p, val) in enumerate(zip(self.vertex, self.edge, self.prop, self.validity)):
            yield {"epoch": i + 1, "vertex_loss": v, "edge_loss": e, "y_loss": p, "validity": val}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "vertex_loss", "edge_loss", "y_loss", "validity"],
                               lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (v if k == "epoch" else "" if np.isnan(v) else repr(float(v)))
                            for k, v in row.items()})


def build_model(data: TrainData, dcfg: DenoiserConfig, rng, discrete_s: float = 0.008) -> Model:
    return Model(
        cfg=dcfg,
        params=init_params(dcfg, rng),
        discrete=DiscreteSchedule.cosine(dcfg.T, data.node_marginals(), data.edge_marginals(), discrete_s),
        continuous=ContinuousSchedule.cosine(dcfg.T),
        standardizer=data.standardizer,
        node_hist=data.node_hist(),
        sample_mask=data.mask.any(axis=0),
        discrete_s=discrete_s,
    )


def noise_batch(model: Model, clean: GraphBatch, y, t, rng):
    """Forward-noise a padded batch with per-example timesteps ``t`` (B,)."""
    ds, cs = model.discrete, model.continuous
    B, n = clean.X.shape
    QX = np.stack([cumulative_transition(int(k), ds, "node") for k in t])
    QE = np.stack([cumulative_transition(int(k), ds, "edge") for k in t])
    bidx = np.arange(B)[:, None]
    X = np.where(clean.nm, sample_categorical(QX[bidx, clean.X], rng), 0)
    iu = np.triu_indices(n, 1)
    upper = sample_categorical(QE[bidx, clean.E[:, iu[0], iu[1]]], rng)
    E = np.zeros_like(clean.E)
    E[:, iu[0], iu[1]] = upper
    E[:, iu[1], iu[0]] = upper
    E = E * (clean.nm[:, :, None] & clean.nm[:, None, :])
    eps = rng.standard_normal(y.shape)
    z = cs.alpha[t][:, None] * y + cs.sigma[t][:, None] * eps
    return GraphBatch(X, E, clean.nm), z, eps


def batch_loss(model: Model, data: TrainData, idx, rng, tcfg: TrainConfig, with_grad=True):
    clean = GraphBatch.collate([data.graphs[i] for i in idx])
    y, mask = data.y[idx], data.mask[idx]
    t = rng.integers(1, model.T + 1, size=len(idx))
    noisy, z, eps = noise_batch(model, clean, y, t, rng)
    aux = batch_aux_features(noisy.E, noisy.nm, z, mask, t, model.T, model.cfg.max_nodes)
    out, cache = forward(model.params, model.cfg, noisy, aux)
    terms = composite_loss(out, clean, eps, mask, tcfg.lambda_E, tcfg.lambda_y, with_grad=with_grad)
    grads = None
    if with_grad:
        s = 1.0 / len(idx)
        grads = backward(model.params, model.cfg, cache, terms.dlx * s, terms.dle * s, terms.deps * s)
    return terms, grads


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps, clip_norm):
        self.lr, self.b1, self.b2, self.eps, self.clip = lr, beta1, beta2, eps, clip_norm
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params, grads):
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = min(1.0, self.clip / (norm + 1e-12)) if self.clip > 0 else 1.0
        self.step_count += 1
        c1 = 1.0 - self.b1 ** self.step_count
        c2 = 1.0 - self.b2 ** self.step_count
        for k, g in grads.items():
            g = g * scale
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm


class TrainingDiverged(DivergenceError):
    def __init__(self, msg, model, log):
        super().__init__(msg)
        self.model = model
        self.log = log


def evaluate(model: Model, data: TrainData, idx, tcfg: TrainConfig, seed_label=("val",)):
    """Mean loss components over ``idx`` with noise fixed by ``seed_label``."""
    rng = derive_rng(tcfg.seed, *seed_label)
    sums = np.zeros(3)
    for s in range(0, len(idx), tcfg.batch_size):
        terms, _ = batch_loss(model, data, idx[s:s + tcfg.batch_size], rng, tcfg, with_grad=False)
        sums += [terms.vertex.sum(), terms.edge.sum(), terms.prop.sum()]
    return sums / max(len(idx), 1)


def sample_validity(model: Model, count: int, rng) -> float:
    from .sampling import generate

    if count <= 0:
        return float("nan")
    samples = generate(model, count, rng)
    return float(np.mean([relaxed_validity(g) for g, _ in samples]))


def fit(data: TrainData, tcfg: TrainConfig, dcfg: DenoiserConfig, on_epoch=None):
    """Train from scratch; returns (Model, TrainLog).

    Logged losses are computed on the held-out validation split with
    per-run fixed noise, so epochs are directly comparable. Sampled validity
    is measured every ``validate_every`` epochs and on the last one; other
    epochs log NaN.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    model = build_model(data, dcfg, derive_rng(tcfg.seed, "init"))
    model.seed_history.append({"stage": "train", "seed": int(tcfg.seed)})
    order_rng = derive_rng(tcfg.seed, "split")
    perm = order_rng.permutation(len(data))
    n_val = max(1, int(round(tcfg.val_fraction * len(data)))) if len(data) > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx = val_idx
    opt = Adam(model.params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps, tcfg.clip_norm)
    tlog = TrainLog(tcfg.lambda_E, tcfg.lambda_y)
    step_rng = derive_rng(tcfg.seed, "steps")
    for epoch in range(1, tcfg.epochs + 1):
        good = {k: v.copy() for k, v in model.params.items()}
        shuffled = step_rng.permutation(train_idx)
        running = 0.0
        try:
            for s in range(0, len(shuffled), tcfg.batch_size):
                terms, grads = batch_loss(model, data, shuffled[s:s + tcfg.batch_size], step_rng, tcfg)
                running += float(terms.total.sum())
                opt.step(model.params, grads)
            vx, ve, vy = evaluate(model, data, val_idx if len(val_idx) else train_idx, tcfg)
            if not np.all(np.isfinite([vx, ve, vy])):
                raise DivergenceError("non-finite validation loss")
        except (DivergenceError, FloatingPointError) as exc:
            model.params = good
            raise TrainingDiverged(f"diverged in epoch {epoch}: {exc}", model, tlog) from exc
        check = epoch % tcfg.validate_every == 0 or epoch == tcfg.epochs
        validity = (sample_validity(model, tcfg.val_samples, derive_rng(tcfg.seed, "validity", epoch))
                    if check else float("nan"))
        tlog.vertex.append(float(vx))
        tlog.edge.append(float(ve))
        tlog.prop.append(float(vy))
        tlog.validity.append(validity)
        tlog.train_total.append(running / len(shuffled))
        log.info("epoch %d  vertex %.4f  edge %.4f  y %.4f  validity %.3f",
                 epoch, vx, ve, vy, validity)
        if on_epoch is not None:
            on_epoch(epoch, tlog)
    return model, tlog
