"""Composite denoising loss: node CE + weighted edge CE + masked noise MSE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserOutput, GraphBatch, log_softmax


@dataclass
class LossTerms:
    """Per-example components; ``total = vertex + lambda_E edge + lambda_y prop``."""

    vertex: np.ndarray
    edge: np.ndarray
    prop: np.ndarray
    total: np.ndarray
    dlx: np.ndarray = None
    dle: np.ndarray = None
    deps: np.ndarray = None

    def sums(self):
        return float(self.total.sum()), float(self.vertex.sum()), float(self.edge.sum()), \
            float(self.prop.sum())


class DivergenceError(FloatingPointError):
    """Raised when the loss stops being finite."""


def composite_loss(out: DenoiserOutput, clean: GraphBatch, eps_true, mask,
                   lambda_E: float = 5.0, lambda_y: float = 1.0, with_grad=True) -> LossTerms:
    """Sum-reduction-ready per-example loss and gradients w.r.t. the head logits.

    Node CE is averaged over real nodes, edge CE over real upper-triangle
    pairs, the property term is ``sum_c mask_c (eps_hat_c - eps_c)^2 / d``.
    """
    nmf = clean.nm.astype(np.float64)
    B, n = clean.X.shape
    Kx = out.pX.shape[-1]
    Ke = out.pE.shape[-1]
    sizes = nmf.sum(-1)
    lx = out.logits_X if out.logits_X is not None else np.log(out.pX)
    le = out.logits_E if out.logits_E is not None else np.log(out.pE)

    ohX = np.eye(Kx)[clean.X]
    nll_x = -(log_softmax(lx) * ohX).sum(-1)
    w_x = nmf / sizes[:, None]
    vertex = (nll_x * w_x).sum(-1)

    upper = np.triu(np.ones((n, n)), 1)
    pair_mask = nmf[:, :, None] * nmf[:, None, :] * upper
    n_pairs = pair_mask.sum((1, 2))
    w_e = pair_mask / np.maximum(n_pairs, 1)[:, None, None]
    ohE = np.eye(Ke)[clean.E]
    nll_e = -(log_softmax(le) * ohE).sum(-1)
    edge = (nll_e * w_e).sum((1, 2))

    eps_true = np.asarray(eps_true, dtype=np.float64).reshape(B, -1)
    m = np.asarray(mask, dtype=np.float64).reshape(B, -1)
    d = eps_true.shape[-1]
    diff = (out.eps - eps_true) * m
    prop = (diff ** 2).sum(-1) / d

    total = vertex + lambda_E * edge + lambda_y * prop
    if not np.all(np.isfinite(total)):
        raise DivergenceError("non-finite loss")
    terms = LossTerms(vertex, edge, prop, total)
    if with_grad:
        terms.dlx = (out.pX - ohX) * w_x[..., None]
        terms.dle = lambda_E * (out.pE - ohE) * w_e[..., None]
        terms.deps = lambda_y * 2.0 * diff / d
    return terms
