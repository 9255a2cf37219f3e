"""Structural and spectral auxiliary features for the denoiser."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .molgraph import NO_BOND, MolecularGraph

log = logging.getLogger(__name__)

N_EIGVALS = 2


@dataclass
class AuxFeatures:
    degree: np.ndarray      # (B, n)
    cycles: np.ndarray      # (B, n, 3): 3-, 4-, 5-cycles through each node
    eigvals: np.ndarray     # (B, k) smallest nonzero Laplacian eigenvalues, 0-padded
    t_frac: np.ndarray      # (B,)
    z_y: np.ndarray         # (B, d)
    y_mask: np.ndarray      # (B, d)
    size_frac: np.ndarray   # (B,)

    def node_array(self) -> np.ndarray:
        return np.concatenate([self.degree[..., None] / 4.0, self.cycles / 2.0], axis=-1)

    def global_array(self) -> np.ndarray:
        return np.concatenate([self.t_frac[:, None], self.z_y, self.y_mask.astype(np.float64),
                               self.eigvals, self.size_frac[:, None]], axis=-1)


def cycle_counts(A: np.ndarray) -> np.ndarray:
    """Per-node counts of 3-, 4- and 5-cycles from adjacency-power traces.

    ``A`` is a (B, n, n) symmetric 0/1 adjacency.
    """
    d = A.sum(-1)
    A2 = A @ A
    A3 = A2 @ A
    A4 = A3 @ A
    A5 = A4 @ A
    diag3 = np.einsum("bii->bi", A3)
    diag4 = np.einsum("bii->bi", A4)
    diag5 = np.einsum("bii->bi", A5)
    c3 = diag3 / 2.0
    Ad = np.einsum("bij,bj->bi", A, d)
    c4 = (diag4 - d * d - (Ad - d)) / 2.0
    Atri = np.einsum("bij,bj->bi", A, diag3)
    # degrees of the other two vertices of each triangle through i
    tri_deg = np.einsum("bij,bj->bi", A * A2, d)
    c5 = (diag5 - 2.0 * diag3 * d - Atri + 5.0 * diag3 - 2.0 * tri_deg) / 2.0
    return np.stack([c3, c4, c5], axis=-1)


def laplacian_eigvals(A: np.ndarray, k: int = N_EIGVALS, tol: float = 1e-6) -> np.ndarray:
    B = A.shape[0]
    out = np.zeros((B, k))
    L = np.einsum("bij->bi", A)[..., None] * np.eye(A.shape[-1]) - A
    try:
        ev = np.linalg.eigvalsh(L)
    except np.linalg.LinAlgError:
        log.warning("Laplacian eigensolver failed; spectral features set to zero")
        return out
    for b in range(B):
        nz = ev[b][ev[b] > tol][:k]
        out[b, :len(nz)] = nz
    return out


def batch_aux_features(E: np.ndarray, node_mask: np.ndarray, z_y, y_mask, t, T: int,
                       max_nodes: int) -> AuxFeatures:
    """Features for a padded batch of edge-type arrays E (B, n, n)."""
    nm = node_mask.astype(np.float64)
    A = (E != NO_BOND).astype(np.float64) * nm[:, :, None] * nm[:, None, :]
    B = A.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    return AuxFeatures(
        degree=A.sum(-1),
        cycles=cycle_counts(A),
        eigvals=laplacian_eigvals(A),
        t_frac=t / T,
        z_y=np.asarray(z_y, dtype=np.float64).reshape(B, -1),
        y_mask=np.asarray(y_mask, dtype=bool).reshape(B, -1),
        size_frac=nm.sum(-1) / max_nodes,
    )


def aux_features(g: MolecularGraph, z_y, t: int, T: int, max_nodes: int = 60) -> AuxFeatures:
    """Single-graph convenience wrapper; ``z_y`` is a PropertyVector."""
    return batch_aux_features(g.edges[None], np.ones((1, g.n), bool), z_y.values[None],
                              z_y.mask[None], t, T, max_nodes)
