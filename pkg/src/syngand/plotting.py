"""Matplotlib figures for training curves, property histograms and MLE reports.

Figures are written as PNG with the Agg backend and no software/date
metadata, so reruns produce identical files.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalkit import METRICS, PAIRS, shared_histograms  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def training_curves(tlog, path):
    epochs = np.arange(1, len(tlog.vertex) + 1)
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(10, 4))
    ax.plot(epochs, tlog.vertex, label="vertex")
    ax.plot(epochs, tlog.edge, label="edge")
    ax.plot(epochs, tlog.prop, label="property")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation loss")
    ax.set_yscale("log")
    ax.legend()
    val = np.asarray(tlog.validity, dtype=float)
    ok = np.isfinite(val)
    bx.plot(epochs[ok], val[ok], marker="o")
    bx.set_ylim(0, 1)
    bx.set_xlabel("epoch")
    bx.set_ylabel("relaxed validity")
    _save(fig, path)


def property_histogram(real, synth, path, name="property", bins=50,
                       labels=("real", "synthetic")):
    p, q, edges = shared_histograms(real, synth, bins)
    fig, ax = plt.subplots(figsize=(6, 4))
    width = np.diff(edges)
    ax.bar(edges[:-1], p, width=width, align="edge", alpha=0.5, label=labels[0])
    ax.bar(edges[:-1], q, width=width, align="edge", alpha=0.5, label=labels[1])
    ax.set_yscale("log")
    ax.set_xlabel(name)
    ax.set_ylabel("count")
    ax.legend()
    _save(fig, path)


def mle_chart(reports, path):
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 4))
    x = np.arange(len(reports))
    w = 0.8 / len(PAIRS)
    for k, (ax, metric) in enumerate(zip(axes, METRICS)):
        for j, pair in enumerate(PAIRS):
            means = [r.mean(pair)[k] for r in reports]
            stds = [r.std(pair)[k] for r in reports]
            ax.bar(x + (j - 1) * w, means, w, yerr=stds, label=pair, capsize=2)
        ax.set_xticks(x)
        ax.set_xticklabels([r.dataset for r in reports])
        ax.set_title(metric)
    axes[0].legend()
    _save(fig, path)
