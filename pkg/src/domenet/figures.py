"""Matplotlib figure rendering for experiment reports (SVG output).

The scatter encodes each point's normalized class likelihood as its
opacity, so the sparse fringe of a class cloud fades out. SVG output is
made reproducible (fixed hash salt, no date metadata).
"""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "domenet"

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["embedding_scatter", "distance_histograms", "activation_curve"]

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def embedding_scatter(embeddings, labels, likelihoods, path, title="embedding space"):
    """2-D scatter of the first two embedding coordinates, one color per class."""
    x = np.asarray(embeddings, dtype=np.float64).reshape(len(embeddings), -1)
    labels = np.asarray(labels)
    alphas = np.clip(np.asarray(likelihoods, dtype=np.float64), 0.05, 1.0)
    fig, ax = plt.subplots(figsize=(5, 5))
    cmap = plt.get_cmap("tab10")
    for c in np.unique(labels):
        mask = labels == c
        rgba = np.tile(cmap(int(c) % 10), (int(mask.sum()), 1))
        rgba[:, 3] = alphas[mask]
        ax.scatter(x[mask, 0], x[mask, 1] if x.shape[1] > 1 else np.zeros(mask.sum()),
                   s=6, color=rgba, label=f"class {int(c)}", linewidths=0)
    ax.set_xlabel("e1")
    ax.set_ylabel("e2")
    ax.set_title(title)
    ax.legend(markerscale=2, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def distance_histograms(intra, inter, jsd_bits, path, bins=50, title=None):
    """Overlaid intra/inter distance histograms with the divergence in the title."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    lo = min(np.min(intra), np.min(inter)) if len(intra) and len(inter) else 0.0
    hi = max(np.max(intra), np.max(inter)) if len(intra) and len(inter) else 1.0
    edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
    if len(intra):
        ax.hist(intra, bins=edges, density=True, alpha=0.55, label="intra-class")
    if len(inter):
        ax.hist(inter, bins=edges, density=True, alpha=0.55, label="inter-class")
    ax.set_xlabel("embedding distance")
    ax.set_ylabel("density")
    ax.set_title(title or f"distance distributions (jsd = {jsd_bits:.4f} bits)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def activation_curve(fn, path, x_range=(-6.0, 6.0), title="learned activation"):
    """Plot a scalar activation shape over a fixed range."""
    xs = np.linspace(*x_range, 601)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, fn(xs), lw=1.5)
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("activation")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
