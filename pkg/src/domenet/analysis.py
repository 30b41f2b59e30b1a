"""Embedding-space compactness diagnostics.

Intra-class vs inter-class Euclidean distance distributions, their
Jensen-Shannon divergence over a shared-support histogram (bits), and
per-point class likelihoods from a Gaussian KDE (Scott bandwidth per
dimension), normalized to (0, 1] per class for plot transparency.
"""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DistanceStats",
    "distance_distributions",
    "jsd",
    "kde_likelihood",
    "compactness_report",
    "write_embedding_csv",
]

DEFAULT_BINS = 50
DEFAULT_PAIR_CAP = 200_000


@dataclass
class DistanceStats:
    intra: np.ndarray
    inter: np.ndarray
    bin_edges: np.ndarray
    jsd_bits: float


def _pairwise_split(x, labels, block=512):
    """All pairwise Euclidean distances split into same-class / cross-class."""
    n = len(x)
    intra, inter = [], []
    for start in range(0, n, block):
        b = x[start : start + block]
        d = np.sqrt(np.sum((b[:, None, :] - x[None, :, :]) ** 2, axis=-1))
        same = labels[start : start + block, None] == labels[None, :]
        upper = np.arange(n)[None, :] > (start + np.arange(len(b)))[:, None]
        intra.append(d[same & upper])
        inter.append(d[~same & upper])
    return np.concatenate(intra), np.concatenate(inter)


def _subsample(values, cap, rng):
    if len(values) <= cap:
        return values
    return values[rng.choice(len(values), size=cap, replace=False)]


def distance_distributions(embeddings, labels, sample_cap=DEFAULT_PAIR_CAP,
                           bins=DEFAULT_BINS, seed=0):
    """DistanceStats over all (or a seeded subsample of) embedding pairs."""
    x = np.asarray(embeddings, dtype=np.float64)
    x = x.reshape(len(x), -1)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("distance distributions need at least 2 classes")
    intra, inter = _pairwise_split(x, labels)
    rng = np.random.default_rng(seed)
    intra = _subsample(intra, sample_cap, rng)
    inter = _subsample(inter, sample_cap, rng)
    if len(intra) and len(inter):
        lo = min(intra.min(), inter.min())
        hi = max(intra.max(), inter.max())
        jsd_bits = jsd(intra, inter, bins=bins)
    else:
        combined = inter if len(inter) else intra
        lo, hi = (combined.min(), combined.max()) if len(combined) else (0.0, 1.0)
        jsd_bits = 0.0
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.array([lo, lo])
    return DistanceStats(intra=intra, inter=inter, bin_edges=edges, jsd_bits=jsd_bits)


def jsd(p_samples, q_samples, bins=DEFAULT_BINS):
    """Jensen-Shannon divergence in bits between two sample sets.

    Both sets are histogrammed over their joint min..max range with
    equal-width bins; empty bins contribute nothing (0 log 0 = 0).
    Returns 0 for a zero-width support; 1 bit for disjoint supports.
    """
    p = np.asarray(p_samples, dtype=np.float64).ravel()
    q = np.asarray(q_samples, dtype=np.float64).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("jsd needs non-empty sample sets")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if lo == hi:
        return 0.0
    hp, _ = np.histogram(p, bins=bins, range=(lo, hi))
    hq, _ = np.histogram(q, bins=bins, range=(lo, hi))
    pm = hp / p.size
    qm = hq / q.size
    mid = 0.5 * (pm + qm)

    def kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / mid[mask])))

    return 0.5 * kl(pm) + 0.5 * kl(qm)


def kde_likelihood(embeddings, labels):
    """Per-point class likelihood under a per-class Gaussian KDE, max-normalized.

    Bandwidths follow Scott's rule per dimension, h = s * m^(-1/(d+4)).
    Zero-variance dimensions drop out (their kernel factor is constant at
    the evaluation points); singleton classes get likelihood 1.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    x = x.reshape(len(x), -1)
    labels = np.asarray(labels)
    out = np.empty(len(x))
    for c in np.unique(labels):
        mask = labels == c
        pts = x[mask]
        m, d = pts.shape
        if m == 1:
            out[mask] = 1.0
            continue
        s = pts.std(axis=0, ddof=1)
        h = s * m ** (-1.0 / (d + 4))
        keep = h > 0
        if not keep.any():
            out[mask] = 1.0
            continue
        z = (pts[:, None, keep] - pts[None, :, keep]) / h[keep]
        kernel = np.exp(-0.5 * np.sum(z * z, axis=-1))
        density = kernel.mean(axis=1) / np.prod(np.sqrt(2.0 * np.pi) * h[keep])
        out[mask] = density / density.max()
    return out


def compactness_report(embeddings, labels, sample_cap=DEFAULT_PAIR_CAP,
                       bins=DEFAULT_BINS, seed=0):
    """Summary dict: bounding-box diagonal, class radii, distance means, jsd.

    Degenerate cases are flagged rather than raised: with no same-class
    pair the intra mean is reported as 0.0 with intra_defined false; a
    single class reports inter mean 0.0 with inter_defined false.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    x = x.reshape(len(x), -1)
    labels = np.asarray(labels)
    diagonal = float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))
    radii = {}
    for c in np.unique(labels):
        pts = x[labels == c]
        radii[int(c)] = float(np.mean(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    if len(np.unique(labels)) >= 2:
        stats = distance_distributions(x, labels, sample_cap=sample_cap, bins=bins, seed=seed)
        intra, inter, jsd_bits = stats.intra, stats.inter, stats.jsd_bits
    else:
        intra, _ = _pairwise_split(x, labels)
        inter, jsd_bits = np.array([]), 0.0
    return {
        "bbox_diagonal": diagonal,
        "per_class_mean_radius": radii,
        "intra_mean": float(intra.mean()) if len(intra) else 0.0,
        "inter_mean": float(inter.mean()) if len(inter) else 0.0,
        "intra_defined": bool(len(intra)),
        "inter_defined": bool(len(inter)),
        "jsd_bits": float(jsd_bits),
    }


def write_embedding_csv(embeddings, labels, predictions, likelihoods, path):
    """Dump one row per example: id, class, pred, e1..ed, kde_likelihood."""
    x = np.asarray(embeddings, dtype=np.float64)
    x = x.reshape(len(x), -1)
    header = ["id", "class", "pred"] + [f"e{i + 1}" for i in range(x.shape[1])] + ["kde_likelihood"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for i in range(len(x)):
            writer.writerow(
                [i, int(labels[i]), int(predictions[i])]
                + [repr(float(v)) for v in x[i]]
                + [repr(float(likelihoods[i]))]
            )
