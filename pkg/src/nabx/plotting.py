"""Optional PNG figures written next to the CSV outputs (``--figures``)."""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _pyplot().close(fig)


def plot_scan(D, normalized, path, anchor=None):
    """Normalised smallest singular value ``sigma_min^2 sqrt(D)`` against ``D``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(D, normalized, "o-", label="truth projection")
    if anchor is not None:
        ax.plot(anchor[0], anchor[1], "s--", label="zero field")
    ax.set_xlabel("D")
    ax.set_ylabel(r"$\sigma_{\min}^2\sqrt{D}$")
    ax.set_ylim(bottom=0)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_traces(samples, path, max_coords=6):
    plt = _pyplot()
    S = np.asarray(samples)
    k = min(S.shape[1], max_coords)
    fig, axes = plt.subplots(k, 1, figsize=(6, 1.4 * k + 0.5), sharex=True, squeeze=False)
    for j in range(k):
        axes[j, 0].plot(S[:, j], lw=0.6)
        axes[j, 0].set_ylabel(f"$\\theta_{{{j}}}$")
    axes[-1, 0].set_xlabel("retained sample")
    fig.tight_layout()
    _save(fig, path)


def plot_ess(ess_by_chain: dict, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, ess in ess_by_chain.items():
        ax.plot(np.arange(len(ess)), ess, "o-", label=name)
    ax.set_xlabel("coordinate")
    ax.set_ylabel("ESS")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
