"""Figure rendering for the CLI report paths.

Figures are written next to the delimited outputs; pass --no-figures to any
command to skip them.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def field_map(path, values, mask, title="field"):
    shown = np.where(mask, values, np.nan)
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(shown, origin="upper", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def partition_map(path, labels, title="partition"):
    shown = np.where(labels > 0, labels, np.nan).astype(float)
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(shown, origin="upper", interpolation="nearest", cmap="tab10")
    fig.colorbar(im, ax=ax, shrink=0.85, ticks=np.arange(1, labels.max() + 1))
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def score_trace(path, norms, stop_threshold=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(range(len(norms)), norms, marker="o", ms=3)
    if stop_threshold:
        ax.axhline(stop_threshold, color="crimson", ls="--", lw=1,
                   label="stop threshold")
        ax.legend()
    ax.set_xlabel("accepted step")
    ax.set_ylabel("max |score|")
    ax.set_title("score norm trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def precond_bars(path, medians):
    kinds = list(medians)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(kinds, [medians[k] for k in kinds], color="steelblue")
    ax.set_ylabel("median iterations to convergence")
    ax.set_title("preconditioner comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def score_scatter(path, exact, estimated, labels=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(exact, estimated, s=18)
    lim = max(1e-12, np.max(np.abs(np.concatenate([exact, estimated]))))
    ax.plot([-lim, lim], [-lim, lim], color="grey", lw=1, ls=":")
    ax.set_xlabel("exact score")
    ax.set_ylabel("stochastic score (mean)")
    ax.set_title("score check")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
