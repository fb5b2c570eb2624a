"""SVG training curves (loss and orthogonality trace)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_curves(report, directory) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the SVG bytes reproducible
    meta = {"Date": None, "Creator": None}
    epochs = np.arange(len(report.losses))
    paths = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, report.losses, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    fig.tight_layout()
    paths.append(directory / "loss.svg")
    fig.savefig(paths[-1], format="svg", metadata=meta)
    plt.close(fig)

    trace = np.asarray(report.cos_trace, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for layer in range(trace.shape[1]):
        ax.plot(epochs, trace[:, layer], label="language" if layer == 0 else f"vision {layer}")
    ax.plot(epochs, report.mean_cos_sim, "k--", label="mean |cos|")
    ax.axhline(0.0, color="grey", lw=0.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("slot-input cosine")
    ax.legend(fontsize=7)
    fig.tight_layout()
    paths.append(directory / "orthogonality.svg")
    fig.savefig(paths[-1], format="svg", metadata=meta)
    plt.close(fig)
    return paths
