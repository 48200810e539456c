"""Report figures, written with the Agg backend and no timestamp metadata."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def precision_figure(curves: dict[float, np.ndarray], path, title: str = "") -> None:
    """Precision@j against j, one line per friction threshold."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for mu, curve in sorted(curves.items()):
        ax.plot(np.arange(1, len(curve) + 1), curve, label=f"mu={mu:.1f}")
    ax.set_xlabel("j (rank)")
    ax.set_ylabel("Precision@j")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def ablation_figure(summary: dict[str, dict], path) -> None:
    """Grouped bars of AP per friction threshold for each selection mode."""
    modes = list(summary)
    mus = list(summary[modes[0]]["ap_mu"])
    x = np.arange(len(mus) + 1)
    width = 0.8 / max(len(modes), 1)
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for i, m in enumerate(modes):
        vals = [summary[m]["ap_mu"][k] for k in mus] + [summary[m]["ap"]]
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, vals, width, label=m)
    ax.set_xticks(x, [f"AP {k}" for k in mus] + ["AP"], fontsize=8)
    ax.set_ylabel("average precision")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def training_figure(history: list[dict], path) -> None:
    """Loss and selection accuracies per epoch."""
    ep = [h["epoch"] for h in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    a.plot(ep, [h["loss"] for h in history], label="total")
    a.plot(ep, [h["gps"] for h in history], label="selection")
    a.set_xlabel("epoch")
    a.set_ylabel("loss")
    a.legend(fontsize=8)
    b.plot(ep, [h["ops_acc"] for h in history], label="object mask")
    b.plot(ep, [h["vps_acc1"] for h in history], label="value level ±1")
    b.set_xlabel("epoch")
    b.set_ylabel("accuracy")
    b.set_ylim(0, 1.02)
    b.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
