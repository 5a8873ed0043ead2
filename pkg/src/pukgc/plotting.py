"""Figures written next to the delimited ablation and sweep outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps the PNG bytes free of version and date stamps
_META = {"Software": None}


def ablation_figure(rows: list[dict], path: str | Path) -> Path:
    """Median MRR per mode as bars, with each seed's MRR as a dot."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    names = [r["mode"].upper() for r in rows]
    medians = [r["mrr"] if r["mrr"] is not None else 0.0 for r in rows]
    ax.bar(names, medians, color="#9db4c0", edgecolor="#253237")
    for i, r in enumerate(rows):
        seeds = r.get("per_seed_mrr") or []
        ax.scatter([i] * len(seeds), seeds, color="#253237", s=12, zorder=3)
    ax.set_ylabel("test MRR (filtered)")
    ax.set_title("Ablation: median over seeds")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return Path(path)


def prior_figure(priors: list[float], mrr: list[float], path: str | Path, mode: str = "pu-r") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.semilogx(priors, mrr, marker="o", color="#253237")
    ax.invert_xaxis()
    ax.set_xlabel("class prior pi_p")
    ax.set_ylabel("test MRR (filtered)")
    ax.set_title(f"{mode.upper()}: MRR against the class prior")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return Path(path)
