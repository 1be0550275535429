"""Matplotlib figures written next to the delimited tables.

SVG output is made byte-reproducible by fixing the id hash salt and
dropping the date metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analysis import TAGS, AnalysisError, Projection, EmbeddingRecord, coordinate_table  # noqa: E402

STYLE = {
    "svg.hashsalt": "theory-of-machine",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

# fixed palette so colours do not depend on matplotlib defaults
PALETTE = (
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e",
    "#e6ab02", "#a6761d", "#666666", "#1f78b4", "#b2df8a",
)


def _save(fig, path: Path) -> None:
    fmt = path.suffix.lstrip(".") or "svg"
    metadata = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, format=fmt, metadata=metadata)
    plt.close(fig)


def emit_scatter(projections: list[Projection], records: list[EmbeddingRecord], tag: str, out_path) -> tuple[Path, Path]:
    """Scatter of the first two principal coordinates coloured by ``tag``.

    Writes ``out_path`` (SVG) and a CSV with all three coordinates beside it.
    Returns both paths.
    """
    if tag not in TAGS:
        raise AnalysisError(f"unknown tag {tag!r}; valid tags: {', '.join(TAGS)}")
    out_path = Path(out_path)
    table_path = out_path.with_suffix(".csv")
    table = coordinate_table(projections, records)

    groups: dict[str, list[Projection]] = {}
    for p, r in zip(projections, records):
        groups.setdefault(r.tag(tag), []).append(p)

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 4.0))
        for i, name in enumerate(sorted(groups)):
            pts = groups[name]
            ax.scatter(
                [p.coords[0] for p in pts],
                [p.coords[1] for p in pts],
                s=14,
                color=PALETTE[i % len(PALETTE)],
                label=name,
                edgecolors="none",
            )
        if projections:
            ev = projections[0].explained_variance
            ax.set_xlabel(f"PC1 ({100 * ev[0]:.1f}%)")
            ax.set_ylabel(f"PC2 ({100 * ev[1]:.1f}%)")
            ax.legend(title=tag, frameon=False, loc="best")
        else:
            ax.set_xlabel("PC1")
            ax.set_ylabel("PC2")
        ax.set_title(f"machine embeddings by {tag}")
        fig.tight_layout()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        _save(fig, out_path)
    table_path.write_text(table)
    return out_path, table_path


def emit_loss_curve(epoch_mse: list[float], out_path) -> Path:
    out_path = Path(out_path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        if epoch_mse:
            ax.semilogy(range(1, len(epoch_mse) + 1), epoch_mse, marker="o", ms=3, color=PALETTE[0])
        ax.set_xlabel("epoch")
        ax.set_ylabel("train MSE")
        fig.tight_layout()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        _save(fig, out_path)
    return out_path
