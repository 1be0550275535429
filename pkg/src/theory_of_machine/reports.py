"""Report writers shared by the CLI subcommands and ``repro``.

Every report is a delimited table or JSON document plus, where it helps,
a figure rendered beside it.
"""

from __future__ import annotations

from pathlib import Path

from . import analysis, plotting
from .model import ModelParams, save_model
from .serial import dump_json
from .trainer import Metrics, SplitMetrics, TrainConfig, write_metrics


def write_training_outputs(model: ModelParams, metrics: Metrics, config: TrainConfig, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkpoint": out / "checkpoint.json",
        "metrics": out / "metrics.json",
        "epochs": out / "epochs.csv",
        "curve": out / "loss_curve.svg",
    }
    save_model(model, paths["checkpoint"])
    write_metrics(metrics, paths["metrics"], config)
    rows = ["epoch,train_mse"] + [f"{i + 1},{v!r}" for i, v in enumerate(metrics.epoch_train_mse)]
    paths["epochs"].write_text("\n".join(rows) + "\n")
    plotting.emit_loss_curve(metrics.epoch_train_mse, paths["curve"])
    return paths


def write_eval(results: dict[str, SplitMetrics], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json({k: v.to_json() for k, v in results.items()}))
    rows = ["split,machine_id,windows,mse"]
    for name, res in results.items():
        for mid in sorted(res.per_machine):
            rows.append(f"{name},{mid},{res.window_counts[mid]},{res.per_machine[mid]!r}")
        rows.append(f"{name},all,{sum(res.window_counts.values())},{res.aggregate!r}")
    path.with_suffix(".csv").write_text("\n".join(rows) + "\n")
    return path


def write_analysis_outputs(records, out_dir) -> dict[str, object]:
    """Embeddings, PCA projections, one scatter per tag and a silhouette table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_records(records, out / "embeddings.json")
    projections, basis, explained = analysis.pca3(records)
    analysis.write_projections(projections, basis, explained, records, out / "projections.json")
    for tag in analysis.TAGS:
        plotting.emit_scatter(projections, records, tag, out / f"scatter_{tag}.svg")
    sil = analysis.silhouette_table(records)
    (out / "silhouettes.csv").write_text(
        "labels,silhouette\n" + "".join(f"{k},{v!r}\n" for k, v in sil.items())
    )
    return {"silhouettes": sil, "explained_variance": explained, "basis": basis}
