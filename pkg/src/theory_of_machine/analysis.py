"""Embedding extraction, PCA to three components and silhouette scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import Dataset, spec_tags
from .model import ModelParams, encode
from .rng import SplitMix64, mix_seed
from .serial import dump_json, parse_json_file

TAGS = ("class", "mass-bucket", "year-bucket")
PCA_ITERATIONS = 200
PCA_TOL = 1e-12


class AnalysisError(ValueError):
    pass


@dataclass(eq=False)
class EmbeddingRecord:
    machine_id: int
    machine_class: str
    mass_bucket: str
    year_bucket: str
    s: np.ndarray
    start: int = 0

    def tag(self, name: str) -> str:
        if name == "class":
            return self.machine_class
        if name == "mass-bucket":
            return self.mass_bucket
        if name == "year-bucket":
            return self.year_bucket
        raise AnalysisError(f"unknown tag {name!r}; valid tags: {', '.join(TAGS)}")


@dataclass(eq=False)
class Projection:
    machine_id: int
    coords: np.ndarray
    explained_variance: np.ndarray


def embed_fleet(model: ModelParams, dataset: Dataset, samples_per_machine: int, seed: int, seq_len: int = 100, ids=None) -> list[EmbeddingRecord]:
    """Encode ``samples_per_machine`` random windows from every machine.

    Window starts are uniform over ``[0, T - seq_len]`` and drawn from a
    stream seeded by ``mix_seed(seed, machine_id)``.
    """
    if samples_per_machine < 1:
        raise AnalysisError(f"samples_per_machine must be >= 1, got {samples_per_machine}")
    ids = sorted(dataset.trajectories) if ids is None else sorted(ids)
    records = []
    for mid in ids:
        traj = dataset.trajectories[mid]
        room = len(traj) - seq_len + 1
        if room < 1:
            raise AnalysisError(f"machine {mid} has {len(traj)} ticks, too few for a window of {seq_len}")
        rng = SplitMix64(mix_seed(seed, mid))
        starts = [rng.randbelow(room) for _ in range(samples_per_machine)]
        stacked = traj.stacked()
        s, _ = encode(model, np.stack([stacked[i : i + seq_len] for i in starts]))
        tags = spec_tags(dataset.manifest.spec(mid))
        for i, row in zip(starts, s):
            records.append(EmbeddingRecord(mid, tags["class"], tags["mass_bucket"], tags["year_bucket"], row.copy(), i))
    return records


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthogonalize(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    # two passes keep the basis orthonormal to rounding
    for _ in range(2):
        for b in basis:
            v = v - (b @ v) * b
    return v


def _fill_basis(basis: list[np.ndarray], dim: int) -> np.ndarray:
    """A unit vector orthogonal to ``basis`` from the standard axes."""
    best = None
    for i in range(dim):
        v = _orthogonalize(np.eye(dim)[i], basis)
        if best is None or np.linalg.norm(v) > np.linalg.norm(best):
            best = v
    return _unit(best)


def top_eigenpairs(cov: np.ndarray, k: int = 3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    dim = cov.shape[0]
    rng = SplitMix64(mix_seed(seed, 0x9CA))
    work = cov.copy()
    scale = float(np.trace(cov))
    basis, values = [], []
    for _ in range(k):
        v = _unit(_orthogonalize(np.array([rng.uniform(-1.0, 1.0) for _ in range(dim)]), basis))
        for _ in range(PCA_ITERATIONS):
            w = _orthogonalize(work @ v, basis)
            norm = np.linalg.norm(w)
            if norm <= 1e-14 * scale:
                v = _fill_basis(basis, dim)
                break
            w /= norm
            done = np.linalg.norm(w - v) < PCA_TOL
            v = w
            if done:
                break
        lam = max(float(v @ cov @ v), 0.0)
        basis.append(v)
        values.append(lam)
        work = work - lam * np.outer(v, v)
    order = sorted(range(k), key=lambda i: -values[i])
    vecs = np.array([basis[i] for i in order])
    for i in range(k):
        j = int(np.argmax(np.abs(vecs[i])))
        if vecs[i, j] < 0:
            vecs[i] = -vecs[i]
    return np.array([values[i] for i in order]), vecs


def pca3(records) -> tuple[list[Projection], np.ndarray, np.ndarray]:
    """Project embeddings onto their top three principal axes.

    Accepts ``EmbeddingRecord`` objects or a plain ``(N, e)`` array.
    Returns ``(projections, basis (3, e), explained_variance (3,))``.
    """
    if isinstance(records, np.ndarray):
        X = np.asarray(records, dtype=np.float64)
        ids = list(range(X.shape[0]))
    else:
        X = np.array([r.s for r in records], dtype=np.float64)
        ids = [r.machine_id for r in records]
    if X.ndim != 2 or X.shape[0] < 4 or X.shape[1] < 3:
        raise AnalysisError(f"PCA needs at least 4 records of dimension >= 3, got shape {X.shape}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    total = float(np.trace(cov))
    if not total > 0.0:
        raise AnalysisError("degenerate covariance: all embeddings are identical")
    values, basis = top_eigenpairs(cov)
    explained = np.clip(values / total, 0.0, 1.0)
    coords = centered @ basis.T
    return [Projection(i, c, explained) for i, c in zip(ids, coords)], basis, explained


def silhouette(records, label_fn=None, labels=None) -> float:
    """Mean silhouette with Euclidean distances on the full embeddings.

    Labels with fewer than two members are dropped; a point whose
    intra- and nearest-cluster distances are both zero scores 0.
    """
    if isinstance(records, np.ndarray):
        X = np.asarray(records, dtype=np.float64)
        y = np.asarray(labels)
    else:
        X = np.array([r.s for r in records], dtype=np.float64)
        y = np.array([label_fn(r) for r in records] if labels is None else labels)
    if X.shape[0] != y.shape[0]:
        raise AnalysisError(f"{X.shape[0]} points but {y.shape[0]} labels")
    names, counts = np.unique(y, return_counts=True)
    keep = np.isin(y, names[counts >= 2])
    X, y = X[keep], y[keep]
    names = np.unique(y)
    if names.size < 2:
        raise AnalysisError("silhouette needs at least two labels with two or more members each")

    sq = np.sum(X * X, axis=1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    np.fill_diagonal(D, 0.0)
    member = y[:, None] == names[None, :]  # (N, L)
    sums = D @ member
    sizes = member.sum(axis=0)
    own = member.argmax(axis=1)
    idx = np.arange(X.shape[0])
    a = sums[idx, own] / (sizes[own] - 1)
    others = sums / sizes
    others[idx, own] = np.inf
    b = others.min(axis=1)
    denom = np.maximum(a, b)
    score = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.mean(score))


def label_getter(tag: str):
    if tag not in TAGS:
        raise AnalysisError(f"unknown tag {tag!r}; valid tags: {', '.join(TAGS)}")
    return lambda r: r.tag(tag)


# ---------------------------------------------------------------------------
# files


def write_records(records: list[EmbeddingRecord], path) -> None:
    doc = {
        "records": [
            {"machine_id": r.machine_id, "class": r.machine_class, "mass_bucket": r.mass_bucket,
             "year_bucket": r.year_bucket, "start": r.start, "s": [float(v) for v in r.s]}
            for r in records
        ]
    }
    Path(path).write_text(dump_json(doc))


def read_records(path) -> list[EmbeddingRecord]:
    doc = parse_json_file(path, AnalysisError)
    try:
        return [
            EmbeddingRecord(int(d["machine_id"]), d["class"], d["mass_bucket"], d["year_bucket"],
                            np.asarray(d["s"], dtype=np.float64), int(d.get("start", 0)))
            for d in doc["records"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise AnalysisError(f"{path}: malformed embedding records ({exc})") from exc


def write_projections(projections: list[Projection], basis: np.ndarray, explained: np.ndarray, records, path) -> None:
    doc = {
        "explained_variance": [float(v) for v in explained],
        "basis": [[float(v) for v in row] for row in basis],
        "projections": [
            {"machine_id": p.machine_id, "class": r.machine_class, "mass_bucket": r.mass_bucket,
             "year_bucket": r.year_bucket, "coords": [float(v) for v in p.coords]}
            for p, r in zip(projections, records)
        ],
    }
    Path(path).write_text(dump_json(doc))


def read_projections(path):
    """Return ``(projections, records_stub, basis, explained)`` from a file."""
    doc = parse_json_file(path, AnalysisError)
    try:
        explained = np.asarray(doc["explained_variance"], dtype=np.float64)
        basis = np.asarray(doc["basis"], dtype=np.float64)
        projs, recs = [], []
        for d in doc["projections"]:
            projs.append(Projection(int(d["machine_id"]), np.asarray(d["coords"], dtype=np.float64), explained))
            recs.append(EmbeddingRecord(int(d["machine_id"]), d["class"], d["mass_bucket"], d["year_bucket"], np.zeros(0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise AnalysisError(f"{path}: malformed projection file ({exc})") from exc
    return projs, recs, basis, explained


def coordinate_table(projections: list[Projection], records: list[EmbeddingRecord]) -> str:
    if len(projections) != len(records):
        raise AnalysisError(f"{len(projections)} projections but {len(records)} records")
    lines = ["machine_id,pc1,pc2,pc3,class,mass_bucket,year_bucket"]
    for p, r in zip(projections, records):
        if p.machine_id != r.machine_id:
            raise AnalysisError(f"projection for machine {p.machine_id} paired with record for {r.machine_id}")
        c = ",".join("%.17g" % v for v in p.coords)
        lines.append(f"{p.machine_id},{c},{r.machine_class},{r.mass_bucket},{r.year_bucket}")
    return "\n".join(lines) + "\n"


def silhouette_table(records: list[EmbeddingRecord]) -> dict[str, float]:
    """Silhouettes that summarise the metadata structure of a set of records."""
    out = {}
    by_class = [r for r in records if r.machine_class in ("SUV", "TRACK")]
    for name, recs, tag in (
        ("suv_vs_track", by_class, "class"),
        ("class", records, "class"),
        ("mass_bucket", records, "mass-bucket"),
        ("year_bucket", records, "year-bucket"),
    ):
        try:
            out[name] = silhouette(recs, label_getter(tag))
        except AnalysisError:
            out[name] = math.nan
    return out
