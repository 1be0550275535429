"""End-to-end acceptance pipeline behind ``repro``.

Each criterion is a function returning a ``CriterionResult``.  The
pipeline writes every dataset, checkpoint, metrics file, table and figure
it produces under one output directory, so a second run with the same
master seed can be compared byte for byte.
"""

from __future__ import annotations

import filecmp
import logging
import math
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, reports
from .config import RunConfig
from .datagen import Window, generate_dataset, write_dataset
from .machines import MachineClass, MachineSpec, spawn_fleet
from .model import ModelDims, init_model, window_loss
from .netcore import finite_diff_check
from .rng import SplitMix64, mix_seed
from .trainer import evaluate, train

log = logging.getLogger(__name__)

GRADCHECK_TOL = 1e-5
GRADCHECK_EPS = 1e-5

# fleets for the linear and stateless checks
LINEAR_ORACLE = {"ticks": 8000, "epochs": 400}
LINEAR_FLEET = {"machines": 4, "ticks": 4000, "epochs": 30}
# the stateless ablation is compared at the budget that converges the linear oracle
STATELESS_ABLATION = {"ticks": 8000, "epochs": 400}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} C{self.number} {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# individual checks


def gradcheck(seed: int = 7, embed_dim: int = 4, seq_len: int = 8, eps: float = GRADCHECK_EPS) -> float:
    """Max relative gradient error of ``window_loss`` on a random model and window."""
    model = init_model(ModelDims(embed_dim), seed)
    rng = SplitMix64(mix_seed(seed, 0x6C4EC))
    # move decay and gain off their constant init so every coordinate differs
    model["beta_raw"][:] = rng.uniform_array(embed_dim, -2.0, 2.0)
    model["gamma"][:] = rng.uniform_array(embed_dim, -1.0, 1.0)

    inputs = np.array(rng.uniform_array(seq_len * 3, -0.2, 0.2)).reshape(seq_len, 3)
    outputs = np.array(rng.uniform_array(seq_len * 3, -1.0, 1.0)).reshape(seq_len, 3)
    w = Window(0, 0, np.concatenate([inputs, outputs], axis=1),
               np.array(rng.uniform_array(3, -0.2, 0.2)), np.array(rng.uniform_array(3, -1.0, 1.0)))
    m_prev = np.array(rng.uniform_array(embed_dim, -1.0, 1.0))
    return finite_diff_check(lambda p: window_loss(model, w, m_prev)[0], model.block, eps)


def check_gradients(seed: int = 7) -> CriterionResult:
    t0 = time.perf_counter()
    err = gradcheck(seed, 4, 8)
    dt = time.perf_counter() - t0
    ok = err < GRADCHECK_TOL and dt < 60.0
    return CriterionResult(1, "gradient fidelity", ok, f"max rel err {err:.3e} (< {GRADCHECK_TOL:g}), {dt:.1f}s (< 60s)")


def check_pca(records) -> CriterionResult:
    """Orthonormal basis on real embeddings and exact recovery of a rank-1 cloud."""
    _, basis, _ = analysis.pca3(records)
    gram_err = float(np.max(np.abs(basis @ basis.T - np.eye(3))))

    rng = SplitMix64(0x9CA1)
    dim = basis.shape[1]
    v = np.array(rng.uniform_array(dim, -1.0, 1.0))
    v /= np.linalg.norm(v)
    mean = np.array(rng.uniform_array(dim, -5.0, 5.0))
    ts = np.array(rng.uniform_array(64, -3.0, 3.0))
    _, b1, ev1 = analysis.pca3(ts[:, None] * v + mean)
    direction_err = float(min(np.linalg.norm(b1[0] - v), np.linalg.norm(b1[0] + v)))
    gram_err = max(gram_err, float(np.max(np.abs(b1 @ b1.T - np.eye(3)))))
    ok = gram_err < 1e-9 and direction_err < 1e-6 and ev1[0] > 0.999
    return CriterionResult(
        9, "PCA properties", ok,
        f"orthonormality err {gram_err:.1e} (< 1e-9), rank-1 direction err {direction_err:.1e} (< 1e-6), "
        f"first fraction {ev1[0]:.6f} (> 0.999)",
    )


def _gap(full: float, base: float) -> float:
    """Signed relative improvement of the full model over the zeroed baseline."""
    return (base - full) / base if base > 0 else 0.0


# ---------------------------------------------------------------------------
# pipeline


class Pipeline:
    """Runs every stage once and keeps what the criteria need."""

    def __init__(self, cfg: RunConfig, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.results: list[CriterionResult] = []

    def _seed(self, tag: int) -> int:
        return mix_seed(self.cfg.seed, tag)

    def linear_oracle(self) -> CriterionResult:
        cfg = self.cfg
        t0 = time.perf_counter()
        ds = generate_dataset(self._seed(0x11), {MachineClass.STATELESS: 1}, LINEAR_ORACLE["ticks"], 0,
                              cfg.excitation, linear_stateless=True)
        tc = cfg.train_config(epochs=LINEAR_ORACLE["epochs"])
        model, metrics = train(tc, ds)
        res = evaluate(model, ds, "train", tc.seq_len, tc.stride)
        dt = time.perf_counter() - t0
        reports.write_training_outputs(model, metrics, tc, self.out / "linear_oracle" / "model")
        reports.write_eval({"train": res}, self.out / "linear_oracle" / "eval.json")
        ok = res.aggregate <= 1e-5 and dt < 120.0
        return CriterionResult(2, "linear oracle exactness", ok,
                               f"train MSE {res.aggregate:.3e} (<= 1e-5) after {tc.epochs} epochs, {dt:.1f}s (< 120s)")

    def embedding_necessity(self) -> CriterionResult:
        cfg = self.cfg
        ds = generate_dataset(self._seed(0x33), {MachineClass.STATELESS: LINEAR_FLEET["machines"]},
                              LINEAR_FLEET["ticks"], 0, cfg.excitation, linear_stateless=True)
        write_dataset(ds, self.out / "linear_fleet" / "dataset")
        mse = {}
        for name, use in (("full", True), ("baseline", False)):
            tc = cfg.train_config(epochs=LINEAR_FLEET["epochs"], use_embeddings=use)
            model, metrics = train(tc, ds)
            res = evaluate(model, ds, "train", tc.seq_len, tc.stride)
            reports.write_training_outputs(model, metrics, tc, self.out / "linear_fleet" / name)
            reports.write_eval({"train": res}, self.out / "linear_fleet" / f"eval_{name}.json")
            mse[name] = res.aggregate
        gap = _gap(mse["full"], mse["baseline"])
        return CriterionResult(3, "embedding necessity", gap >= 0.2,
                               f"full {mse['full']:.3e} vs zeroed {mse['baseline']:.3e}: {100 * gap:.1f}% lower (>= 20%)")

    def vehicles(self) -> list[CriterionResult]:
        cfg = self.cfg
        t0 = time.perf_counter()
        ds = generate_dataset(cfg.fleet_seed, cfg.counts, cfg.ticks, cfg.n_test, cfg.excitation, threads=cfg.threads)
        write_dataset(ds, self.out / "vehicles" / "dataset")
        tc = cfg.train_config()
        model, metrics = train(tc, ds)
        tr = evaluate(model, ds, "train", tc.seq_len, tc.stride)
        te = evaluate(model, ds, "test", tc.seq_len, tc.stride)
        dt = time.perf_counter() - t0
        metrics.splits = {"train": tr, "test": te}
        reports.write_training_outputs(model, metrics, tc, self.out / "vehicles" / "model")
        reports.write_eval({"train": tr, "test": te}, self.out / "vehicles" / "eval_full.json")
        pairs = sum(len(t) for t in ds.trajectories.values())

        ratio = te.aggregate / tr.aggregate if tr.aggregate > 0 else math.inf
        ok4 = te.normalized < 0.05 and ratio <= 3.0 and dt < 1800.0
        out = [CriterionResult(
            4, "held-out generalization", ok4,
            f"{pairs} pairs, train {tr.aggregate:.3e}, test {te.aggregate:.3e}; normalized test {te.normalized:.4f} (< 0.05); "
            f"test/train {ratio:.2f} (<= 3); {dt:.0f}s (< 1800s)",
        )]

        records = analysis.embed_fleet(model, ds, cfg.samples_per_machine, cfg.embed_seed, tc.seq_len)
        summary = reports.write_analysis_outputs(records, self.out / "vehicles" / "analysis")
        sil = summary["silhouettes"]
        ok5 = sil["suv_vs_track"] >= 0.2 and sil["class"] >= 0.05
        out.append(CriterionResult(
            5, "embedding structure", ok5,
            f"silhouette SUV/TRACK {sil['suv_vs_track']:.3f} (>= 0.2), four classes {sil['class']:.3f} (>= 0.05)",
        ))
        year = sil["year_bucket"]
        out.append(CriterionResult(6, "nuisance rejection", -0.1 <= year <= 0.1,
                                   f"silhouette over 20-year buckets {year:.3f} (in [-0.1, 0.1])"))

        btc = cfg.train_config(use_embeddings=False)
        base, bmetrics = train(btc, ds)
        bte = evaluate(base, ds, "test", btc.seq_len, btc.stride)
        btr = evaluate(base, ds, "train", btc.seq_len, btc.stride)
        bmetrics.splits = {"train": btr, "test": bte}
        reports.write_training_outputs(base, bmetrics, btc, self.out / "vehicles" / "baseline")
        reports.write_eval({"train": btr, "test": bte}, self.out / "vehicles" / "eval_baseline.json")
        self.vehicle_gap = (_gap(te.aggregate, bte.aggregate), te.aggregate, bte.aggregate)
        self.records = records
        return out

    def stateless_gap(self) -> tuple[float, float, float]:
        """Full vs zeroed test MSE on two memoryless machines sharing one weight matrix."""
        cfg = self.cfg
        fleet_seed = self._seed(0x77)
        proto = spawn_fleet(fleet_seed, {MachineClass.STATELESS: 1})[0]
        specs = [proto, MachineSpec(1, MachineClass.STATELESS, proto.params, mix_seed(fleet_seed, 1))]
        ds = generate_dataset(fleet_seed, {}, STATELESS_ABLATION["ticks"], 1, cfg.excitation, specs=specs)
        root = self.out / "stateless_twins"
        write_dataset(ds, root / "dataset")
        mse = {}
        for name, use in (("full", True), ("baseline", False)):
            tc = cfg.train_config(epochs=STATELESS_ABLATION["epochs"], use_embeddings=use)
            model, metrics = train(tc, ds)
            res = evaluate(model, ds, "test", tc.seq_len, tc.stride)
            reports.write_training_outputs(model, metrics, tc, root / name)
            reports.write_eval({"test": res}, root / f"eval_{name}.json")
            mse[name] = res.aggregate
        return _gap(mse["full"], mse["baseline"]), mse["full"], mse["baseline"]

    def stateful_ablation(self) -> CriterionResult:
        vgap, vfull, vbase = self.vehicle_gap
        sgap, sfull, sbase = self.stateless_gap()
        ok = vgap >= 0.2 and sgap < 0.05
        return CriterionResult(
            7, "stateful ablation", ok,
            f"vehicles: full {vfull:.3e} vs zeroed {vbase:.3e}, {100 * vgap:.1f}% lower (>= 20%); "
            f"stateless: full {sfull:.3e} vs zeroed {sbase:.3e}, {100 * sgap:.1f}% lower (< 5%)",
        )

    def run(self) -> list[CriterionResult]:
        self.out.mkdir(parents=True, exist_ok=True)
        stages = [
            lambda: [check_gradients(7)],
            lambda: [self.linear_oracle()],
            lambda: [self.embedding_necessity()],
            self.vehicles,
            lambda: [self.stateful_ablation()],
            lambda: [check_pca(self.records)],
        ]
        for stage in stages:
            for res in stage():
                log.info(res.line())
                self.results.append(res)
        self.results.sort(key=lambda r: r.number)
        return self.results


def compare_trees(a, b) -> list[str]:
    """Relative paths that differ (or exist on one side only) between two trees."""
    a, b = Path(a), Path(b)
    diffs = []
    names = set()
    for root in (a, b):
        for dirpath, _, files in os.walk(root):
            for f in files:
                names.add(str((Path(dirpath) / f).relative_to(root)))
    for rel in sorted(names):
        pa, pb = a / rel, b / rel
        if not (pa.is_file() and pb.is_file() and filecmp.cmp(pa, pb, shallow=False)):
            diffs.append(rel)
    return diffs


def write_results(results: list[CriterionResult], path) -> None:
    rows = ["criterion,name,status,detail"]
    for r in results:
        detail = r.detail.replace('"', "'")
        rows.append(f'{r.number},{r.name},{"PASS" if r.passed else "FAIL"},"{detail}"')
    Path(path).write_text("\n".join(rows) + "\n")


def run_acceptance(cfg: RunConfig, out_dir, determinism: bool = True, echo=print) -> list[CriterionResult]:
    """Run the full pipeline; with ``determinism`` rerun it and diff the outputs."""
    out = Path(out_dir)
    first = out / "run"
    if first.exists():
        shutil.rmtree(first)
    results = Pipeline(cfg, first).run()
    for r in results:
        echo(r.line())

    if determinism:
        second = out / "rerun"
        if second.exists():
            shutil.rmtree(second)
        Pipeline(cfg, second).run()
        diffs = compare_trees(first, second)
        nfiles = sum(len(f) for _, _, f in os.walk(first))
        res = CriterionResult(8, "determinism", not diffs,
                              f"{nfiles} files compared, {len(diffs)} differ" + (f": {', '.join(diffs[:5])}" if diffs else ""))
        echo(res.line())
        results.append(res)
        shutil.rmtree(second)
    results.sort(key=lambda r: r.number)
    write_results(results, out / "acceptance.csv")
    return results


__all__ = [
    "CriterionResult",
    "Pipeline",
    "check_gradients",
    "check_pca",
    "compare_trees",
    "gradcheck",
    "run_acceptance",
]
