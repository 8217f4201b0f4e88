"""Regime x fold x ratio x seed experiment matrix with resumable cell persistence."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig, cache_dir
from .corpus import Fold, Manifest, holdout_split, make_folds, subsample
from .metrics import Metrics
from .model import ASUModel
from .trainer import Checkpoint, TrainConfig, evaluate, init_from_checkpoint, train

logger = logging.getLogger(__name__)

RATIO_FREE = ("real_baseline", "synthetic_zero_shot")
REGIME_ORDER = ("real_baseline", "synthetic_zero_shot", "low_resource", "synthetic_init_low_resource")


class MatrixError(RuntimeError):
    def __init__(self, failures: dict[tuple, str]):
        self.failures = failures
        lines = "; ".join(f"{k}: {v}" for k, v in failures.items())
        super().__init__(f"{len(failures)} cell(s) failed: {lines}")


@dataclass(frozen=True)
class CellKey:
    regime: str
    fold: int
    ratio: float | None
    seed: int

    def as_dict(self) -> dict:
        return {"regime": self.regime, "fold": self.fold, "ratio": self.ratio, "seed": self.seed}

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def sort_key(self):
        return (REGIME_ORDER.index(self.regime), self.fold,
                -1.0 if self.ratio is None else self.ratio, self.seed)


@dataclass
class RunResult:
    key: CellKey
    metrics: Metrics
    checkpoint_ref: str
    wall_time: float

    @property
    def regime(self):
        return self.key.regime

    def to_dict(self) -> dict:
        return {**self.key.as_dict(), "metrics": self.metrics.to_dict(),
                "checkpoint_ref": self.checkpoint_ref, "wall_time": self.wall_time, "status": "ok"}

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        key = CellKey(d["regime"], int(d["fold"]), d["ratio"], int(d["seed"]))
        return cls(key, Metrics.from_dict(d["metrics"]), d["checkpoint_ref"], float(d["wall_time"]))


def expected_cells(regimes: Sequence[str], folds: Sequence[int], ratios: Sequence[float],
                   seeds: Sequence[int]) -> list[CellKey]:
    """Every cell of the matrix; ratio-free regimes collapse the ratio axis to None."""
    cells = []
    for regime in regimes:
        if regime not in REGIME_ORDER:
            raise ValueError(f"unknown regime {regime!r}")
        for fold in folds:
            for ratio in ([None] if regime in RATIO_FREE else ratios):
                for seed in seeds:
                    cells.append(CellKey(regime, fold, ratio, seed))
    return sorted(set(cells), key=CellKey.sort_key)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class ResultStore:
    """One JSON file per cell under ``cells/`` plus an append-only ``index.jsonl``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.cells = self.root / "cells"
        self.cells.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path(self, key: CellKey) -> Path:
        return self.cells / f"{key.digest}.json"

    def get(self, key: CellKey) -> RunResult | None:
        p = self.path(key)
        if not p.exists():
            return None
        d = json.loads(p.read_text(encoding="utf-8"))
        return RunResult.from_dict(d) if d.get("status") == "ok" else None

    def put(self, result: RunResult) -> None:
        _atomic_write(self.path(result.key), json.dumps(result.to_dict(), sort_keys=True))
        self._append_index({"cell": result.key.digest, **result.key.as_dict(), "status": "ok"})

    def put_failure(self, key: CellKey, error: str) -> None:
        _atomic_write(self.path(key), json.dumps({**key.as_dict(), "status": "failed", "error": error}))
        self._append_index({"cell": key.digest, **key.as_dict(), "status": "failed"})

    def _append_index(self, entry: dict) -> None:
        with self._lock, (self.root / "index.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def completed(self) -> list[RunResult]:
        out = []
        for p in sorted(self.cells.glob("*.json")):
            d = json.loads(p.read_text(encoding="utf-8"))
            if d.get("status") == "ok":
                out.append(RunResult.from_dict(d))
        return sorted(out, key=lambda r: r.key.sort_key())


# --- single runs ----------------------------------------------------------------


class ExperimentData:
    """Real and synthetic manifests plus the fold plan, loaded once per matrix."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.real = Manifest.load(cfg.real_manifest) if cfg.real_manifest else None
        self.synthetic = Manifest.load(cfg.synthetic_manifest) if cfg.synthetic_manifest else None
        self.plan = make_folds(self.real, cfg.dataset_kind) if self.real is not None else None

    @property
    def fold_ids(self) -> list[int]:
        if self.plan is None:
            return [0]
        return list(self.cfg.folds) if self.cfg.folds is not None else list(range(self.plan.n_folds))

    def fold(self, k: int) -> Fold:
        if self.plan is None:
            raise ValueError("no real manifest configured")
        return self.plan[k]

    def split(self, k: int) -> tuple[Manifest, Manifest, Manifest]:
        fold = self.fold(k)
        return (self.real.select_sessions(fold.train), self.real.select_sessions(fold.val),
                self.real.select_sessions(fold.test))


def build_model(cfg: RunConfig, seed: int) -> ASUModel:
    return ASUModel.build(cfg.encoder, cfg.task.dataset_labels, cfg.head_config(), cfg.lora,
                          seed=seed, cache_dir=cache_dir())


def train_config(cfg: RunConfig, regime: str, seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(task_kind=cfg.task.kind, regime=regime, seed=seed,
                       batch_size=int(t.get("batch_size", 64)),
                       learning_rate=t.get("learning_rate"), max_epochs=t.get("max_epochs"))


def train_synthetic(cfg: RunConfig, data: ExperimentData, seed: int) -> Checkpoint:
    """Synthetic-only training with a held-out synthetic validation split."""
    if data.synthetic is None:
        raise ValueError("no synthetic manifest configured")
    tr, va = holdout_split(data.synthetic, cfg.synthetic_val_fraction, seed)
    model = build_model(cfg, seed)
    return train(model, tr, va, train_config(cfg, "synthetic_zero_shot", seed))


def run_cell(cfg: RunConfig, data: ExperimentData, key: CellKey,
             synthetic_ckpt: Checkpoint | None = None) -> tuple[Metrics, Checkpoint]:
    """Train and test one cell; returns test metrics and the selected checkpoint."""
    train_m, val_m, test_m = data.split(key.fold)
    model = build_model(cfg, key.seed)
    if key.regime == "synthetic_zero_shot":
        if synthetic_ckpt is None:
            synthetic_ckpt = train_synthetic(cfg, data, key.seed)
        init_from_checkpoint(model, synthetic_ckpt)
        return evaluate(model, test_m, cfg.task.kind), synthetic_ckpt
    if key.ratio is not None and key.ratio < 1:
        train_m = subsample(train_m, key.ratio, key.seed)
    if key.regime == "synthetic_init_low_resource":
        if synthetic_ckpt is None:
            raise ValueError("synthetic_init_low_resource needs a synthetic checkpoint")
        init_from_checkpoint(model, synthetic_ckpt)
    ckpt = train(model, train_m, val_m, train_config(cfg, key.regime, key.seed))
    init_from_checkpoint(model, ckpt)
    return evaluate(model, test_m, cfg.task.kind), ckpt


# --- matrix -----------------------------------------------------------------------


def run_matrix(cfg: RunConfig, resume: bool = False, workers: int | None = None,
               on_cell: Callable[[RunResult], None] | None = None) -> list[RunResult]:
    """Execute every cell, persisting each as it completes; returns all results in key order."""
    data = ExperimentData(cfg)
    keys = expected_cells(cfg.regimes, data.fold_ids, cfg.ratios, cfg.seeds)
    out = Path(cfg.output_dir)
    store = ResultStore(out)
    done = {r.key: r for r in store.completed()}
    if done and not resume:
        raise FileExistsError(f"{out} already holds results; pass resume=True to continue")
    todo = [k for k in keys if k not in done]
    _atomic_write(out / "matrix.json", json.dumps(
        {"task_kind": cfg.task.kind, "cells": [k.as_dict() for k in keys]}, sort_keys=True))

    synth: dict[int, Checkpoint | Exception] = {}
    synth_lock = threading.Lock()

    def synthetic_checkpoint(seed: int) -> Checkpoint:
        # trained once per seed and shared by every cell that needs it
        with synth_lock:
            if seed not in synth:
                path = out / "checkpoints" / f"synthetic-seed{seed}.pt"
                try:
                    if path.exists():
                        synth[seed] = Checkpoint.load(path)
                    else:
                        synth[seed] = train_synthetic(cfg, data, seed)
                        synth[seed].save(path)
                except Exception as exc:  # noqa: BLE001 - reported by each dependent cell
                    synth[seed] = exc
            got = synth[seed]
        if isinstance(got, Exception):
            raise got
        return got

    failures: dict[tuple, str] = {}

    def execute(key: CellKey) -> RunResult | None:
        t0 = time.perf_counter()
        try:
            needs = key.regime in ("synthetic_zero_shot", "synthetic_init_low_resource")
            metrics, ckpt = run_cell(cfg, data, key, synthetic_checkpoint(key.seed) if needs else None)
            if key.regime == "synthetic_zero_shot":
                ref = f"checkpoints/synthetic-seed{key.seed}.pt"
            else:
                ref = f"checkpoints/{key.digest}.pt"
                ckpt.save(out / ref)
        except Exception as exc:  # noqa: BLE001 - one failed cell must not stop the rest
            logger.exception("cell %s failed", key)
            failures[tuple(key.as_dict().values())] = f"{type(exc).__name__}: {exc}"
            store.put_failure(key, str(exc))
            return None
        result = RunResult(key, metrics, ref, time.perf_counter() - t0)
        store.put(result)
        if on_cell:
            on_cell(result)
        return result

    n_workers = workers or cfg.workers
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            list(pool.map(execute, todo))
    else:
        for key in todo:
            execute(key)

    results = store.completed()
    emit_report(results, out / "report", cfg.task.kind)
    if failures:
        raise MatrixError(failures)
    return [r for r in results if r.key in set(keys)]


# --- reporting ----------------------------------------------------------------------

CSV_FIELDS = ("regime", "fold", "ratio", "seed", "metric", "uar", "macro_f1", "accuracy", "n", "checkpoint_ref")
AGG_FIELDS = ("regime", "ratio", "n_cells", "metric_mean", "metric_std", "uar_mean", "uar_std",
              "macro_f1_mean", "macro_f1_std", "accuracy_mean", "accuracy_std")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def flat_rows(results: Sequence[RunResult], task_kind: str) -> list[dict]:
    rows = []
    for r in sorted(results, key=lambda r: r.key.sort_key()):
        m = r.metrics
        rows.append({**r.key.as_dict(), "metric": m.primary(task_kind), "uar": m.uar,
                     "macro_f1": m.macro_f1, "accuracy": m.accuracy, "n": m.n,
                     "checkpoint_ref": r.checkpoint_ref})
    return rows


def aggregate_rows(rows: Sequence[dict], regime: str, ratio) -> dict:
    """Mean and population std over the seeds and folds of one (regime, ratio) group."""
    out = {"regime": regime, "ratio": ratio, "n_cells": len(rows)}
    for name in ("metric", "uar", "macro_f1", "accuracy"):
        v = np.array([float(r[name]) for r in rows], dtype=np.float64)
        out[f"{name}_mean"], out[f"{name}_std"] = float(v.mean()), float(v.std())
    return out


def _group(rows: Sequence[dict]) -> dict[tuple, list[dict]]:
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["regime"], row["ratio"]), []).append(row)
    return groups


def report_tables(rows: Sequence[dict]) -> dict[str, str]:
    """CSV text per report file, computed purely from the flat rows."""
    groups = _group(rows)
    tables = {"cells.csv": _csv(rows, CSV_FIELDS)}
    # regime comparison: ratio-free regimes plus full-data points of the others
    comparison = [aggregate_rows(g, reg, ratio) for (reg, ratio), g in groups.items()
                  if ratio is None or float(ratio) == 1.0]
    tables["regimes.csv"] = _csv(comparison, AGG_FIELDS)
    regimes = [reg for reg in REGIME_ORDER if any(k[0] == reg and k[1] is not None for k in groups)]
    for reg in regimes:
        ratios = sorted(float(k[1]) for k in groups if k[0] == reg and k[1] is not None)
        curve = [aggregate_rows(groups[(reg, ratio)], reg, ratio) for ratio in ratios]
        tables[f"curve_{reg}.csv"] = _csv(curve, AGG_FIELDS)
    return tables


def read_cells_csv(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            row["fold"], row["seed"], row["n"] = int(row["fold"]), int(row["seed"]), int(row["n"])
            row["ratio"] = float(row["ratio"]) if row["ratio"] else None
            for k in ("metric", "uar", "macro_f1", "accuracy"):
                row[k] = float(row[k])
            rows.append(row)
    return rows


def emit_report(results: Sequence[RunResult], out_dir: str | Path, task_kind: str = "emotion",
                render: bool = False) -> dict[str, Path]:
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, text in report_tables(flat_rows(results, task_kind)).items():
        _atomic_write(out / name, text)
        written[name] = out / name
    if render:
        written.update(render_figures(out))
    return written


def render_figures(report_dir: str | Path) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_dir = Path(report_dir)
    written = {}
    with (report_dir / "regimes.csv").open(encoding="utf-8") as fh:
        comp = list(csv.DictReader(fh))
    if comp:
        fig, ax = plt.subplots(figsize=(5, 3))
        names = [f"{r['regime']}" + (f" @{r['ratio']}" if r["ratio"] else "") for r in comp]
        ax.bar(names, [float(r["metric_mean"]) for r in comp],
               yerr=[float(r["metric_std"]) for r in comp], capsize=3)
        ax.set_ylabel("metric")
        ax.tick_params(axis="x", labelrotation=30)
        fig.tight_layout()
        fig.savefig(report_dir / "regimes.png", dpi=120)
        plt.close(fig)
        written["regimes.png"] = report_dir / "regimes.png"
    curves = sorted(report_dir.glob("curve_*.csv"))
    if curves:
        fig, ax = plt.subplots(figsize=(5, 3))
        for path in curves:
            with path.open(encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
            x = [float(r["ratio"]) for r in rows]
            y = np.array([float(r["metric_mean"]) for r in rows])
            s = np.array([float(r["metric_std"]) for r in rows])
            ax.plot(x, y, marker="o", label=path.stem.removeprefix("curve_"))
            ax.fill_between(x, y - s, y + s, alpha=0.2)
        ax.set_xscale("log")
        ax.set_xlabel("real data ratio")
        ax.set_ylabel("metric")
        ax.legend()
        fig.tight_layout()
        fig.savefig(report_dir / "curves.png", dpi=120)
        plt.close(fig)
        written["curves.png"] = report_dir / "curves.png"
    return written


def report_from_dir(results_dir: str | Path, out_dir: str | Path, task_kind: str | None = None,
                    render: bool = False) -> dict[str, Path]:
    results_dir = Path(results_dir)
    if task_kind is None:
        info = results_dir / "matrix.json"
        task_kind = json.loads(info.read_text())["task_kind"] if info.exists() else "emotion"
    return emit_report(ResultStore(results_dir).completed(), out_dir, task_kind, render)
