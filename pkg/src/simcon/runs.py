"""Experiment orchestration: per-seed runs, CSV/JSON records and sweeps.

Every file written here is a pure function of (config, seeds). Wall-clock
time is the one nondeterministic measurement, so it goes to a separate
``timing.json`` and never into a CSV or the summary.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .trainer import EpochMetrics, train

# Fixed column order of the per-seed CSV (documented in schema/csv_schema.md).
CSV_COLUMNS = (
    "config_hash",
    "seed",
    "epoch",
    "lambda",
    "tau",
    "lr",
    "loss",
    "loss_i2t",
    "loss_t2i",
    "loss_ncs",
    "positives_image",
    "positives_text",
    "diag_share_image",
    "recall_i2t",
    "recall_t2i",
    "align_acc",
)

SWEEP_AXES = ("loss", "noise_rho", "batch_size", "ablation")

# The five design-choice rows, from plain InfoNCE up to the full method.
ABLATION_ROWS = {
    "infonce": dict(loss_kind="infonce"),
    "simcon": dict(loss_kind="simcon"),
    "views": dict(loss_kind="mv_simcon", use_ncs=False, use_joint_positives=False),
    "ncs": dict(loss_kind="mv_simcon", use_ncs=True, use_joint_positives=False),
    "joint": dict(loss_kind="mv_simcon", use_ncs=True, use_joint_positives=True),
}


@dataclass
class RunRecord:
    config: ExperimentConfig
    seed: int
    rows: list[EpochMetrics]

    @property
    def config_hash(self) -> str:
        return self.config.hash()

    def csv_rows(self) -> list[dict]:
        out = []
        for m in self.rows:
            out.append(
                {
                    "config_hash": self.config_hash,
                    "seed": self.seed,
                    "epoch": m.epoch,
                    "lambda": m.lam,
                    "tau": m.tau,
                    "lr": m.lr,
                    "loss": m.loss,
                    "loss_i2t": m.loss_i2t,
                    "loss_t2i": m.loss_t2i,
                    "loss_ncs": m.loss_ncs,
                    "positives_image": m.positives_image,
                    "positives_text": m.positives_text,
                    "diag_share_image": m.diag_share_image,
                    "recall_i2t": m.recall_i2t,
                    "recall_t2i": m.recall_t2i,
                    "align_acc": m.align_acc,
                }
            )
        return out

    def summary(self) -> dict:
        recalls = [m.recall_i2t for m in self.rows]
        reached = next(
            (m.epoch for m in self.rows if m.recall_i2t >= self.config.recall_threshold), None
        )
        last = self.rows[-1]
        return {
            "best_recall_i2t": max(recalls),
            "final_recall_i2t": last.recall_i2t,
            "final_recall_t2i": last.recall_t2i,
            "final_align_acc": last.align_acc,
            "epochs_to_threshold": reached,
        }


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    if value is None:
        return ""
    return str(value)


def write_csv(path, records: list[dict], columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_fmt(rec[c]) for c in columns])


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(vals, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(vals)}


def aggregate(records: list[RunRecord]) -> dict:
    """Mean and (population) std of each per-seed summary statistic."""
    per_seed = {str(r.seed): r.summary() for r in records}
    keys = next(iter(per_seed.values())).keys()
    return {
        "config_hash": records[0].config_hash,
        # out_dir is left out so the summary does not depend on where it lives
        "config": {k: v for k, v in records[0].config.to_dict().items() if k != "out_dir"},
        "seeds": [r.seed for r in records],
        "per_seed": per_seed,
        "aggregate": {k: _mean_std([s[k] for s in per_seed.values()]) for k in keys},
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[RunRecord]:
    """Train once per seed and write ``seed_<s>.csv``, ``summary.json`` and
    ``timing.json`` under ``out_dir`` (the config's own when None)."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, timing = [], {}
    for seed in cfg.seeds:
        rows = train(cfg, seed=seed)
        rec = RunRecord(cfg, seed, rows)
        write_csv(out / f"seed_{seed}.csv", rec.csv_rows(), CSV_COLUMNS)
        records.append(rec)
        timing[str(seed)] = [m.seconds for m in rows]
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(aggregate(records), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"seconds_per_epoch": timing}, fh, indent=2)
        fh.write("\n")
    return records


def sweep_configs(base: ExperimentConfig, axis: str, values=None) -> list[tuple[str, ExperimentConfig]]:
    """(label, config) pairs for one sweep axis.

    The ablation axis takes row names (default: all five rows); the other
    axes require explicit values.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"must be one of {', '.join(SWEEP_AXES)}", field="axis")
    if axis == "ablation":
        names = list(values) if values else list(ABLATION_ROWS)
        unknown = [n for n in names if n not in ABLATION_ROWS]
        if unknown:
            raise ConfigError(f"unknown ablation rows {unknown}", field="values")
        return [(n, base.replace(use_multiple_views=None, **ABLATION_ROWS[n])) for n in names]
    if not values:
        raise ConfigError(f"axis {axis!r} needs --values", field="values")
    out = []
    for v in values:
        if axis == "loss":
            cfg = base.replace(loss_kind=str(v), use_multiple_views=None)
        elif axis == "noise_rho":
            cfg = base.replace(swap_prob=float(v))
        else:
            cfg = base.replace(batch_size=int(v))
        out.append((str(v), cfg))
    return out


def run_sweep(base: ExperimentConfig, axis: str, values=None, out_dir=None) -> Path:
    """Run every (axis value, seed) and collect one tidy ``sweep.csv``.

    Each run writes its own directory. Rows are appended to the combined
    CSV and flushed after every run so an interrupted sweep keeps what
    finished.
    """
    out = Path(out_dir if out_dir is not None else base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = sweep_configs(base, axis, values)
    config_cols = [k for k in configs[0][1].to_dict() if k not in ("seeds", "out_dir")]
    columns = ("axis", "value", *config_cols, *CSV_COLUMNS)
    combined = out / "sweep.csv"
    with open(combined, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for label, cfg in configs:
            run_dir = out / f"{axis}={label}"
            for rec in run_experiment(cfg, run_dir):
                fields = cfg.to_dict()
                for row in rec.csv_rows():
                    row = {**fields, **row, "axis": axis, "value": label}
                    writer.writerow([_fmt(row[c]) for c in columns])
            fh.flush()
            os.fsync(fh.fileno())
    return combined
