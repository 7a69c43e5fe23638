"""Rate and quality metrics and the three evaluation studies."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .channel import compute_cpp
from .data import ImageDataset
from .model import JSCCModel

PSNR_CAP = 100.0


def psnr(x: torch.Tensor, y: torch.Tensor, cap: float = PSNR_CAP) -> float:
    """PSNR in dB over the whole tensor with peak value 1."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    mse = torch.mean((x.double() - y.double()) ** 2).item()
    if mse == 0:
        return cap
    return min(10 * np.log10(1.0 / mse), cap)


def psnr_per_image(x: torch.Tensor, y: torch.Tensor, cap: float = PSNR_CAP) -> torch.Tensor:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    mse = ((x.double() - y.double()) ** 2).flatten(1).mean(dim=1)
    out = torch.full_like(mse, cap)
    nz = mse > 0
    out[nz] = torch.clamp(10 * torch.log10(1.0 / mse[nz]), max=cap)
    return out


@dataclass
class ImageResults:
    """Per-image outcomes of one evaluation pass at a single SNR."""

    snr_db: float
    cpp: np.ndarray
    psnr: np.ndarray
    selective: np.ndarray
    labels: np.ndarray


@dataclass
class ClassStats:
    label: str
    avg_cpp: float
    avg_psnr: float
    psnr_std: float


@dataclass
class RatePsnrRecord:
    snr_db: float
    avg_cpp: float
    avg_psnr_db: float
    alpha: float | None = None
    per_class: list[ClassStats] = field(default_factory=list)

    @property
    def class_psnr_std(self) -> float:
        """Standard deviation of the per-class mean PSNR (population form)."""
        return float(np.std([c.avg_psnr for c in self.per_class]))


def _seed_for(seed: int, snr_db: float) -> int:
    return (int(seed) * 1_000_003 + int(round(snr_db * 1000))) % (2**63)


@torch.no_grad()
def evaluate(
    model: JSCCModel,
    dataset: ImageDataset,
    snr_db: float,
    seed: int = 0,
    batch_size: int = 256,
    decision: str = "argmax",
) -> ImageResults:
    """Run the test set through the model with hard decisions at one SNR."""
    was_training = model.training
    model.eval()
    cfg = model.config
    generator = torch.Generator().manual_seed(_seed_for(seed, snr_db))
    dtype = next(model.parameters()).dtype
    cpps, psnrs, sel, labels = [], [], [], []
    for x, lab in dataset.batches(batch_size):
        x = x.to(dtype)
        out = model(x, snr_db, mode="eval", generator=generator, decision=decision)
        cpps.append(compute_cpp(out.g_active, cfg.group_length, cfg.image_height, cfg.image_width).numpy())
        psnrs.append(psnr_per_image(x, out.y).numpy())
        sel.append(out.selective.numpy())
        labels.append(lab.numpy())
    model.train(was_training)
    return ImageResults(
        float(snr_db), np.concatenate(cpps), np.concatenate(psnrs), np.concatenate(sel), np.concatenate(labels)
    )


def _class_stats(results: ImageResults, class_names) -> list[ClassStats]:
    stats = []
    for k in np.unique(results.labels):
        sel = results.labels == k
        name = class_names[k] if k < len(class_names) else str(k)
        stats.append(
            ClassStats(name, float(results.cpp[sel].mean()), float(results.psnr[sel].mean()), float(results.psnr[sel].std()))
        )
    return stats


def _alpha(model: JSCCModel) -> float | None:
    return model.config.alpha if model.adaptive else None


def eval_rate_vs_snr(model, snr_grid, dataset, seed: int = 0, decision: str = "argmax") -> list[RatePsnrRecord]:
    records = []
    for snr in snr_grid:
        res = evaluate(model, dataset, snr, seed=seed, decision=decision)
        records.append(RatePsnrRecord(float(snr), float(res.cpp.mean()), float(res.psnr.mean()), _alpha(model)))
    return records


@dataclass
class CompareRow:
    snr_db: float
    model_id: str
    cpp: float
    psnr: float


@dataclass
class Comparison:
    rows: list[CompareRow]
    # adaptive PSNR minus the fixed-rate curve interpolated at the adaptive CPP
    gaps: dict[float, float]


def interpolate_fixed(cpps, psnrs, at: float) -> float:
    """Piecewise-linear PSNR of the fixed-rate curve at ``at`` (clamped at the ends)."""
    order = np.argsort(cpps)
    return float(np.interp(at, np.asarray(cpps, dtype=float)[order], np.asarray(psnrs, dtype=float)[order]))


def eval_adaptive_vs_fixed(adaptive, fixed: dict, snr_grid, dataset, seed: int = 0, decision: str = "argmax") -> Comparison:
    if adaptive is None or not fixed:
        raise ValueError("need an adaptive model and at least one fixed-rate model")
    rows, gaps = [], {}
    for snr in snr_grid:
        res = evaluate(adaptive, dataset, snr, seed=seed, decision=decision)
        a_cpp, a_psnr = float(res.cpp.mean()), float(res.psnr.mean())
        rows.append(CompareRow(float(snr), "adaptive", a_cpp, a_psnr))
        f_cpp, f_psnr = [], []
        for model_id, model in fixed.items():
            r = evaluate(model, dataset, snr, seed=seed)
            f_cpp.append(float(r.cpp.mean()))
            f_psnr.append(float(r.psnr.mean()))
            rows.append(CompareRow(float(snr), model_id, f_cpp[-1], f_psnr[-1]))
        gaps[float(snr)] = a_psnr - interpolate_fixed(f_cpp, f_psnr, a_cpp)
    return Comparison(rows, gaps)


@dataclass
class PerClassResult:
    snr_db: float
    record: RatePsnrRecord
    baselines: dict[str, RatePsnrRecord]

    @property
    def psnr_std_across_classes(self) -> float:
        return self.record.class_psnr_std

    def nearest_baseline(self) -> tuple[str, RatePsnrRecord]:
        """Fixed-rate baseline whose CPP is closest to the adaptive average."""
        return min(self.baselines.items(), key=lambda kv: (abs(kv[1].avg_cpp - self.record.avg_cpp), kv[0]))


def _per_class_record(model, snr, dataset, seed, decision) -> RatePsnrRecord:
    res = evaluate(model, dataset, snr, seed=seed, decision=decision)
    return RatePsnrRecord(
        float(snr), float(res.cpp.mean()), float(res.psnr.mean()), _alpha(model), _class_stats(res, dataset.class_names)
    )


def eval_per_class(model, snr: float, dataset, baselines: dict | None = None, seed: int = 0, decision: str = "argmax") -> PerClassResult:
    if dataset.labels is None or len(dataset.labels) == 0:
        raise ValueError("per-class evaluation needs a labelled dataset")
    record = _per_class_record(model, snr, dataset, seed, decision)
    base = {mid: _per_class_record(m, snr, dataset, seed, decision) for mid, m in (baselines or {}).items()}
    return PerClassResult(float(snr), record, base)


# --- CSV artifacts -----------------------------------------------------------

RATESNR_FIELDS = ("alpha", "snr_db", "avg_cpp", "avg_psnr")
CLASSES_FIELDS = ("alpha", "snr_db", "class", "avg_cpp", "avg_psnr")
COMPARE_FIELDS = ("snr_db", "model_id", "cpp", "psnr")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: Path, fields, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_ratesnr(records, path) -> Path:
    return _write_csv(Path(path), RATESNR_FIELDS, [(r.alpha, r.snr_db, r.avg_cpp, r.avg_psnr_db) for r in records])


def write_classes(records, path) -> Path:
    rows = [(r.alpha, r.snr_db, c.label, c.avg_cpp, c.avg_psnr) for r in records for c in r.per_class]
    return _write_csv(Path(path), CLASSES_FIELDS, rows)


def write_compare(rows, path) -> Path:
    return _write_csv(Path(path), COMPARE_FIELDS, [(r.snr_db, r.model_id, r.cpp, r.psnr) for r in rows])


def emit_artifacts(out_dir, rate=None, classes=None, compare=None, image_format: str = "png") -> list[Path]:
    """Write whichever CSVs have data and regenerate their figures from the CSV files."""
    from .plotting import plot_csv

    if not (rate or classes or compare):
        raise ValueError("no records to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    written = []
    if rate:
        written.append(write_ratesnr(rate, out / "ratesnr.csv"))
    if classes:
        written.append(write_classes(classes, out / "classes.csv"))
    if compare:
        written.append(write_compare(compare, out / "compare.csv"))
    for csv_path in list(written):
        written.append(plot_csv(csv_path, out, image_format))
    return written
