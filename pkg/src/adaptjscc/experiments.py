"""Desk-scale reproduction of the rate/quality studies.

Trains two adaptive models (one per rate weight) and one fixed-rate baseline
per active-group count, then evaluates rate vs SNR, adaptive vs fixed and the
per-class breakdown. Every trained model is cached under ``out_dir`` and
reused when its config is unchanged.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, desk_config
from .data import DatasetSpec, ingest_dataset
from .evaluation import emit_artifacts, eval_adaptive_vs_fixed, eval_per_class, eval_rate_vs_snr
from .training import Trainer

log = logging.getLogger(__name__)

DESK_ALPHAS = (5e-4, 1.5e-3)
PER_CLASS_SNR = 10.0
PER_CLASS_ALPHA = 5e-4


@dataclass
class DeskResults:
    snr_grid: list[float]
    # alpha (as string) -> avg CPP / PSNR per grid SNR
    rate: dict[str, list[float]] = field(default_factory=dict)
    psnr: dict[str, list[float]] = field(default_factory=dict)
    fixed_cpp: dict[str, list[float]] = field(default_factory=dict)
    fixed_psnr: dict[str, list[float]] = field(default_factory=dict)
    # alpha -> adaptive PSNR minus interpolated fixed-rate PSNR per grid SNR
    gaps: dict[str, list[float]] = field(default_factory=dict)
    per_class_snr: float = PER_CLASS_SNR
    per_class_alpha: float = PER_CLASS_ALPHA
    class_cpp: list[float] = field(default_factory=list)
    class_psnr: list[float] = field(default_factory=list)
    adaptive_class_std: float = float("nan")
    adaptive_avg_cpp: float = float("nan")
    fixed_class_std: dict[str, float] = field(default_factory=dict)
    fixed_avg_cpp: dict[str, float] = field(default_factory=dict)
    nearest_fixed: str = ""

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DeskResults":
        return cls(**json.loads(Path(path).read_text()))


def _train_cached(config: ExperimentConfig, run_dir: Path):
    final = run_dir / "final.ckpt"
    if final.exists():
        ckpt = load_checkpoint(final)
        if ckpt.config.to_dict() == config.to_dict():
            log.info("reusing %s", final)
            return ckpt.build_model()
    log.info("training %s", run_dir.name)
    trainer = Trainer(config, run_dir)
    trainer.run()
    return load_checkpoint(final).build_model()


def run_desk(out_dir, base: ExperimentConfig | None = None, alphas=DESK_ALPHAS,
             per_class_snr: float = PER_CLASS_SNR, per_class_alpha: float = PER_CLASS_ALPHA) -> DeskResults:
    out = Path(out_dir)
    base = base or desk_config()
    adaptive = {f"{a:g}": _train_cached(base.replace(alpha=a), out / f"adaptive_alpha{a:g}") for a in alphas}
    fixed = {
        f"fixed_j{j}": _train_cached(base.replace(fixed_groups=j), out / f"fixed_j{j}")
        for j in range(base.g_selective + 1)
    }
    test = ingest_dataset(DatasetSpec(base.dataset.name, base.dataset.path, "test", base.dataset.test_subset, base.seed))
    grid = list(base.eval_snrs)
    res = DeskResults(snr_grid=grid, per_class_snr=per_class_snr, per_class_alpha=per_class_alpha)

    rate_records, compare_rows = [], []
    for key, model in adaptive.items():
        records = eval_rate_vs_snr(model, grid, test, seed=base.seed)
        rate_records += records
        res.rate[key] = [r.avg_cpp for r in records]
        res.psnr[key] = [r.avg_psnr_db for r in records]
        cmp = eval_adaptive_vs_fixed(model, fixed, grid, test, seed=base.seed)
        res.gaps[key] = [cmp.gaps[s] for s in grid]
        compare_rows += [
            r if r.model_id != "adaptive" else type(r)(r.snr_db, f"adaptive_alpha{key}", r.cpp, r.psnr)
            for r in cmp.rows
            if r.model_id == "adaptive" or key == f"{alphas[0]:g}"
        ]
    for model_id in fixed:
        res.fixed_cpp[model_id] = [r.cpp for r in compare_rows if r.model_id == model_id]
        res.fixed_psnr[model_id] = [r.psnr for r in compare_rows if r.model_id == model_id]

    per_class = eval_per_class(adaptive[f"{per_class_alpha:g}"], per_class_snr, test, fixed, seed=base.seed)
    res.class_cpp = [c.avg_cpp for c in per_class.record.per_class]
    res.class_psnr = [c.avg_psnr for c in per_class.record.per_class]
    res.adaptive_class_std = per_class.psnr_std_across_classes
    res.adaptive_avg_cpp = per_class.record.avg_cpp
    res.fixed_class_std = {k: r.class_psnr_std for k, r in per_class.baselines.items()}
    res.fixed_avg_cpp = {k: r.avg_cpp for k, r in per_class.baselines.items()}
    res.nearest_fixed = per_class.nearest_baseline()[0]

    emit_artifacts(
        out / "artifacts",
        rate=rate_records,
        classes=[per_class.record],
        compare=compare_rows,
    )
    res.save(out / "summary.json")
    return res
