"""Loss, SNR sampling and the three-stage training schedule."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import torch

from . import __version__
from .channel import compute_cpp
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import DatasetSpec, ImageDataset, ingest_dataset
from .errors import ConfigError, NumericalError
from .evaluation import evaluate
from .model import JSCCModel
from .policy import mask_from_count, temperature_schedule

log = logging.getLogger(__name__)

# modules frozen during the last (fine-tuning) stage
FROZEN_IN_FINETUNE = ("source_encoder", "policy")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    reconstruction: torch.Tensor
    efficiency: torch.Tensor
    weighted_efficiency: torch.Tensor


def jscc_loss(x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor | None, alpha: float) -> LossBreakdown:
    """Per-pixel MSE plus ``alpha`` times the mean number of active selective groups."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    recon = torch.mean((x - y) ** 2)
    if mask is None:
        eff = torch.zeros((), dtype=recon.dtype, device=recon.device)
    else:
        eff = mask.sum(dim=-1).mean()
    weighted = alpha * eff
    return LossBreakdown(recon + weighted, recon, eff, weighted)


def sample_training_snr(generator: torch.Generator | None, n: int, low: float = 0.0, high: float = 20.0) -> torch.Tensor:
    """One SNR (dB) per image, uniform on ``[low, high]``."""
    return low + (high - low) * torch.rand(n, generator=generator, dtype=torch.float64)


def stage_of(epoch: int, stage_epochs) -> int:
    """1-based stage index for a global epoch."""
    bound = 0
    for stage, n in enumerate(stage_epochs, start=1):
        bound += n
        if epoch < bound:
            return stage
    return len(stage_epochs)


def parameter_digest(module: torch.nn.Module | None) -> str:
    h = hashlib.sha256()
    if module is not None:
        for name, tensor in sorted(module.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _load_data(config: ExperimentConfig, split: str, subset: int | None) -> ImageDataset:
    ds = config.dataset
    return ingest_dataset(DatasetSpec(ds.name, ds.path, split, subset, config.seed))


class Trainer:
    """Owns one model, its optimizer and the training RNG stream."""

    def __init__(self, config: ExperimentConfig, out_dir=None, train_data=None, test_data=None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        torch.manual_seed(config.seed)
        self.model = JSCCModel(config)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.stage_lrs[0])
        self.train_data = train_data if train_data is not None else _load_data(config, "train", config.dataset.train_subset)
        if test_data is None:
            sizes = [s for s in (config.dataset.test_subset, config.eval_subset) if s]
            test_data = _load_data(config, "test", min(sizes) if sizes else None)
        self.test_data = test_data
        self.epoch = 0
        self.history: list[dict] = []

    @property
    def alpha(self) -> float:
        # the rate term is constant for a fixed-rate baseline
        return self.config.alpha if self.model.adaptive else 0.0

    def _set_stage(self, stage: int) -> None:
        lr = self.config.stage_lrs[stage - 1]
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        frozen = stage == 3
        for name in FROZEN_IN_FINETUNE:
            module = getattr(self.model, name)
            if module is not None:
                for p in module.parameters():
                    p.requires_grad_(not frozen)

    @property
    def warming_up(self) -> bool:
        return self.model.adaptive and self.epoch < self.config.policy_warmup_epochs

    def train_epoch(self, tau: float) -> dict:
        cfg = self.config
        self.model.train()
        totals = dict(loss=0.0, mse=0.0, cpp=0.0)
        n_seen = 0
        warmup = self.warming_up
        for x, _ in self.train_data.batches(cfg.batch_size, shuffle=True, generator=self.generator):
            snr = sample_training_snr(self.generator, x.shape[0], cfg.snr_min, cfg.snr_max).to(x.dtype)
            if warmup:
                counts = torch.randint(0, cfg.g_selective + 1, (x.shape[0],), generator=self.generator)
                mask = mask_from_count(counts, cfg.g_selective, x.dtype)
                out = self.model(x, snr, mode="train", generator=self.generator, mask=mask)
                parts = jscc_loss(x, out.y, None, 0.0)
            else:
                out = self.model(x, snr, mode="train", tau=tau, generator=self.generator)
                parts = jscc_loss(x, out.y, out.mask if self.model.adaptive else None, self.alpha)
            if not torch.isfinite(parts.total):
                raise NumericalError(
                    f"non-finite loss at epoch {self.epoch} (mse={parts.reconstruction.item()}, "
                    f"rate={parts.efficiency.item()}, tau={tau})"
                )
            self.optimizer.zero_grad(set_to_none=True)
            parts.total.backward()
            self.optimizer.step()
            b = x.shape[0]
            n_seen += b
            totals["loss"] += parts.total.item() * b
            totals["mse"] += parts.reconstruction.item() * b
            cpp = compute_cpp(out.g_active, cfg.group_length, cfg.image_height, cfg.image_width)
            totals["cpp"] += cpp.sum().item()
        return {k: v / max(n_seen, 1) for k, v in totals.items()}

    def evaluate_grid(self) -> dict:
        row = {}
        for snr in self.config.eval_snrs:
            res = evaluate(self.model, self.test_data, snr, seed=self.config.seed)
            row[f"eval_psnr@{snr:g}"] = float(res.psnr.mean())
            row[f"eval_cpp@{snr:g}"] = float(res.cpp.mean())
        return row

    def run(self, until_epoch: int | None = None, evaluate_each_epoch: bool = True) -> Checkpoint:
        cfg = self.config
        end = cfg.total_epochs if until_epoch is None else min(until_epoch, cfg.total_epochs)
        # an empty stage ends on the same epoch as the one before it
        stage_ends: dict[int, list[int]] = {}
        for k in range(1, 4):
            stage_ends.setdefault(sum(cfg.stage_epochs[:k]), []).append(k)
        while self.epoch < end:
            stage = stage_of(self.epoch, cfg.stage_epochs)
            self._set_stage(stage)
            tau = temperature_schedule(self.epoch, cfg.tau_init, cfg.tau_decay, cfg.tau_min)
            t0 = time.time()
            stats = self.train_epoch(tau)
            row = dict(
                epoch=self.epoch,
                stage=stage,
                lr=cfg.stage_lrs[stage - 1],
                tau=tau,
                train_loss=stats["loss"],
                train_mse=stats["mse"],
                train_rate=stats["cpp"],
            )
            if evaluate_each_epoch:
                row.update(self.evaluate_grid())
            self.history.append(row)
            self.epoch += 1
            log.info(
                "epoch %d stage %d tau %.3f loss %.5f mse %.5f cpp %.4f (%.1fs)",
                row["epoch"], stage, tau, row["train_loss"], row["train_mse"], row["train_rate"], time.time() - t0,
            )
            if self.out_dir is not None:
                self._append_curve(row)
                for k in stage_ends.get(self.epoch, ()):
                    self.save(self.out_dir / f"stage{k}.ckpt")
        ckpt = self.checkpoint()
        if self.out_dir is not None and self.epoch == cfg.total_epochs:
            save_checkpoint(ckpt, self.out_dir / "final.ckpt")
            self._write_manifest()
        return ckpt

    def checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint.from_model(
            self.model,
            epoch=self.epoch,
            stage=stage_of(max(self.epoch - 1, 0), self.config.stage_epochs),
            kind="adaptive" if self.model.adaptive else f"fixed-{self.config.fixed_groups}",
            code_version=__version__,
            frozen_digests={name: parameter_digest(getattr(self.model, name)) for name in FROZEN_IN_FINETUNE},
        )
        ckpt.optimizer_state = self.optimizer.state_dict()
        ckpt.rng_state = self.generator.get_state()
        return ckpt

    def save(self, path) -> Path:
        return save_checkpoint(self.checkpoint(), path)

    def resume(self, ckpt: Checkpoint) -> None:
        if ckpt.config.to_dict() != self.config.to_dict():
            raise ConfigError("checkpoint config differs from the run config")
        self.model.load_state_dict(ckpt.state)
        if ckpt.optimizer_state is not None:
            self.optimizer.load_state_dict(ckpt.optimizer_state)
        if ckpt.rng_state is not None:
            self.generator.set_state(ckpt.rng_state)
        self.epoch = int(ckpt.meta.get("epoch", 0))

    def _append_curve(self, row: dict) -> None:
        path = self.out_dir / "curves.csv"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        new = not path.exists() or row["epoch"] == 0
        with open(path, "w" if new else "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(list(row))
            writer.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row.values()])

    def _write_manifest(self) -> None:
        manifest = dict(
            config_hash=self.config.digest(),
            seed=self.config.seed,
            code_version=__version__,
            finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
            epochs=self.epoch,
            config=self.config.to_dict(),
        )
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def train(config: ExperimentConfig, out_dir=None, resume=None, train_data=None, test_data=None,
          evaluate_each_epoch: bool = True) -> Checkpoint:
    trainer = Trainer(config, out_dir, train_data, test_data)
    if resume is not None:
        trainer.resume(load_checkpoint(resume) if not isinstance(resume, Checkpoint) else resume)
    return trainer.run(evaluate_each_epoch=evaluate_each_epoch)


def train_fixed_rate_baseline(config: ExperimentConfig, active_groups: int, out_dir=None, train_data=None,
                              test_data=None, evaluate_each_epoch: bool = True) -> Checkpoint:
    if not 0 <= active_groups <= config.g_selective:
        raise ConfigError(f"active groups must lie in [0, {config.g_selective}], got {active_groups}")
    return train(config.replace(fixed_groups=active_groups), out_dir, None, train_data, test_data, evaluate_each_epoch)

