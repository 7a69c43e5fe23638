"""Figures regenerated from the evaluation CSV files alone."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGURE_NAMES = {
    "ratesnr": "fig4_rate_vs_snr",
    "compare": "fig5_psnr_vs_snr",
    "classes": "fig6_per_class",
}


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def detect_kind(fields) -> str:
    fields = tuple(fields)
    if fields == ("alpha", "snr_db", "avg_cpp", "avg_psnr"):
        return "ratesnr"
    if fields == ("alpha", "snr_db", "class", "avg_cpp", "avg_psnr"):
        return "classes"
    if fields == ("snr_db", "model_id", "cpp", "psnr"):
        return "compare"
    raise ValueError(f"unrecognised CSV header: {', '.join(fields)}")


def _rate_vs_snr(rows, ax_rate, ax_psnr):
    by_alpha = defaultdict(list)
    for r in rows:
        by_alpha[r["alpha"] or "fixed"].append(r)
    for alpha, rs in sorted(by_alpha.items()):
        rs.sort(key=lambda r: float(r["snr_db"]))
        snr = [float(r["snr_db"]) for r in rs]
        ax_rate.plot(snr, [float(r["avg_cpp"]) for r in rs], "o-", label=f"alpha={alpha}")
        ax_psnr.plot(snr, [float(r["avg_psnr"]) for r in rs], "s--", label=f"alpha={alpha}")
    ax_rate.set_xlabel("SNR (dB)")
    ax_rate.set_ylabel("average CPP")
    ax_psnr.set_xlabel("SNR (dB)")
    ax_psnr.set_ylabel("average PSNR (dB)")
    ax_rate.legend()


def _compare(rows, ax):
    by_model = defaultdict(list)
    for r in rows:
        by_model[r["model_id"]].append(r)
    for model_id, rs in sorted(by_model.items()):
        rs.sort(key=lambda r: float(r["snr_db"]))
        style = "o-" if model_id == "adaptive" else "x:"
        ax.plot([float(r["snr_db"]) for r in rs], [float(r["psnr"]) for r in rs], style, label=model_id)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize="small")


def _classes(rows, ax_rate, ax_psnr):
    labels = [r["class"] for r in rows]
    pos = range(len(rows))
    ax_rate.bar(pos, [float(r["avg_cpp"]) for r in rows])
    ax_rate.set_ylabel("average CPP")
    ax_psnr.bar(pos, [float(r["avg_psnr"]) for r in rows], color="tab:orange")
    ax_psnr.set_ylabel("average PSNR (dB)")
    ax_psnr.set_xticks(list(pos))
    ax_psnr.set_xticklabels(labels, rotation=45, ha="right")


def plot_csv(csv_path, out_dir, image_format: str = "png") -> Path:
    fields, rows = read_csv(csv_path)
    kind = detect_kind(fields)
    if kind == "compare":
        fig, ax = plt.subplots(figsize=(5, 4))
        _compare(rows, ax)
    elif kind == "ratesnr":
        fig, (a, b) = plt.subplots(1, 2, figsize=(9, 4))
        _rate_vs_snr(rows, a, b)
    else:
        fig, (a, b) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        _classes(rows, a, b)
    fig.tight_layout()
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    out = Path(out_dir) / f"{FIGURE_NAMES[kind]}.{image_format}"
    fig.savefig(out)
    plt.close(fig)
    return out
