"""Run reports: CSV tables and matplotlib figures written next to each other."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_KEYS = ("total", "r1", "r2", "m1", "m2", "me", "mask")


def write_csv(rows: list, path, columns=None) -> Path:
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r.get(k), float) else r.get(k, "")) for k in columns})
    return path


def read_runlog(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_losses(history: list, path) -> Path:
    steps = [r for r in history if r.get("kind", "step") == "step"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in LOSS_KEYS:
        vals = np.array([r.get(key, 0.0) for r in steps], dtype=float)
        if len(vals) and np.any(vals):
            it = np.array([r["iteration"] for r in steps])
            k = max(1, len(vals) // 100)
            smooth = np.convolve(vals, np.ones(k) / k, mode="valid")
            ax.plot(it[k - 1:], smooth, label=key, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_metrics(rows: list, path, title: str = "") -> Path:
    fig, ax = plt.subplots(1, 2, figsize=(7, 3))
    names = [r["view"] for r in rows]
    ax[0].bar(names, [r["psnr"] for r in rows], color="tab:blue")
    ax[0].set_ylabel("PSNR (dB)")
    ax[1].bar(names, [r["ssim"] for r in rows], color="tab:green")
    ax[1].set_ylabel("SSIM")
    for a in ax:
        a.tick_params(axis="x", rotation=60, labelsize=6)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_masks(image, hard, soft, truth, path) -> Path:
    fig, ax = plt.subplots(1, 4, figsize=(8, 2.3))
    panels = ((image, "input"), (hard, "hard"), (soft, "soft"), (truth, "true static"))
    for a, (img, name) in zip(ax, panels):
        a.imshow(np.clip(img, 0, 1), cmap=None if np.ndim(img) == 3 else "gray", vmin=0, vmax=1)
        a.set_title(name, fontsize=8)
        a.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def write_run_report(run_dir) -> list:
    """Figures and CSVs for a finished run directory; returns written paths."""
    run = Path(run_dir)
    out = []
    if (run / "runlog.jsonl").exists():
        records = read_runlog(run / "runlog.jsonl")
        steps = [r for r in records if r.get("kind") == "step"]
        if steps:
            out.append(write_csv(steps, run / "losses.csv", ["iteration", "view"] + list(LOSS_KEYS) + ["count"]))
            out.append(plot_losses(steps, run / "losses.png"))
    if (run / "results.json").exists():
        res = json.loads((run / "results.json").read_text())
        rows = res["metrics"]["views"]
        out.append(write_csv(rows, run / "results.csv", ["view", "psnr", "ssim"]))
        out.append(plot_metrics(rows, run / "metrics.png", f"mean PSNR {res['metrics']['mean_psnr']:.2f} dB"))
    return out
