"""CSV/JSON outputs and the matching matplotlib figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import BD_METHOD_NOTE, RDCurve, fmt_db, parse_db  # noqa: E402

RD_FIELDS = ("lambda", "bpp", "psnr")


def write_rd_csv(path, rows: Sequence[tuple[int, float, float]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RD_FIELDS)
        for lam, b, p in rows:
            w.writerow([lam, repr(float(b)), fmt_db(float(p))])
    return path


def read_rd_csv(path, label: str | None = None) -> RDCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RD_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)} (expected {','.join(RD_FIELDS)})")
        pts = [(float(r["bpp"]), parse_db(r["psnr"])) for r in reader]
    if not pts:
        raise ValueError(f"{path}: no RD points")
    return RDCurve.from_points(pts, label or Path(path).stem)


def write_frame_profile(path, points: Sequence[dict], meta: dict | None = None) -> Path:
    """JSON sidecar: stream metadata plus per-frame (frame, bpp, psnr)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**(meta or {}), "frames": list(points)}, indent=2))
    return path


def plot_frame_profile(points: Sequence[dict], path) -> Path:
    idx = [p["frame"] for p in points]
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(6, 4.5))
    a1.bar(idx, [p["bpp"] for p in points], color=["tab:red" if p.get("type") == "I" else "tab:blue" for p in points])
    a1.set_ylabel("bpp")
    a2.plot(idx, [parse_db(p["psnr"]) for p in points], marker="o", ms=3)
    a2.set_ylabel("PSNR-RGB (dB)")
    a2.set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_rd_curves(curves: Sequence[RDCurve], path, title: str = "", note: str | None = BD_METHOD_NOTE) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for c in curves:
        ax.plot(c.bpp, c.psnr, marker="o", label=c.label)
    ax.set_xlabel("bpp")
    ax.set_ylabel("PSNR-RGB (dB)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    if note:
        fig.text(0.01, 0.005, note, fontsize=6, va="bottom")
    fig.tight_layout(rect=(0, 0.04, 1, 1))
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def write_table_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path
