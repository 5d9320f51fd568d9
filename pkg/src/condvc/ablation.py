"""Ablation tables: code a test set with one checkpoint per (setting, lambda)
and report BD-rates against each table's anchor setting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .checkpoint import load_checkpoint
from .entropy.bitstream import LAMBDAS
from .frames import Frame
from .metrics import BD_METHOD_NOTE, RDCurve, aggregate_bpp, bd_rate, psnr_from_mse
from .pipeline import encode_gop, lambda_index
from .report import plot_rd_curves, write_rd_csv, write_table_csv


@dataclass(frozen=True)
class TableSpec:
    name: str
    anchor: str
    columns: tuple[str, ...]
    rows: dict[str, tuple[str, ...]]  # method row -> settings that enable it
    # published numbers, rendered as notes next to the desk-scale table
    reference: dict[str, tuple[float, ...]] = field(default_factory=dict)


TABLES = {
    "table1": TableSpec(
        "incremental",
        anchor="anchor",
        columns=("a", "b", "c", "d"),
        rows={
            "EPA & round-based training": ("a", "b", "c", "d"),
            "Multi-scale MCNet": ("b", "c", "d"),
            "Modulated loss with feature map modulation": ("c", "d"),
            "Quadtree partition-based entropy model": ("d",),
        },
        reference={
            "UVG": (-8.2, -17.0, -25.6, -40.2),
            "HEVC-B": (-8.7, -8.4, -23.8, -38.1),
            "MCL-JCV": (-9.1, -13.9, -22.0, -35.5),
        },
    ),
    "table4": TableSpec(
        "modulation",
        anchor="b",
        columns=("mod_loss", "feat_mod", "mod_loss_feat_mod"),
        rows={
            "Feature map modulation": ("feat_mod", "mod_loss_feat_mod"),
            "Modulated loss": ("mod_loss", "mod_loss_feat_mod"),
        },
    ),
    "table5": TableSpec(
        "adapted-modules",
        anchor="b",
        columns=("fe", "fe_grid", "fe_grid_inter", "grid_last"),
        rows={
            "Multi-scale feature extractor": ("fe", "fe_grid", "fe_grid_inter"),
            "GridNet": ("fe_grid", "fe_grid_inter"),
            "Inter-frame codec": ("fe_grid_inter",),
            "GridNet (last layer only)": ("grid_last",),
        },
    ),
}


@dataclass
class AblationGrid:
    """Where each setting's checkpoints live, plus the test material."""

    settings: dict[str, str]  # setting -> path pattern containing "{lambda}"
    sequences: list[list[Frame]]
    gop: int = 32
    lambdas: tuple[int, ...] = LAMBDAS
    arithmetic: bool = False

    def checkpoint(self, setting: str, lmbda: int) -> Path:
        if setting not in self.settings:
            raise KeyError(f"setting {setting!r} not in grid")
        path = Path(self.settings[setting].format(**{"lambda": lmbda}))
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint for setting {setting!r}, lambda={lmbda}: {path}")
        return path


def rd_point(model, sequences: Sequence[Sequence[Frame]], gop: int, lmbda: int, arithmetic: bool = False):
    """Dataset bpp (total bits / total pixels) and PSNR of the pooled MSE."""
    items, sq, n = [], 0.0, 0
    for seq in sequences:
        res = encode_gop(model, seq, gop, lambda_index(lmbda), arithmetic=arithmetic)
        h, w = seq[0].shape
        for p, f, r in zip(res.points, seq, res.reconstructions):
            items.append((p.bits, h, w))
            sq += float(((f.cropped().data.astype("float64") - r.data) ** 2).sum())
            n += f.cropped().data.size
    return aggregate_bpp(items), psnr_from_mse(sq / n)


def setting_curve(grid: AblationGrid, setting: str) -> tuple[RDCurve, list[tuple[int, float, float]]]:
    rows = []
    for lmbda in grid.lambdas:
        model, _ = load_checkpoint(grid.checkpoint(setting, lmbda))
        b, p = rd_point(model, grid.sequences, grid.gop, lmbda, grid.arithmetic)
        rows.append((lmbda, b, p))
    return RDCurve.from_points([(b, p) for _, b, p in rows], setting), rows


def bd_table(spec: TableSpec, curves: dict[str, RDCurve]) -> list[tuple[str, float]]:
    anchor = curves[spec.anchor]
    out = []
    for col in spec.columns:
        if col not in curves:
            out.append((col, math.nan))
            continue
        try:
            out.append((col, bd_rate(anchor, curves[col])))
        except ValueError:
            out.append((col, math.nan))
    return out


def ablation_run(grid: AblationGrid, tables: Sequence[str] = ("table1",), out_dir=None) -> dict:
    """Code every needed setting, then emit the requested BD-rate tables.

    Every column of a table must be present in the grid; the anchor is
    required.
    """
    specs = [TABLES[t] for t in tables]
    needed = []
    for s in specs:
        for name in (s.anchor, *s.columns):
            if name not in needed:
                needed.append(name)
    missing = [n for n in needed if n not in grid.settings]
    if missing:
        raise FileNotFoundError(f"missing checkpoint settings in grid: {missing}")
    curves, rows = {}, {}
    for name in needed:
        curves[name], rows[name] = setting_curve(grid, name)
    result = {"curves": curves, "tables": {}, "note": BD_METHOD_NOTE}
    for key, s in zip(tables, specs):
        result["tables"][key] = bd_table(s, curves)
    if out_dir is not None:
        write_ablation(result, rows, specs, tables, Path(out_dir))
    return result


def write_ablation(result: dict, rows: dict, specs, keys, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, r in rows.items():
        write_rd_csv(out / f"rd_{name}.csv", r)
    for key, spec in zip(keys, specs):
        table = result["tables"][key]
        header = ["method", *spec.columns]
        body = [[m, *("x" if c in on else "" for c in spec.columns)] for m, on in spec.rows.items()]
        body.append(["BD-rate (%) desk", *(f"{v:.2f}" for _, v in table)])
        for ds, vals in spec.reference.items():
            body.append([f"published {ds} (note only)", *(f"{v:.1f}" for v in vals)])
        write_table_csv(out / f"{key}.csv", header, body)
        plot_rd_curves(
            [result["curves"][n] for n in (spec.anchor, *spec.columns)],
            out / f"{key}_rd.png",
            title=f"{spec.name} (anchor: {spec.anchor})",
        )
