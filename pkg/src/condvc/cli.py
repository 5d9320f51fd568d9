"""Command-line entry point: encode, decode, eval, bdrate, ablate, train,
complexity."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ablation import TABLES, AblationGrid, ablation_run
from .checkpoint import load_checkpoint
from .config import ModelConfig, TrainConfig
from .entropy.bitstream import LAMBDAS, Bitstream
from .frames import IMAGE_SUFFIXES, load_frame, load_sequence, save_frame
from .metrics import BD_METHOD_NOTE, aggregate_bpp, bd_rate, bpp, fmt_db, psnr_from_mse, psnr_rgb
from .pipeline import decode_gop, encode_gop, lambda_index
from .report import plot_frame_profile, plot_rd_curves, read_rd_csv, write_frame_profile, write_table_csv

log = logging.getLogger("condvc")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def cmd_encode(a) -> int:
    frames = load_sequence(a.input, a.width, a.height)
    if a.frames:
        frames = frames[: a.frames]
    model, manifest = load_checkpoint(a.ckpt)
    res = encode_gop(model, frames, a.gop, lambda_index(a.lmbda), arithmetic=not a.no_arith,
                     model_lambda=manifest.get("lambda"))
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if res.bitstream is not None:
        out.write_bytes(res.bitstream.to_bytes())
    h, w = frames[0].shape
    points = [p.to_dict() for p in res.points]
    meta = {
        "width": w, "height": h, "gop": a.gop, "lambda": a.lmbda,
        "arithmetic": not a.no_arith,
        "bpp": aggregate_bpp((p.bits, h, w) for p in res.points),
    }
    side = write_frame_profile(_sidecar(out), points, meta)
    plot_frame_profile(points, side.with_suffix(".png"))
    if a.recon:
        rdir = Path(a.recon)
        rdir.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(res.reconstructions):
            save_frame(f, rdir / f"frame_{i:04d}.png")
    print(f"{len(frames)} frames, {meta['bpp']:.4f} bpp -> {out if res.bitstream else side}")
    return 0


def cmd_decode(a) -> int:
    data = Path(a.inp).read_bytes()
    bs = Bitstream.from_bytes(data)
    model, manifest = load_checkpoint(a.ckpt)
    frames = decode_gop(bs, model, model_lambda=manifest.get("lambda"))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_frame(f, out / f"frame_{i:04d}.png")
    print(f"decoded {len(frames)} frames to {out}")
    return 0


def _image_files(d) -> list[Path]:
    files = sorted(p for p in Path(d).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no image frames in {d}")
    return files


def cmd_eval(a) -> int:
    recon, orig = _image_files(a.recon), _image_files(a.orig)
    if len(recon) > len(orig):
        raise ValueError(f"{len(recon)} reconstructions but only {len(orig)} originals")
    side = json.loads(Path(a.bits).read_text())
    bits = [f["bits"] for f in side["frames"]]
    if len(bits) != len(recon):
        raise ValueError(f"bits file lists {len(bits)} frames, found {len(recon)} reconstructions")
    rows, sq, n = [], 0.0, 0
    for i, (r, o, b) in enumerate(zip(recon, orig, bits)):
        fr, fo = load_frame(r), load_frame(o)
        x = np.round(fo.data * 255.0)
        y = np.round(fr.data * 255.0)
        if x.shape != y.shape:
            raise ValueError(f"frame {i}: shape mismatch {x.shape} vs {y.shape}")
        h, w = fo.shape
        sq += float(((x - y) ** 2).sum())
        n += x.size
        rows.append([i, b, bpp(b, h, w), fmt_db(psnr_rgb(x, y, 255.0))])
    h, w = load_frame(orig[0]).shape
    total_bpp = aggregate_bpp((b, h, w) for b in bits)
    total_psnr = psnr_from_mse(sq / n, 255.0)
    if a.out:
        out = Path(a.out)
        write_table_csv(out, ["frame", "bits", "bpp", "psnr"], rows)
        plot_frame_profile([{"frame": r[0], "bpp": r[2], "psnr": r[3]} for r in rows], out.with_suffix(".png"))
    print(json.dumps({"frames": len(rows), "bpp": total_bpp, "psnr": fmt_db(total_psnr)}))
    return 0


def cmd_bdrate(a) -> int:
    anchor, test = read_rd_csv(a.anchor, "anchor"), read_rd_csv(a.test, "test")
    value = bd_rate(anchor, test)
    if a.plot:
        plot_rd_curves([anchor, test], a.plot, title=f"BD-rate {value:+.2f}%")
    print(f"BD-rate: {value:+.3f}%")
    print(f"method: {BD_METHOD_NOTE}")
    return 0


def _read_kv(path) -> dict[str, str]:
    kv = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split(sep, 1))
        kv[k] = v
    return kv


def _load_sequences(path, n_frames: int | None = None) -> list:
    """A directory of frames, or a directory of such directories."""
    path = Path(path)
    subdirs = sorted(p for p in path.iterdir() if p.is_dir()) if path.is_dir() else []
    seqs = [load_sequence(d) for d in subdirs] if subdirs else [load_sequence(path)]
    return [s[:n_frames] if n_frames else s for s in seqs]


def cmd_ablate(a) -> int:
    kv = _read_kv(a.grid)
    settings = {k.split(".", 1)[1]: v for k, v in kv.items() if k.startswith("setting.")}
    if "data" not in kv:
        raise ValueError("grid config needs a 'data' entry")
    grid = AblationGrid(
        settings=settings,
        sequences=_load_sequences(kv["data"], int(kv["frames"]) if "frames" in kv else None),
        gop=int(kv.get("gop", 32)),
        lambdas=tuple(int(x) for x in kv.get("lambdas", " ".join(map(str, LAMBDAS))).replace(",", " ").split()),
        arithmetic=kv.get("arithmetic", "false").lower() in ("1", "true", "yes"),
    )
    tables = tuple(kv.get("tables", "table1").replace(",", " ").split())
    out = Path(a.out or kv.get("out", "ablation"))
    result = ablation_run(grid, tables, out)
    for key, rows in result["tables"].items():
        print(f"{key} (anchor {TABLES[key].anchor}): " + ", ".join(f"{c}={v:+.2f}%" for c, v in rows))
    print(f"method: {BD_METHOD_NOTE}")
    return 0


def cmd_train(a) -> int:
    from .synthetic import translating_dataset
    from .training import run_stage, stage_config

    tcfg = TrainConfig.from_file(a.config) if a.config else TrainConfig()
    stage = stage_config(tcfg.stage, steps=tcfg.steps)
    stage.lambdas = tuple(l for l in stage.lambdas if l in tcfg.lambdas) or stage.lambdas[:1]
    if tcfg.stage == 1:
        stage.phases[0].clip_len = tcfg.clip_len
    if a.data == "synthetic":
        seqs = translating_dataset(16, 8, max(tcfg.crop, 64), seed=tcfg.seed)
    else:
        seqs = _load_sequences(a.data)
    model_cfg = ModelConfig.toy() if a.toy else ModelConfig()
    if tcfg.feature_mod is not None:
        stage.model_flags = {**stage.model_flags, "feature_mod": tcfg.feature_mod}
    out = run_stage(stage, seqs, a.ckpt, a.out, tcfg, model_cfg, log_path=Path(a.out) / f"stage{tcfg.stage}_log.csv")
    for lam, p in out.items():
        print(f"lambda={lam}: {p}")
    return 0


def cmd_complexity(a) -> int:
    from .complexity import complexity_report
    from .model import VideoCodec

    if a.ckpt:
        model, _ = load_checkpoint(a.ckpt)
    else:
        model = VideoCodec(ModelConfig.toy() if a.toy else ModelConfig())
    w, h = (int(v) for v in a.resolution.lower().split("x"))
    print(json.dumps(complexity_report(model, (h, w)).to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condvc", description="Conditional learned P-frame video codec")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    e = sub.add_parser("encode", help="code a frame sequence")
    e.add_argument("--input", required=True, help="frame directory or raw RGB24 file")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--gop", type=int, default=32)
    e.add_argument("--lambda", dest="lmbda", type=int, choices=LAMBDAS, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--no-arith", action="store_true", help="estimate rates only, write no bitstream")
    e.add_argument("--width", type=int)
    e.add_argument("--height", type=int)
    e.add_argument("--frames", type=int, help="code only the first N frames")
    e.add_argument("--recon", help="also write encoder-side reconstructions here")
    e.set_defaults(fn=cmd_encode)

    d = sub.add_parser("decode", help="decode a bitstream to PNG frames")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_decode)

    v = sub.add_parser("eval", help="PSNR-RGB and bpp of decoded frames")
    v.add_argument("--recon", required=True)
    v.add_argument("--orig", required=True)
    v.add_argument("--bits", required=True, help="JSON sidecar written by encode")
    v.add_argument("--out", help="per-frame CSV (a profile figure is written next to it)")
    v.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bdrate", help="BD-rate between two lambda,bpp,psnr CSV files")
    b.add_argument("--anchor", required=True)
    b.add_argument("--test", required=True)
    b.add_argument("--plot", help="write the two RD curves to this image")
    b.set_defaults(fn=cmd_bdrate)

    g = sub.add_parser("ablate", help="BD-rate tables over a grid of checkpoints")
    g.add_argument("--grid", required=True)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_ablate)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--config")
    t.add_argument("--data", default="synthetic", help="frame directory, directory of sequences, or 'synthetic'")
    t.add_argument("--ckpt", help="checkpoint from the previous stage")
    t.add_argument("--out", default="checkpoints")
    t.add_argument("--toy", action="store_true", help="narrow model widths")
    t.set_defaults(fn=cmd_train)

    c = sub.add_parser("complexity", help="parameters, KMACs/pixel and buffer size")
    c.add_argument("--ckpt")
    c.add_argument("--toy", action="store_true")
    c.add_argument("--resolution", default="64x64", help="WxH")
    c.set_defaults(fn=cmd_complexity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
