"""Command-line entry point: ``awfgan {train,fuse,eval,wavelet,mask}``.

Exit codes: 0 on success, 1 with a one-line ``awfgan <cmd>: error: ...``
diagnostic on failure, 2 on usage errors (argparse).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .images import load_image, match_stems, paired_dataset, save_image
from .mask import extract_target_mask, label_image, threshold_map
from .metrics import MetricReport, evaluate_pair
from .trainer import fuse, load_checkpoint, load_config, train
from .wavelet import SUBBAND_ORDER, haar_dwt2


def _with_suffix(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{path.suffix}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    pairs = paired_dataset(args.data)
    resume = load_checkpoint(args.resume) if args.resume else None
    final = train(pairs, cfg, run_dir=args.out, resume=resume)
    print(f"trained {final.step} steps on {len(pairs)} pairs; checkpoint: {Path(args.out) / 'checkpoint.ckpt'}")
    return 0


def cmd_fuse(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ir, vi = load_image(args.ir), load_image(args.vi)
    fused, ai, av = fuse(ir, vi, ckpt, return_attention=True)
    save_image(fused, args.out)
    if args.dump_attention:
        d = Path(args.dump_attention)
        d.mkdir(parents=True, exist_ok=True)
        save_image(ai, d / "attention_ir.pgm")
        save_image(av, d / "attention_vi.pgm")
        np.savez(d / "attention.npz", ir=ai, vi=av)
    return 0


def _summary(reports: dict[str, MetricReport]) -> dict:
    out = {"pairs": len(reports)}
    for k in MetricReport.FIELDS:
        v = np.array([getattr(r, k) for r in reports.values()])
        out[k] = {"mean": float(v.mean()), "median": float(np.median(v))}
    return out


def cmd_eval(args) -> int:
    stems, table = match_stems(args.ir_dir, args.vi_dir, args.fused_dir)
    if not stems:
        raise ValueError("no image triples found")
    reports = {}
    for s in stems:
        a, b, f = (load_image(p) for p in table[s])
        if not a.shape == b.shape == f.shape:
            raise ValueError(f"pair {s!r}: image sizes differ ({a.shape}, {b.shape}, {f.shape})")
        reports[s] = evaluate_pair(a, b, f, scd_variant=args.scd_variant)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("pair",) + MetricReport.FIELDS)
        for s in stems:
            w.writerow([s] + [repr(v) for v in reports[s].values()])
    summary_path = Path(args.summary) if args.summary else out.with_suffix(".json")
    summary_path.write_text(json.dumps(_summary(reports), indent=2) + "\n")
    return 0


def cmd_wavelet(args) -> int:
    s = haar_dwt2(load_image(args.input))
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    # display scaling: LL spans [0, 2], detail bands [-1, 1]
    for name in SUBBAND_ORDER:
        band = getattr(s, name)
        save_image(band / 2.0 if name == "LL" else 0.5 + band / 2.0, d / f"{name}.pgm")
    np.savez(d / "subbands.npz", **{name: getattr(s, name) for name in SUBBAND_ORDER})
    return 0


def cmd_mask(args) -> int:
    att = load_image(args.attention)
    out = Path(args.out)
    binary = threshold_map(att)
    save_image(extract_target_mask(att), out)
    save_image(binary, _with_suffix(out, "threshold"))
    labels = label_image(binary)
    save_image(labels / max(labels.max(), 1), _with_suffix(out, "components"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="awfgan", description="Infrared/visible image fusion with wavelet-guided GANs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every training step")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on paired ir/ and vi/ directories")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--data", required=True, help="directory with ir/ and vi/ subdirectories")
    t.add_argument("--out", required=True, help="run directory for checkpoints and the loss log")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--ir", required=True)
    f.add_argument("--vi", required=True)
    f.add_argument("--out", required=True, help="output image (.pgm or .png)")
    f.add_argument("--dump-attention", metavar="DIR", help="also write both attention maps here")
    f.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", help="score fused images against their sources")
    e.add_argument("--ir-dir", required=True)
    e.add_argument("--vi-dir", required=True)
    e.add_argument("--fused-dir", required=True)
    e.add_argument("--out", required=True, help="per-pair CSV report")
    e.add_argument("--summary", help="JSON summary path (default: report path with .json)")
    e.add_argument("--scd-variant", choices=("direct", "difference"), default="direct")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("wavelet", help="one-level Haar decomposition of an image")
    w.add_argument("--in", dest="input", required=True)
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_wavelet)

    m = sub.add_parser("mask", help="target mask from an attention map image")
    m.add_argument("--attention", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # every failure becomes a one-line diagnostic
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"awfgan {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
