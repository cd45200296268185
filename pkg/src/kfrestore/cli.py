"""Command-line entry point (``kfrestore`` / ``python -m kfrestore``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import geometry as geo
from .errors import KFRError
from .fusion import init_weights, zero_residual
from .pipeline import (PipelineConfig, list_images, load_manifest, pair_training_frames, read_image,
                       run_stream, simulate_policy, write_image)


def _restore(args) -> int:
    config = PipelineConfig.from_file(
        args.config, max_cardinality=args.max_cardinality, policy=args.policy,
        crop_size=args.crop_size, weightfile=args.weights, grid_step=args.grid_step,
        landmark_radius=args.landmark_radius, paste_back=True if args.paste_back else None)
    records = load_manifest(args.manifest)
    report = run_stream(records, config, out_dir=args.out)
    agg = report.to_dict()["aggregate"]
    print(json.dumps(agg, sort_keys=True))
    return 0


def _simulate(args) -> int:
    config = PipelineConfig.from_file(args.config, max_cardinality=args.max_cardinality,
                                      policy=args.policy)
    records = load_manifest(args.manifest, require_images=False)
    text = simulate_policy(records, config).to_jsonl()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _warp(args) -> int:
    src = read_image(args.src)
    h, w = src.shape[:2]
    field = geo.mls_build_field(geo.read_landmarks(args.src_landmarks, n=None),
                                geo.read_landmarks(args.dst_landmarks, n=None), w, h, args.grid_step)
    write_image(args.out, geo.warp_image(src, field))
    return 0


def _pair(args) -> int:
    raw = list_images(args.raw_dir)
    deg = list_images(args.degraded_dir)
    lines = []
    for i, (r, d) in enumerate(pair_training_frames(raw, deg, args.offset, args.stride)):
        lines.append(json.dumps({"pair": i, "reference": str(r), "degraded": str(d)}) + "\n")
    text = "".join(lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _init_weights(args) -> int:
    channels = tuple(int(c) for c in args.channels.split(",")) if args.channels else None
    store = init_weights(args.seed, channels)
    if args.zero_residual:
        store = zero_residual(store)
    store.save(args.out)
    print(f"wrote {len(store)} tensors to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kfrestore", description="Keyframe-guided face restoration engine")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("restore", help="restore the non-keyframes of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="weight file (overrides config weightfile)")
    p.add_argument("--max-cardinality", type=int)
    p.add_argument("--policy", choices=["lfu", "maxdist"])
    p.add_argument("--crop-size", type=int)
    p.add_argument("--grid-step", type=int)
    p.add_argument("--landmark-radius", type=float)
    p.add_argument("--paste-back", action="store_true")
    p.set_defaults(func=_restore)

    p = sub.add_parser("simulate-policy", help="replay only the keyframe policy over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", choices=["lfu", "maxdist"])
    p.add_argument("--max-cardinality", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_simulate)

    p = sub.add_parser("warp", help="MLS-warp an image from one landmark set onto another")
    p.add_argument("--src", required=True)
    p.add_argument("--src-landmarks", required=True)
    p.add_argument("--dst-landmarks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-step", type=int, default=4)
    p.set_defaults(func=_warp)

    p = sub.add_parser("pair", help="pair raw reference frames with offset degraded frames")
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--degraded-dir", required=True)
    p.add_argument("--offset", type=int, default=5)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=_pair)

    p = sub.add_parser("init-weights", help="write a seeded weight file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", help="comma-separated extractor channels, e.g. 8,16,32,32")
    p.add_argument("--zero-residual", action="store_true")
    p.set_defaults(func=_init_weights)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KFRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
