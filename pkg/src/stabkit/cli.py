"""``stabkit`` command line: gen-data, train, stabilize, evaluate.

Exit codes: 0 success, 1 usage or invalid input, 2 I/O, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datagen, engine, frameio, metrics, network, trainer
from .errors import CheckpointError, GeometryError, NumericError, StabkitError
from .geometry import Homography
from .image import Frame, resize

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stabkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dims(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 64x36, got {text!r}") from None
    if w < 2 or h < 2:
        raise argparse.ArgumentTypeError("dims must be at least 2x2")
    return w, h


def dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, seeds: dict, inputs, outputs, stats: dict):
    snap = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    dump_json(
        out_dir / "run_manifest.json",
        {
            "command": command,
            "config": snap,
            "seeds": seeds,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "tool_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "wall_clock": stats,
        },
    )


# -- commands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    if args.clips < 1 or args.frames < 2:
        raise UsageError("--clips must be >= 1 and --frames >= 2")
    manifest = datagen.generate_dataset(args.out, args.clips, args.frames, args.dims, args.jitter_amp, args.seed)
    write_manifest(
        args.out, "gen-data", args, {"master": args.seed, "clips": [c["seed"] for c in manifest["clips"]]},
        [], [args.out], {"seconds": time.perf_counter() - t0},
    )
    print(f"wrote {args.clips} clips to {args.out}")
    return EXIT_OK


def _net_config(args, dims) -> network.NetworkConfig:
    if args.layers:
        specs = []
        for tok in args.layers.split(","):
            ch, _, st = tok.partition("/")
            specs.append(network.ConvSpec(int(ch), 3, int(st or 2)))
        return network.NetworkConfig(dims[0], dims[1], tuple(specs))
    return network.NetworkConfig(dims[0], dims[1])


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    try:
        dataset = datagen.load_dataset(args.data)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid dataset {args.data}: {exc}") from exc
    if not dataset:
        raise UsageError("dataset has no clips")
    dims = (dataset[0].width, dataset[0].height)
    cfg = trainer.TrainerConfig(
        batch_size=args.batch,
        lr=args.lr,
        decay_every=args.decay_every,
        max_iter=args.max_iter,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        alpha=args.alpha,
        lam=args.lam,
        masked=args.masked,
        perturb_scale=args.perturb_scale,
        augment=not args.no_augment,
        border_mode=args.border_mode,
        clip_norm=None if args.clip_norm <= 0 else args.clip_norm,
    )
    if args.resume is not None:
        params0 = network.load_checkpoint(args.resume)
        net_cfg = params0.config
    else:
        net_cfg = _net_config(args, dims)

    def progress(row):
        if args.verbose and row["iteration"] % 100 == 0:
            print(f"iter {row['iteration']:6d} lr {row['lr']:.1e} total {row['total']:.6f}", file=sys.stderr)

    res = trainer.train(dataset, net_cfg, cfg, args.out, resume=args.resume, progress=progress)
    write_manifest(
        args.out, "train", args, {"master": args.seed}, [args.data] + ([args.resume] if args.resume else []),
        [res.checkpoint, args.out / "train_log.csv"], {"seconds": time.perf_counter() - t0},
    )
    if res.history:
        print(f"iterations {res.params.iteration}: total {res.history[0]['total']:.6f} -> {res.history[-1]['total']:.6f}")
    print(f"checkpoint {res.checkpoint}")
    return EXIT_OK


def _engine_config(args) -> engine.EngineConfig:
    return engine.EngineConfig.preset(args.offsets, r=args.r, crop="none" if args.crop == "none" else args.crop)


def _transforms_doc(hs) -> dict:
    return {"transforms": [h.to_list() for h in hs]}


def cmd_stabilize(args) -> int:
    t0 = time.perf_counter()
    params = network.load_checkpoint(args.ckpt)
    ecfg = _engine_config(args)
    if args.stream:
        return _stabilize_stream(args, params, ecfg)
    frames = frameio.read_sequence(args.input)
    res = engine.stabilize_clip(frames, params, ecfg)
    args.out.mkdir(parents=True, exist_ok=True)
    outs = res.cropped() if args.crop != "none" else list(res.frames)
    frameio.write_sequence(args.out, outs)
    dump_json(args.out / "transforms.json", _transforms_doc(res.transforms))
    dump_json(args.out / "crop.json", {"mode": args.crop, "rect": None if res.crop is None else res.crop.to_dict()})
    write_manifest(
        args.out, "stabilize", args, {}, [args.ckpt, args.input], [args.out],
        {"seconds": time.perf_counter() - t0, "per_frame_seconds": list(res.timings)},
    )
    print(f"stabilized {len(frames)} frames -> {args.out}")
    return EXIT_OK


def _stabilize_stream(args, params, ecfg) -> int:
    src = sys.stdin.buffer
    dst = sys.stdout.buffer
    hs = []
    for r in engine.stream(frameio.iter_stream(src), params, ecfg):
        f = r.frame if r.crop is None else r.crop.apply(r.frame)
        dst.write(frameio.to_pgm_bytes(f))
        dst.flush()
        hs.append(r.transform)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        dump_json(args.out / "transforms.json", _transforms_doc(hs))
    return EXIT_OK


def _load_transforms(path: Path) -> list[Homography]:
    doc = json.loads(Path(path).read_text())
    key = "transforms" if "transforms" in doc else "gt_transforms"
    if key not in doc:
        raise UsageError(f"{path}: no 'transforms' or 'gt_transforms' entry")
    return [Homography.from_params(p) for p in doc[key]]


def _table(rep_in: metrics.MetricReport | None, rep_out: metrics.MetricReport, names) -> str:
    cols = ([rep_in] if rep_in is not None else []) + [rep_out]
    head = f"{'metric':<16}" + "".join(f"{n:>12}" for n in names)
    rows = [head]
    for label, attr in (("cropping ratio", "cropping_ratio"), ("distortion", "distortion"), ("stability", "stability")):
        rows.append(f"{label:<16}" + "".join(f"{getattr(r, attr):>12.4f}" for r in cols))
    return "\n".join(rows)


def cmd_evaluate(args) -> int:
    inputs = frameio.read_sequence(args.input)
    outputs = frameio.read_sequence(args.output)
    if len(inputs) != len(outputs):
        raise UsageError(f"input has {len(inputs)} frames, output {len(outputs)}")
    w, h = inputs[0].width, inputs[0].height
    if any(f.shape != outputs[0].shape for f in outputs):
        raise UsageError("output frames differ in size")
    if (outputs[0].width, outputs[0].height) != (w, h):
        # cropped output is scaled back to the input size, as it would be displayed
        log.info("resizing %dx%d output to %dx%d", outputs[0].width, outputs[0].height, w, h)
        outputs = [resize(f, w, h) for f in outputs]
    if args.gt_transforms is not None:
        hs = _load_transforms(args.gt_transforms)
        if len(hs) != len(inputs):
            raise UsageError(f"{len(hs)} transforms for {len(inputs)} frames")
        if args.ground_truth is not None:
            gt = json.loads(args.ground_truth.read_text())
            inter = metrics.cams_to_interframe([Homography.from_params(p) for p in gt["unsteady_cams"]])
        else:
            inter = list(metrics.estimate_interframe(inputs, args.seed).transforms)
        rep = metrics.report_from_transforms(inter, hs, args.dc_inclusive)
        rep_in = metrics.report_from_transforms(inter, [Homography.identity()] * len(hs), args.dc_inclusive)
    else:
        rep_in = metrics.report(inputs, inputs, args.seed, args.dc_inclusive)
        same = all(a == b for a, b in zip(inputs, outputs))
        rep = rep_in if same else metrics.report(inputs, outputs, args.seed, args.dc_inclusive)
    doc = {"input": rep_in.to_dict(), "output": rep.to_dict()}
    if args.json is not None:
        dump_json(args.json, doc)
    if args.csv is not None:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        args.csv.write_text(rep.to_csv())
    print(_table(rep_in, rep, ("input", "output")))
    return EXIT_OK


# -- entry ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stabkit", description="Learned online video stabilization on synthetic data.")
    p.add_argument("--version", action="version", version=f"stabkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic steady/unsteady dataset")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--clips", type=int, default=16)
    g.add_argument("--frames", type=int, default=datagen.DEFAULT_FRAMES)
    g.add_argument("--dims", type=_dims, default=datagen.DEFAULT_DIMS)
    g.add_argument("--jitter-amp", type=float, default=0.06)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the stabilization network")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--decay-every", type=int, default=3000)
    t.add_argument("--max-iter", type=int, default=9000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", type=Path)
    t.add_argument("--checkpoint-every", type=int, default=1000)
    t.add_argument("--alpha", type=float, default=0.33)
    t.add_argument("--lam", type=float, default=30.0)
    t.add_argument("--masked", action="store_true", help="average pixel terms over valid pixels only")
    t.add_argument("--perturb-scale", type=float, default=1.0)
    t.add_argument("--border-mode", choices=datagen.BORDER_MODES, default="warp")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--clip-norm", type=float, default=10.0, help="<= 0 disables clipping")
    t.add_argument("--layers", help="conv stack as channels/stride, e.g. 8/2,16/2,32/2,64/2,128/2")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("stabilize", help="stabilize a PGM sequence or stream")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--in", dest="input", type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--stream", action="store_true", help="read PGMs on stdin, write PGMs on stdout")
    s.add_argument("--crop", choices=engine.CROP_MODES, default="final")
    s.add_argument("--offsets", choices=sorted(engine.OFFSET_PRESETS), default="paper-test")
    s.add_argument("--r", type=int, default=30)
    s.set_defaults(func=cmd_stabilize)

    e = sub.add_parser("evaluate", help="cropping ratio, distortion and stability")
    e.add_argument("--input", type=Path, required=True)
    e.add_argument("--output", type=Path, required=True)
    e.add_argument("--gt-transforms", type=Path, help="per-frame transforms (transforms.json or ground_truth.json)")
    e.add_argument("--ground-truth", type=Path, help="ground_truth.json supplying exact input camera paths")
    e.add_argument("--json", type=Path)
    e.add_argument("--csv", type=Path)
    e.add_argument("--dc-inclusive", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)
    return p


def _validate(args):
    if args.command == "stabilize":
        if not args.stream and (args.input is None or args.out is None):
            raise UsageError("stabilize needs --in and --out (or --stream)")
        if args.stream and args.crop == "final":
            args.crop = "running"  # a final crop needs the whole clip


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(args)
    except UsageError as exc:
        print(f"stabkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stabkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, GeometryError, ArithmeticError) as exc:
        print(f"stabkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"stabkit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StabkitError, ValueError) as exc:
        print(f"stabkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
