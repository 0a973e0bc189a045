"""Command line entry point: one subcommand per pipeline stage.

Every invocation prints exactly one JSON object on stdout; logs go to
stderr. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical or
solver error. Outputs are written through a temp file and a rename, so a
failed run never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .atlas import (atlas_preview_png, build_sphere_lattice, decode_atlas, encode_atlas, assign_to_sphere,
                    load_atlas, load_lattice, save_atlas, save_lattice)
from .corruption import CorruptionSpec, Strategy, corrupt
from .dataset import build_dataset, verify_dataset
from .diffusion import OracleDenoiser, SamplerConfig, build_schedule, inpaint_nearest, sample
from .errors import DataError, NumericalError
from .fileio import atomic_write, load_mesh, load_point_cloud, write_point_cloud
from .metrics import DEFAULT_EDGE_RADIUS, DEFAULT_EDGE_TAU, DEFAULT_SAMPLES, evaluate_pair

log = logging.getLogger("pcatlas")

THREADS_ENV = "PCATLAS_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so the caller controls output and exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1), got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _default_workers():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ------------------------------------------------------------------ commands


def cmd_lattice_build(args):
    lattice = build_sphere_lattice(args.points, seed=args.seed, solver=args.solver)
    save_lattice(lattice, args.output)
    return {"n_sites": lattice.n_sites, "side": lattice.side, "phase": lattice.phase, "output": str(args.output)}


def cmd_encode(args):
    cloud = load_point_cloud(args.input)
    lattice = load_lattice(args.lattice)
    assignment = assign_to_sphere(cloud, lattice, args.solver)
    atlas = encode_atlas(cloud, lattice, assignment)
    save_atlas(atlas, args.output)
    if args.preview:
        atomic_write(args.preview, atlas_preview_png(atlas))
    return {"n_points": cloud.n_valid, "side": atlas.side, "valid_pixels": int(atlas.mask.sum()),
            "cost": assignment.cost, "solver": assignment.solver, "output": str(args.output)}


def cmd_decode(args):
    atlas = load_atlas(args.input)
    cloud = decode_atlas(atlas, load_lattice(args.lattice))
    atomic_write(args.output, write_point_cloud(cloud))
    return {"n_points": len(cloud), "output": str(args.output)}


def cmd_corrupt(args):
    cloud = load_point_cloud(args.input)
    spec = CorruptionSpec(Strategy(args.strategy), args.fraction, args.sigma, args.seed)
    out = corrupt(cloud, spec)
    atomic_write(args.output, write_point_cloud(out))
    return {"n_in": cloud.n_valid, "n_out": len(out), "corruption": spec.to_dict(), "output": str(args.output)}


def cmd_inpaint(args):
    x_hat = load_atlas(args.input)
    if args.method == "nearest":
        result = inpaint_nearest(x_hat)
    else:
        if args.target is None:
            raise UsageError("inpaint --method oracle requires --target")
        schedule = build_schedule()
        target = load_atlas(args.target)
        cfg = SamplerConfig(steps=args.steps, schedule=schedule, seed=args.seed)
        result = sample(OracleDenoiser(target, x_hat, schedule), x_hat, cfg)
    save_atlas(result, args.output)
    return {"method": args.method, "steps": args.steps if args.method == "oracle" else 0,
            "holes_filled": int((~x_hat.mask).sum()), "output": str(args.output)}


def cmd_eval(args):
    pred = load_mesh(args.pred)
    gt = load_mesh(args.gt)
    return evaluate_pair(pred, gt, args.samples, args.seed, args.radius, args.tau).to_dict()


def cmd_dataset_build(args):
    spec = CorruptionSpec(crop_fraction=args.fraction, sigma=args.sigma)
    manifest = build_dataset(args.input_dir, args.output_dir, args.points, args.seed, spec, args.workers,
                             shared_assignment=args.shared_assignment)
    counts = manifest.split_counts()
    return {"n_entries": len(manifest.entries), "train": counts["train"], "test": counts["test"],
            "rejected": manifest.rejected, "manifest": str(Path(args.output_dir) / "manifest.json")}


def cmd_dataset_verify(args):
    report = verify_dataset(args.manifest)
    if not report["ok"]:
        report["exit_code"] = EXIT_DATA
    return report


def cmd_roundtrip(args):
    cloud = load_point_cloud(args.input)
    lattice = load_lattice(args.lattice)
    assignment = assign_to_sphere(cloud, lattice, args.solver)
    decoded = decode_atlas(encode_atlas(cloud, lattice, assignment), lattice)
    # Decoded points come out in pixel order; pair each input point with its pixel.
    valid = ~cloud.is_hole
    pixel = lattice.grid_perm[assignment.map[valid]]
    rank = np.empty(lattice.n_sites, dtype=np.int64)
    rank[np.sort(pixel)] = np.arange(len(pixel))
    back = decoded.subset(rank[pixel])
    pos_err = float(np.abs(back.positions - cloud.positions[valid]).max()) if len(pixel) else 0.0
    nrm_err = float(np.abs(back.normals - cloud.normals[valid]).max()) if len(pixel) else 0.0
    return {"n_points": int(valid.sum()), "max_position_error": pos_err, "max_normal_error": nrm_err}


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcatlas", description="Point cloud atlas encoding, corruption and inpainting.")
    p.add_argument("--version", action="store_true", help="print tool and schema versions")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    lat = sub.add_parser("lattice", help="sphere lattice files").add_subparsers(dest="action", parser_class=_Parser)
    lb = lat.add_parser("build", help="build a lattice and its pixel assignment")
    lb.add_argument("--points", type=_positive_int, required=True, help="number of sites, a perfect square")
    lb.add_argument("--seed", type=int, default=0)
    lb.add_argument("--solver", choices=["auto", "exact", "auction"], default="auto")
    lb.add_argument("--output", type=Path, required=True)
    lb.set_defaults(func=cmd_lattice_build)

    enc = sub.add_parser("encode", help="point cloud -> atlas")
    enc.add_argument("--input", type=Path, required=True)
    enc.add_argument("--lattice", type=Path, required=True)
    enc.add_argument("--output", type=Path, required=True)
    enc.add_argument("--solver", choices=["auto", "exact", "auction"], default="auto")
    enc.add_argument("--preview", type=Path, help="also write a PNG preview of the offsets")
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="atlas -> point cloud")
    dec.add_argument("--input", type=Path, required=True)
    dec.add_argument("--lattice", type=Path, required=True)
    dec.add_argument("--output", type=Path, required=True)
    dec.set_defaults(func=cmd_decode)

    cor = sub.add_parser("corrupt", help="crop and jitter a point cloud")
    cor.add_argument("--input", type=Path, required=True)
    cor.add_argument("--output", type=Path, required=True)
    cor.add_argument("--strategy", choices=[s.value for s in Strategy], default="random")
    cor.add_argument("--fraction", type=_fraction, default=0.2)
    cor.add_argument("--sigma", type=_nonneg_float, default=0.005)
    cor.add_argument("--seed", type=int, default=0)
    cor.set_defaults(func=cmd_corrupt)

    inp = sub.add_parser("inpaint", help="fill the holes of an atlas")
    inp.add_argument("--method", choices=["nearest", "oracle"], default="nearest")
    inp.add_argument("--steps", type=_positive_int, default=20)
    inp.add_argument("--seed", type=int, default=0)
    inp.add_argument("--input", type=Path, required=True)
    inp.add_argument("--target", type=Path, help="ground-truth atlas (oracle only)")
    inp.add_argument("--output", type=Path, required=True)
    inp.set_defaults(func=cmd_inpaint)

    ev = sub.add_parser("eval", help="compare a generated mesh with the ground truth")
    ev.add_argument("--pred", type=Path, required=True)
    ev.add_argument("--gt", type=Path, required=True)
    ev.add_argument("--samples", type=_positive_int, default=DEFAULT_SAMPLES)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--radius", type=_nonneg_float, default=DEFAULT_EDGE_RADIUS)
    ev.add_argument("--tau", type=_fraction, default=DEFAULT_EDGE_TAU)
    ev.set_defaults(func=cmd_eval)

    ds = sub.add_parser("dataset", help="corpus construction").add_subparsers(dest="action", parser_class=_Parser)
    db = ds.add_parser("build", help="build a dataset from a directory of meshes")
    db.add_argument("--input-dir", type=Path, required=True)
    db.add_argument("--output-dir", type=Path, required=True)
    db.add_argument("--points", type=_positive_int, default=16384)
    db.add_argument("--seed", type=int, default=0)
    db.add_argument("--fraction", type=_fraction, default=0.2)
    db.add_argument("--sigma", type=_nonneg_float, default=0.005)
    db.add_argument("--workers", type=_positive_int, default=None,
                    help=f"worker processes (default: ${THREADS_ENV} or 1)")
    db.add_argument("--shared-assignment", action="store_true",
                    help="encode corrupted clouds on their clean sites instead of a fresh assignment")
    db.set_defaults(func=cmd_dataset_build)

    dv = ds.add_parser("verify", help="re-check a built dataset")
    dv.add_argument("--manifest", type=Path, required=True)
    dv.set_defaults(func=cmd_dataset_verify)

    rt = sub.add_parser("roundtrip", help="encode then decode a cloud and report the error")
    rt.add_argument("--input", type=Path, required=True)
    rt.add_argument("--lattice", type=Path, required=True)
    rt.add_argument("--solver", choices=["auto", "exact", "auction"], default="auto")
    rt.set_defaults(func=cmd_roundtrip)
    return p


def _emit(obj, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(obj, sort_keys=True) + "\n")
    stream.flush()


def _error(kind, exc):
    return {"error": kind, "type": type(exc).__name__, "message": str(exc)}


def run(argv=None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            _emit({"tool_version": __version__, "schema_version": SCHEMA_VERSION})
            return EXIT_OK
        if getattr(args, "func", None) is None:
            raise UsageError("missing subcommand; see --help")
        if getattr(args, "workers", 0) is None:
            args.workers = _default_workers()
    except UsageError as exc:
        _emit(_error("usage", exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except UsageError as exc:
        _emit(_error("usage", exc))
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        _emit(_error("data", exc))
        return EXIT_DATA
    except NumericalError as exc:
        log.error("%s", exc)
        _emit(_error("numerical", exc))
        return EXIT_NUMERICAL
    except ValueError as exc:
        # Remaining ValueErrors are invalid option combinations caught late.
        _emit(_error("usage", exc))
        return EXIT_USAGE
    code = result.pop("exit_code", EXIT_OK) if isinstance(result, dict) else EXIT_OK
    _emit(result)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
