"""Command line interface: dataset generation, training, patch-based
upsampling, metric evaluation, the gradient self-check, and the kernel
benchmark.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import struct
import sys
from pathlib import Path

import numpy as np

from . import bench, config, geometry, gradcheck
from . import train as tr
from .network import upsample_object

_BPUP_MAGIC = b"BPUP"
_BPUP_VERSION = 1

# rng stream tag for data generation, distinct from the trainer's tags
_DATAGEN = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# patch container (BPUP)
# ---------------------------------------------------------------------------


def write_patch_container(path, patches: list, object_ids: list) -> None:
    """Little-endian binary: magic, version, count, points-per-patch, f32
    coordinate triples patch by patch, then length-prefixed object ids."""
    if len(patches) != len(object_ids) or not patches:
        raise ValueError("write_patch_container: need matching, nonempty patches and ids")
    ppp = len(patches[0])
    with open(path, "wb") as fh:
        fh.write(_BPUP_MAGIC)
        fh.write(struct.pack("<III", _BPUP_VERSION, len(patches), ppp))
        for patch in patches:
            arr = np.asarray(patch, dtype=np.float64)
            if arr.shape != (ppp, 3):
                raise ValueError(
                    f"write_patch_container: patch shape {arr.shape}, expected ({ppp}, 3)"
                )
            fh.write(arr.astype("<f4").tobytes())
        for oid in object_ids:
            encoded = str(oid).encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)


def read_patch_container(path) -> tuple[list, list]:
    with open(path, "rb") as fh:
        if fh.read(4) != _BPUP_MAGIC:
            raise ValueError(f"{path}: not a BPUP patch container")
        version, count, ppp = struct.unpack("<III", fh.read(12))
        if version != _BPUP_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        patches = []
        for _ in range(count):
            raw = fh.read(4 * 3 * ppp)
            if len(raw) != 4 * 3 * ppp:
                raise ValueError(f"{path}: truncated patch data")
            patches.append(np.frombuffer(raw, dtype="<f4").reshape(ppp, 3).astype(np.float64))
        ids = []
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            ids.append(fh.read(nlen).decode("utf-8"))
    return patches, ids


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_config(args) -> config.TrainConfig:
    if args.config is None:
        raise UsageError("--config is required for this command")
    cfg = config.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    mesh_dir = Path(args.mesh_dir)
    meshes = sorted(mesh_dir.glob("*.off"))
    if not meshes:
        raise ValueError(f"{mesh_dir}: no OFF meshes found")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    patches, ids = [], []
    for mi, mesh_path in enumerate(meshes):
        mesh = geometry.read_off(mesh_path)
        rng = tr.rng_for(cfg.seed, _DATAGEN, mi)
        dense = geometry.poisson_like_sample(
            mesh, cfg.model.ratio * cfg.n_object, rng, cfg.oversample
        )
        count = cfg.patches_per_object or geometry.default_num_seeds(len(dense), cfg.rn)
        for _, cloud in geometry.extract_patches(dense, cfg.rn, count):
            normed, _ = geometry.normalize_to_unit_sphere(cloud)
            patches.append(normed)
            ids.append(mesh_path.stem)
        sparse = dense[geometry.random_subsample(dense, cfg.n_object, rng)]
        geometry.write_xyz(out_dir / f"{mesh_path.stem}_gt.xyz", dense)
        geometry.write_xyz(out_dir / f"{mesh_path.stem}_input.xyz", sparse)
    container = out_dir / "patches.bpup"
    write_patch_container(container, patches, ids)
    print(f"wrote {len(patches)} patches from {len(meshes)} meshes to {container}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset, _ = read_patch_container(args.data)
    if len(dataset[0]) != cfg.rn:
        raise ValueError(
            f"{args.data}: container patches have {len(dataset[0])} points, "
            f"config expects ratio * n_patch = {cfg.rn}"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_name(out.name + ".loss.csv")
    result = tr.train(dataset, cfg, log_path=log_path, checkpoint_path=out)
    print(f"trained {cfg.epochs} epochs; final joint loss {result.rows[-1][2]:.6g}")
    print(f"checkpoint: {out}\nloss log:   {log_path}")
    return 0


def cmd_upsample(args) -> int:
    ck = tr.load_checkpoint(args.checkpoint)
    if args.ratio is not None and args.ratio != ck.cfg.model.ratio:
        raise ValueError(
            f"checkpoint was trained for ratio {ck.cfg.model.ratio}, requested {args.ratio}"
        )
    pts = geometry.read_xyz(args.input)
    result = upsample_object(
        ck.params, ck.cfg.model, pts, ck.cfg.n_patch, threads=args.threads
    )
    geometry.write_xyz(args.out, result)
    print(f"upsampled {len(pts)} -> {len(result)} points: {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    pred = geometry.read_xyz(args.pred)
    gt = geometry.read_xyz(args.gt)
    from .losses import chamfer, format_metric_row, hausdorff, point_to_surface

    cd = chamfer(pred, gt).item()
    hd = hausdorff(pred, gt)
    p2f = None
    if args.mesh is not None:
        p2f = point_to_surface(pred, geometry.read_off(args.mesh))
    print(format_metric_row(Path(args.pred).stem, cd, hd, p2f))
    return 0


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(args.seeds))
    results = gradcheck.run_all(seeds=seeds)
    print(gradcheck.report(results))
    if all(passed for _, _, passed in results):
        return 0
    print("gradient check FAILED", file=sys.stderr)
    return 3


def cmd_bench(args) -> int:
    print(bench.run_benchmark(scale=args.scale))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pup3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(
        "generate-data",
        help="sample meshes into training patches and test pairs",
        epilog="config keys:\n" + config.describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    gen.add_argument("mesh_dir", help="directory of OFF meshes")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--config", required=True, help="key = value config file")
    gen.add_argument("--seed", type=int, default=None, help="override config seed")
    gen.set_defaults(func=cmd_generate_data)

    trn = sub.add_parser(
        "train",
        help="train on a patch container",
        epilog="config keys:\n" + config.describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    trn.add_argument("data", help="patch container (.bpup)")
    trn.add_argument("--config", required=True, help="key = value config file")
    trn.add_argument("--out", required=True, help="checkpoint output path (.bpuc)")
    trn.add_argument("--seed", type=int, default=None, help="override config seed")
    trn.set_defaults(func=cmd_train)

    ups = sub.add_parser("upsample", help="upsample a point cloud with a checkpoint")
    ups.add_argument("input", help="input XYZ point cloud")
    ups.add_argument("--checkpoint", required=True, help="trained checkpoint (.bpuc)")
    ups.add_argument("--out", required=True, help="output XYZ path")
    ups.add_argument("--ratio", type=int, default=None, help="expected upsampling ratio")
    ups.add_argument("--seed", type=int, default=None, help="accepted for uniformity; inference is deterministic")
    ups.add_argument("--threads", type=int, default=1, help="patch inference threads")
    ups.set_defaults(func=cmd_upsample)

    ev = sub.add_parser("evaluate", help="CD/HD (and P2F with a mesh) for a prediction")
    ev.add_argument("pred", help="predicted XYZ")
    ev.add_argument("gt", help="ground truth XYZ")
    ev.add_argument("--mesh", default=None, help="reference OFF mesh for P2F")
    ev.set_defaults(func=cmd_evaluate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op")
    gc.add_argument("--seeds", type=int, default=5, help="number of seeds per check")
    gc.set_defaults(func=cmd_gradcheck)

    bn = sub.add_parser("bench", help="compare compiled and fallback kernels")
    bn.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    bn.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except tr.NonFiniteLossError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
