"""Optimization loop: Adam with step-decayed learning rate, on-the-fly
training pairs, per-epoch loss logging, and binary checkpoints (BPUC).

Determinism: every random stream is derived from (seed, purpose, epoch,
index), gradients accumulate in fixed patch order, and checkpoints store
float64 payloads, so same-seed runs and checkpoint resumes are bitwise
reproducible.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import config as cfgmod
from . import geometry
from .losses import chamfer, format_metric_row, hausdorff, joint_loss_terms, point_to_surface
from .network import ModelParams, forward, init_model, upsample_object
from .tensor import Tape

_MAGIC = b"BPUC"
_VERSION = 1

# rng stream tags
_INIT, _SHUFFLE, _PAIR = 0, 1, 2


class NonFiniteLossError(RuntimeError):
    """Raised when the joint loss turns NaN/Inf; names the epoch and batch."""


def rng_for(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, path)])


def lr_at(epoch: int, cfg: cfgmod.TrainConfig) -> float:
    """Step decay: lr0 * factor^floor(epoch / every); piecewise constant."""
    if epoch < 0:
        raise ValueError(f"lr_at: epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: ModelParams) -> AdamState:
    m = {name: np.zeros_like(p.data) for name, p in params.named()}
    v = {name: np.zeros_like(p.data) for name, p in params.named()}
    return AdamState(m=m, v=v)


def adam_step(
    params: ModelParams,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update on every parameter (missing grads count as 0)."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.named():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def make_training_pair(gt_patch, rng: np.random.Generator, cfg: cfgmod.TrainConfig):
    """Random-downsample the ground-truth patch to the input size, augment
    both jointly, then normalize both with the ground truth's record."""
    gt = geometry.as_cloud(gt_patch, "gt_patch")
    if len(gt) != cfg.rn:
        raise ValueError(f"make_training_pair: expected {cfg.rn} gt points, got {len(gt)}")
    idx = geometry.random_subsample(gt, cfg.n_patch, rng)
    inp, gt_aug = geometry.augment(gt[idx], gt, rng, cfg.aug)
    gt_norm, rec = geometry.normalize_to_unit_sphere(gt_aug)
    inp_norm = geometry.apply_record(inp, rec)
    return inp_norm, gt_norm, rec


def loss_log_lines(rows: list, levels: int) -> list[str]:
    header = "epoch,lr," + ",".join(["joint"] + [f"cd_scale{i}" for i in range(1, levels + 1)])
    lines = [header]
    for row in rows:
        epoch, lr, joint, cds = row
        lines.append(",".join([str(epoch), repr(lr), repr(joint)] + [repr(c) for c in cds]))
    return lines


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    rows: list  # (epoch, lr, mean joint, [mean cd per scale])
    rng: np.random.Generator


def train(
    dataset: list,
    cfg: cfgmod.TrainConfig,
    log_path=None,
    checkpoint_path=None,
    resume: "Checkpoint | None" = None,
) -> TrainResult:
    """Run cfg.epochs over the ground-truth patches; returns final state.

    Per epoch: seeded shuffle, batches of patches, forward -> joint loss ->
    backward per patch, mean gradient, one Adam step per batch.
    """
    if not dataset:
        raise ValueError("train: dataset is empty")
    if resume is not None:
        params, adam, master, start_epoch = (
            resume.params, resume.adam, resume.rng, resume.epoch,
        )
    else:
        master = rng_for(cfg.seed, _INIT)
        params = init_model(cfg.model, master)
        adam = init_adam(params)
        start_epoch = 0

    levels = cfg.model.levels
    rows = list(resume.rows) if resume is not None and resume.rows else []
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng_for(cfg.seed, _SHUFFLE, epoch).permutation(len(dataset))
        joint_sum = 0.0
        cd_sums = np.zeros(levels)
        for bstart in range(0, len(order), cfg.batch_size):
            batch = order[bstart : bstart + cfg.batch_size]
            params.zero_grad()
            for pi in batch:
                pair_rng = rng_for(cfg.seed, _PAIR, epoch, int(pi))
                inp, gt, _ = make_training_pair(dataset[pi], pair_rng, cfg)
                with Tape() as tape:
                    preds = forward(params, cfg.model, inp)
                    total, cds = joint_loss_terms(gt, preds, cfg.loss)
                value = total.item()
                if not np.isfinite(value):
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch}, batch {bstart // cfg.batch_size},"
                        f" patch {int(pi)}"
                    )
                tape.backward(total)
                joint_sum += value
                cd_sums += [c.item() for c in cds]
            scale = 1.0 / len(batch)
            for _, p in params.named():
                if p.grad is not None:
                    p.grad *= scale
            adam_step(params, adam, lr)
        rows.append(
            (epoch, lr, float(joint_sum / len(order)), [float(c) for c in cd_sums / len(order)])
        )
        if (
            checkpoint_path is not None
            and cfg.checkpoint_every
            and (epoch + 1) % cfg.checkpoint_every == 0
        ):
            save_checkpoint(checkpoint_path, cfg, params, adam, epoch + 1, master)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, cfg, params, adam, cfg.epochs, master)
    if log_path is not None:
        with open(log_path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(loss_log_lines(rows, levels)) + "\n")
    return TrainResult(params=params, adam=adam, rows=rows, rng=master)


def evaluate(params: ModelParams, cfg: cfgmod.TrainConfig, objects, threads: int = 1):
    """Patch-based inference per object; returns metric rows plus a mean row.

    objects: iterable of (object_id, input_points, gt_points, mesh_or_None).
    """
    rows = []
    cds, hds, p2fs = [], [], []
    for oid, inp, gt, mesh in objects:
        pred = upsample_object(params, cfg.model, inp, cfg.n_patch, threads=threads)
        cd = chamfer(pred, gt).item()
        hd = hausdorff(pred, gt)
        p2f = point_to_surface(pred, mesh) if mesh is not None else None
        cds.append(cd)
        hds.append(hd)
        if p2f is not None:
            p2fs.append(p2f)
        rows.append(format_metric_row(str(oid), cd, hd, p2f))
    mean_p2f = float(np.mean(p2fs)) if p2fs else None
    rows.append(format_metric_row("mean", float(np.mean(cds)), float(np.mean(hds)), mean_p2f))
    return rows


# ---------------------------------------------------------------------------
# checkpoints: little-endian binary, f64 tensor payloads
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    cfg: cfgmod.TrainConfig
    params: ModelParams
    adam: AdamState
    epoch: int
    rng: np.random.Generator
    rows: list | None = None


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_block(fh) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", fh.read(4))
    name = fh.read(nlen).decode("utf-8")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = [struct.unpack("<Q", fh.read(8))[0] for _ in range(rank)]
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
    return name, data.astype(np.float64)


def save_checkpoint(path, cfg, params, adam, epoch, rng) -> None:
    cfg_text = cfgmod.to_text(cfg) + f"epoch = {int(epoch)}\n"
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    encoded = cfg_text.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    named = list(params.named())
    buf.write(struct.pack("<I", len(named)))
    for name, p in named:
        _write_block(buf, name, p.data)
    adam_blocks = (
        [("t", np.asarray(float(adam.t)))]
        + [(f"m.{name}", adam.m[name]) for name, _ in named]
        + [(f"v.{name}", adam.v[name]) for name, _ in named]
    )
    buf.write(struct.pack("<I", len(adam_blocks)))
    for name, arr in adam_blocks:
        _write_block(buf, name, arr)
    rng_bytes = json.dumps(rng.bit_generator.state, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(rng_bytes)))
    buf.write(rng_bytes)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a BPUC checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", fh.read(4))
        cfg_text = fh.read(clen).decode("utf-8")
        raw = cfgmod.parse_text(cfg_text, str(path))
        epoch = int(raw.pop("epoch", 0))
        cfg = cfgmod.build(raw, str(path))
        params = init_model(cfg.model, rng_for(cfg.seed, _INIT))
        named = dict(params.named())
        (ntens,) = struct.unpack("<I", fh.read(4))
        seen = set()
        for _ in range(ntens):
            name, data = _read_block(fh)
            if name not in named:
                raise ValueError(f"{path}: unexpected parameter {name!r}")
            if data.shape != named[name].data.shape:
                raise ValueError(
                    f"{path}: parameter {name!r} has shape {data.shape}, "
                    f"expected {named[name].data.shape}"
                )
            named[name].data = data.copy()
            seen.add(name)
        if seen != set(named):
            raise ValueError(f"{path}: missing parameters: {sorted(set(named) - seen)}")
        adam = init_adam(params)
        (nadam,) = struct.unpack("<I", fh.read(4))
        for _ in range(nadam):
            name, data = _read_block(fh)
            if name == "t":
                adam.t = int(data)
            elif name.startswith("m."):
                adam.m[name[2:]] = data.copy()
            elif name.startswith("v."):
                adam.v[name[2:]] = data.copy()
            else:
                raise ValueError(f"{path}: unexpected optimizer block {name!r}")
        (rlen,) = struct.unpack("<I", fh.read(4))
        state = json.loads(fh.read(rlen).decode("utf-8"))
        rng = np.random.default_rng(0)
        rng.bit_generator.state = state
    return Checkpoint(cfg=cfg, params=params, adam=adam, epoch=epoch, rng=rng)
