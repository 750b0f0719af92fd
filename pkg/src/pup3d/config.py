"""Flat "key = value" run configuration shared by the CLI and checkpoints.

Unknown keys are errors (they are almost always typos); `ratio` is the one
required key. parse_text/to_text are exact inverses so a checkpoint's
embedded config snapshot round-trips byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import AugmentConfig
from .losses import LossConfig, default_alphas
from .network import ModelConfig

_PRESET_PATCH = {"desk": 64, "full": 256}


def _parse_bool(tok: str) -> bool:
    low = tok.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {tok!r}")


def _parse_alphas(tok: str) -> tuple:
    if not tok:
        return ()
    return tuple(float(t) for t in tok.split(","))


# name -> (parser, default, help)
KEYS = {
    "ratio": (int, None, "upsampling ratio r (power of two); required"),
    "preset": (str, "desk", "architecture widths: desk (C1=80) or full (C1=648)"),
    "k": (int, 16, "k for kNN search in the feature extractor"),
    "n_patch": (int, 0, "input patch size N (0 = preset default: 64 desk / 256 full)"),
    "n_object": (int, 2048, "test-time object input size"),
    "patches_per_object": (int, 0, "training patches per mesh (0 = coverage-driven)"),
    "oversample": (int, 3, "oversampling factor for blue-noise-like mesh sampling"),
    "epochs": (int, 60, "training epochs"),
    "lr0": (float, 0.001, "initial learning rate"),
    "decay_factor": (float, 0.7, "learning-rate decay factor"),
    "decay_every": (int, 40, "epochs between learning-rate decays"),
    "batch_size": (int, 4, "patches per optimizer step"),
    "seed": (int, 0, "master RNG seed"),
    "lambda": (float, 0.02, "repulsion weight in the joint loss"),
    "rep_k": (int, 5, "repulsion neighbors"),
    "rep_h": (float, 0.03, "repulsion radius (unit-sphere patch units)"),
    "alphas": (_parse_alphas, (), "per-scale loss weights, comma separated (empty = auto)"),
    "fusion": (_parse_bool, True, "multi-scale fusion pathways (ablation toggle)"),
    "residual": (_parse_bool, True, "residual blocks vs plain shared MLPs (ablation toggle)"),
    "ms_supervision": (_parse_bool, True, "supervise all scales vs top scale only"),
    "checkpoint_every": (int, 0, "save checkpoint every this many epochs (0 = final only)"),
    "rotate": (_parse_bool, True, "augmentation: random rotation"),
    "scale_lo": (float, 0.8, "augmentation: scale lower bound"),
    "scale_hi": (float, 1.2, "augmentation: scale upper bound"),
    "shift": (float, 0.1, "augmentation: per-axis shift bound"),
}

_KEY_ORDER = list(KEYS)


@dataclass
class TrainConfig:
    model: ModelConfig
    loss: LossConfig
    aug: AugmentConfig
    preset: str = "desk"
    n_patch: int = 64
    n_object: int = 2048
    patches_per_object: int = 0
    oversample: int = 3
    epochs: int = 60
    lr0: float = 0.001
    decay_factor: float = 0.7
    decay_every: int = 40
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 0
    ms_supervision: bool = True

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"TrainConfig: lr0 must be > 0, got {self.lr0}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"TrainConfig: decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("TrainConfig: decay_every/batch_size/epochs out of range")
        if self.n_patch < 1:
            raise ValueError(f"TrainConfig: n_patch must be >= 1, got {self.n_patch}")
        if len(self.loss.alphas) != self.model.levels:
            raise ValueError(
                f"TrainConfig: {len(self.loss.alphas)} alphas for {self.model.levels} scales"
            )

    @property
    def rn(self) -> int:
        return self.model.ratio * self.n_patch


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse flat key = value lines; returns raw string values keyed by name."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KEYS and key != "epoch":
            raise ValueError(f"{source}:{lineno}: unknown config key: {key}")
        if key in raw:
            raise ValueError(f"{source}:{lineno}: duplicate config key: {key}")
        raw[key] = value
    return raw


def build(raw: dict, source: str = "<config>") -> TrainConfig:
    """Typed TrainConfig from raw string values; `ratio` is required."""
    if "ratio" not in raw:
        raise ValueError(f"{source}: missing required config key: ratio")
    vals = {}
    for key, (parser, default, _) in KEYS.items():
        if key in raw:
            try:
                vals[key] = parser(raw[key])
            except ValueError as err:
                raise ValueError(f"{source}: bad value for {key}: {raw[key]!r}") from err
        else:
            vals[key] = default
    preset = vals["preset"]
    if preset not in _PRESET_PATCH:
        raise ValueError(f"{source}: preset must be desk or full, got {preset!r}")
    maker = ModelConfig.desk if preset == "desk" else ModelConfig.full
    model = maker(
        ratio=vals["ratio"], k=vals["k"], fusion=vals["fusion"], residual=vals["residual"]
    )
    alphas = vals["alphas"]
    if not alphas:
        if vals["ms_supervision"]:
            alphas = default_alphas(model.levels)
        else:
            alphas = (0.0,) * (model.levels - 1) + (1.0,)
    loss = LossConfig(alphas=alphas, lam=vals["lambda"], rep_k=vals["rep_k"], rep_h=vals["rep_h"])
    aug = AugmentConfig(
        rotate=vals["rotate"], scale_lo=vals["scale_lo"],
        scale_hi=vals["scale_hi"], shift=vals["shift"],
    )
    n_patch = vals["n_patch"] or _PRESET_PATCH[preset]
    return TrainConfig(
        model=model, loss=loss, aug=aug, preset=preset,
        n_patch=n_patch, n_object=vals["n_object"],
        patches_per_object=vals["patches_per_object"], oversample=vals["oversample"],
        epochs=vals["epochs"], lr0=vals["lr0"], decay_factor=vals["decay_factor"],
        decay_every=vals["decay_every"], batch_size=vals["batch_size"], seed=vals["seed"],
        checkpoint_every=vals["checkpoint_every"], ms_supervision=vals["ms_supervision"],
    )


def load(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build(parse_text(fh.read(), str(path)), str(path))


def to_text(cfg: TrainConfig) -> str:
    """Canonical serialization; parse_text/build reproduce the config exactly."""
    vals = {
        "ratio": cfg.model.ratio,
        "preset": cfg.preset,
        "k": cfg.model.k,
        "n_patch": cfg.n_patch,
        "n_object": cfg.n_object,
        "patches_per_object": cfg.patches_per_object,
        "oversample": cfg.oversample,
        "epochs": cfg.epochs,
        "lr0": cfg.lr0,
        "decay_factor": cfg.decay_factor,
        "decay_every": cfg.decay_every,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "lambda": cfg.loss.lam,
        "rep_k": cfg.loss.rep_k,
        "rep_h": cfg.loss.rep_h,
        "alphas": ",".join(repr(a) for a in cfg.loss.alphas),
        "fusion": cfg.model.fusion,
        "residual": cfg.model.residual,
        "ms_supervision": cfg.ms_supervision,
        "checkpoint_every": cfg.checkpoint_every,
        "rotate": cfg.aug.rotate,
        "scale_lo": cfg.aug.scale_lo,
        "scale_hi": cfg.aug.scale_hi,
        "shift": cfg.aug.shift,
    }
    lines = []
    for key in _KEY_ORDER:
        v = vals[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    rows = []
    for key, (_, default, help_text) in KEYS.items():
        dflt = "required" if default is None else repr(default)
        rows.append(f"  {key.ljust(width)}  {help_text} (default: {dflt})")
    return "\n".join(rows)
