"""Flat key=value run configuration with subset presets and overrides."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .losses import LossConfig
from .world import SUBSET_PRESETS, WorldConfig


class ConfigError(Exception):
    pass


# slots kept / relation queries per subset (width stays fixed)
SLOT_PRESETS = {"goal": (16, 16), "object": (24, 24), "spatial": (24, 24),
                "long": (24, 24), "pair": (16, 16)}


@dataclass
class RunConfig:
    subset: str = "goal"
    image_size: int = 64
    patch_size: int = 8
    width: int = 64
    num_slots: int = 16
    num_selected: int = 4
    num_relations: int = 16
    refine_steps: int = 3
    action_bins: int = 256
    heads: int = 4
    seed: int = 0
    stage1_iters: int = 3000
    batch_clips: int = 4
    clip_len: int = 3
    stage2_iters: int = 4000
    batch_frames: int = 16
    lr: float = 3e-4
    grad_clip: float = 10.0
    lambda_slot_attn: float = 1.0
    lambda_track: float = 0.5
    lambda_int: float = 1.0
    lambda_box: float = 1.0
    lambda_obj: float = 0.5
    lambda_seg: float = 1.0
    cost_l1: float = 5.0
    cost_giou: float = 2.0
    tau: float = 0.1
    w_pos: float = 2.0
    w_neg: float = 1.0
    track_window: int = 2
    track_projection: bool = True
    filter_on: bool = True
    carryover_on: bool = True
    relations_on: bool = True
    residual_mlp: bool = True
    relation_carryover: bool = False
    min_objects: int = 4
    max_objects: int = 7
    num_layouts: int = 1
    color_pool: int = 4
    shape_pool: int = 2
    idle_frames: int = 0
    noop_eps: float = 1e-3
    eval_every: int = 200
    rollout_horizon: int = 80
    rollouts_per_task: int = 20
    target_iou: float = 0.5
    target_auc: float = 0.95
    target_acc: float = 0.70
    early_stop_margin: float = 0.02

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.subset not in SUBSET_PRESETS:
            raise ConfigError(f"unknown subset {self.subset!r}")
        if not (1 <= self.num_selected <= self.num_slots):
            raise ConfigError(f"num_selected {self.num_selected} must lie in "
                              f"[1, num_slots={self.num_slots}]")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by "
                              f"patch_size {self.patch_size}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.action_bins < 2:
            raise ConfigError(f"action_bins must be >= 2, got {self.action_bins}")
        if self.refine_steps < 1:
            raise ConfigError("refine_steps must be >= 1")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.clip_len < 2:
            raise ConfigError("clip_len must be >= 2 for the tracking loss")

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda_slot_attn=self.lambda_slot_attn, lambda_track=self.lambda_track,
            lambda_int=self.lambda_int, lambda_box=self.lambda_box,
            lambda_obj=self.lambda_obj, lambda_seg=self.lambda_seg,
            cost_l1=self.cost_l1, cost_giou=self.cost_giou, tau=self.tau,
            w_pos=self.w_pos, w_neg=self.w_neg, track_window=self.track_window)

    def world_config(self, **extra) -> WorldConfig:
        kwargs = dict(min_objects=self.min_objects, max_objects=self.max_objects,
                      num_layouts=self.num_layouts, color_pool=self.color_pool,
                      shape_pool=self.shape_pool, image_size=self.image_size,
                      idle_frames=self.idle_frames, noop_eps=self.noop_eps,
                      snap_bins=self.action_bins)
        kwargs.update(extra)
        return WorldConfig.for_subset(self.subset, **kwargs)

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format_value(getattr(self, f.name))}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _coerce(name: str, raw: str, target_type: type):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: expected {target_type.__name__}, got {raw!r}") from exc
    return raw


def _field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(RunConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    types = _field_types()
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    return values


def parse_overrides(pairs: list[str]) -> dict:
    types = _field_types()
    values: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, raw = (part.strip() for part in pair.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    return values


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then subset presets, then the file, then overrides."""
    explicit: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        explicit.update(parse_config_text(path.read_text(), str(path)))
    if overrides:
        explicit.update(parse_overrides(overrides))

    values = dict(explicit)
    subset = values.get("subset", RunConfig.subset)
    if subset not in SUBSET_PRESETS:
        raise ConfigError(f"unknown subset {subset!r}")
    slots, relations = SLOT_PRESETS[subset]
    lo, hi, layouts, colors, shapes = SUBSET_PRESETS[subset]
    presets = {"num_slots": slots, "num_relations": relations, "min_objects": lo,
               "max_objects": hi, "num_layouts": layouts, "color_pool": colors,
               "shape_pool": shapes}
    for key, value in presets.items():
        values.setdefault(key, value)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
