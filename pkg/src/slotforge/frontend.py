"""Patch frontend: raw frames to the dense visual token set.

Each non-overlapping p x p patch is flattened, linearly projected to the
model width, normalized (parameter-free), and offset by a learned 2-D
positional embedding. The normalization happens before the positional add so
position information reaches the slot encoder unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import ParamGroup, param, zeros_param
from .tensor import ShapeError, Tensor


@dataclass
class Frame:
    """One observation: rgb in [0,1], optional depth plane, time index."""

    rgb: np.ndarray
    t: int
    depth: np.ndarray | None = None

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ShapeError(f"frame rgb must be HxWx3, got {rgb.shape}")
        if rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ValueError("frame rgb values outside [0,1]")
        if self.t < 0:
            raise ValueError(f"negative frame index {self.t}")
        if self.depth is not None and np.asarray(self.depth).shape != rgb.shape[:2]:
            raise ShapeError("depth plane shape does not match rgb")
        self.rgb = rgb


@dataclass
class DenseTokens:
    """The N x d visual token matrix plus its patch-grid layout."""

    tokens: Tensor
    grid_h: int
    grid_w: int

    @property
    def count(self) -> int:
        return self.grid_h * self.grid_w

    def __post_init__(self):
        if self.tokens.shape[0] != self.count:
            raise ShapeError(
                f"token count {self.tokens.shape[0]} != grid {self.grid_h}x{self.grid_w}")


class PatchEmbedder:
    """Learned projection of flattened patches with positional embeddings."""

    def __init__(self, rng: np.random.Generator, patch_size: int = 8, width: int = 64,
                 image_size: int = 64, with_depth: bool = False):
        if image_size % patch_size:
            raise ShapeError(f"image size {image_size} not divisible by patch {patch_size}")
        self.patch_size = patch_size
        self.width = width
        self.image_size = image_size
        self.with_depth = with_depth
        self.grid = image_size // patch_size
        channels = 4 if with_depth else 3
        self.proj_w = param(rng, patch_size * patch_size * channels, width)
        self.proj_b = zeros_param(width)
        self.pos = param(rng, self.grid * self.grid, width, scale=0.1)

    def params(self) -> ParamGroup:
        g = ParamGroup("frontend")
        g.add("proj_w", self.proj_w)
        g.add("proj_b", self.proj_b)
        g.add("pos", self.pos)
        return g

    def patches(self, frame: Frame) -> np.ndarray:
        """Flattened patch matrix, one row per grid cell (row-major cells)."""
        p = self.patch_size
        img = frame.rgb
        h, w, _ = img.shape
        if h != self.image_size or w != self.image_size:
            raise ShapeError(f"frame {h}x{w} != configured {self.image_size}")
        if self.with_depth:
            if frame.depth is None:
                raise ValueError("embedder configured with depth but frame has none")
            img = np.concatenate([img, np.asarray(frame.depth)[..., None]], axis=2)
        c = img.shape[2]
        cells = img.reshape(h // p, p, w // p, p, c).transpose(0, 2, 1, 3, 4)
        return cells.reshape(self.grid * self.grid, p * p * c)

    def __call__(self, frame: Frame) -> DenseTokens:
        flat = Tensor(self.patches(frame))
        projected = T.layer_norm(T.linear(flat, self.proj_w, self.proj_b))
        return DenseTokens(T.add(projected, self.pos), self.grid, self.grid)
