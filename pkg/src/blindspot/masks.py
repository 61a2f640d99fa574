"""Patch-grid masks derived from camera and human visual-field geometry.

Masks are boolean arrays over the spatial patch grid where ``True`` means the
patch is MASKED (hidden from the encoder). The same polarity is used by every
function in the package.

The blind-spot masks are pure functions of their inputs. Angular sizes are
converted to pixels with a per-axis scale of ``frame_px / camera_fov_deg``,
snapped to the patch grid and combined:

* ``BLINDSPOT``: everything outside central vision plus both blind spots.
* ``CENTER``: same construction under the binocular 200x135 field of view;
  clips are center-cropped instead of randomly cropped during pretraining.
* ``NO_PERIPHERAL``: only the two blind spots.
* ``RANDOM_TUBE``: the usual random tube baseline, seeded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np


class GeometryError(ValueError):
    """Invalid field-of-view, frame or patch configuration."""


class Variant(str, enum.Enum):
    BLINDSPOT = "blindspot"
    CENTER = "center"
    NO_PERIPHERAL = "no_peripheral"
    RANDOM_TUBE = "random_tube"


class SnapPolicy(str, enum.Enum):
    CENTRAL = "central"
    BLINDSPOT = "blindspot"


@dataclass(frozen=True)
class FieldOfView:
    width_deg: float
    height_deg: float

    def __post_init__(self) -> None:
        if not (self.width_deg > 0 and self.height_deg > 0):
            raise GeometryError(f"field of view must be positive, got {self.width_deg}x{self.height_deg}")
        if self.width_deg > 360 or self.height_deg > 180:
            raise GeometryError(f"field of view out of range: {self.width_deg}x{self.height_deg}")

    @classmethod
    def parse(cls, text: str) -> "FieldOfView":
        """Parse ``"WxH"`` in degrees, e.g. ``"109x70"``."""
        try:
            w, h = (float(part) for part in text.lower().split("x"))
        except ValueError as exc:
            raise GeometryError(f"expected WxH, got {text!r}") from exc
        return cls(w, h)

    def __str__(self) -> str:
        return f"{self.width_deg:g}x{self.height_deg:g}"


CAMERA_FOV = FieldOfView(109.0, 70.0)
BINOCULAR_FOV = FieldOfView(200.0, 135.0)


@dataclass(frozen=True)
class VisualFieldParams:
    central_fov: FieldOfView = FieldOfView(60.0, 60.0)
    blindspot_width_deg: float = 5.0
    blindspot_height_deg: float = 7.0
    blindspot_eccentricity_deg: float = 15.0
    # positive values move the spots down in image coordinates
    blindspot_vertical_offset_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.blindspot_width_deg <= 0 or self.blindspot_height_deg <= 0:
            raise GeometryError("blind spot size must be positive")
        if self.blindspot_eccentricity_deg < 0:
            raise GeometryError("blind spot eccentricity must be non-negative")
        half_w = self.central_fov.width_deg / 2
        half_h = self.central_fov.height_deg / 2
        if self.blindspot_eccentricity_deg + self.blindspot_width_deg / 2 > half_w:
            raise GeometryError("blind spots must lie inside the central visual field")
        if abs(self.blindspot_vertical_offset_deg) + self.blindspot_height_deg / 2 > half_h:
            raise GeometryError("blind spots must lie inside the central visual field")


@dataclass(frozen=True)
class FrameGeometry:
    height_px: int = 224
    width_px: int = 224
    patch_size_px: int = 16

    def __post_init__(self) -> None:
        ps = self.patch_size_px
        if ps <= 0 or self.height_px <= 0 or self.width_px <= 0:
            raise GeometryError("frame and patch sizes must be positive")
        if self.height_px % ps or self.width_px % ps:
            raise GeometryError(
                f"frame {self.height_px}x{self.width_px} is not a multiple of patch size {ps}"
            )

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.height_px // self.patch_size_px, self.width_px // self.patch_size_px

    @property
    def n_patches(self) -> int:
        rows, cols = self.grid_shape
        return rows * cols


@dataclass(frozen=True)
class PixelRect:
    left: float
    top: float
    width: float
    height: float

    @property
    def center(self) -> Tuple[float, float]:
        """(x, y) center in pixels."""
        return self.left + self.width / 2, self.top + self.height / 2

    @classmethod
    def centered(cls, cx: float, cy: float, width: float, height: float) -> "PixelRect":
        return cls(cx - width / 2, cy - height / 2, width, height)


@dataclass(frozen=True)
class PatchRect:
    row0: int
    col0: int
    n_rows: int
    n_cols: int

    def to_grid(self, grid_shape: Tuple[int, int]) -> np.ndarray:
        grid = np.zeros(grid_shape, dtype=bool)
        grid[self.row0 : self.row0 + self.n_rows, self.col0 : self.col0 + self.n_cols] = True
        return grid


@dataclass(frozen=True, eq=False)
class PatchMask:
    grid: np.ndarray
    variant: Variant
    fov: Optional[FieldOfView] = None
    ratio: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise GeometryError("mask grid must be 2-D")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    @property
    def n_masked(self) -> int:
        return int(self.grid.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchMask):
            return NotImplemented
        return (
            self.variant == other.variant
            and self.fov == other.fov
            and np.array_equal(self.grid, other.grid)
        )

    def describe(self) -> str:
        if self.variant is Variant.RANDOM_TUBE:
            return f"{self.variant.value}(ratio={self.ratio:g}, seed={self.seed})"
        return f"{self.variant.value}(fov={self.fov})"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _round_half_down(x: float) -> int:
    # ties go toward the top-left of the grid
    return int(math.ceil(x - 0.5))


def _scale(frame: FrameGeometry, camera: FieldOfView) -> Tuple[float, float]:
    """Pixels per degree along (x, y)."""
    return frame.width_px / camera.width_deg, frame.height_px / camera.height_deg


def central_region_px(
    frame: FrameGeometry,
    camera: FieldOfView,
    visual: VisualFieldParams = VisualFieldParams(),
) -> PixelRect:
    """Central-vision rectangle in pixels, centered in the frame.

    Each axis is ``frame_px / camera_deg * central_deg``; when the camera sees
    less than central vision along an axis, the region is clamped to the frame.
    """
    sx, sy = _scale(frame, camera)
    w_c = min(frame.width_px, sx * visual.central_fov.width_deg)
    h_c = min(frame.height_px, sy * visual.central_fov.height_deg)
    return PixelRect.centered(frame.width_px / 2, frame.height_px / 2, w_c, h_c)


def blind_spot_regions_px(
    frame: FrameGeometry,
    camera: FieldOfView,
    visual: VisualFieldParams = VisualFieldParams(),
) -> Tuple[PixelRect, PixelRect]:
    """Both blind-spot rectangles in pixels, left of center first."""
    sx, sy = _scale(frame, camera)
    w = sx * visual.blindspot_width_deg
    h = sy * visual.blindspot_height_deg
    dx = sx * visual.blindspot_eccentricity_deg
    cy = frame.height_px / 2 + sy * visual.blindspot_vertical_offset_deg
    cx = frame.width_px / 2
    return PixelRect.centered(cx - dx, cy, w, h), PixelRect.centered(cx + dx, cy, w, h)


def snap_rect_to_patches(rect: PixelRect, frame: FrameGeometry, policy: SnapPolicy) -> PatchRect:
    """Snap a pixel rectangle onto the patch grid.

    ``CENTRAL`` rounds each side to the nearest patch multiple; ``BLINDSPOT``
    takes the ceiling so the whole spot is covered. In both cases the block is
    placed so its top-left lies on the patch boundary nearest to where a
    block of that size centered on the rect would start. Placement is
    therefore mirror-symmetric about the frame center.
    """
    ps = frame.patch_size_px
    rows, cols = frame.grid_shape
    if rect.width <= 0 or rect.height <= 0:
        raise GeometryError("rect must have positive size")
    if (
        rect.left >= frame.width_px
        or rect.top >= frame.height_px
        or rect.left + rect.width <= 0
        or rect.top + rect.height <= 0
    ):
        raise GeometryError("rect does not intersect the frame")

    if policy is SnapPolicy.CENTRAL:
        n_cols = _round_half_up(rect.width / ps)
        n_rows = _round_half_up(rect.height / ps)
    else:
        # tolerance keeps exactly aligned sizes from rounding up
        n_cols = math.ceil(rect.width / ps - 1e-9)
        n_rows = math.ceil(rect.height / ps - 1e-9)
    n_cols = min(max(n_cols, 1), cols)
    n_rows = min(max(n_rows, 1), rows)

    cx, cy = rect.center
    col0 = min(max(_round_half_down(cx / ps - n_cols / 2), 0), cols - n_cols)
    row0 = min(max(_round_half_down(cy / ps - n_rows / 2), 0), rows - n_rows)
    return PatchRect(row0, col0, n_rows, n_cols)


def _default_camera(variant: Variant) -> FieldOfView:
    return BINOCULAR_FOV if variant is Variant.CENTER else CAMERA_FOV


def build_blind_spot_mask(
    variant: Variant | str,
    frame: FrameGeometry = FrameGeometry(),
    camera: Optional[FieldOfView] = None,
    visual: VisualFieldParams = VisualFieldParams(),
) -> PatchMask:
    """Deterministic mask for one of the blind-spot variants.

    ``camera`` defaults to 109x70 for ``BLINDSPOT``/``NO_PERIPHERAL`` and to
    the binocular 200x135 field for ``CENTER``.
    """
    variant = Variant(variant)
    if variant is Variant.RANDOM_TUBE:
        raise GeometryError("use build_random_tube_mask for the random tube baseline")
    camera = camera or _default_camera(variant)
    shape = frame.grid_shape

    central = snap_rect_to_patches(central_region_px(frame, camera, visual), frame, SnapPolicy.CENTRAL)
    central_grid = central.to_grid(shape)
    spots = np.zeros(shape, dtype=bool)
    for rect in blind_spot_regions_px(frame, camera, visual):
        spots |= snap_rect_to_patches(rect, frame, SnapPolicy.BLINDSPOT).to_grid(shape)
    spots &= central_grid

    if variant is Variant.NO_PERIPHERAL:
        grid = spots
    else:
        grid = ~central_grid | spots
    return PatchMask(grid, variant, fov=camera)


def build_random_tube_mask(frame: FrameGeometry, ratio: float, seed: int) -> PatchMask:
    """Mask exactly ``round(ratio * n_patches)`` patches chosen uniformly at random."""
    if not 0 < ratio < 1:
        raise GeometryError(f"ratio must lie in (0, 1), got {ratio}")
    n = frame.n_patches
    n_masked = _round_half_up(ratio * n)
    rng = np.random.default_rng(seed)
    flat = np.zeros(n, dtype=bool)
    flat[rng.permutation(n)[:n_masked]] = True
    return PatchMask(flat.reshape(frame.grid_shape), Variant.RANDOM_TUBE, ratio=ratio, seed=seed)


def build_mask(
    variant: Variant | str,
    frame: FrameGeometry = FrameGeometry(),
    camera: Optional[FieldOfView] = None,
    visual: VisualFieldParams = VisualFieldParams(),
    ratio: float = 0.9,
    seed: int = 0,
) -> PatchMask:
    variant = Variant(variant)
    if variant is Variant.RANDOM_TUBE:
        return build_random_tube_mask(frame, ratio, seed)
    return build_blind_spot_mask(variant, frame, camera, visual)


def masking_ratio(mask: PatchMask | np.ndarray) -> float:
    grid = mask.grid if isinstance(mask, PatchMask) else np.asarray(mask, dtype=bool)
    return float(grid.sum()) / grid.size


def expand_temporal(mask: PatchMask | np.ndarray, temporal_slots: int) -> np.ndarray:
    """Flat token mask of length ``slots * rows * cols``, slot-major.

    Every temporal slot carries the same spatial mask (tube semantics).
    """
    if temporal_slots < 1:
        raise GeometryError("temporal_slots must be >= 1")
    grid = mask.grid if isinstance(mask, PatchMask) else np.asarray(mask, dtype=bool)
    return np.tile(grid.ravel(), temporal_slots)


def mask_to_text(mask: PatchMask | np.ndarray) -> str:
    grid = mask.grid if isinstance(mask, PatchMask) else np.asarray(mask, dtype=bool)
    return "\n".join("".join("1" if v else "0" for v in row) for row in grid) + "\n"


def mask_from_text(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows or any(len(r) != len(rows[0]) or set(r) - {"0", "1"} for r in rows):
        raise GeometryError("mask text must be equal-length rows of 0/1")
    return np.array([[c == "1" for c in r] for r in rows], dtype=bool)


def save_mask_image(mask: PatchMask | np.ndarray, path: str | Path, patch_size_px: int = 16) -> None:
    """Write a grayscale PNG where masked patches are black and visible ones white."""
    import matplotlib.image as mpimg

    grid = mask.grid if isinstance(mask, PatchMask) else np.asarray(mask, dtype=bool)
    img = np.where(grid, 0.0, 1.0)
    img = np.kron(img, np.ones((patch_size_px, patch_size_px)))
    mpimg.imsave(str(path), img, cmap="gray", vmin=0.0, vmax=1.0)
