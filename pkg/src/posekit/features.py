"""Gradient-histogram feature grids and multi-scale, multi-orientation pyramids.

Each grid cell carries 32 channels: 18 contrast-sensitive orientation bins,
9 contrast-insensitive bins, 4 block-normalization energy channels, and one
boundary flag that is zero inside the image and one in the virtual padding
ring.  Padding lets templates hang over the image edge and gives learning a
way to prefer (or avoid) truncation.

A pyramid holds one grid per (scale level, orientation slot).  Slot k is
computed from the level image rotated by -2*pi*k/n about its centre, so a
template trained on upright parts responds, in slot k, to parts rotated by
+2*pi*k/n.  All placements in the rest of the package live on the unrotated
("common") lattice of a level; grids know how to map a common window to the
matching window of any slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

HOG_CHANNELS = 32
BOUNDARY_CHANNEL = 31
_NORM_EPS = 1e-4
_TRUNCATION = 0.2
_TEXTURE_WEIGHT = 0.2357  # ~1/sqrt(18)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def rotate_image(image: np.ndarray, theta: float) -> np.ndarray:
    """Rotate image content by theta about the centre, same canvas.

    A feature at direction beta in the input appears at direction
    beta + theta in the output (x right, y down, angles toward +y).
    Bilinear resampling, edge values extended past the canvas corners.
    """
    if theta == 0.0:
        return image
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # Output pixel p samples the input at R(-theta) (p - c) + c.
    c, s = math.cos(theta), math.sin(theta)
    dx = xx - cx
    dy = yy - cy
    src_x = c * dx + s * dy + cx
    src_y = -s * dx + c * dy + cy
    coords = np.stack([src_y, src_x])
    if image.ndim == 2:
        return ndimage.map_coordinates(image, coords, order=1, mode="nearest")
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        out[:, :, ch] = ndimage.map_coordinates(image[:, :, ch], coords,
                                                order=1, mode="nearest")
    return out


def resize_image(image: np.ndarray, scale: float) -> np.ndarray:
    if scale == 1.0:
        return image
    h, w = image.shape[:2]
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    fy = nh / h
    fx = nw / w
    ys = (np.arange(nh, dtype=np.float64) + 0.5) / fy - 0.5
    xs = (np.arange(nw, dtype=np.float64) + 0.5) / fx - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([yy, xx])
    if image.ndim == 2:
        return ndimage.map_coordinates(image, coords, order=1, mode="nearest")
    out = np.empty((nh, nw, image.shape[2]), dtype=image.dtype)
    for ch in range(image.shape[2]):
        out[:, :, ch] = ndimage.map_coordinates(image[:, :, ch], coords,
                                                order=1, mode="nearest")
    return out


def _cell_histograms(image: np.ndarray, cell_size: int) -> np.ndarray:
    """Bin per-pixel gradients into (rows, cols, 18) cell histograms."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, nch = img.shape
    rows = h // cell_size
    cols = w // cell_size
    gx = np.zeros((h, w, nch))
    gy = np.zeros((h, w, nch))
    gx[:, 1:-1, :] = img[:, 2:, :] - img[:, :-2, :]
    gy[1:-1, :, :] = img[2:, :, :] - img[:-2, :, :]
    if nch > 1:
        mag2 = gx * gx + gy * gy
        pick = np.argmax(mag2, axis=2)
        gx = np.take_along_axis(gx, pick[:, :, None], axis=2)[:, :, 0]
        gy = np.take_along_axis(gy, pick[:, :, None], axis=2)[:, :, 0]
    else:
        gx = gx[:, :, 0]
        gy = gy[:, :, 0]
    mag = np.sqrt(gx * gx + gy * gy)
    # Snap to the best of 18 signed directions by comparing projections on
    # 9 half-circle unit vectors and their negations.
    osin = np.sin(np.pi * np.arange(9) / 9.0)
    ocos = np.cos(np.pi * np.arange(9) / 9.0)
    dots = gx[:, :, None] * ocos + gy[:, :, None] * osin
    both = np.concatenate([dots, -dots], axis=2)
    bins = np.argmax(both, axis=2)

    hist = np.zeros((rows, cols, 18))
    # Bilinear spatial sharing between the 4 nearest cell centres.
    xp = (np.arange(w, dtype=np.float64) + 0.5) / cell_size - 0.5
    yp = (np.arange(h, dtype=np.float64) + 0.5) / cell_size - 0.5
    ix0 = np.floor(xp).astype(np.int64)
    iy0 = np.floor(yp).astype(np.int64)
    fx = xp - ix0
    fy = yp - iy0
    for dy in (0, 1):
        cy = iy0 + dy
        wy = np.where(dy == 0, 1.0 - fy, fy)
        oky = (cy >= 0) & (cy < rows)
        for dx in (0, 1):
            cx = ix0 + dx
            wx = np.where(dx == 0, 1.0 - fx, fx)
            okx = (cx >= 0) & (cx < cols)
            weight = mag * wy[:, None] * wx[None, :]
            mask = oky[:, None] & okx[None, :]
            np.add.at(hist,
                      (np.clip(cy, 0, rows - 1)[:, None] * np.ones((1, w), dtype=np.int64),
                       np.clip(cx, 0, cols - 1)[None, :] * np.ones((h, 1), dtype=np.int64),
                       bins),
                      np.where(mask, weight, 0.0))
    return hist


def _normalize_histograms(hist: np.ndarray) -> np.ndarray:
    rows, cols, _ = hist.shape
    insensitive = hist[:, :, :9] + hist[:, :, 9:]
    energy = np.sum(insensitive ** 2, axis=2)
    epad = np.pad(energy, 1)
    blocks = epad[:-1, :-1] + epad[:-1, 1:] + epad[1:, :-1] + epad[1:, 1:]
    # blocks[i, j] covers energy cells {i-1, i} x {j-1, j}; the four blocks
    # containing cell (y, x) sit at (y, x), (y, x+1), (y+1, x), (y+1, x+1).
    inv = 1.0 / np.sqrt(blocks + _NORM_EPS)
    norms = np.stack([inv[:rows, :cols], inv[:rows, 1:cols + 1],
                      inv[1:rows + 1, :cols], inv[1:rows + 1, 1:cols + 1]],
                     axis=2)  # (rows, cols, 4)
    out = np.zeros((rows, cols, HOG_CHANNELS))
    clipped = np.minimum(hist[:, :, :, None] * norms[:, :, None, :],
                         _TRUNCATION)  # (rows, cols, 18, 4)
    out[:, :, :18] = 0.5 * np.sum(clipped, axis=3)
    clipped_ins = np.minimum(insensitive[:, :, :, None] * norms[:, :, None, :],
                             _TRUNCATION)
    out[:, :, 18:27] = 0.5 * np.sum(clipped_ins, axis=3)
    out[:, :, 27:31] = _TEXTURE_WEIGHT * np.sum(clipped, axis=2)
    return out


@dataclass
class FeatureGrid:
    """Feature cells for one (scale, orientation) image, padding included.

    ``cells`` is (rows, cols, channels) over the padded lattice.  The grid
    carries everything needed to map a cell back to original-image pixels:
    the level scale factors, the slot angle, the level canvas size and the
    padding width.
    """

    cells: np.ndarray
    cell_size: int
    scale: float
    theta: float
    padding: int
    level_size: tuple[int, int]   # (height, width) of the level image, px
    image_size: tuple[int, int]   # (height, width) of the original image, px

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=np.float64)
        if self.cells.ndim != 3:
            raise ValueError("cells must be (rows, cols, channels)")

    @property
    def channels(self) -> int:
        return self.cells.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape[0], self.cells.shape[1]

    def interior(self) -> np.ndarray:
        p = self.padding
        if p == 0:
            return self.cells
        return self.cells[p:-p, p:-p, :]

    def anchor_counts(self, extent: tuple[int, int]) -> tuple[int, int]:
        """Number of valid (y, x) anchors for an (eh, ew) template window."""
        rows, cols = self.shape
        eh, ew = extent
        return max(0, rows - eh + 1), max(0, cols - ew + 1)

    # -- coordinate mappings ------------------------------------------

    def cell_to_level_px(self, cell_xy) -> tuple[float, float]:
        """Centre of a (possibly fractional) padded cell index, level pixels."""
        cx, cy = cell_xy
        px = (cx - self.padding + 0.5) * self.cell_size - 0.5
        py = (cy - self.padding + 0.5) * self.cell_size - 0.5
        return px, py

    def level_px_to_cell(self, px_xy) -> tuple[float, float]:
        px, py = px_xy
        cx = (px + 0.5) / self.cell_size - 0.5 + self.padding
        cy = (py + 0.5) / self.cell_size - 0.5 + self.padding
        return cx, cy

    def level_px_to_image_px(self, px_xy) -> tuple[float, float]:
        """Undo slot rotation and level scaling."""
        px, py = px_xy
        if self.theta != 0.0:
            lh, lw = self.level_size
            ccx, ccy = (lw - 1) / 2.0, (lh - 1) / 2.0
            c, s = math.cos(self.theta), math.sin(self.theta)
            dx, dy = px - ccx, py - ccy
            px = c * dx - s * dy + ccx
            py = s * dx + c * dy + ccy
        ih, iw = self.image_size
        lh, lw = self.level_size
        fx = lw / iw
        fy = lh / ih
        return (px + 0.5) / fx - 0.5, (py + 0.5) / fy - 0.5

    def image_px_to_level_px(self, px_xy) -> tuple[float, float]:
        px, py = px_xy
        ih, iw = self.image_size
        lh, lw = self.level_size
        fx = lw / iw
        fy = lh / ih
        px = (px + 0.5) * fx - 0.5
        py = (py + 0.5) * fy - 0.5
        if self.theta != 0.0:
            ccx, ccy = (lw - 1) / 2.0, (lh - 1) / 2.0
            c, s = math.cos(-self.theta), math.sin(-self.theta)
            dx, dy = px - ccx, py - ccy
            px = c * dx - s * dy + ccx
            py = s * dx + c * dy + ccy
        return px, py

    def cell_to_image_px(self, cell_xy) -> tuple[float, float]:
        return self.level_px_to_image_px(self.cell_to_level_px(cell_xy))

    def image_px_to_cell(self, px_xy) -> tuple[float, float]:
        return self.level_px_to_cell(self.image_px_to_level_px(px_xy))


def extract_hog(image: np.ndarray, cell_size: int = 4) -> FeatureGrid:
    """Plain single-scale, unrotated feature grid with no padding."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError("image must be 2-D grayscale or 3-D color")
    h, w = img.shape[:2]
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    if h < 3 * cell_size or w < 3 * cell_size:
        raise ValueError(
            f"image {h}x{w} too small for cell size {cell_size}: need at "
            f"least {3 * cell_size} px per side"
        )
    hist = _cell_histograms(img, cell_size)
    feat = _normalize_histograms(hist)
    return FeatureGrid(feat, cell_size, 1.0, 0.0, 0, (h, w), (h, w))


def _pad_cells(cells: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return cells
    rows, cols, nch = cells.shape
    out = np.zeros((rows + 2 * pad, cols + 2 * pad, nch))
    out[:, :, BOUNDARY_CHANNEL] = 1.0
    out[pad:-pad, pad:-pad, :] = cells
    return out


@dataclass(frozen=True)
class PyramidSpec:
    """Feature extraction geometry shared by training and inference."""

    cell_size: int = 4
    levels: int = 1
    scale_step: float = 2.0 ** 0.25
    orientation_count: int = 1
    padding: int = 3
    part_extent: int = 3

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.orientation_count < 1:
            raise ValueError("orientation_count must be >= 1")
        if self.scale_step <= 1.0:
            raise ValueError("scale_step must be > 1")
        if self.padding < 0 or self.part_extent < 1 or self.cell_size < 1:
            raise ValueError("bad padding/extent/cell size")

    def scales(self) -> list[float]:
        return [self.scale_step ** (-i) for i in range(self.levels)]

    def slot_angle(self, slot: int) -> float:
        return 2.0 * math.pi * slot / self.orientation_count

    def to_dict(self) -> dict:
        return {
            "cell_size": self.cell_size,
            "levels": self.levels,
            "scale_step": self.scale_step,
            "orientation_count": self.orientation_count,
            "padding": self.padding,
            "part_extent": self.part_extent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PyramidSpec":
        return cls(**{k: d[k] for k in
                      ("cell_size", "levels", "scale_step",
                       "orientation_count", "padding", "part_extent")})


class PyramidError(ValueError):
    pass


@dataclass
class FeaturePyramid:
    spec: PyramidSpec
    image_size: tuple[int, int]
    grids: dict[tuple[int, int], FeatureGrid]
    _anchor_maps: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for level in range(self.spec.levels):
            for slot in range(self.spec.orientation_count):
                if (level, slot) not in self.grids:
                    raise PyramidError(f"missing grid for level {level} slot {slot}")
        if len(self.grids) != self.spec.levels * self.spec.orientation_count:
            raise PyramidError("unexpected extra grids present")

    @property
    def num_levels(self) -> int:
        return self.spec.levels

    @property
    def orientation_count(self) -> int:
        return self.spec.orientation_count

    @property
    def channels(self) -> int:
        return self.grids[(0, 0)].channels

    def grid(self, level: int, slot: int) -> FeatureGrid:
        try:
            return self.grids[(level, slot)]
        except KeyError:
            raise PyramidError(f"no grid at level {level}, slot {slot}") from None

    def lookup(self, level: int, slot: int, window) -> np.ndarray:
        """Row-major flattened features of a (x0, y0, w, h) cell window."""
        grid = self.grid(level, slot)
        x0, y0, w, h = window
        rows, cols = grid.shape
        if w < 1 or h < 1:
            raise PyramidError("window must have positive extent")
        if not (0 <= x0 and 0 <= y0 and x0 + w <= cols and y0 + h <= rows):
            raise PyramidError(
                f"window {window} leaves the padded grid ({rows}x{cols} cells)"
            )
        return grid.cells[y0:y0 + h, x0:x0 + w, :].ravel()

    def anchor_map(self, level: int, slot: int, extent: tuple[int, int]):
        """Vectorized common-lattice -> slot-lattice anchor correspondence.

        Returns (slot_ax, slot_ay, valid) arrays over the common anchor
        lattice for templates of the given extent.  Slot 0 is the identity.
        """
        key = (level, slot, extent)
        cached = self._anchor_maps.get(key)
        if cached is not None:
            return cached
        grid = self.grid(level, slot)
        eh, ew = extent
        ny, nx = grid.anchor_counts(extent)
        if grid.theta == 0.0:
            ax = np.broadcast_to(np.arange(nx, dtype=np.int64), (ny, nx)).copy()
            ay = np.broadcast_to(np.arange(ny, dtype=np.int64)[:, None], (ny, nx)).copy()
            valid = np.ones((ny, nx), dtype=bool)
        else:
            axf = np.arange(nx, dtype=np.float64)[None, :] + (ew - 1) / 2.0
            ayf = np.arange(ny, dtype=np.float64)[:, None] + (eh - 1) / 2.0
            lx = (axf - grid.padding + 0.5) * grid.cell_size - 0.5
            ly = (ayf - grid.padding + 0.5) * grid.cell_size - 0.5
            lh, lw = grid.level_size
            ccx, ccy = (lw - 1) / 2.0, (lh - 1) / 2.0
            c, s = math.cos(-grid.theta), math.sin(-grid.theta)
            dx = lx - ccx
            dy = ly - ccy
            sx = c * dx - s * dy + ccx
            sy = s * dx + c * dy + ccy
            scx = (sx + 0.5) / grid.cell_size - 0.5 + grid.padding
            scy = (sy + 0.5) / grid.cell_size - 0.5 + grid.padding
            ax = np.floor(scx - (ew - 1) / 2.0 + 0.5).astype(np.int64)
            ay = np.floor(scy - (eh - 1) / 2.0 + 0.5).astype(np.int64)
            valid = (ax >= 0) & (ax <= nx - 1) & (ay >= 0) & (ay <= ny - 1)
            ax = np.where(valid, ax, 0)
            ay = np.where(valid, ay, 0)
        self._anchor_maps[key] = (ax, ay, valid)
        return self._anchor_maps[key]

    def slot_anchor(self, level: int, slot: int, anchor: tuple[int, int],
                    extent: tuple[int, int]):
        """Slot-lattice anchor matching one common-lattice anchor, or None."""
        ax_map, ay_map, valid = self.anchor_map(level, slot, extent)
        ax, ay = anchor
        if not (0 <= ay < valid.shape[0] and 0 <= ax < valid.shape[1]):
            return None
        if not valid[ay, ax]:
            return None
        return int(ax_map[ay, ax]), int(ay_map[ay, ax])

    def anchor_keypoint(self, level: int, anchor: tuple[int, int],
                        extent: tuple[int, int]) -> tuple[float, float]:
        """Image-pixel position of a common-frame window centre."""
        grid = self.grid(level, 0)
        eh, ew = extent
        cx = anchor[0] + (ew - 1) / 2.0
        cy = anchor[1] + (eh - 1) / 2.0
        return grid.cell_to_image_px((cx, cy))

    def keypoint_anchor(self, level: int, point_xy, extent: tuple[int, int]
                        ) -> tuple[int, int]:
        """Common-frame anchor whose window centre is nearest an image point."""
        grid = self.grid(level, 0)
        eh, ew = extent
        cx, cy = grid.image_px_to_cell(point_xy)
        ax = int(math.floor(cx - (ew - 1) / 2.0 + 0.5))
        ay = int(math.floor(cy - (eh - 1) / 2.0 + 0.5))
        return ax, ay


def build_pyramid(image: np.ndarray, spec: PyramidSpec) -> FeaturePyramid:
    """All (level, slot) feature grids for one image.

    Levels are spaced by the spec's scale step; every level must leave room
    for at least one template placement, otherwise the error lists which
    levels would still be usable.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    grids: dict[tuple[int, int], FeatureGrid] = {}
    usable = []
    min_px = max(3, spec.part_extent) * spec.cell_size
    for level, scale in enumerate(spec.scales()):
        lh = max(1, int(round(h * scale)))
        lw = max(1, int(round(w * scale)))
        if lh >= min_px and lw >= min_px:
            usable.append(level)
    if len(usable) != spec.levels:
        raise PyramidError(
            f"image {h}x{w} px cannot support {spec.levels} levels with "
            f"cell {spec.cell_size} and template extent {spec.part_extent}; "
            f"usable levels: {usable}"
        )
    for level, scale in enumerate(spec.scales()):
        base = resize_image(img, scale)
        for slot in range(spec.orientation_count):
            theta = spec.slot_angle(slot)
            rotated = rotate_image(base, -theta)
            plain = extract_hog(rotated, spec.cell_size)
            cells = _pad_cells(plain.cells, spec.padding)
            grids[(level, slot)] = FeatureGrid(
                cells, spec.cell_size, scale, theta, spec.padding,
                (base.shape[0], base.shape[1]), (h, w))
    return FeaturePyramid(spec, (h, w), grids)
