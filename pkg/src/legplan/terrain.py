"""Heightmaps and terrain costmaps.

A heightmap is a regular 2.5D grid of elevations quantised to ``z_resolution``;
unknown cells hold NaN. The costmap evaluates three local features per cell
(height deviation, slope and signed curvature), maps each to a barrier-style
cost and combines them into a normalised foothold risk in [0, 1].

Grid convention: cell ``(i, j)`` has its centre at
``origin + ((i + 0.5) * res, (j + 0.5) * res)``; arrays are indexed
``[i, j]`` with ``i`` along x. Row-major order therefore walks y fastest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class TerrainError(ValueError):
    """Base class for terrain lookup and construction errors."""


class OutOfBoundsError(TerrainError):
    pass


class UnknownCellError(TerrainError):
    pass


class DegenerateNeighborhoodError(TerrainError):
    """Raised when a point set cannot support a surface estimate."""


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float] = (0.0, 0.0)
    resolution: float = 0.02
    dims: tuple[int, int] = (1, 1)
    z_resolution: float = 0.01

    def __post_init__(self):
        if not self.resolution > 0:
            raise TerrainError("resolution_xy must be positive")
        if not self.z_resolution > 0:
            raise TerrainError("z_resolution must be positive")
        if self.dims[0] < 1 or self.dims[1] < 1:
            raise TerrainError("grid needs at least one cell")

    @property
    def nx(self) -> int:
        return self.dims[0]

    @property
    def ny(self) -> int:
        return self.dims[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the covered area."""
        x0, y0 = self.origin
        return (x0, y0, x0 + self.nx * self.resolution, y0 + self.ny * self.resolution)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin[0] + (i + 0.5) * self.resolution,
            self.origin[1] + (j + 0.5) * self.resolution,
        )

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrids of cell-centre coordinates, each shaped ``dims``."""
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.resolution
        return np.meshgrid(xs, ys, indexing="ij")

    def cell_of(self, xy: Sequence[float]) -> tuple[int, int]:
        """Index of the cell containing ``xy``; raises when outside."""
        i = math.floor((xy[0] - self.origin[0]) / self.resolution)
        j = math.floor((xy[1] - self.origin[1]) / self.resolution)
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise OutOfBoundsError(f"point {tuple(xy)} outside grid")
        return i, j

    def contains(self, i: int, j: int) -> bool:
        return 0 <= i < self.nx and 0 <= j < self.ny


def quantize(heights: np.ndarray, z_resolution: float) -> np.ndarray:
    return np.round(np.asarray(heights, dtype=float) / z_resolution) * z_resolution


@dataclass
class HeightMap:
    spec: GridSpec
    heights: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.shape != self.spec.dims:
            raise TerrainError(f"heights shape {h.shape} != dims {self.spec.dims}")
        self.heights = quantize(h, self.spec.z_resolution)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.heights)

    @classmethod
    def flat(cls, spec: GridSpec, height: float = 0.0) -> "HeightMap":
        return cls(spec, np.full(spec.dims, height))

    def copy(self) -> "HeightMap":
        return HeightMap(self.spec, self.heights.copy())


def height_at(hm: HeightMap, xy: Sequence[float]) -> float:
    i, j = hm.spec.cell_of(xy)
    h = hm.heights[i, j]
    if np.isnan(h):
        raise UnknownCellError(f"cell {(i, j)} has no height")
    return float(h)


def _half_width(window: float, resolution: float) -> int:
    return int(math.floor(window / (2.0 * resolution) + 1e-9))


def neighborhood(hm: HeightMap, cell: tuple[int, int], window: float = 0.06) -> np.ndarray:
    """3D points of valid cells whose centres fall in a square window.

    The window is axis aligned and centred on ``cell``; the query cell is
    included when valid. Returns an ``(m, 3)`` array.
    """
    spec = hm.spec
    i, j = cell
    if not spec.contains(i, j):
        raise OutOfBoundsError(f"cell {cell} outside grid")
    if window < spec.resolution:
        raise TerrainError("window must be at least one cell wide")
    k = _half_width(window, spec.resolution)
    i0, i1 = max(0, i - k), min(spec.nx, i + k + 1)
    j0, j1 = max(0, j - k), min(spec.ny, j + k + 1)
    pts = []
    for a in range(i0, i1):
        for b in range(j0, j1):
            z = hm.heights[a, b]
            if not np.isnan(z):
                x, y = spec.cell_center(a, b)
                pts.append((x, y, z))
    return np.array(pts, dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class SurfaceEstimate:
    normal: np.ndarray
    curvature: float
    eigenvalues: tuple[float, float, float]


def estimate_surface(points: np.ndarray) -> SurfaceEstimate:
    """PCA surface fit: normal from the smallest eigenvector, curvature λ0/Σλ."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise DegenerateNeighborhoodError("need at least 3 points")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    lam, vec = np.linalg.eigh(cov)
    if not (lam[2] > 0 and lam[1] > 1e-12 * lam[2]):
        raise DegenerateNeighborhoodError("covariance rank < 2")
    normal = vec[:, 0]
    if normal[2] < 0:
        normal = -normal
    normal = normal / np.linalg.norm(normal)
    total = lam.sum()
    sigma = float(max(lam[0], 0.0) / total)
    return SurfaceEstimate(normal, sigma, (float(lam[0]), float(lam[1]), float(lam[2])))


@dataclass(frozen=True)
class FeatureParams:
    f_flat: float
    f_max: float
    t_max: float = 1.0

    def __post_init__(self):
        if not (0 <= self.f_flat < self.f_max) or not self.t_max > 0:
            raise TerrainError("need 0 <= f_flat < f_max and t_max > 0")


@dataclass(frozen=True)
class CurvatureParams:
    c_crack: float = -6.0
    c_mild_lo: float = 6.0
    c_mild_hi: float = 9.0
    c_max: float = 9.0
    t_max: float = 1.0

    def __post_init__(self):
        if not (self.c_crack < self.c_mild_lo < self.c_mild_hi <= self.c_max):
            raise TerrainError("curvature thresholds out of order")


HEIGHT_DEV_PARAMS = FeatureParams(0.01, 0.06, 1.0)
SLOPE_PARAMS = FeatureParams(math.pi / 180.0, 70.0 * math.pi / 180.0, 1.0)
CURVATURE_PARAMS = CurvatureParams()


def feature_cost(f: float, p: FeatureParams) -> float:
    if f <= p.f_flat:
        return 0.0
    if f >= p.f_max:
        return p.t_max
    cost = -math.log(1.0 - (f - p.f_flat) / (p.f_max - p.f_flat))
    return min(max(cost, 0.0), p.t_max)


def curvature_cost(c: float, p: CurvatureParams) -> float:
    # raw values may exceed t_max; only the weighted total is normalised
    if c <= p.c_crack or c >= p.c_max:
        return p.t_max
    if p.c_mild_lo < c < p.c_mild_hi:
        return 0.0
    if c < p.c_mild_lo:
        return p.t_max - math.log((c - p.c_crack) / (p.c_max - p.c_crack))
    return p.t_max  # c == c_mild_lo, or c in [c_mild_hi, c_max) when they differ


def _feature_cost_array(f: np.ndarray, p: FeatureParams) -> np.ndarray:
    out = np.full(f.shape, np.nan)
    ok = ~np.isnan(f)
    fv = f[ok]
    res = np.where(fv >= p.f_max, p.t_max, 0.0)
    mid = (fv > p.f_flat) & (fv < p.f_max)
    ratio = (fv[mid] - p.f_flat) / (p.f_max - p.f_flat)
    res[mid] = np.clip(-np.log1p(-ratio), 0.0, p.t_max)
    out[ok] = res
    return out


def _curvature_cost_array(c: np.ndarray, p: CurvatureParams) -> np.ndarray:
    return np.array([np.nan if np.isnan(v) else curvature_cost(float(v), p) for v in c.ravel()]).reshape(c.shape)


@dataclass(frozen=True)
class CostmapConfig:
    """Feature parameters and windows for :func:`build_costmap`.

    ``curvature_scale`` and ``curvature_offset`` map the signed PCA curvature
    (in [-1/3, 1/3]) onto the curvature threshold units.
    """

    height_dev: FeatureParams = HEIGHT_DEV_PARAMS
    slope: FeatureParams = SLOPE_PARAMS
    curvature: CurvatureParams = CURVATURE_PARAMS
    height_window: float = 0.06
    slope_window: float = 0.06
    curvature_scale: float = 27.0
    curvature_offset: float = 7.5


FEATURES = ("height_dev", "slope", "curvature")


@dataclass
class CostMap:
    spec: GridSpec
    total: np.ndarray
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    layers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.total = np.asarray(self.total, dtype=float)
        if self.total.shape != self.spec.dims:
            raise TerrainError("total shape does not match spec")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.any(w > 0):
            raise TerrainError("weights must be non-negative with one positive")

    @property
    def heights(self) -> np.ndarray | None:
        return self.layers.get("height")

    def cost_at(self, xy: Sequence[float], default: float = 1.0) -> float:
        """Total cost of the containing cell, ``default`` outside the map."""
        res = self.spec.resolution
        i = math.floor((xy[0] - self.spec.origin[0]) / res)
        j = math.floor((xy[1] - self.spec.origin[1]) / res)
        if 0 <= i < self.spec.nx and 0 <= j < self.spec.ny:
            return float(self.total[i, j])
        return default


def _neighborhood_stats(heights: np.ndarray, res: float, k: int):
    """Batched PCA over every (2k+1)^2 window. Returns (count, std, eigvals, eigvecs, offset)."""
    nx, ny = heights.shape
    pad = np.pad(heights, k, constant_values=np.nan)
    win = sliding_window_view(pad, (2 * k + 1, 2 * k + 1))  # (nx, ny, w, w)
    mask = ~np.isnan(win)
    cnt = mask.sum(axis=(2, 3)).astype(float)
    off = (np.arange(-k, k + 1) * res)
    dx = np.broadcast_to(off[:, None], win.shape[2:])
    dy = np.broadcast_to(off[None, :], win.shape[2:])
    z = np.where(mask, win, 0.0)
    safe = np.maximum(cnt, 1.0)
    mx = (mask * dx).sum(axis=(2, 3)) / safe
    my = (mask * dy).sum(axis=(2, 3)) / safe
    mz = z.sum(axis=(2, 3)) / safe
    cx = np.where(mask, dx - mx[..., None, None], 0.0)
    cy = np.where(mask, dy - my[..., None, None], 0.0)
    cz = np.where(mask, win - mz[..., None, None], 0.0)
    cov = np.empty((nx, ny, 3, 3))
    comps = (cx, cy, cz)
    for a in range(3):
        for b in range(a, 3):
            v = (comps[a] * comps[b]).sum(axis=(2, 3)) / safe
            cov[..., a, b] = v
            cov[..., b, a] = v
    lam, vec = np.linalg.eigh(cov)
    std = np.sqrt(np.maximum(cov[..., 2, 2], 0.0))
    # query-point offset from the centroid, used for the curvature sign
    q = np.stack([-mx, -my, np.nan_to_num(heights) - mz], axis=-1)
    return cnt, std, lam, vec, q


def _compute_layers(hm: HeightMap, cfg: CostmapConfig):
    res = hm.spec.resolution
    h = hm.heights
    valid = ~np.isnan(h)
    kh = _half_width(cfg.height_window, res)
    ks = _half_width(cfg.slope_window, res)
    cnt_h, std, _, _, _ = _neighborhood_stats(h, res, kh)
    cnt_s, _, lam, vec, q = _neighborhood_stats(h, res, ks)

    height_dev = np.where(valid & (cnt_h >= 3), std, np.nan)
    ok = valid & (cnt_s >= 3) & (lam[..., 2] > 0) & (lam[..., 1] > 1e-12 * lam[..., 2])
    normal = vec[..., :, 0]
    normal = np.where(normal[..., 2:3] < 0, -normal, normal)
    slope = np.where(ok, np.arccos(np.clip(normal[..., 2], -1.0, 1.0)), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma = np.maximum(lam[..., 0], 0.0) / lam.sum(axis=-1)
    side = (normal * q).sum(axis=-1)
    signed = np.where(side > 0, -sigma, sigma)
    curv = np.where(ok, cfg.curvature_scale * signed + cfg.curvature_offset, np.nan)
    return height_dev, slope, curv, ok & ~np.isnan(height_dev)


def _aoi_slices(spec: GridSpec, aoi) -> tuple[slice, slice]:
    if aoi is None:
        return slice(0, spec.nx), slice(0, spec.ny)
    xmin, ymin, xmax, ymax = aoi
    res = spec.resolution
    i0 = max(0, math.ceil((xmin - spec.origin[0]) / res - 0.5 - 1e-9))
    i1 = min(spec.nx, math.floor((xmax - spec.origin[0]) / res - 0.5 + 1e-9) + 1)
    j0 = max(0, math.ceil((ymin - spec.origin[1]) / res - 0.5 - 1e-9))
    j1 = min(spec.ny, math.floor((ymax - spec.origin[1]) / res - 0.5 + 1e-9) + 1)
    if i1 <= i0 or j1 <= j0:
        raise TerrainError("area of interest does not intersect the grid")
    return slice(i0, i1), slice(j0, j1)


def _combine(layers, weights, cfg: CostmapConfig, ok: np.ndarray) -> tuple[np.ndarray, dict]:
    w = np.asarray(weights, dtype=float)
    costs = {
        "height_dev_cost": _feature_cost_array(layers[0], cfg.height_dev),
        "slope_cost": _feature_cost_array(layers[1], cfg.slope),
        "curvature_cost": _curvature_cost_array(layers[2], cfg.curvature),
    }
    tmax = np.array([cfg.height_dev.t_max, cfg.slope.t_max, cfg.curvature.t_max])
    stack = np.stack([costs["height_dev_cost"], costs["slope_cost"], costs["curvature_cost"]], axis=-1)
    # zero-weight features must not poison the sum with NaN
    stack = np.where(w > 0, stack, 0.0)
    total = np.clip((stack * w).sum(axis=-1) / float(w @ tmax), 0.0, 1.0)
    total = np.where(ok, total, 1.0)
    return total, costs


def _mark_banned(spec: GridSpec, total: np.ndarray, banned) -> None:
    if not banned:
        return
    X, Y = spec.centers()
    for xmin, ymin, xmax, ymax in banned:
        total[(X >= xmin) & (X <= xmax) & (Y >= ymin) & (Y <= ymax)] = 1.0


def build_costmap(
    hm: HeightMap,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
    config: CostmapConfig | None = None,
    aoi: tuple[float, float, float, float] | None = None,
    banned: Iterable[tuple[float, float, float, float]] | None = None,
) -> CostMap:
    """Evaluate the terrain costmap over ``aoi`` (whole grid when None).

    Cells that are unknown, or whose neighbourhood cannot support a PCA fit,
    get total cost 1. ``banned`` rectangles ``(xmin, ymin, xmax, ymax)`` are
    forced to 1 as well.
    """
    cfg = config or CostmapConfig()
    w = tuple(float(v) for v in weights)
    if any(v < 0 for v in w) or not any(v > 0 for v in w):
        raise TerrainError("weights must be non-negative with one positive")
    si, sj = _aoi_slices(hm.spec, aoi)
    hd, sl, cv, ok = _compute_layers(hm, cfg)
    hd, sl, cv, ok = hd[si, sj], sl[si, sj], cv[si, sj], ok[si, sj]
    total, costs = _combine((hd, sl, cv), w, cfg, ok)
    spec = replace(
        hm.spec,
        origin=(hm.spec.origin[0] + si.start * hm.spec.resolution, hm.spec.origin[1] + sj.start * hm.spec.resolution),
        dims=(si.stop - si.start, sj.stop - sj.start),
    )
    _mark_banned(spec, total, list(banned) if banned else None)
    layers = {"height_dev": hd, "slope": sl, "curvature": cv, "height": hm.heights[si, sj].copy(), **costs}
    return CostMap(spec, total, w, layers)


def update_costmap(
    cm: CostMap,
    hm: HeightMap,
    edited: Iterable[tuple[int, int]],
    config: CostmapConfig | None = None,
    banned=None,
) -> CostMap:
    """Recompute only the cells whose windows touch an edited heightmap cell.

    ``cm`` must have been built from a heightmap with the same spec as ``hm``.
    Returns a new costmap; ``cm`` is left untouched.
    """
    cfg = config or CostmapConfig()
    res = hm.spec.resolution
    k = max(_half_width(cfg.height_window, res), _half_width(cfg.slope_window, res))
    oi = round((cm.spec.origin[0] - hm.spec.origin[0]) / res)
    oj = round((cm.spec.origin[1] - hm.spec.origin[1]) / res)
    out = CostMap(cm.spec, cm.total.copy(), cm.weights, {n: a.copy() for n, a in cm.layers.items()})
    for ei, ej in edited:
        # affected region in heightmap indices, padded for the window dependency
        a0, a1 = max(0, ei - 2 * k), min(hm.spec.nx, ei + 2 * k + 1)
        b0, b1 = max(0, ej - 2 * k), min(hm.spec.ny, ej + 2 * k + 1)
        sub = HeightMap(replace(hm.spec, dims=(a1 - a0, b1 - b0)), hm.heights[a0:a1, b0:b1])
        hd, sl, cv, ok = _compute_layers(sub, cfg)
        total, costs = _combine((hd, sl, cv), cm.weights, cfg, ok)
        for di in range(max(a0, ei - k), min(a1, ei + k + 1)):
            for dj in range(max(b0, ej - k), min(b1, ej + k + 1)):
                ci, cj = di - oi, dj - oj
                if not cm.spec.contains(ci, cj):
                    continue
                li, lj = di - a0, dj - b0
                out.total[ci, cj] = total[li, lj]
                out.layers["height_dev"][ci, cj] = hd[li, lj]
                out.layers["slope"][ci, cj] = sl[li, lj]
                out.layers["curvature"][ci, cj] = cv[li, lj]
                out.layers["height"][ci, cj] = hm.heights[di, dj]
                for name, arr in costs.items():
                    out.layers[name][ci, cj] = arr[li, lj]
    _mark_banned(out.spec, out.total, list(banned) if banned else None)
    return out


# ---------------------------------------------------------------- file formats

def save_heightmap(hm: HeightMap, path: str | Path) -> None:
    s = hm.spec
    with open(path, "w") as fh:
        fh.write(f"{s.nx} {s.ny} {s.resolution!r} {s.z_resolution!r} {s.origin[0]!r} {s.origin[1]!r}\n")
        for i in range(s.nx):
            fh.write(" ".join("nan" if np.isnan(v) else repr(float(v)) for v in hm.heights[i]) + "\n")


def load_heightmap(path: str | Path) -> HeightMap:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 6:
        raise TerrainError("heightmap header is truncated")
    nx, ny = int(tokens[0]), int(tokens[1])
    res, zres, ox, oy = (float(t) for t in tokens[2:6])
    values = tokens[6:]
    if len(values) != nx * ny:
        raise TerrainError(f"expected {nx * ny} heights, found {len(values)}")
    heights = np.array([float(v) for v in values]).reshape(nx, ny)
    return HeightMap(GridSpec((ox, oy), res, (nx, ny), zres), heights)


def export_costmap_csv(cm: CostMap, path: str | Path) -> None:
    X, Y = cm.spec.centers()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "height_dev", "slope", "curvature", "total"])
        for i in range(cm.spec.nx):
            for j in range(cm.spec.ny):
                wr.writerow([
                    f"{X[i, j]:.6f}", f"{Y[i, j]:.6f}",
                    *(f"{cm.layers[n][i, j]:.9g}" for n in FEATURES),
                    f"{cm.total[i, j]:.9g}",
                ])
