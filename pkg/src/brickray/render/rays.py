"""Camera rays, intersection, level-of-detail, and sampling primitives.

These are the reference semantics for the marching kernels: the compiled
and pure-Python kernels inline exactly these formulas.  Keeping them here
as plain functions makes them independently testable against brute-force
oracles.
"""

from __future__ import annotations

import math

import numpy as np

from ..mathutil import rotation_part
from ..volume import BlockKey

EARLY_TERMINATION = 0.999  # accumulated alpha at which a ray stops marching
SEGMENT_EPS = 1e-9  # relative sliver threshold: tails shorter than eps*step drop


def generate_rays(camera_world: np.ndarray, fov_y: float, width: int, height: int):
    """Eye position and unit world-space direction for every pixel center.

    The camera looks down its local -Z with +Y up.  Pixel (i, j) uses the
    point (i+0.5, j+0.5) on the image plane; j grows downward.
    Returns (origin (3,), dirs (height, width, 3)) in float64.
    """
    rot = rotation_part(camera_world)
    origin = np.array(camera_world[:3, 3], dtype=np.float64)
    tan_half = math.tan(fov_y / 2.0)
    aspect = width / height
    xs = (2.0 * (np.arange(width, dtype=np.float64) + 0.5) / width - 1.0) * tan_half * aspect
    ys = (1.0 - 2.0 * (np.arange(height, dtype=np.float64) + 0.5) / height) * tan_half
    local = np.empty((height, width, 3), dtype=np.float64)
    local[:, :, 0] = xs[None, :]
    local[:, :, 1] = ys[:, None]
    local[:, :, 2] = -1.0
    dirs = local @ rot.T
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    return origin, dirs


def generate_ray(camera_world: np.ndarray, fov_y: float, width: int, height: int,
                 i: int, j: int):
    """Single-pixel variant of generate_rays (same math, scalar)."""
    origin, dirs = generate_rays(camera_world, fov_y, width, height)
    return origin, dirs[j, i].copy()


def ray_aabb(origin, direction, lo, hi):
    """Slab intersection of a ray with an axis-aligned box.

    Returns (tmin, tmax) with tmax > tmin, or None when the ray misses
    (grazing contact counts as a miss).  The parameter is in units of the
    direction vector, which need not be normalized.
    """
    tmin, tmax = -math.inf, math.inf
    for a in range(3):
        d = float(direction[a])
        o = float(origin[a])
        if d == 0.0:
            if o < lo[a] or o > hi[a]:
                return None
        else:
            ta = (lo[a] - o) / d
            tb = (hi[a] - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
    if tmax > tmin:
        return tmin, tmax
    return None


def select_lod(distance: float, fov_y: float, image_height: int,
               finest_voxel: float, levels: int) -> int:
    """Mip level whose voxel size best matches the pixel footprint.

    The footprint of one pixel at `distance` is 2*d*tan(fov/2)/height; the
    level doubles voxel size each step, so the level is floor(log2) of the
    footprint ratio, clamped to the pyramid.  floor(log2(x)) for x >= 1 is
    extracted with frexp so the result is exact at power-of-two boundaries.
    """
    s_pix = 2.0 * distance * math.tan(fov_y / 2.0) / image_height
    ratio = s_pix / finest_voxel
    if not ratio > 1.0:
        return 0
    level = math.frexp(ratio)[1] - 1
    return min(level, levels - 1)


def opacity_correct(alpha: float, length_ratio: float) -> float:
    """Opacity of a segment `length_ratio` reference thicknesses long.

    The transfer function defines opacity per unit thickness (one finest
    voxel); Beer-Lambert transmittance composes multiplicatively, so a
    segment of relative length r has alpha' = 1 - (1-alpha)^r.
    """
    return 1.0 - math.pow(1.0 - alpha, length_ratio)


def composite_step(acc_rgba, rgb, alpha):
    """One front-to-back premultiplied compositing step, in place.

    acc_rgba is [R, G, B, A] premultiplied; returns the updated list/array.
    """
    w = (1.0 - acc_rgba[3]) * alpha
    acc_rgba[0] += w * rgb[0]
    acc_rgba[1] += w * rgb[1]
    acc_rgba[2] += w * rgb[2]
    acc_rgba[3] += w
    return acc_rgba


def composite_over(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    """Premultiplied OVER for whole buffers: top + (1-alpha_top) * bottom."""
    out = top + (1.0 - top[..., 3:4]) * bottom
    return out


def sample_trilinear(cache, point_local, level: int, channel: int = 0,
                     timepoint: int = 0):
    """Trilinearly filtered normalized sample at a local physical point.

    Taps are clamped to the level's voxel extent.  If any of the eight tap
    blocks is not resident at `level`, the whole sample re-evaluates at the
    finest coarser level where all eight resolve (the pinned coarsest level
    guarantees termination).  Returns (value in [0,1], level actually used).
    Missing finer blocks are queued by the cache as a side effect.
    """
    meta = cache.meta
    if not 0 <= level < meta.levels:
        raise ValueError(f"level {level} outside pyramid of {meta.levels}")
    bs = meta.block_size
    for lvl in range(level, meta.levels):
        dims = meta.level_dims(lvl)
        vs = meta.level_voxel_size(lvl)
        c = [point_local[a] / vs[a] - 0.5 for a in range(3)]
        base = [math.floor(v) for v in c]
        frac = [c[a] - base[a] for a in range(3)]
        taps = np.empty(8, dtype=np.float64)
        ok = True
        for corner in range(8):
            dx, dy, dz = corner & 1, (corner >> 1) & 1, corner >> 2
            tx = min(max(base[0] + dx, 0), dims[0] - 1)
            ty = min(max(base[1] + dy, 0), dims[1] - 1)
            tz = min(max(base[2] + dz, 0), dims[2] - 1)
            key = BlockKey(lvl, tx // bs, ty // bs, tz // bs, channel, timepoint)
            resolved = cache.resolve_block(key)
            if not resolved.exact:
                ok = False
                continue
            blk = resolved.block
            taps[corner] = float(blk.data[tz % bs, ty % bs, tx % bs])
        if not ok:
            continue
        c00 = taps[0] + frac[0] * (taps[1] - taps[0])
        c01 = taps[2] + frac[0] * (taps[3] - taps[2])
        c10 = taps[4] + frac[0] * (taps[5] - taps[4])
        c11 = taps[6] + frac[0] * (taps[7] - taps[6])
        c0 = c00 + frac[1] * (c01 - c00)
        c1 = c10 + frac[1] * (c11 - c10)
        value = c0 + frac[2] * (c1 - c0)
        return value / meta.dtype_max, lvl
    raise AssertionError("pinned coarsest level must resolve every sample")
