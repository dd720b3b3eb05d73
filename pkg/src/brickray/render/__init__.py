"""Volume raycasting over the scene graph.

`raycast_frame` renders one frame: it rasterizes meshes, marches rays
through every visible volume against the block cache's current residency
(never waiting for IO), and reports which blocks the frame wanted so the
cache can stream them in for the next frame.  Missing fine blocks are
substituted by their finest resident coarser ancestors, so a frame is
always produced immediately and refines as loads complete.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import NoCamera
from ..mathutil import rotation_part
from ..scenegraph import Camera, DirectionalLight, Mesh, PointCloud, VolumeRef
from ..transfer import FILTER_NONE, SampleFilter, TransferFunction
from ..volume import BlockKey
from . import _pykernel, backend
from .meshes import rasterize_scene
from .rays import (EARLY_TERMINATION, composite_over, generate_ray,
                   generate_rays, opacity_correct, ray_aabb, sample_trilinear,
                   select_lod)

__all__ = [
    "RenderSettings", "FrameResult", "FrameStats", "raycast_frame",
    "generate_ray", "generate_rays", "ray_aabb", "select_lod",
    "sample_trilinear", "opacity_correct", "composite_over",
    "quantize_rgba8", "EARLY_TERMINATION",
]


def quantize_rgba8(color: np.ndarray) -> np.ndarray:
    """Float RGBA in [0, 1] to 8-bit: floor(clip(c)*255 + 0.5), round half up."""
    c = np.clip(color.astype(np.float64), 0.0, 1.0)
    return np.floor(c * 255.0 + 0.5).astype(np.uint8)

MODE_VOLUME = "volume"
MODE_MIP = "mip"
_MODE_CODES = {MODE_VOLUME: 0, MODE_MIP: 1}

_DEFAULT_TF = TransferFunction.grayscale()


@dataclass
class RenderSettings:
    width: int = 512
    height: int = 512
    step: float = 1.0  # marching step in units of the finest world voxel
    fixed_lod: int | None = None  # force a mip level instead of distance LOD
    threads: int = 1
    sample_filter: SampleFilter | None = None  # default filter for volumes
    backend: str | None = None  # None/auto, "compiled", or "python"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("frame size must be positive")
        if not self.step > 0.0:
            raise ValueError("step must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class FrameStats:
    backend: str = "none"
    mode: str = MODE_VOLUME
    samples: int = 0
    fallback_samples: int = 0
    wanted_missing: int = 0
    touched_blocks: int = 0
    triangles: int = 0
    degenerate_triangles: int = 0
    render_ms: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FrameResult:
    color: np.ndarray  # (H, W, 4) float32, premultiplied alpha
    depth: np.ndarray  # (H, W) float32 ray parameter of mesh hits, else +inf
    stats: FrameStats


class VolumePack:
    """Flattened per-volume frame state consumed by the marching kernels.

    All pyramid levels are packed into single flat slot/flag arrays (cell =
    level_off[L] + (bz*gy + by)*gx + bx) and a single block pool, so kernels
    index with plain integers.
    """

    def __init__(self, index, cache, vref, world_matrix, tf, filt):
        meta = cache.meta
        self.index = index
        self.cache = cache
        self.channel = vref.channel
        self.timepoint = vref.timepoint
        self.levels = meta.levels
        self.bs_log2 = meta.block_size.bit_length() - 1
        self.value_scale = 1.0 / meta.dtype_max

        snap = cache.residency_snapshot(vref.channel, vref.timepoint)
        self.dims = np.array([meta.level_dims(l) for l in range(meta.levels)],
                             dtype=np.int64)
        self.grids = np.array([meta.grid_dims(l) for l in range(meta.levels)],
                              dtype=np.int64)
        cells = self.grids.prod(axis=1)
        self.level_off = np.zeros(meta.levels, dtype=np.int64)
        self.level_off[1:] = np.cumsum(cells)[:-1]
        total_cells = int(cells.sum())

        slot_parts = []
        pool_parts = []
        row_off = 0
        for lp in snap.levels:
            s = lp.slots.ravel().copy()
            s[s >= 0] += row_off
            slot_parts.append(s)
            pool_parts.append(lp.pool)
            row_off += lp.pool.shape[0]
        self.slots_flat = np.ascontiguousarray(np.concatenate(slot_parts),
                                               dtype=np.int32)
        bs = meta.block_size
        if row_off:
            self.pool = np.ascontiguousarray(np.concatenate(pool_parts, axis=0))
        else:
            self.pool = np.zeros((0, bs, bs, bs), dtype=meta.np_dtype)
        self.missing = np.zeros(total_cells, dtype=np.uint8)
        self.touched = np.zeros(total_cells, dtype=np.uint8)

        world = np.asarray(world_matrix, dtype=np.float64)
        inv = np.linalg.inv(world)
        self.inv_affine = np.ascontiguousarray(inv[:3, :4])
        voxel = np.asarray(meta.voxel_size, dtype=np.float64)
        self.box_hi = np.ascontiguousarray(np.asarray(meta.dims0, np.float64) * voxel)
        col_scale = np.linalg.norm(world[:3, :3], axis=0)
        self.svox_world = float((voxel * col_scale).min())
        self.inv_voxel = np.ascontiguousarray(
            [1.0 / (voxel * (1 << l)) for l in range(meta.levels)])

        self.tf_pos = np.ascontiguousarray(tf.positions)
        self.tf_rgba = np.ascontiguousarray(tf.colors)
        self.filter_kind = filt.kind if filt is not None else FILTER_NONE
        self.filter_param = float(filt.param) if filt is not None else 0.0

    def flag_keys(self, flags: np.ndarray) -> list:
        """Decode a flat flag array into block keys, sorted (level, z, y, x)."""
        keys = []
        for level in range(self.levels):
            gx, gy, gz = (int(g) for g in self.grids[level])
            off = int(self.level_off[level])
            hot = np.nonzero(flags[off:off + gx * gy * gz])[0]
            for cell in hot:
                bz, rest = divmod(int(cell), gx * gy)
                by, bx = divmod(rest, gx)
                keys.append(BlockKey(level, bx, by, bz, self.channel,
                                     self.timepoint))
        return keys


def _find_scene_parts(scene):
    items = scene.flatten_visible()
    camera = None
    cam_world = None
    light = None
    meshes = []
    volumes = []
    for item in items:
        p = item.payload
        if isinstance(p, Camera) and camera is None:
            camera = p
            cam_world = item.world_matrix
        elif isinstance(p, DirectionalLight) and light is None:
            light = p
        elif isinstance(p, (Mesh, PointCloud)):
            meshes.append((item.world_matrix, p))
        elif isinstance(p, VolumeRef):
            volumes.append((item.world_matrix, p))
    if camera is None:
        raise NoCamera("scene has no visible camera")
    return camera, cam_world, light, meshes, volumes


def _resolve_tf(scene, vref):
    if vref.transfer_function_id is None:
        return _DEFAULT_TF
    return scene.transfer_functions[vref.transfer_function_id]


def _resolve_filter(scene, vref, settings):
    if vref.sample_filter_id is not None:
        return scene.sample_filters[vref.sample_filter_id]
    return settings.sample_filter


def _band_edges(height: int, threads: int) -> list:
    edges = [(height * t) // threads for t in range(threads + 1)]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def raycast_frame(scene, caches, settings: RenderSettings, mode: str = MODE_VOLUME,
                  background: np.ndarray | None = None,
                  include_volumes: bool = True) -> FrameResult:
    """Render one frame of `scene` against the given block caches.

    caches maps pyramid ids (VolumeRef.pyramid_id) to BlockCache instances.
    `background` is an optional premultiplied (H, W, 4) float32 buffer
    composited under the scene at ray end.  After the kernels finish, every
    block the frame wanted but lacked is requested from its cache (queueing
    loads) and every block actually sampled has its recency refreshed.
    With include_volumes=False only meshes render (mesh-raster passes).
    """
    if mode not in _MODE_CODES:
        raise ValueError(f"unknown render mode '{mode}'")
    t_start = time.perf_counter()
    width, height = settings.width, settings.height
    camera, cam_world, light, mesh_items, volume_items = _find_scene_parts(scene)
    if not include_volumes:
        volume_items = []

    origin, dirs = generate_rays(cam_world, camera.fov_y, width, height)
    cam_rot = rotation_part(np.asarray(cam_world, dtype=np.float64))
    cam_fwd = np.ascontiguousarray(-cam_rot[:, 2])

    mesh_color, mesh_depth, mesh_stats = rasterize_scene(
        mesh_items, origin, dirs, cam_rot, camera.fov_y, camera.near, light)

    packs = []
    for idx, (world, vref) in enumerate(volume_items):
        cache = caches[vref.pyramid_id]
        tf = _resolve_tf(scene, vref)
        filt = _resolve_filter(scene, vref, settings)
        packs.append(VolumePack(idx, cache, vref, world, tf, filt))

    out_color = np.zeros((height, width, 4), dtype=np.float32)
    out_mip = np.full((height, width), -1.0, dtype=np.float64)
    out_mipvol = np.full((height, width), -1, dtype=np.int32)
    stats = FrameStats(mode=mode)
    stats.triangles = mesh_stats["triangles"]
    stats.degenerate_triangles = mesh_stats["degenerate_triangles"]

    if packs:
        chosen = backend.resolve_backend(settings.backend)
        if len(packs) > 1:
            chosen = backend.PYTHON  # compiled kernel covers one volume
        stats.backend = chosen
        s_march = min(p.svox_world for p in packs)
        step_world = settings.step * s_march
        pix_factor = 2.0 * math.tan(camera.fov_y / 2.0) / height
        fixed_lod = -1 if settings.fixed_lod is None else int(settings.fixed_lod)
        mode_code = _MODE_CODES[mode]
        bands = _band_edges(height, settings.threads)

        if chosen == backend.COMPILED:
            march = backend.compiled_march_band()
            p = packs[0]

            def run_band(jj):
                return march(origin, dirs, mesh_depth, camera.near, camera.far,
                             step_world, EARLY_TERMINATION, mode_code, fixed_lod,
                             pix_factor, cam_fwd, p.index, p.inv_affine, p.box_hi,
                             p.dims, p.grids, p.level_off, p.slots_flat, p.pool,
                             p.value_scale, p.inv_voxel, p.svox_world, p.tf_pos,
                             p.tf_rgba, p.filter_kind, p.filter_param, p.bs_log2,
                             p.levels, p.missing, p.touched, jj[0], jj[1],
                             out_color, out_mip, out_mipvol)

            if len(bands) == 1:
                results = [run_band(bands[0])]
            else:
                with ThreadPoolExecutor(max_workers=len(bands)) as pool:
                    results = list(pool.map(run_band, bands))
        else:
            march = backend.python_march_band()
            results = [march(origin, dirs, mesh_depth, camera.near, camera.far,
                             step_world, EARLY_TERMINATION, mode_code, fixed_lod,
                             pix_factor, cam_fwd, packs, jj[0], jj[1],
                             out_color, out_mip, out_mipvol)
                       for jj in bands]

        for n_samples, n_fallback in results:
            stats.samples += int(n_samples)
            stats.fallback_samples += int(n_fallback)

        # Post-frame block accounting: request what was missing (queues
        # loads, counts misses), then refresh what was used so recently
        # touched blocks are the last eviction candidates.
        for p in packs:
            wanted = p.flag_keys(p.missing)
            used = p.flag_keys(p.touched)
            for key in wanted:
                p.cache.resolve_block(key)
            for key in used:
                p.cache.resolve_block(key)
            stats.wanted_missing += len(wanted)
            stats.touched_blocks += len(used)

    # Assemble: volume result over meshes over background.
    if background is None:
        bg = np.zeros((height, width, 4), dtype=np.float64)
    else:
        if background.shape != (height, width, 4):
            raise ValueError("background buffer shape mismatch")
        bg = background.astype(np.float64)
    under = mesh_color.astype(np.float64)
    under = under + (1.0 - under[..., 3:4]) * bg

    if mode == MODE_MIP:
        final = under.copy()
        have = out_mipvol >= 0
        for p in packs:
            sel = have & (out_mipvol == p.index)
            if not sel.any():
                continue
            rgb, alpha = _pykernel._tf_eval(p, out_mip[sel])
            sample = np.empty((int(sel.sum()), 4), dtype=np.float64)
            sample[:, :3] = alpha[:, None] * rgb
            sample[:, 3] = alpha
            final[sel] = sample + (1.0 - alpha)[:, None] * under[sel]
    else:
        vol = out_color.astype(np.float64)
        final = vol + (1.0 - vol[..., 3:4]) * under

    stats.render_ms = (time.perf_counter() - t_start) * 1000.0
    if not packs:
        stats.backend = "none"
    return FrameResult(np.ascontiguousarray(final, dtype=np.float32),
                       mesh_depth, stats)
