"""Pure-numpy volume marching kernel.

Mirrors the compiled kernel instruction for instruction: every per-pixel
floating-point operation happens in the same order with the same primitive
(including routing pow through libm via math.pow), so the two backends
produce bit-identical frames.  Rays march in lockstep as masked vectors;
heterogeneous per-ray control flow (interval boundaries, level-of-detail
fallback walks, early termination) is expressed with index masks.

Supports any number of volumes; the compiled kernel covers the common
single-volume case.
"""

from __future__ import annotations

import math

import numpy as np

from .rays import SEGMENT_EPS

MODE_VOLUME = 0
MODE_MIP = 1

_POW_UFUNC = np.frompyfunc(math.pow, 2, 1)


def _pow(base, exponent):
    """Elementwise pow evaluated by libm, bit-identical to C pow()."""
    return _POW_UFUNC(base, exponent).astype(np.float64)


def march_band(origin, dirs, mesh_depth, near, far, step_world, early, mode,
               fixed_lod, pix_factor, cam_fwd, volumes, j0, j1,
               out_color, out_mip, out_mipvol):
    """March rows [j0, j1) and write color/MIP results; returns counters.

    Returns (samples, fallback_samples).  Side effects: sets bits in each
    volume pack's missing/touched flag arrays.
    """
    height, width = dirs.shape[:2]
    d = dirs[j0:j1].reshape(-1, 3)
    n_rays = d.shape[0]
    mesh_t = mesh_depth[j0:j1].reshape(-1).astype(np.float64)
    far_lim = np.minimum(far, mesh_t)

    # Per-volume clamped ray intervals.
    n_vol = len(volumes)
    t0c = np.empty((n_vol, n_rays))
    t1c = np.empty((n_vol, n_rays))
    # Affine math is written out elementwise (no BLAS) so the operation
    # order and rounding match the compiled kernel exactly.
    for vi, v in enumerate(volumes):
        inv = v.inv_affine
        ol = np.array([inv[a, 0] * origin[0] + inv[a, 1] * origin[1]
                       + inv[a, 2] * origin[2] + inv[a, 3] for a in range(3)])
        dl = np.stack([d[:, 0] * inv[a, 0] + d[:, 1] * inv[a, 1]
                       + d[:, 2] * inv[a, 2] for a in range(3)], axis=1)
        tmin = np.full(n_rays, -np.inf)
        tmax = np.full(n_rays, np.inf)
        for a in range(3):
            da = dl[:, a]
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (0.0 - ol[a]) / da
                tb = (v.box_hi[a] - ol[a]) / da
            lo_t = np.minimum(ta, tb)
            hi_t = np.maximum(ta, tb)
            zero = da == 0.0
            if zero.any():
                inside = 0.0 <= ol[a] <= v.box_hi[a]
                lo_t[zero] = -np.inf if inside else np.inf
                hi_t[zero] = np.inf if inside else -np.inf
            np.maximum(tmin, lo_t, out=tmin)
            np.minimum(tmax, hi_t, out=tmax)
        a0 = np.maximum(tmin, near)
        a1 = np.minimum(tmax, far_lim)
        invalid = ~(a1 > a0)
        a0[invalid] = np.inf
        a1[invalid] = -np.inf
        t0c[vi] = a0
        t1c[vi] = a1

    # Merge per-ray intervals (union of overlapping/touching spans).
    if n_vol:
        order = np.argsort(t0c, axis=0, kind="stable")
        ss = np.take_along_axis(t0c, order, axis=0)
        ee = np.take_along_axis(t1c, order, axis=0)
        merged_a = np.full((n_vol, n_rays), np.inf)
        merged_b = np.full((n_vol, n_rays), -np.inf)
        m_count = np.zeros(n_rays, dtype=np.int64)
        cur_a = ss[0].copy()
        cur_b = ee[0].copy()
        for kcol in range(1, n_vol):
            s = ss[kcol]
            e = ee[kcol]
            valid_next = np.isfinite(s)
            overlap = valid_next & (s <= cur_b)
            cur_b = np.where(overlap, np.maximum(cur_b, e), cur_b)
            flush = valid_next & ~overlap & np.isfinite(cur_a)
            rows = np.nonzero(flush)[0]
            merged_a[m_count[rows], rows] = cur_a[rows]
            merged_b[m_count[rows], rows] = cur_b[rows]
            m_count[rows] += 1
            cur_a = np.where(flush, s, cur_a)
            cur_b = np.where(flush, e, cur_b)
            # Rays whose current slot was invalid adopt the next interval.
            adopt = valid_next & ~np.isfinite(cur_a)
            cur_a = np.where(adopt, s, cur_a)
            cur_b = np.where(adopt, e, cur_b)
        last = np.isfinite(cur_a)
        rows = np.nonzero(last)[0]
        merged_a[m_count[rows], rows] = cur_a[rows]
        merged_b[m_count[rows], rows] = cur_b[rows]
        m_count[rows] += 1
    else:
        merged_a = np.zeros((0, n_rays))
        merged_b = np.zeros((0, n_rays))
        m_count = np.zeros(n_rays, dtype=np.int64)

    # Marching state.
    acc_c = np.zeros((n_rays, 3))
    acc_a = np.zeros(n_rays)
    mip_val = np.full(n_rays, -1.0)
    mip_vol = np.full(n_rays, -1, dtype=np.int32)
    mi = np.zeros(n_rays, dtype=np.int64)
    k = np.zeros(n_rays, dtype=np.int64)
    cur_lo = np.zeros(n_rays)
    cur_hi = np.zeros(n_rays)
    n_full = np.zeros(n_rays, dtype=np.int64)
    n_seg = np.zeros(n_rays, dtype=np.int64)
    counters = [0, 0]  # samples, fallback

    def load_intervals(rows):
        """Point `rows` at their next non-empty interval, skipping empties."""
        pend = rows
        while pend.size:
            has = pend[mi[pend] < m_count[pend]]
            if not has.size:
                break
            lo = merged_a[mi[has], has]
            hi = merged_b[mi[has], has]
            span = hi - lo
            nf = np.floor(span / step_world).astype(np.int64)
            rem = span - nf * step_world
            ns = nf + (rem > SEGMENT_EPS * step_world)
            cur_lo[has] = lo
            cur_hi[has] = hi
            n_full[has] = nf
            n_seg[has] = ns
            k[has] = 0
            empty = has[ns == 0]
            mi[empty] += 1
            pend = empty
        return

    load_intervals(np.arange(n_rays))

    def alive_mask():
        m = mi < m_count
        if mode == MODE_VOLUME:
            m &= acc_a < early
        return m

    alive = alive_mask()
    while alive.any():
        rows = np.nonzero(alive)[0]
        s0 = cur_lo[rows] + k[rows] * step_world
        tail = k[rows] == n_full[rows]
        s1 = np.where(tail, cur_hi[rows], s0 + step_world)
        tm = 0.5 * (s0 + s1)
        seg_len = s1 - s0

        for v in volumes:
            sub = (tm >= t0c[v.index][rows]) & (tm < t1c[v.index][rows])
            if mode == MODE_VOLUME:
                sub &= acc_a[rows] < early
            if not sub.any():
                continue
            r2 = rows[sub]
            tmv = tm[sub]
            pw = origin[None, :] + tmv[:, None] * d[r2]
            inv = v.inv_affine
            pl = np.stack([pw[:, 0] * inv[a, 0] + pw[:, 1] * inv[a, 1]
                           + pw[:, 2] * inv[a, 2] + inv[a, 3]
                           for a in range(3)], axis=1)

            if fixed_lod >= 0:
                lvl = np.full(r2.size, min(fixed_lod, v.levels - 1), dtype=np.int64)
            else:
                dist = ((pw[:, 0] - origin[0]) * cam_fwd[0]
                        + (pw[:, 1] - origin[1]) * cam_fwd[1]
                        + (pw[:, 2] - origin[2]) * cam_fwd[2])
                ratio = dist * pix_factor / v.svox_world
                lvl = np.zeros(r2.size, dtype=np.int64)
                gt = ratio > 1.0
                if gt.any():
                    _, exp = np.frexp(ratio[gt])
                    lvl[gt] = exp.astype(np.int64) - 1
                np.minimum(lvl, v.levels - 1, out=lvl)

            val, used = _sample_volume(v, pl, lvl, counters)
            x = _apply_filter(v, val)

            if mode == MODE_MIP:
                better = x > mip_val[r2]
                mip_val[r2] = np.where(better, x, mip_val[r2])
                mip_vol[r2] = np.where(better, v.index, mip_vol[r2])
            else:
                rgb, alpha = _tf_eval(v, x)
                ratio_len = seg_len[sub] / v.svox_world
                a_eff = 1.0 - _pow(1.0 - alpha, ratio_len)
                w = (1.0 - acc_a[r2]) * a_eff
                acc_c[r2] += w[:, None] * rgb
                acc_a[r2] += w

        k[rows] += 1
        finished = rows[k[rows] >= n_seg[rows]]
        if finished.size:
            mi[finished] += 1
            load_intervals(finished)
        alive = alive_mask()

    shape = (j1 - j0, width)
    out_color[j0:j1, :, :3] = acc_c.reshape(shape + (3,)).astype(np.float32)
    out_color[j0:j1, :, 3] = acc_a.reshape(shape).astype(np.float32)
    out_mip[j0:j1] = mip_val.reshape(shape)
    out_mipvol[j0:j1] = mip_vol.reshape(shape)
    return counters[0], counters[1]


def _sample_volume(v, pl, lvl, counters):
    """All-taps-same-level trilinear sampling with coarser fallback.

    pl: (m, 3) local physical points; lvl: (m,) requested levels.  Flags
    missing blocks at every level attempted and touched blocks at the level
    used.  Returns (values in [0,1], levels used).
    """
    m = pl.shape[0]
    val = np.empty(m)
    used = np.empty(m, dtype=np.int64)
    cur = lvl.copy()
    pend = np.ones(m, dtype=bool)
    bs_mask = (1 << v.bs_log2) - 1
    pool_rows = v.pool.shape[0]

    for level in range(v.levels):
        mask = pend & (cur == level)
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        c = pl[idx] * v.inv_voxel[level][None, :] - 0.5
        base = np.floor(c)
        frac = c - base
        base = base.astype(np.int64)
        dims = v.dims[level]
        gx, gy, _gz = v.grids[level]
        offset = v.level_off[level]
        taps = np.empty((8, idx.size))
        cells = np.empty((8, idx.size), dtype=np.int64)
        missing_any = np.zeros(idx.size, dtype=bool)
        for corner in range(8):
            dx, dy, dz = corner & 1, (corner >> 1) & 1, corner >> 2
            tx = np.clip(base[:, 0] + dx, 0, dims[0] - 1)
            ty = np.clip(base[:, 1] + dy, 0, dims[1] - 1)
            tz = np.clip(base[:, 2] + dz, 0, dims[2] - 1)
            cell = offset + ((tz >> v.bs_log2) * gy + (ty >> v.bs_log2)) * gx \
                + (tx >> v.bs_log2)
            slot = v.slots_flat[cell]
            miss = slot < 0
            if miss.any():
                v.missing[cell[miss]] = 1
                missing_any |= miss
            cells[corner] = cell
            if pool_rows:
                safe = np.where(miss, 0, slot)
                taps[corner] = v.pool[safe, tz & bs_mask, ty & bs_mask,
                                      tx & bs_mask].astype(np.float64)
            else:
                taps[corner] = 0.0
        ok = ~missing_any
        if ok.any():
            okidx = idx[ok]
            f = frac[ok]
            t = taps[:, ok]
            c00 = t[0] + f[:, 0] * (t[1] - t[0])
            c01 = t[2] + f[:, 0] * (t[3] - t[2])
            c10 = t[4] + f[:, 0] * (t[5] - t[4])
            c11 = t[6] + f[:, 0] * (t[7] - t[6])
            c0 = c00 + f[:, 1] * (c01 - c00)
            c1 = c10 + f[:, 1] * (c11 - c10)
            val[okidx] = (c0 + f[:, 2] * (c1 - c0)) * v.value_scale
            used[okidx] = level
            v.touched[cells[:, ok].ravel()] = 1
            pend[okidx] = False
        cur[idx[~ok]] = level + 1

    if pend.any():
        raise AssertionError("pinned coarsest level must resolve every sample")
    counters[0] += m
    counters[1] += int((used > lvl).sum())
    return val, used


def _apply_filter(v, val):
    if v.filter_kind == 1:  # threshold
        return np.where(val < v.filter_param, 0.0, val)
    if v.filter_kind == 2:  # gamma
        return _pow(val, v.filter_param)
    if v.filter_kind == 3:  # invert
        return 1.0 - val
    return val


def _tf_eval(v, x):
    """Piecewise-linear transfer function lookup; returns (rgb (m,3), alpha (m,))."""
    seg = np.searchsorted(v.tf_pos, x, side="right") - 1
    np.clip(seg, 0, len(v.tf_pos) - 2, out=seg)
    p0 = v.tf_pos[seg]
    p1 = v.tf_pos[seg + 1]
    u = (x - p0) / (p1 - p0)
    rgba = v.tf_rgba[seg] + u[:, None] * (v.tf_rgba[seg + 1] - v.tf_rgba[seg])
    return rgba[:, :3], rgba[:, 3]
