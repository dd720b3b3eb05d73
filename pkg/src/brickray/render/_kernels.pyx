# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled single-volume marching kernel.

Instruction-for-instruction mirror of the pure-Python kernel: identical
formulas, identical operation order, pow/frexp from libm, float64
accumulation with a single float32 store at the end.  The two backends
therefore produce bit-identical frames; the pure-Python kernel additionally
handles multi-volume scenes.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport INFINITY, floor, frexp, pow

cnp.import_array()

cdef double SEGMENT_EPS = 1e-9  # keep in sync with rays.SEGMENT_EPS

ctypedef fused voxel_t:
    cnp.uint8_t
    cnp.uint16_t


def march_band(double[::1] origin, double[:, :, ::1] dirs,
               float[:, ::1] mesh_depth,
               double near, double far, double step_world, double early,
               int mode, int fixed_lod, double pix_factor,
               double[::1] cam_fwd,
               int vol_index,
               double[:, ::1] inv_affine, double[::1] box_hi,
               long long[:, ::1] dims, long long[:, ::1] grids,
               long long[::1] level_off, int[::1] slots_flat,
               voxel_t[:, :, :, ::1] pool, double value_scale,
               double[:, ::1] inv_voxel, double svox_world,
               double[::1] tf_pos, double[:, ::1] tf_rgba,
               int filter_kind, double filter_param,
               int bs_log2, int levels,
               unsigned char[::1] missing, unsigned char[::1] touched,
               int j0, int j1,
               float[:, :, ::1] out_color, double[:, ::1] out_mip,
               int[:, ::1] out_mipvol):
    """March rows [j0, j1); returns (samples, fallback_samples)."""
    cdef Py_ssize_t width = dirs.shape[1]
    cdef Py_ssize_t i, j
    cdef int a, k_corner, level, tfn, seg_idx
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double fwd0 = cam_fwd[0], fwd1 = cam_fwd[1], fwd2 = cam_fwd[2]
    cdef double ol0, ol1, ol2, oa
    cdef double dx, dy, dz, mesh_t, far_lim
    cdef double dl0, dl1, dl2, da, ta, tb, lo_t, hi_t, tmin, tmax, a0, a1
    cdef double span, rem, s0, s1, tm, seg_len
    cdef double px, py, pz, pl0, pl1, pl2, dist, ratio
    cdef double acc_a, cr, cg, cb, mip_v
    cdef double cx, cy, cz, fx, fy, fz, val, x, u
    cdef double c00, c01, c10, c11, cl0, cl1
    cdef double tr, tg, tb_c, talpha, ratio_len, a_eff, w
    cdef double taps[8]
    cdef long long cellbuf[8]
    cdef long long nf, nseg, kk
    cdef long long bx, by, bz, tx, ty, tz, cell, gx, gy
    cdef long long dimx, dimy, dimz
    cdef int slot, expo, lvl, used, mip_idx
    cdef int ddx, ddy, ddz
    cdef bint valid, allok, resolved
    cdef long long bs_mask = (1 << bs_log2) - 1
    cdef long long n_samples = 0, n_fallback = 0
    cdef int last_level = levels - 1
    cdef int clamped_fixed = fixed_lod if fixed_lod < last_level else last_level

    # World->local of the eye point is constant across the frame.
    ol0 = inv_affine[0, 0] * ox + inv_affine[0, 1] * oy + inv_affine[0, 2] * oz + inv_affine[0, 3]
    ol1 = inv_affine[1, 0] * ox + inv_affine[1, 1] * oy + inv_affine[1, 2] * oz + inv_affine[1, 3]
    ol2 = inv_affine[2, 0] * ox + inv_affine[2, 1] * oy + inv_affine[2, 2] * oz + inv_affine[2, 3]

    with nogil:
        for j in range(j0, j1):
            for i in range(width):
                dx = dirs[j, i, 0]
                dy = dirs[j, i, 1]
                dz = dirs[j, i, 2]
                mesh_t = <double> mesh_depth[j, i]
                far_lim = far if far < mesh_t else mesh_t

                dl0 = dx * inv_affine[0, 0] + dy * inv_affine[0, 1] + dz * inv_affine[0, 2]
                dl1 = dx * inv_affine[1, 0] + dy * inv_affine[1, 1] + dz * inv_affine[1, 2]
                dl2 = dx * inv_affine[2, 0] + dy * inv_affine[2, 1] + dz * inv_affine[2, 2]

                valid = True
                tmin = -INFINITY
                tmax = INFINITY
                for a in range(3):
                    da = dl0 if a == 0 else (dl1 if a == 1 else dl2)
                    oa = ol0 if a == 0 else (ol1 if a == 1 else ol2)
                    if da == 0.0:
                        if oa < 0.0 or oa > box_hi[a]:
                            valid = False
                    else:
                        ta = (0.0 - oa) / da
                        tb = (box_hi[a] - oa) / da
                        if ta > tb:
                            lo_t = tb
                            hi_t = ta
                        else:
                            lo_t = ta
                            hi_t = tb
                        if lo_t > tmin:
                            tmin = lo_t
                        if hi_t < tmax:
                            tmax = hi_t
                a0 = tmin if tmin > near else near
                a1 = tmax if tmax < far_lim else far_lim
                if not a1 > a0:
                    valid = False

                acc_a = 0.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                mip_v = -1.0
                mip_idx = -1

                if valid:
                    span = a1 - a0
                    nf = <long long> floor(span / step_world)
                    rem = span - nf * step_world
                    nseg = nf + (1 if rem > SEGMENT_EPS * step_world else 0)
                    for kk in range(nseg):
                        if mode == 0 and acc_a >= early:
                            break
                        s0 = a0 + kk * step_world
                        s1 = a1 if kk == nf else s0 + step_world
                        tm = 0.5 * (s0 + s1)
                        seg_len = s1 - s0
                        if not (tm >= a0 and tm < a1):
                            continue

                        px = ox + tm * dx
                        py = oy + tm * dy
                        pz = oz + tm * dz
                        pl0 = px * inv_affine[0, 0] + py * inv_affine[0, 1] + pz * inv_affine[0, 2] + inv_affine[0, 3]
                        pl1 = px * inv_affine[1, 0] + py * inv_affine[1, 1] + pz * inv_affine[1, 2] + inv_affine[1, 3]
                        pl2 = px * inv_affine[2, 0] + py * inv_affine[2, 1] + pz * inv_affine[2, 2] + inv_affine[2, 3]

                        if fixed_lod >= 0:
                            lvl = clamped_fixed
                        else:
                            dist = ((px - ox) * fwd0 + (py - oy) * fwd1
                                    + (pz - oz) * fwd2)
                            ratio = dist * pix_factor / svox_world
                            if ratio > 1.0:
                                frexp(ratio, &expo)
                                lvl = expo - 1
                                if lvl > last_level:
                                    lvl = last_level
                            else:
                                lvl = 0

                        # all-taps-same-level sampling with coarser fallback
                        resolved = False
                        val = 0.0
                        used = last_level
                        for level in range(lvl, levels):
                            cx = pl0 * inv_voxel[level, 0] - 0.5
                            cy = pl1 * inv_voxel[level, 1] - 0.5
                            cz = pl2 * inv_voxel[level, 2] - 0.5
                            bx = <long long> floor(cx)
                            by = <long long> floor(cy)
                            bz = <long long> floor(cz)
                            fx = cx - floor(cx)
                            fy = cy - floor(cy)
                            fz = cz - floor(cz)
                            dimx = dims[level, 0]
                            dimy = dims[level, 1]
                            dimz = dims[level, 2]
                            gx = grids[level, 0]
                            gy = grids[level, 1]
                            allok = True
                            for k_corner in range(8):
                                ddx = k_corner & 1
                                ddy = (k_corner >> 1) & 1
                                ddz = k_corner >> 2
                                tx = bx + ddx
                                if tx < 0:
                                    tx = 0
                                elif tx > dimx - 1:
                                    tx = dimx - 1
                                ty = by + ddy
                                if ty < 0:
                                    ty = 0
                                elif ty > dimy - 1:
                                    ty = dimy - 1
                                tz = bz + ddz
                                if tz < 0:
                                    tz = 0
                                elif tz > dimz - 1:
                                    tz = dimz - 1
                                cell = level_off[level] + ((tz >> bs_log2) * gy
                                       + (ty >> bs_log2)) * gx + (tx >> bs_log2)
                                cellbuf[k_corner] = cell
                                slot = slots_flat[cell]
                                if slot < 0:
                                    missing[cell] = 1
                                    allok = False
                                else:
                                    taps[k_corner] = <double> pool[slot,
                                                                   tz & bs_mask,
                                                                   ty & bs_mask,
                                                                   tx & bs_mask]
                            if allok:
                                for k_corner in range(8):
                                    touched[cellbuf[k_corner]] = 1
                                c00 = taps[0] + fx * (taps[1] - taps[0])
                                c01 = taps[2] + fx * (taps[3] - taps[2])
                                c10 = taps[4] + fx * (taps[5] - taps[4])
                                c11 = taps[6] + fx * (taps[7] - taps[6])
                                cl0 = c00 + fy * (c01 - c00)
                                cl1 = c10 + fy * (c11 - c10)
                                val = (cl0 + fz * (cl1 - cl0)) * value_scale
                                used = level
                                resolved = True
                                break
                        if not resolved:
                            continue  # unreachable: the coarsest level is pinned
                        n_samples += 1
                        if used > lvl:
                            n_fallback += 1

                        x = val
                        if filter_kind == 1:
                            x = 0.0 if x < filter_param else x
                        elif filter_kind == 2:
                            x = pow(x, filter_param)
                        elif filter_kind == 3:
                            x = 1.0 - x

                        if mode == 1:
                            if x > mip_v:
                                mip_v = x
                                mip_idx = vol_index
                        else:
                            tfn = tf_pos.shape[0]
                            seg_idx = 0
                            while seg_idx < tfn - 2 and x >= tf_pos[seg_idx + 1]:
                                seg_idx += 1
                            u = (x - tf_pos[seg_idx]) / (tf_pos[seg_idx + 1] - tf_pos[seg_idx])
                            tr = tf_rgba[seg_idx, 0] + u * (tf_rgba[seg_idx + 1, 0] - tf_rgba[seg_idx, 0])
                            tg = tf_rgba[seg_idx, 1] + u * (tf_rgba[seg_idx + 1, 1] - tf_rgba[seg_idx, 1])
                            tb_c = tf_rgba[seg_idx, 2] + u * (tf_rgba[seg_idx + 1, 2] - tf_rgba[seg_idx, 2])
                            talpha = tf_rgba[seg_idx, 3] + u * (tf_rgba[seg_idx + 1, 3] - tf_rgba[seg_idx, 3])
                            ratio_len = seg_len / svox_world
                            a_eff = 1.0 - pow(1.0 - talpha, ratio_len)
                            w = (1.0 - acc_a) * a_eff
                            cr += w * tr
                            cg += w * tg
                            cb += w * tb_c
                            acc_a += w

                out_color[j, i, 0] = <float> cr
                out_color[j, i, 1] = <float> cg
                out_color[j, i, 2] = <float> cb
                out_color[j, i, 3] = <float> acc_a
                out_mip[j, i] = mip_v
                out_mipvol[j, i] = mip_idx

    return n_samples, n_fallback
