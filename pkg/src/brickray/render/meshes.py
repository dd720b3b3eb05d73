"""Software rasterization of triangle meshes and point clouds.

Produces a premultiplied RGBA color buffer and a depth buffer whose values
are ray parameters along the same unit pixel rays the volume marcher uses,
so volume marching can terminate exactly at mesh surfaces.  Flat shading,
deterministic: triangles fill in flatten order with a strict depth test.
"""

from __future__ import annotations

import math

import numpy as np

from ..scenegraph import DirectionalLight, Mesh, PointCloud


def _clip_near(tri_cam, near):
    """Sutherland-Hodgman clip of one camera-space triangle to z <= -near.

    Returns a list of 0..4 vertices (camera space) forming a convex fan.
    """
    out = []
    n = len(tri_cam)
    for i in range(n):
        a = tri_cam[i]
        b = tri_cam[(i + 1) % n]
        a_in = a[2] <= -near
        b_in = b[2] <= -near
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (-near - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return out


def rasterize_scene(items, origin, dirs, cam_rot, fov_y, near, light=None):
    """Rasterize mesh/point-cloud items into color+depth buffers.

    items: sequence of (world_matrix, payload) where payload is Mesh or
    PointCloud.  origin/dirs come from generate_rays; cam_rot is the camera
    world rotation.  Returns (color (H,W,4) float32 premultiplied,
    depth (H,W) float32 with +inf where nothing was hit, stats dict).
    """
    height, width = dirs.shape[:2]
    color = np.zeros((height, width, 4), dtype=np.float32)
    depth = np.full((height, width), np.inf, dtype=np.float32)
    stats = {"triangles": 0, "degenerate_triangles": 0, "points": 0}

    tan_half = math.tan(fov_y / 2.0)
    aspect = width / height
    cam_fwd = -cam_rot[:, 2]

    if light is not None and isinstance(light, DirectionalLight):
        light_dir = -np.asarray(light.direction, dtype=np.float64)
        light_dir = light_dir / np.linalg.norm(light_dir)
        light_rgb = np.asarray(light.color, dtype=np.float64)
    else:
        light_dir = None  # headlight: light arrives along the view direction
        light_rgb = np.ones(3)

    def to_cam(pts):
        return (pts - origin) @ cam_rot  # camera space: rows are points

    def project(pts_cam):
        inv_z = 1.0 / -pts_cam[:, 2]
        sx = (pts_cam[:, 0] * inv_z / (tan_half * aspect) + 1.0) / 2.0 * width
        sy = (1.0 - pts_cam[:, 1] * inv_z / tan_half) / 2.0 * height
        return sx, sy

    for world, payload in items:
        if isinstance(payload, Mesh):
            _raster_mesh(world, payload, origin, dirs, to_cam, project, near,
                         cam_fwd, light_dir, light_rgb, color, depth, stats)
        elif isinstance(payload, PointCloud):
            _raster_points(world, payload, origin, to_cam, project, near,
                           color, depth, stats)
    return color, depth, stats


def _raster_mesh(world, mesh, origin, dirs, to_cam, project, near, cam_fwd,
                 light_dir, light_rgb, color, depth, stats):
    height, width = depth.shape
    verts_w = mesh.vertices @ world[:3, :3].T + world[:3, 3]
    base_rgb = np.asarray(mesh.color[:3], dtype=np.float64)
    base_alpha = float(mesh.color[3])

    for tri in mesh.indices:
        v0, v1, v2 = verts_w[tri[0]], verts_w[tri[1]], verts_w[tri[2]]
        normal = np.cross(v1 - v0, v2 - v0)
        norm_len = np.linalg.norm(normal)
        if norm_len == 0.0:
            stats["degenerate_triangles"] += 1
            continue
        stats["triangles"] += 1
        n_hat = normal / norm_len

        cam_tri = to_cam(np.stack([v0, v1, v2]))
        clipped = _clip_near(list(cam_tri), near)
        if len(clipped) < 3:
            continue

        # Flat shade once per input triangle, normal flipped toward the camera.
        centroid = (v0 + v1 + v2) / 3.0
        view = origin - centroid
        view = view / np.linalg.norm(view)
        n_face = n_hat if float(n_hat @ view) >= 0.0 else -n_hat
        ldir = view if light_dir is None else light_dir
        lambert = max(0.0, float(n_face @ ldir))
        shade = np.clip(base_rgb * (0.2 + 0.8 * lambert * light_rgb), 0.0, 1.0)
        frag = np.empty(4, dtype=np.float32)
        frag[:3] = shade * base_alpha  # premultiplied
        frag[3] = base_alpha

        pts = np.stack(clipped)
        sx, sy = project(pts)
        fan = [(0, k, k + 1) for k in range(1, len(clipped) - 1)]
        for (a, b, c) in fan:
            _fill_triangle(sx[[a, b, c]], sy[[a, b, c]], v0, normal, origin,
                           dirs, near, frag, color, depth)


def _fill_triangle(sx, sy, plane_v0, plane_n, origin, dirs, near, frag,
                   color, depth):
    height, width = depth.shape
    x0 = max(0, math.ceil(min(sx) - 0.5))
    x1 = min(width - 1, math.floor(max(sx) - 0.5))
    y0 = max(0, math.ceil(min(sy) - 0.5))
    y1 = min(height - 1, math.floor(max(sy) - 0.5))
    if x1 < x0 or y1 < y0:
        return
    area = ((sx[1] - sx[0]) * (sy[2] - sy[0])
            - (sy[1] - sy[0]) * (sx[2] - sx[0]))
    if area == 0.0:
        return
    px = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
    py = np.arange(y0, y1 + 1, dtype=np.float64) + 0.5
    qx, qy = np.meshgrid(px, py)
    w0 = (sx[2] - sx[1]) * (qy - sy[1]) - (sy[2] - sy[1]) * (qx - sx[1])
    w1 = (sx[0] - sx[2]) * (qy - sy[2]) - (sy[0] - sy[2]) * (qx - sx[2])
    w2 = (sx[1] - sx[0]) * (qy - sy[0]) - (sy[1] - sy[0]) * (qx - sx[0])
    if area < 0.0:
        w0, w1, w2 = -w0, -w1, -w2
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not inside.any():
        return
    jj, ii = np.nonzero(inside)
    jj = jj + y0
    ii = ii + x0
    d = dirs[jj, ii]
    denom = d @ plane_n
    numer = float((plane_v0 - origin) @ plane_n)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = numer / denom
    valid = np.isfinite(t) & (t >= near)
    t32 = t.astype(np.float32)
    closer = valid & (t32 < depth[jj, ii])
    if not closer.any():
        return
    jj, ii, t32 = jj[closer], ii[closer], t32[closer]
    depth[jj, ii] = t32
    color[jj, ii] = frag


def _raster_points(world, pc, origin, to_cam, project, near, color, depth,
                   stats):
    height, width = depth.shape
    pts_w = pc.points @ world[:3, :3].T + world[:3, 3]
    cam = to_cam(pts_w)
    front = cam[:, 2] <= -near
    if not front.any():
        return
    pts_w = pts_w[front]
    cam = cam[front]
    sx, sy = project(cam)
    ii = np.floor(sx).astype(np.int64)
    jj = np.floor(sy).astype(np.int64)
    on_screen = (ii >= 0) & (ii < width) & (jj >= 0) & (jj < height)
    ii, jj, pts_w = ii[on_screen], jj[on_screen], pts_w[on_screen]
    t = np.linalg.norm(pts_w - origin, axis=1).astype(np.float32)
    frag = np.empty(4, dtype=np.float32)
    frag[:3] = np.asarray(pc.color[:3], dtype=np.float64) * pc.color[3]
    frag[3] = pc.color[3]
    # Deterministic z-buffered splat: process in index order, strict test.
    for k in range(len(ii)):
        if t[k] < depth[jj[k], ii[k]]:
            depth[jj[k], ii[k]] = t[k]
            color[jj[k], ii[k]] = frag
            stats["points"] += 1
