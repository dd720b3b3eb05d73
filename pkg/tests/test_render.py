"""Frame rendering: kernels, backend parity, meshes, modes, compositing."""

import math

import numpy as np
import pytest

from brickray.cache import BlockCache
from brickray.errors import NoCamera
from brickray.mathutil import look_at_rotation, matrix_to_quat, quat_from_axis_angle
from brickray.render import (RenderSettings, generate_rays, quantize_rgba8,
                             raycast_frame)
from brickray.render.backend import available_backends
from brickray.scenegraph import (Camera, DirectionalLight, Mesh, PointCloud,
                                 Scene, Transform, VolumeRef)
from brickray.transfer import SampleFilter, TransferFunction
from brickray.volume import make_procedural, reassemble_level
from conftest import add_look_at_camera, centered_volume_scene, warm_render
from oracles import closed_form_alpha, dense_raycast, pixel_ray, ray_box_span

COMPILED = "compiled" in available_backends()
needs_compiled = pytest.mark.skipif(not COMPILED,
                                    reason="compiled kernel not built")


def test_quantize_rounds_half_up_and_clips():
    c = np.array([[[0.0, 1.0, 0.5, 2.0]], [[-1.0, 0.49 / 255, 0.51 / 255,
                                            254.6 / 255]]], dtype=np.float32)
    q = quantize_rgba8(c)
    assert q[0].tolist() == [[0, 255, 128, 255]]
    assert q[1].tolist() == [[0, 0, 1, 255]]


def test_missing_camera_raises():
    scene = Scene()
    scene.add(VolumeRef(pyramid_id="v"))
    with pytest.raises(NoCamera):
        raycast_frame(scene, {}, RenderSettings(width=8, height=8))


def test_empty_scene_renders_blank():
    scene = Scene()
    add_look_at_camera(scene, (0, 0, 5))
    r = raycast_frame(scene, {}, RenderSettings(width=8, height=8))
    assert r.color.shape == (8, 8, 4)
    assert np.all(r.color == 0)
    assert np.all(np.isinf(r.depth))
    assert r.stats.backend == "none"


def test_uniform_volume_matches_closed_form_everywhere():
    src = make_procedural("constant=128", dim=32)
    cache = BlockCache(src, 32 << 20)
    alpha_tf = 0.02
    tf = TransferFunction.constant((0.8, 0.7, 0.6, alpha_tf))
    scene, cam_pos, cam_rot, world = centered_volume_scene(src.meta, tf=tf)
    settings = RenderSettings(width=48, height=48, step=0.5)
    frame = warm_render(scene, {"v": cache}, settings)
    inv = np.linalg.inv(world)
    for j in range(0, 48, 7):
        for i in range(0, 48, 7):
            o, d = pixel_ray(cam_pos, cam_rot, math.radians(45), 48, 48, i, j)
            span = ray_box_span(inv[:3, :3] @ o + inv[:3, 3], inv[:3, :3] @ d,
                                np.zeros(3), np.full(3, 32.0))
            want = 0.0
            if span is not None and span[1] > max(span[0], 0.01):
                length = span[1] - max(span[0], 0.01)
                want = closed_form_alpha(alpha_tf, length, 1.0)
            assert abs(float(frame.color[j, i, 3]) - want) < 1e-3


@pytest.mark.parametrize("backend", ["python",
                                     pytest.param("compiled",
                                                  marks=needs_compiled)])
def test_warm_frame_matches_dense_oracle(backend):
    src = make_procedural("noise", dim=32)
    cache = BlockCache(src, 32 << 20)
    tf = TransferFunction([(0.0, (0.0, 0.1, 0.3, 0.0)),
                           (0.5, (0.9, 0.4, 0.1, 0.45)),
                           (1.0, (1.0, 1.0, 0.9, 0.9))])
    scene, cam_pos, cam_rot, world = centered_volume_scene(src.meta, tf=tf)
    settings = RenderSettings(width=40, height=40, step=1.0, fixed_lod=0,
                              backend=backend)
    frame = warm_render(scene, {"v": cache}, settings)
    dense = reassemble_level(src, 0).astype(np.float64)
    want = dense_raycast(dense, (1, 1, 1), world, cam_pos, cam_rot,
                         math.radians(45), 40, 40, 1.0,
                         list(zip(tf.positions.tolist(), map(tuple, tf.colors))))
    assert np.max(np.abs(frame.color.astype(np.float64) - want)) <= 1.0 / 255.0


@needs_compiled
def test_backends_bit_identical_across_scenes():
    rng = np.random.default_rng(2718)
    src = make_procedural("noise", dim=64)
    meta = src.meta
    tf = TransferFunction([(0.0, (0.0, 0.0, 0.1, 0.0)),
                           (0.3, (0.9, 0.2, 0.1, 0.35)),
                           (0.7, (0.2, 0.9, 0.3, 0.08)),
                           (1.0, (1.0, 1.0, 1.0, 0.9))])
    for trial, (filt, mode) in enumerate([(None, "volume"),
                                          ("gamma:2.2", "volume"),
                                          ("threshold:0.3", "volume"),
                                          ("invert", "mip"),
                                          (None, "mip")]):
        cache = BlockCache(src, 64 << 20)
        scene = Scene()
        center = np.array(meta.dims0, float) / 2
        axis = rng.normal(size=3)
        scene.transfer_functions["tf"] = tf
        if filt:
            scene.sample_filters["f"] = SampleFilter.parse(filt)
        scene.add(VolumeRef(pyramid_id="v", transfer_function_id="tf",
                            sample_filter_id="f" if filt else None),
                  transform=Transform(
                      translation=tuple(-center),
                      rotation=tuple(quat_from_axis_angle(axis,
                                                          rng.uniform(0, 2)))))
        cam = rng.uniform(60, 160, 3) * rng.choice([-1, 1], 3)
        add_look_at_camera(scene, cam, fov_y=math.radians(rng.uniform(25, 70)))
        tri = Mesh(vertices=rng.uniform(-40, 40, (3, 3)),
                   indices=[[0, 1, 2]], color=(0.8, 0.4, 0.1, 0.6))
        scene.add(tri)
        settings = RenderSettings(width=72, height=56,
                                  step=float(rng.uniform(0.4, 1.6)),
                                  threads=int(rng.integers(1, 5)))
        # Cold, partially resident, and warm residency states.
        for round_no in range(3):
            settings.backend = "python"
            rp = raycast_frame(scene, {"v": cache}, settings, mode=mode)
            settings.backend = "compiled"
            rc = raycast_frame(scene, {"v": cache}, settings, mode=mode)
            assert np.array_equal(rp.color, rc.color), \
                f"trial {trial} round {round_no}: color differs"
            assert np.array_equal(rp.depth, rc.depth)
            assert rp.stats.samples == rc.stats.samples
            assert rp.stats.fallback_samples == rc.stats.fallback_samples
            cache.pump_loads(32 if round_no == 0 else None)


@needs_compiled
def test_thread_count_does_not_change_pixels():
    src = make_procedural("radial", dim=64)
    cache = BlockCache(src, 64 << 20)
    scene, *_ = centered_volume_scene(src.meta)
    frames = []
    for backend in ("python", "compiled"):
        for threads in (1, 3, 8):
            settings = RenderSettings(width=40, height=40, threads=threads,
                                      backend=backend)
            frames.append(warm_render(scene, {"v": cache}, settings).color)
    for f in frames[1:]:
        assert np.array_equal(frames[0], f)


def test_fallback_sampling_readies_finer_levels():
    src = make_procedural("noise", dim=128)
    cache = BlockCache(src, 64 << 20)
    scene, *_ = centered_volume_scene(src.meta)
    settings = RenderSettings(width=32, height=32, fixed_lod=0)
    first = raycast_frame(scene, {"v": cache}, settings)
    assert first.stats.fallback_samples > 0
    assert first.stats.wanted_missing > 0
    assert cache.pending_count > 0
    frame = warm_render(scene, {"v": cache}, settings)
    assert frame.stats.fallback_samples == 0
    # Converged frame re-renders bit-identically.
    again = raycast_frame(scene, {"v": cache}, settings)
    assert np.array_equal(frame.color, again.color)


def test_step_halving_changes_radial_frame_by_at_most_two_levels():
    src = make_procedural("radial", dim=64)
    cache = BlockCache(src, 64 << 20)
    scene, *_ = centered_volume_scene(src.meta)
    coarse = warm_render(scene, {"v": cache},
                         RenderSettings(width=48, height=48, step=1.0))
    fine = warm_render(scene, {"v": cache},
                       RenderSettings(width=48, height=48, step=0.5))
    diff = np.abs(quantize_rgba8(coarse.color).astype(int)
                  - quantize_rgba8(fine.color).astype(int))
    assert diff.max() <= 2


def test_fixed_lod_selects_requested_level():
    src = make_procedural("hotvoxel", dim=64)
    cache = BlockCache(src, 64 << 20)
    scene = Scene()
    scene.add(VolumeRef(pyramid_id="v"),
              transform=Transform(translation=(-32, -32, -32)))
    # Center ray passes exactly through the hot voxel's center (0.5, 0.5, z).
    add_look_at_camera(scene, (0.5, 0.5, 200.0), target=(0.5, 0.5, 0.0))
    settings = RenderSettings(width=33, height=33, step=0.125, fixed_lod=0)
    lvl0 = warm_render(scene, {"v": cache}, settings, mode="mip")
    settings = RenderSettings(width=33, height=33, step=0.125, fixed_lod=1)
    lvl1 = warm_render(scene, {"v": cache}, settings, mode="mip")
    # Averaging into level 1 dims the 255 spike to 32 and widens its support.
    assert lvl0.color[16, 16, 3] > 0.9
    peak1 = lvl1.color[16, 16, 3]
    assert 0.04 < peak1 < 0.12


def test_mip_mode_matches_dense_maximum():
    src = make_procedural("noise", dim=32)
    cache = BlockCache(src, 32 << 20)
    scene, cam_pos, cam_rot, world = centered_volume_scene(src.meta)
    settings = RenderSettings(width=32, height=32, step=0.5, fixed_lod=0)
    frame = warm_render(scene, {"v": cache}, settings, mode="mip")
    dense = reassemble_level(src, 0).astype(np.float64)
    want = dense_raycast(dense, (1, 1, 1), world, cam_pos, cam_rot,
                         math.radians(45), 32, 32, 0.5,
                         [(0.0, (0, 0, 0, 0)), (1.0, (1, 1, 1, 1))],
                         mode="mip")
    assert np.max(np.abs(frame.color.astype(np.float64) - want)) <= 1.5 / 255.0


def test_mesh_depth_and_flat_shading():
    scene = Scene()
    add_look_at_camera(scene, (0, 0, 5))
    # Light along -Z hits the camera-facing quad head on: lambert is exactly
    # 1 and the shaded color equals the base color.
    scene.add(DirectionalLight(direction=(0.0, 0.0, -1.0)))
    quad = Mesh(vertices=[[-2, -2, 1], [2, -2, 1], [2, 2, 1], [-2, 2, 1]],
                indices=[[0, 1, 2], [0, 2, 3]], color=(0.2, 0.9, 0.4, 1.0))
    scene.add(quad)
    r = raycast_frame(scene, {}, RenderSettings(width=33, height=33))
    center = r.color[16, 16]
    # Headlight shading at normal incidence keeps the base color.
    assert np.allclose(center, (0.2, 0.9, 0.4, 1.0), atol=1e-5)
    assert np.isclose(r.depth[16, 16], 4.0, atol=1e-9)
    assert r.stats.triangles == 2


def test_nearer_triangle_wins_depth_test():
    scene = Scene()
    add_look_at_camera(scene, (0, 0, 5))
    far_tri = Mesh(vertices=[[-3, -3, 0], [3, -3, 0], [0, 4, 0]],
                   indices=[[0, 1, 2]], color=(1, 0, 0, 1))
    near_tri = Mesh(vertices=[[-3, -3, 2], [3, -3, 2], [0, 4, 2]],
                    indices=[[0, 1, 2]], color=(0, 0, 1, 1))
    scene.add(far_tri)
    scene.add(near_tri)
    r = raycast_frame(scene, {}, RenderSettings(width=17, height=17))
    assert r.color[8, 8, 2] > 0.5 and r.color[8, 8, 0] < 0.1
    assert np.isclose(r.depth[8, 8], 3.0, atol=1e-9)


def test_degenerate_triangles_counted_and_skipped():
    scene = Scene()
    add_look_at_camera(scene, (0, 0, 5))
    degenerate = Mesh(vertices=[[0, 0, 0], [1, 1, 1], [2, 2, 2]],
                      indices=[[0, 1, 2]], color=(1, 1, 1, 1))
    scene.add(degenerate)
    r = raycast_frame(scene, {}, RenderSettings(width=9, height=9))
    assert r.stats.degenerate_triangles == 1
    assert np.all(r.color == 0)


def test_point_cloud_renders_single_pixel_splats():
    scene = Scene()
    add_look_at_camera(scene, (0, 0, 5))
    scene.add(PointCloud(points=[[0, 0, 0]], color=(1, 0, 1, 1)))
    r = raycast_frame(scene, {}, RenderSettings(width=33, height=33))
    hot = np.argwhere(r.color[:, :, 3] > 0)
    assert hot.shape[0] == 1
    assert tuple(hot[0]) == (16, 16)
    assert np.isclose(r.depth[16, 16], 5.0, atol=1e-9)


def test_mesh_behind_volume_composites_in_depth_order():
    src = make_procedural("constant=255", dim=32)
    cache = BlockCache(src, 32 << 20)
    alpha_tf = 0.03
    tf = TransferFunction.constant((1.0, 0.0, 0.0, alpha_tf))
    scene, cam_pos, cam_rot, world = centered_volume_scene(src.meta, tf=tf)
    scene.add(DirectionalLight(direction=(0.0, 0.0, -1.0)))
    # Green wall behind the volume, fully covering the frame's center.
    wall = Mesh(vertices=[[-60, -60, -40], [60, -60, -40], [60, 60, -40],
                          [-60, 60, -40]],
                indices=[[0, 1, 2], [0, 2, 3]], color=(0.0, 1.0, 0.0, 1.0))
    scene.add(wall)
    frame = warm_render(scene, {"v": cache},
                        RenderSettings(width=33, height=33, step=0.5))
    center = frame.color[16, 16].astype(np.float64)
    # The center ray crosses the full 32-voxel depth of the volume.
    a_vol = closed_form_alpha(alpha_tf, 32.0, 1.0)
    assert abs(center[3] - 1.0) < 1e-5  # wall closes the alpha
    assert abs(center[0] - a_vol) < 2e-3  # red from the volume
    assert abs(center[1] - (1.0 - a_vol)) < 2e-3  # attenuated green wall


def test_background_buffer_shows_through_empty_pixels():
    scene = Scene()
    add_look_at_camera(scene, (0, 0, 5))
    bg = np.zeros((9, 9, 4), dtype=np.float32)
    bg[..., 2] = bg[..., 3] = 1.0
    r = raycast_frame(scene, {}, RenderSettings(width=9, height=9),
                      background=bg)
    assert np.allclose(r.color[0, 0], (0, 0, 1, 1))


def test_multi_volume_scene_uses_python_backend_and_merges_spans():
    src = make_procedural("constant=255", dim=16)
    tf = TransferFunction.constant((0.5, 0.5, 0.5, 0.4))
    caches = {"a": BlockCache(src, 32 << 20), "b": BlockCache(src, 32 << 20)}
    scene = Scene()
    scene.transfer_functions["tf"] = tf
    # Two identical cubes side by side with a gap between them.
    scene.add(VolumeRef(pyramid_id="a", transfer_function_id="tf"),
              transform=Transform(translation=(-24, -8, -8)))
    scene.add(VolumeRef(pyramid_id="b", transfer_function_id="tf"),
              transform=Transform(translation=(8, -8, -8)))
    add_look_at_camera(scene, (0, 0, 60))
    settings = RenderSettings(width=65, height=17)
    frame = warm_render(scene, caches, settings)
    assert frame.stats.backend == "python"
    row = frame.color[8, :, 3]
    left = row[:32].max()
    right = row[33:].max()
    assert left > 0.1 and right > 0.1
    assert row[32] < 1e-6  # the gap between the cubes stays empty


def test_invisible_volume_is_skipped():
    src = make_procedural("radial", dim=32)
    cache = BlockCache(src, 32 << 20)
    scene, *_ = centered_volume_scene(src.meta)
    for item in list(scene.nodes.values()):
        if isinstance(item.payload, VolumeRef):
            item.visible = False
    r = raycast_frame(scene, {"v": cache}, RenderSettings(width=8, height=8))
    assert np.all(r.color == 0)
    assert r.stats.backend == "none"


def test_early_termination_caps_sample_work():
    src = make_procedural("constant=255", dim=64)
    cache = BlockCache(src, 64 << 20)
    opaque = TransferFunction.constant((1, 1, 1, 0.999))
    clear = TransferFunction.constant((1, 1, 1, 0.001))
    scene_o, *_ = centered_volume_scene(src.meta, tf=opaque)
    scene_c, *_ = centered_volume_scene(src.meta, tf=clear)
    settings = RenderSettings(width=16, height=16, step=0.5)
    dense_hits = warm_render(scene_o, {"v": cache}, settings)
    sparse = warm_render(scene_c, {"v": cache}, settings)
    assert dense_hits.stats.samples < sparse.stats.samples / 10
    assert dense_hits.color[8, 8, 3] >= 0.998
