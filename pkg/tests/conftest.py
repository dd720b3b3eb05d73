"""Shared fixtures/helpers and the acceptance-criteria summary hook."""

from __future__ import annotations

import math
import re

import numpy as np
import pytest

from brickray.cache import BlockCache
from brickray.mathutil import look_at_rotation, matrix_to_quat
from brickray.render import RenderSettings, raycast_frame
from brickray.scenegraph import Camera, Scene, Transform, VolumeRef

# --- scene/render helpers ----------------------------------------------------


def add_look_at_camera(scene, position, target=(0.0, 0.0, 0.0),
                       up=(0.0, 1.0, 0.0), fov_y=math.radians(45.0),
                       parent=0):
    """Add a camera node posed to look from `position` at `target`."""
    rot = look_at_rotation(np.asarray(position, float), np.asarray(target, float),
                           np.asarray(up, float))
    return scene.add(Camera(fov_y=fov_y), parent=parent, name="camera",
                     transform=Transform(translation=tuple(position),
                                         rotation=tuple(matrix_to_quat(rot))))


def centered_volume_scene(meta, pyramid_id="v", cam_distance_factor=4.0,
                          fov_y=math.radians(45.0), tf=None, tf_id=None,
                          cam_pos=None):
    """Scene with the volume centered at the origin and a camera on +Z.

    Returns (scene, camera_position, camera_rotation, volume_world_matrix).
    """
    scene = Scene()
    center = (np.asarray(meta.dims0, float) * np.asarray(meta.voxel_size, float)
              / 2.0)
    vref = VolumeRef(pyramid_id=pyramid_id)
    if tf is not None:
        key = tf_id or "tf"
        scene.transfer_functions[key] = tf
        vref.transfer_function_id = key
    scene.add(vref, name="volume",
              transform=Transform(translation=tuple(-center)))
    if cam_pos is None:
        cam_pos = np.array([0.0, 0.0, cam_distance_factor * float(center.max())])
    else:
        cam_pos = np.asarray(cam_pos, float)
    add_look_at_camera(scene, cam_pos, fov_y=fov_y)
    rot = look_at_rotation(cam_pos, np.zeros(3), np.array([0.0, 1.0, 0.0]))
    world = np.eye(4)
    world[:3, 3] = -center
    return scene, cam_pos, rot, world


def warm_render(scene, caches, settings, mode="volume", max_rounds=300):
    """Alternate render/pump until a frame needs nothing; returns the frame."""
    for _ in range(max_rounds):
        result = raycast_frame(scene, caches, settings, mode=mode)
        for cache in caches.values():
            cache.pump_loads()
        if (result.stats.wanted_missing == 0
                and result.stats.fallback_samples == 0):
            return result
    raise AssertionError(f"no convergence within {max_rounds} rounds")


@pytest.fixture
def small_noise():
    """64-cube deterministic noise volume with its own cache."""
    from brickray.volume import make_procedural
    src = make_procedural("noise", dim=64)
    cache = BlockCache(src, 64 << 20)
    return src, cache


def render_settings(**kw):
    kw.setdefault("width", 64)
    kw.setdefault("height", 64)
    return RenderSettings(**kw)


# --- acceptance summary ------------------------------------------------------

_CRITERIA = {
    1: "closed-form alpha compositing",
    2: "warm-cache dense-oracle equivalence",
    3: "streaming convergence, render path free of IO",
    4: "cache capacity bound during orbit",
    5: "beyond-2^31-voxel addressing",
    6: "cache reference-model equivalence",
    7: "scene tree world transforms",
    8: "render graph scheduling and pipeline swap",
    9: "step-size halving consistency",
    10: "mesh embedded in volume composite",
    11: "pyramid round-trip and determinism",
    12: "protocol goldens, fuzz, CLI reproducibility",
}

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call":
        _acceptance_results[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and (report.failed or report.skipped):
        _acceptance_results[name] = "FAIL" if report.failed else "SKIP"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_results):
        match = re.match(r"test_p(\d+)", name)
        if not match:
            continue
        num = int(match.group(1))
        label = _CRITERIA.get(num, name)
        terminalreporter.write_line(
            f"P{num:<3d} {label:<48s} {_acceptance_results[name]}")
