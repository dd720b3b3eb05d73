"""Command-line interface: build, info, render, bench, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .cache import BlockCache
from .errors import BrickrayError
from .mathutil import look_at_rotation, matrix_to_quat
from .png import write_png
from .render import RenderSettings, quantize_rgba8
from .render.backend import available_backends, resolve_backend
from .rendergraph import (PRESET_NAMES, PipelineDesc, SoftwareRenderer,
                          preset_pipeline)
from .scenegraph import Camera, Scene, Transform, VolumeRef
from .service import VolumeServer
from .transfer import SampleFilter, TransferFunction
from .volume import VolumeMeta, build_pyramid, open_source

_DTYPES = {"u8": np.uint8, "u16": np.uint16}


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _parse_triple(text: str, cast=int):
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated values, got '{text}'")
    return tuple(cast(p) for p in parts)


def _parse_size(text: str):
    w, _, h = text.partition("x")
    return int(w), int(h)


def build_parser() -> _Parser:
    parser = _Parser(prog="brickray",
                     description="Out-of-core volume rendering engine")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a chunked multiresolution volume file")
    b.add_argument("--input", required=True, help="raw little-endian voxel file")
    b.add_argument("--dims", required=True, help="X,Y,Z voxel counts")
    b.add_argument("--dtype", default="u8", choices=sorted(_DTYPES))
    b.add_argument("--block", type=int, default=32, help="block edge length")
    b.add_argument("--levels", type=int, default=16,
                   help="max pyramid levels (capped by volume size)")
    b.add_argument("--voxel-size", default="1,1,1", help="physical voxel size X,Y,Z")
    b.add_argument("--channels", type=int, default=1)
    b.add_argument("--timepoints", type=int, default=1)
    b.add_argument("--out", required=True)

    i = sub.add_parser("info", help="describe a volume file")
    i.add_argument("--input", required=True)

    r = sub.add_parser("render", help="render one frame to an image")
    _add_scene_args(r)
    r.add_argument("--out", required=True)
    r.add_argument("--format", default="png", choices=["png", "raw"])
    r.add_argument("--warm", action="store_true",
                   help="repeat render+load until no misses or fallbacks remain")

    be = sub.add_parser("bench", help="orbit benchmark, optionally comparing backends")
    _add_scene_args(be)
    be.add_argument("--orbit", type=int, default=8, help="frames around the volume")

    s = sub.add_parser("serve", help="run the rendering service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=7741)
    s.add_argument("--ws-port", type=int, default=7742)

    return parser


def _add_scene_args(p) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="volume file path")
    src.add_argument("--procedural",
                     help="procedural volume, e.g. noise:256 or radial:64")
    p.add_argument("--size", default="512x512", help="frame size WxH")
    p.add_argument("--camera",
                   help="px,py,pz,tx,ty,tz,ux,uy,uz,fov_deg (default: auto-frame)")
    p.add_argument("--tf", help="transfer function JSON file")
    p.add_argument("--pipeline", default="ea-default",
                   help="preset name (%s) or pipeline JSON file" % ", ".join(PRESET_NAMES))
    p.add_argument("--mode", default=None, choices=["volume", "mip"],
                   help="shorthand: mip selects the mip preset pipeline")
    p.add_argument("--step", type=float, default=1.0,
                   help="marching step in finest-voxel units")
    p.add_argument("--cache-mb", type=int, default=256)
    p.add_argument("--timepoint", type=int, default=0)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--fixed-lod", type=int, default=None)
    p.add_argument("--filter", default=None,
                   help="sample filter, e.g. gamma:2.2 or threshold:0.25")
    p.add_argument("--backend", default=None,
                   choices=["auto", "compiled", "python", "both"])


def _setup_scene(args):
    """Common scene/cache construction for render and bench."""
    spec = args.input if args.input else "procedural:" + args.procedural
    source, meta = open_source(spec)
    cache = BlockCache(source, args.cache_mb * (1 << 20))
    scene = Scene()
    center = np.asarray(meta.dims0, np.float64) * np.asarray(meta.voxel_size,
                                                             np.float64) / 2.0
    vref = VolumeRef(pyramid_id="volume", channel=args.channel,
                     timepoint=args.timepoint)
    scene.add(vref, name="volume", transform=Transform(translation=tuple(-center)))

    if args.tf:
        with open(args.tf) as f:
            tf = TransferFunction.from_json(json.load(f))
        scene.transfer_functions["tf"] = tf
        vref.transfer_function_id = "tf"

    camera = Camera()
    if args.camera:
        vals = [float(v) for v in args.camera.split(",")]
        if len(vals) != 10:
            raise ValueError("--camera needs 10 comma-separated numbers")
        position, target, up = vals[0:3], vals[3:6], vals[6:9]
        camera.fov_y = math.radians(vals[9])
    else:
        position = [0.0, 0.0, 4.0 * float(max(center))]
        target = [0.0, 0.0, 0.0]
        up = [0.0, 1.0, 0.0]
    rot = look_at_rotation(np.array(position), np.array(target), np.array(up))
    scene.add(camera, name="camera",
              transform=Transform(translation=tuple(position),
                                  rotation=tuple(matrix_to_quat(rot))))

    width, height = _parse_size(args.size)
    backend_arg = None if args.backend in (None, "auto", "both") else args.backend
    settings = RenderSettings(
        width=width, height=height, step=args.step, fixed_lod=args.fixed_lod,
        threads=args.threads,
        sample_filter=SampleFilter.parse(args.filter) if args.filter else None,
        backend=backend_arg)

    if args.mode == "mip":
        pipeline = preset_pipeline("mip")
    elif args.pipeline in PRESET_NAMES:
        pipeline = preset_pipeline(args.pipeline)
    else:
        with open(args.pipeline) as f:
            pipeline = PipelineDesc.from_json(json.load(f))
    renderer = SoftwareRenderer(pipeline)
    return source, meta, cache, scene, settings, renderer, camera, \
        np.array(position), np.array(target), np.array(up)


def _cmd_build(args) -> int:
    dims = _parse_triple(args.dims)
    dtype = args.dtype
    x, y, z = dims
    count = x * y * z * args.channels * args.timepoints
    data = np.fromfile(args.input, dtype=_DTYPES[dtype])
    if data.size != count:
        raise ValueError(f"input holds {data.size} voxels, dims imply {count}")
    data = data.reshape(args.timepoints, args.channels, z, y, x)
    meta = build_pyramid(data, dims, dtype, args.block, args.levels, args.out,
                         voxel_size=_parse_triple(args.voxel_size, float),
                         channels=args.channels, timepoints=args.timepoints)
    print(json.dumps({"out": args.out, "dims": list(meta.dims0),
                      "levels": meta.levels, "block_size": meta.block_size,
                      "dtype": meta.dtype}))
    return 0


def _cmd_info(args) -> int:
    source, meta = open_source(args.input)
    try:
        levels = []
        for level in range(meta.levels):
            dims = meta.level_dims(level)
            grid = meta.grid_dims(level)
            levels.append({"level": level, "dims": list(dims),
                           "grid": list(grid),
                           "voxel_size": list(meta.level_voxel_size(level))})
        print(json.dumps({
            "dims": list(meta.dims0), "dtype": meta.dtype,
            "block_size": meta.block_size, "levels": meta.levels,
            "channels": meta.channels, "timepoints": meta.timepoints,
            "voxel_size": list(meta.voxel_size),
            "total_voxels": meta.total_voxels,
            "level_geometry": levels,
        }))
    finally:
        source.close()
    return 0


def _render_once(renderer, scene, cache, settings):
    display, buffers, stats, depth = renderer.render_frame(
        scene, {"volume": cache}, settings)
    return display, stats


def _warm_loop(renderer, scene, cache, settings, max_rounds: int = 64):
    """Render/pump until a frame needs nothing; returns (display, stats, rounds)."""
    previous = None
    for round_no in range(1, max_rounds + 1):
        display, stats = _render_once(renderer, scene, cache, settings)
        cache.pump_loads()
        done = stats.wanted_missing == 0 and stats.fallback_samples == 0
        if done:
            return display, stats, round_no
        progress = (stats.wanted_missing, stats.fallback_samples,
                    cache.stats().loads)
        if progress == previous:  # cache too small to ever converge
            return display, stats, round_no
        previous = progress
    return display, stats, max_rounds


def _cmd_render(args) -> int:
    source, meta, cache, scene, settings, renderer, *_ = _setup_scene(args)
    try:
        rounds = 1
        if args.warm:
            display, stats, rounds = _warm_loop(renderer, scene, cache, settings)
        else:
            display, stats = _render_once(renderer, scene, cache, settings)
        rgba8 = quantize_rgba8(display)
        if args.format == "png":
            write_png(args.out, rgba8)
        else:
            with open(args.out, "wb") as f:
                f.write(rgba8.tobytes())
        print(json.dumps({
            "out": args.out, "width": settings.width, "height": settings.height,
            "backend": stats.backend, "samples": stats.samples,
            "fallback_samples": stats.fallback_samples,
            "wanted_missing": stats.wanted_missing,
            "touched_blocks": stats.touched_blocks,
            "render_ms": round(stats.render_ms, 3),
            "warm_rounds": rounds,
            "cache": cache.stats().as_dict(),
        }))
    finally:
        source.close()
    return 0


def _orbit_camera(scene, camera_node_name, radius, k, total, target, up_hint):
    angle = 2.0 * math.pi * k / total
    position = np.array([radius * math.sin(angle), 0.25 * radius,
                         radius * math.cos(angle)])
    rot = look_at_rotation(position, target, up_hint)
    for node in scene.nodes.values():
        if node.name == camera_node_name:
            node.transform = Transform(translation=tuple(position),
                                       rotation=tuple(matrix_to_quat(rot)))
            return
    raise KeyError(camera_node_name)


def _cmd_bench(args) -> int:
    source, meta, cache, scene, settings, renderer, camera, position, target, up \
        = _setup_scene(args)
    compare = args.backend == "both"
    radius = float(np.linalg.norm(position - target))
    try:
        results = []
        for k in range(args.orbit):
            _orbit_camera(scene, "camera", radius, k, args.orbit, target, up)
            if compare:
                settings.backend = "compiled"
                disp_c, stats_c = _render_once(renderer, scene, cache, settings)
                settings.backend = "python"
                disp_p, stats_p = _render_once(renderer, scene, cache, settings)
                diff = int(np.max(np.abs(
                    quantize_rgba8(disp_c).astype(np.int32)
                    - quantize_rgba8(disp_p).astype(np.int32))))
                entry = {"frame": k,
                         "compiled_ms": round(stats_c.render_ms, 3),
                         "python_ms": round(stats_p.render_ms, 3),
                         "speedup": round(stats_p.render_ms
                                          / max(stats_c.render_ms, 1e-9), 2),
                         "max_pixel_diff": diff,
                         "identical": bool(np.array_equal(disp_c, disp_p))}
                stats = stats_c
            else:
                display, stats = _render_once(renderer, scene, cache, settings)
                entry = {"frame": k, "backend": stats.backend,
                         "render_ms": round(stats.render_ms, 3)}
            entry.update({"samples": stats.samples,
                          "fallback_samples": stats.fallback_samples,
                          "wanted_missing": stats.wanted_missing})
            cache.pump_loads()
            results.append(entry)
            print(json.dumps(entry))
        summary = {"frames": args.orbit,
                   "cache": cache.stats().as_dict()}
        if compare:
            summary["max_pixel_diff"] = max(r["max_pixel_diff"] for r in results)
            summary["all_identical"] = all(r["identical"] for r in results)
        print(json.dumps({"summary": summary}))
    finally:
        source.close()
    return 0


def _cmd_serve(args) -> int:
    server = VolumeServer(args.host, args.port, args.ws_port)
    print(json.dumps({"serving": {"host": args.host, "port": server.port,
                                  "ws_port": server.ws_port,
                                  "backends": available_backends()}}),
          flush=True)
    server.serve_forever()
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"build": _cmd_build, "info": _cmd_info, "render": _cmd_render,
                "bench": _cmd_bench, "serve": _cmd_serve}
    try:
        return handlers[args.command](args)
    except SystemExit:
        raise
    except (BrickrayError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"brickray {args.command}: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
