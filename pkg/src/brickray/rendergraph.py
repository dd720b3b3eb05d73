"""Composable render pipelines over full-frame RGBA attachments.

A pipeline is a list of named passes, each consuming previously produced
attachments and producing exactly one output attachment.  Execution order
is a stable topological sort (declaration order breaks ties), the graph is
validated before use, and a renderer's pipeline can be swapped between
frames without touching scene or cache state — an invalid replacement
leaves the current pipeline in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (CycleError, DuplicateOutput, MissingDisplay, PassError,
                     UnknownInput)
from .render import (MODE_MIP, MODE_VOLUME, FrameStats, RenderSettings,
                     raycast_frame)

PASS_KINDS = ("clear", "mesh_raster", "volume_raycast", "mip_raycast",
              "tonemap", "compose")
DISPLAY = "display"


@dataclass(frozen=True)
class PassDesc:
    name: str
    kind: str
    inputs: tuple = ()
    output: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PASS_KINDS:
            raise ValueError(f"unknown pass kind '{self.kind}'")
        if not self.output:
            raise ValueError(f"pass '{self.name}' must declare an output")
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass(frozen=True)
class PipelineDesc:
    name: str
    passes: tuple

    def __post_init__(self):
        object.__setattr__(self, "passes", tuple(self.passes))

    def to_json(self) -> dict:
        return {"name": self.name,
                "passes": [{"name": p.name, "kind": p.kind,
                            "inputs": list(p.inputs), "output": p.output,
                            "params": dict(p.params)} for p in self.passes]}

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineDesc":
        passes = [PassDesc(p["name"], p["kind"], tuple(p.get("inputs", ())),
                           p["output"], dict(p.get("params", {})))
                  for p in doc["passes"]]
        return cls(doc.get("name", "custom"), tuple(passes))


def validate_pipeline(desc: PipelineDesc) -> list:
    """Return passes in execution order or raise a validation error.

    Checks: outputs are unique, every input is produced by some pass,
    exactly one pass outputs "display", and the dependency graph is acyclic.
    The order is Kahn's algorithm with declaration order breaking ties.
    """
    producers = {}
    for p in desc.passes:
        if p.output in producers:
            raise DuplicateOutput(f"attachment '{p.output}' produced twice")
        producers[p.output] = p
    if DISPLAY not in producers:
        raise MissingDisplay("no pass outputs 'display'")
    for p in desc.passes:
        for inp in p.inputs:
            if inp not in producers:
                raise UnknownInput(f"pass '{p.name}' reads unknown attachment '{inp}'")

    remaining = list(desc.passes)
    produced = set()
    order = []
    while remaining:
        ready = next((p for p in remaining
                      if all(i in produced for i in p.inputs)), None)
        if ready is None:
            names = ", ".join(p.name for p in remaining)
            raise CycleError(f"dependency cycle among passes: {names}")
        remaining.remove(ready)
        produced.add(ready.output)
        order.append(ready)
    return order


def preset_pipeline(name: str) -> PipelineDesc:
    if name == "ea-default":
        return PipelineDesc("ea-default", (
            PassDesc("clear-bg", "clear", (), "bg",
                     {"color": [0.0, 0.0, 0.0, 0.0]}),
            PassDesc("scene", "volume_raycast", (), "scene", {}),
            PassDesc("combine", "compose", ("scene", "bg"), "combined", {}),
            PassDesc("tonemap", "tonemap", ("combined",), DISPLAY,
                     {"gamma": 1.0}),
        ))
    if name == "mip":
        return PipelineDesc("mip", (
            PassDesc("clear-bg", "clear", (), "bg",
                     {"color": [0.0, 0.0, 0.0, 0.0]}),
            PassDesc("scene", "mip_raycast", ("bg",), "scene", {}),
            PassDesc("tonemap", "tonemap", ("scene",), DISPLAY,
                     {"gamma": 1.0}),
        ))
    raise KeyError(f"unknown preset pipeline '{name}'")


PRESET_NAMES = ("ea-default", "mip")


class SoftwareRenderer:
    """Executes render pipelines on the CPU against scene + caches.

    The pipeline is exchangeable at runtime: swap_pipeline validates the
    replacement and applies it starting with the next frame; on validation
    failure the active pipeline is untouched and the error propagates.
    """

    def __init__(self, pipeline: PipelineDesc | None = None):
        self._active = pipeline if pipeline is not None else preset_pipeline("ea-default")
        validate_pipeline(self._active)
        self._pending = None

    @property
    def pipeline(self) -> PipelineDesc:
        return self._active

    def swap_pipeline(self, desc: PipelineDesc) -> None:
        validate_pipeline(desc)  # raises before anything changes
        self._pending = desc

    def render_frame(self, scene, caches, settings: RenderSettings):
        """Run the active pipeline; returns (display, attachments, stats)."""
        if self._pending is not None:
            self._active = self._pending
            self._pending = None
        order = validate_pipeline(self._active)
        height, width = settings.height, settings.width
        buffers = {}
        stats = FrameStats()
        depth = np.full((height, width), np.inf, dtype=np.float32)

        for p in order:
            try:
                ins = [buffers[i] for i in p.inputs]
                if p.kind == "clear":
                    color = p.params.get("color", [0.0, 0.0, 0.0, 0.0])
                    buf = np.empty((height, width, 4), dtype=np.float32)
                    buf[:] = np.asarray(color, dtype=np.float32)
                elif p.kind == "mesh_raster":
                    bg = ins[0] if ins else None
                    res = raycast_frame(scene, {}, settings, MODE_VOLUME, bg,
                                        include_volumes=False)
                    buf = res.color
                    depth = res.depth
                    _merge_stats(stats, res.stats)
                elif p.kind in ("volume_raycast", "mip_raycast"):
                    mode = MODE_VOLUME if p.kind == "volume_raycast" else MODE_MIP
                    bg = ins[0] if ins else None
                    res = raycast_frame(scene, caches, settings, mode, bg)
                    buf = res.color
                    depth = res.depth
                    _merge_stats(stats, res.stats)
                elif p.kind == "tonemap":
                    gamma = float(p.params.get("gamma", 1.0))
                    src = ins[0].astype(np.float64)
                    out = src.copy()
                    out[..., :3] = np.clip(src[..., :3], 0.0, None) ** (1.0 / gamma)
                    buf = out.astype(np.float32)
                elif p.kind == "compose":
                    top = ins[0].astype(np.float64)
                    bottom = ins[1].astype(np.float64)
                    buf = (top + (1.0 - top[..., 3:4]) * bottom).astype(np.float32)
                else:  # pragma: no cover - PassDesc rejects unknown kinds
                    raise ValueError(f"unhandled pass kind {p.kind}")
            except PassError:
                raise
            except Exception as exc:
                raise PassError(p.name, exc) from exc
            buffers[p.output] = buf
        return buffers[DISPLAY], buffers, stats, depth


class NullRenderer:
    """Renderer stand-in that validates pipelines but produces blank frames.

    Lets pipeline and session logic run without kernels (capability probes,
    dry runs); interface-compatible with SoftwareRenderer.
    """

    def __init__(self, pipeline: PipelineDesc | None = None):
        self._active = pipeline if pipeline is not None else preset_pipeline("ea-default")
        validate_pipeline(self._active)
        self._pending = None

    @property
    def pipeline(self) -> PipelineDesc:
        return self._active

    def swap_pipeline(self, desc: PipelineDesc) -> None:
        validate_pipeline(desc)
        self._pending = desc

    def render_frame(self, scene, caches, settings: RenderSettings):
        if self._pending is not None:
            self._active = self._pending
            self._pending = None
        validate_pipeline(self._active)
        height, width = settings.height, settings.width
        display = np.zeros((height, width, 4), dtype=np.float32)
        depth = np.full((height, width), np.inf, dtype=np.float32)
        return display, {DISPLAY: display}, FrameStats(backend="null"), depth


def _merge_stats(into: FrameStats, other: FrameStats) -> None:
    into.samples += other.samples
    into.fallback_samples += other.fallback_samples
    into.wanted_missing += other.wanted_missing
    into.touched_blocks += other.touched_blocks
    into.triangles += other.triangles
    into.degenerate_triangles += other.degenerate_triangles
    into.render_ms += other.render_ms
    if other.backend != "none":
        into.backend = other.backend
    into.mode = other.mode
