"""brickray: an embeddable out-of-core volume rendering engine.

Large multiresolution volumes are stored as fixed-size bricks; rendering
never blocks on IO.  Each frame samples whatever resolution is resident,
substituting coarser ancestors for missing fine bricks, and schedules the
missing bricks for asynchronous loading so the image refines over time.

Main entry points:

- :func:`brickray.volume.build_pyramid` / :class:`brickray.volume.FileSource`
  build and read the chunked volume file format.
- :class:`brickray.cache.BlockCache` manages resident bricks under a byte
  budget with a pinned coarsest level.
- :class:`brickray.scenegraph.Scene` holds cameras, meshes, point clouds,
  and volume references under rigid transforms.
- :func:`brickray.render.raycast_frame` renders a frame; the render graph in
  :mod:`brickray.rendergraph` composes multi-pass pipelines.
- :mod:`brickray.service` exposes everything over TCP and WebSocket.
"""

from .cache import BlockCache, CacheStats, ResolvedBlock
from .errors import (BrickrayError, CacheError, CapacityTooSmall, CorruptFile,
                     CycleError, DimensionMismatch, DuplicateOutput,
                     FrameTooShort, InvalidJson, KeyOutOfRange,
                     LevelOutOfRange, MissingDisplay, NoCamera, PassError,
                     UnknownInput, UnknownNode, UnknownType,
                     UnsupportedDtype, UnsupportedVersion)
from .render import (FrameResult, FrameStats, RenderSettings, quantize_rgba8,
                     raycast_frame)
from .rendergraph import (NullRenderer, PassDesc, PipelineDesc,
                          SoftwareRenderer, preset_pipeline,
                          validate_pipeline)
from .scenegraph import (Camera, DirectionalLight, Group, Mesh, PointCloud,
                         Scene, Transform, VolumeRef)
from .transfer import SampleFilter, TransferFunction
from .volume import (Block, BlockKey, FileSource, ProceduralSource,
                     VolumeMeta, build_pyramid, downsample_mean,
                     make_procedural, open_source)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # volumes
    "VolumeMeta", "BlockKey", "Block", "FileSource", "ProceduralSource",
    "build_pyramid", "downsample_mean", "make_procedural", "open_source",
    # cache
    "BlockCache", "CacheStats", "ResolvedBlock",
    # scene
    "Scene", "Transform", "Group", "Mesh", "PointCloud", "VolumeRef",
    "Camera", "DirectionalLight",
    # transfer
    "TransferFunction", "SampleFilter",
    # rendering
    "RenderSettings", "FrameStats", "FrameResult", "raycast_frame",
    "quantize_rgba8",
    # render graph
    "PassDesc", "PipelineDesc", "SoftwareRenderer", "NullRenderer",
    "preset_pipeline", "validate_pipeline",
    # errors
    "BrickrayError", "UnknownNode", "CycleError", "DimensionMismatch",
    "UnsupportedDtype", "LevelOutOfRange", "KeyOutOfRange", "CorruptFile",
    "UnsupportedVersion", "CacheError", "CapacityTooSmall", "NoCamera",
    "UnknownInput", "DuplicateOutput", "MissingDisplay", "PassError",
    "FrameTooShort", "UnknownType", "InvalidJson",
]
