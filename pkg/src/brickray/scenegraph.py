"""Scene tree: transformable nodes, world-transform propagation, flattening.

The scene is a strict tree (every node except the root has exactly one
parent).  Mutation is single-writer; `flatten_visible` and
`world_transforms` are read-only and safe to call from many threads, and
the flatten result is an immutable snapshot that can be handed to render
workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CycleError, UnknownNode
from .mathutil import IDENTITY_QUAT, quat_normalize, trs_matrix


@dataclass
class Transform:
    """Local TRS transform: scale first, then rotation, then translation."""

    translation: np.ndarray = None
    rotation: np.ndarray = None  # unit quaternion (w, x, y, z)
    scale: np.ndarray = None

    def __post_init__(self):
        self.translation = (
            np.zeros(3) if self.translation is None else np.asarray(self.translation, dtype=np.float64)
        )
        self.rotation = (
            IDENTITY_QUAT.copy() if self.rotation is None else np.asarray(self.rotation, dtype=np.float64)
        )
        self.scale = np.ones(3) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        n = float(np.linalg.norm(self.rotation))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion norm {n} not within 1e-6 of 1")
        self.rotation = quat_normalize(self.rotation)
        if np.any(self.scale == 0.0):
            raise ValueError("scale components must be nonzero")

    def matrix(self) -> np.ndarray:
        return trs_matrix(self.translation, self.rotation, self.scale)


# --- node payloads ---

@dataclass
class Group:
    pass


@dataclass
class Mesh:
    vertices: np.ndarray  # (n, 3) float
    indices: np.ndarray  # (m, 3) int
    color: tuple = (1.0, 1.0, 1.0, 1.0)  # base RGBA

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= len(self.vertices)):
            raise IndexError("triangle indices out of range")


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float
    color: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)


@dataclass
class VolumeRef:
    pyramid_id: int
    channel: int = 0
    timepoint: int = 0
    transfer_function_id: int | None = None
    sample_filter_id: int | None = None


@dataclass
class Camera:
    fov_y: float = 0.7853981633974483  # vertical field of view, radians (45 deg)
    near: float = 0.01
    far: float = 1e6


@dataclass
class DirectionalLight:
    direction: tuple = (0.0, 0.0, -1.0)
    color: tuple = (1.0, 1.0, 1.0)


@dataclass
class SceneNode:
    id: int
    name: str
    transform: Transform
    visible: bool
    payload: object
    children: list = field(default_factory=list)  # child ids, insertion order


@dataclass(frozen=True)
class FlatRenderItem:
    node_id: int
    world_matrix: np.ndarray  # 4x4, root-to-node product of local matrices
    payload: object


class Scene:
    """Mutable scene tree with engine-assigned monotonically increasing ids.

    Also owns the per-scene registries for transfer functions and sample
    filters referenced by VolumeRef payloads.
    """

    def __init__(self, root_name: str = "root"):
        self._next_id = 1
        self.nodes: dict[int, SceneNode] = {}
        self.parent: dict[int, int | None] = {}
        root = SceneNode(0, root_name, Transform(), True, Group())
        self.nodes[0] = root
        self.parent[0] = None
        self.root_id = 0
        self.transfer_functions: dict[int, object] = {}
        self.sample_filters: dict[int, object] = {}

    # --- construction / mutation (single writer) ---

    def add(self, payload, parent: int = 0, name: str = "", transform: Transform | None = None,
            visible: bool = True) -> int:
        if parent not in self.nodes:
            raise UnknownNode(f"parent id {parent}")
        nid = self._next_id
        self._next_id += 1
        self.nodes[nid] = SceneNode(nid, name or f"node-{nid}", transform or Transform(), visible, payload)
        self.nodes[parent].children.append(nid)
        self.parent[nid] = parent
        return nid

    def attach(self, node_id: int, new_parent_id: int) -> None:
        """Reparent `node_id` under `new_parent_id`, preserving the tree invariant."""
        if node_id not in self.nodes:
            raise UnknownNode(f"node id {node_id}")
        if new_parent_id not in self.nodes:
            raise UnknownNode(f"parent id {new_parent_id}")
        if node_id == self.root_id:
            raise CycleError("cannot reparent the root")
        # Reject attaching under self or any descendant.
        cursor = new_parent_id
        while cursor is not None:
            if cursor == node_id:
                raise CycleError(f"{new_parent_id} is {node_id} or one of its descendants")
            cursor = self.parent[cursor]
        old_parent = self.parent[node_id]
        self.nodes[old_parent].children.remove(node_id)
        self.nodes[new_parent_id].children.append(node_id)
        self.parent[node_id] = new_parent_id

    def remove(self, node_id: int) -> None:
        """Delete a node and its entire subtree."""
        if node_id not in self.nodes:
            raise UnknownNode(f"node id {node_id}")
        if node_id == self.root_id:
            raise CycleError("cannot remove the root")
        stack = [node_id]
        doomed = []
        while stack:
            nid = stack.pop()
            doomed.append(nid)
            stack.extend(self.nodes[nid].children)
        self.nodes[self.parent[node_id]].children.remove(node_id)
        for nid in doomed:
            del self.nodes[nid]
            del self.parent[nid]

    # --- read-only queries (safe under concurrent readers) ---

    def world_transforms(self) -> dict[int, np.ndarray]:
        """World matrix per node id: product of local matrices along the root path."""
        out: dict[int, np.ndarray] = {}
        stack = [(self.root_id, np.eye(4))]
        while stack:
            nid, parent_world = stack.pop()
            node = self.nodes[nid]
            world = parent_world @ node.transform.matrix()
            out[nid] = world
            for child in reversed(node.children):
                stack.append((child, world))
        return out

    def flatten_visible(self) -> list[FlatRenderItem]:
        """Pre-order depth-first render list; invisible nodes prune their subtree."""
        items: list[FlatRenderItem] = []
        stack = [(self.root_id, np.eye(4))]
        while stack:
            nid, parent_world = stack.pop()
            node = self.nodes[nid]
            if not node.visible:
                continue
            world = parent_world @ node.transform.matrix()
            world.setflags(write=False)
            items.append(FlatRenderItem(nid, world, node.payload))
            for child in reversed(node.children):
                stack.append((child, world))
        return items

    def check_tree(self) -> None:
        """Assert the tree invariant; raises AssertionError when violated."""
        seen = set()
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            assert nid not in seen, f"node {nid} reachable twice"
            seen.add(nid)
            for child in self.nodes[nid].children:
                assert self.parent[child] == nid
                stack.append(child)
        assert seen == set(self.nodes), "orphan nodes present"
