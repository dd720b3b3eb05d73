"""Chunked multi-resolution volume store.

Defines the OOCV container (little-endian: 76-byte header, chunk index,
raw chunk payloads), the pyramid builder, block readers, and procedural
sources for volumes far larger than disk or RAM.  All voxel indexing is
64-bit; total voxel counts above 2**31 are first-class.

Array axis convention: numpy arrays are (z, y, x) C-order so that x is the
fastest-varying axis, matching the on-disk row-major layout.  Dimension
triples in metadata are (x, y, z).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    CorruptFile,
    DimensionMismatch,
    KeyOutOfRange,
    LevelOutOfRange,
    UnsupportedDtype,
    UnsupportedVersion,
)

MAGIC = b"OOCV"
VERSION = 1
_HEADER = struct.Struct("<4sIB3xIIII3Q3d")  # 76 bytes
_INDEX_ENTRY = struct.Struct("<QIHH")  # 16 bytes

_DTYPES = {"u8": np.uint8, "u16": np.uint16}
_DTYPE_CODES = {"u8": 0, "u16": 1}
_CODE_DTYPES = {0: "u8", 1: "u16"}


class BlockKey(NamedTuple):
    """Address of one block: pyramid level, block grid coords, channel, timepoint."""

    level: int
    bx: int
    by: int
    bz: int
    channel: int = 0
    timepoint: int = 0

    def ancestor(self, level: int) -> "BlockKey":
        """The covering block of this key at a coarser `level`."""
        shift = level - self.level
        if shift < 0:
            raise ValueError("ancestor level must be >= key level")
        return BlockKey(level, self.bx >> shift, self.by >> shift, self.bz >> shift,
                        self.channel, self.timepoint)


@dataclass(frozen=True)
class VolumeMeta:
    dims0: tuple  # (x, y, z) voxel counts at level 0
    dtype: str  # 'u8' | 'u16'
    block_size: int  # voxels per axis, cubic blocks
    levels: int
    channels: int = 1
    timepoints: int = 1
    voxel_size: tuple = (1.0, 1.0, 1.0)  # physical size per level-0 voxel (um)

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise UnsupportedDtype(self.dtype)
        bs = self.block_size
        if bs < 8 or bs & (bs - 1):
            raise ValueError("block_size must be >= 8 and a power of two")
        if self.levels < 1 or self.channels < 1 or self.timepoints < 1:
            raise ValueError("levels, channels, timepoints must be >= 1")
        if any(d < 1 for d in self.dims0):
            raise ValueError("dims must be >= 1")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def dtype_max(self) -> int:
        return 255 if self.dtype == "u8" else 65535

    @property
    def total_voxels(self) -> int:
        n = 1
        for d in self.dims0:
            n *= int(d)
        return n

    def level_dims(self, level: int) -> tuple:
        if not 0 <= level < self.levels:
            raise LevelOutOfRange(f"level {level} of {self.levels}")
        return tuple(max(1, (int(d) + (1 << level) - 1) >> level) for d in self.dims0)

    def grid_dims(self, level: int) -> tuple:
        bs = self.block_size
        return tuple((d + bs - 1) // bs for d in self.level_dims(level))

    def level_voxel_size(self, level: int) -> tuple:
        if not 0 <= level < self.levels:
            raise LevelOutOfRange(f"level {level} of {self.levels}")
        return tuple(v * (1 << level) for v in self.voxel_size)

    def block_extent(self, level: int, bx: int, by: int, bz: int) -> tuple:
        """Actual (ex, ey, ez) voxel extent; smaller than block_size at borders."""
        dims = self.level_dims(level)
        bs = self.block_size
        return tuple(min(bs, d - b * bs) for d, b in zip(dims, (bx, by, bz)))

    def validate_key(self, key: BlockKey) -> None:
        if not 0 <= key.level < self.levels:
            raise KeyOutOfRange(f"level {key.level}")
        gx, gy, gz = self.grid_dims(key.level)
        if not (0 <= key.bx < gx and 0 <= key.by < gy and 0 <= key.bz < gz):
            raise KeyOutOfRange(f"block ({key.bx},{key.by},{key.bz}) outside grid ({gx},{gy},{gz})")
        if not 0 <= key.channel < self.channels:
            raise KeyOutOfRange(f"channel {key.channel}")
        if not 0 <= key.timepoint < self.timepoints:
            raise KeyOutOfRange(f"timepoint {key.timepoint}")

    def iter_keys(self, level=None):
        """All block keys in on-disk index order (timepoint, channel, level, z, y, x)."""
        levels = range(self.levels) if level is None else [level]
        for t in range(self.timepoints):
            for c in range(self.channels):
                for l in levels:
                    gx, gy, gz = self.grid_dims(l)
                    for bz in range(gz):
                        for by in range(gy):
                            for bx in range(gx):
                                yield BlockKey(l, bx, by, bz, c, t)


def level_geometry(meta: VolumeMeta, level: int) -> tuple:
    """(level dims, block grid dims, voxel size at level)."""
    return meta.level_dims(level), meta.grid_dims(level), meta.level_voxel_size(level)


def max_levels(dims0, block_size: int) -> int:
    """Level-count cap: halvings until the largest dimension fits one block, plus one."""
    levels = 1
    dims = [int(d) for d in dims0]
    while max(dims) > block_size:
        dims = [max(1, (d + 1) // 2) for d in dims]
        levels += 1
    return levels


@dataclass
class Block:
    key: BlockKey
    extent: tuple  # (ex, ey, ez)
    data: np.ndarray  # shape (ez, ey, ex)
    min: int
    max: int

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


def _block_from_array(key: BlockKey, extent, arr: np.ndarray) -> Block:
    return Block(key, tuple(extent), arr, int(arr.min()), int(arr.max()))


def downsample_mean(arr: np.ndarray) -> np.ndarray:
    """One 2x halving step: mean of <=8 covering voxels, integer round half up.

    Borders with odd extent average the voxels that exist (truncation, no
    padding).  Exact integer arithmetic, so builds are bit-reproducible.
    """
    out_shape = tuple((s + 1) // 2 for s in arr.shape)
    acc = np.zeros(out_shape, dtype=np.uint32)
    cnt = np.zeros(out_shape, dtype=np.uint32)
    for oz in (0, 1):
        for oy in (0, 1):
            for ox in (0, 1):
                part = arr[oz::2, oy::2, ox::2]
                sl = tuple(slice(0, s) for s in part.shape)
                acc[sl] += part
                cnt[sl] += 1
    return ((2 * acc + cnt) // (2 * cnt)).astype(arr.dtype)


# ---------------------------------------------------------------------------
# OOCV writer


def build_pyramid(dense: np.ndarray, dims0, dtype: str, block_size: int,
                  requested_levels: int, out_path: str,
                  voxel_size=(1.0, 1.0, 1.0), channels: int = 1,
                  timepoints: int = 1) -> VolumeMeta:
    """Build an OOCV file from dense data.

    `dense` is (z, y, x) or (timepoints, channels, z, y, x).  The level count
    is min(requested, halvings until the max dimension fits a block, +1).
    Returns the resulting metadata after read-back verification.
    """
    if dtype not in _DTYPES:
        raise UnsupportedDtype(dtype)
    if requested_levels < 1:
        raise ValueError("requested levels must be >= 1")
    x, y, z = (int(d) for d in dims0)
    dense = np.asarray(dense)
    if dense.dtype != _DTYPES[dtype]:
        raise UnsupportedDtype(f"array dtype {dense.dtype} does not match '{dtype}'")
    want_shape = (timepoints, channels, z, y, x)
    if dense.ndim == 3:
        dense = dense.reshape((1, 1) + dense.shape)
    if dense.shape != want_shape:
        raise DimensionMismatch(f"data shape {dense.shape}, expected {want_shape}")

    levels = min(requested_levels, max_levels((x, y, z), block_size))
    meta = VolumeMeta((x, y, z), dtype, block_size, levels, channels, timepoints,
                      tuple(float(v) for v in voxel_size))

    # Per (t, c): the level stack; chunks stream out in index order.
    index_entries = []
    chunks = []
    n_entries = sum(1 for _ in meta.iter_keys())
    data_start = _HEADER.size + n_entries * _INDEX_ENTRY.size
    offset = data_start
    for t in range(timepoints):
        for c in range(channels):
            level_arr = dense[t, c]
            for l in range(levels):
                if l > 0:
                    level_arr = downsample_mean(level_arr)
                gx, gy, gz = meta.grid_dims(l)
                bs = block_size
                for bz in range(gz):
                    for by in range(gy):
                        for bx in range(gx):
                            part = np.ascontiguousarray(
                                level_arr[bz * bs:(bz + 1) * bs,
                                          by * bs:(by + 1) * bs,
                                          bx * bs:(bx + 1) * bs])
                            raw = part.tobytes()
                            index_entries.append(
                                (offset, len(raw), int(part.min()), int(part.max())))
                            chunks.append(raw)
                            offset += len(raw)

    with open(out_path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[dtype], block_size, levels,
                             channels, timepoints, x, y, z, *meta.voxel_size))
        for entry in index_entries:
            f.write(_INDEX_ENTRY.pack(*entry))
        for raw in chunks:
            f.write(raw)

    # Read-back verification: header, index geometry, chunk bounds.
    src, read_meta = open_source(out_path)
    src.close()
    if read_meta != meta:
        raise CorruptFile("read-back metadata mismatch")
    return meta


# ---------------------------------------------------------------------------
# Sources


class FileSource:
    """Reader for an OOCV file; concurrent read_block calls use positioned reads."""

    def __init__(self, path: str):
        self.path = path
        self._fd = os.open(path, os.O_RDONLY)
        try:
            size = os.fstat(self._fd).st_size
            header = os.pread(self._fd, _HEADER.size, 0)
            if len(header) < _HEADER.size:
                raise CorruptFile("file shorter than header")
            (magic, version, dtype_code, block_size, levels, channels, timepoints,
             x, y, z, vx, vy, vz) = _HEADER.unpack(header)
            if magic != MAGIC:
                raise CorruptFile(f"bad magic {magic!r}")
            if version != VERSION:
                raise UnsupportedVersion(f"version {version}")
            if dtype_code not in _CODE_DTYPES:
                raise CorruptFile(f"unknown dtype code {dtype_code}")
            try:
                self.meta = VolumeMeta((x, y, z), _CODE_DTYPES[dtype_code], block_size,
                                       levels, channels, timepoints, (vx, vy, vz))
            except ValueError as e:
                raise CorruptFile(str(e)) from e

            n_entries = sum(1 for _ in self.meta.iter_keys())
            raw_index = os.pread(self._fd, n_entries * _INDEX_ENTRY.size, _HEADER.size)
            if len(raw_index) < n_entries * _INDEX_ENTRY.size:
                raise CorruptFile("file truncated inside chunk index")
            entries = np.frombuffer(
                raw_index,
                dtype=np.dtype([("offset", "<u8"), ("length", "<u4"),
                                ("min", "<u2"), ("max", "<u2")]))
            self._index = entries
            self._validate_index(size)
            self._level_starts, self._blocks_per_tc = self._layout()
        except Exception:
            os.close(self._fd)
            raise

    def _layout(self):
        starts = []
        total = 0
        for l in range(self.meta.levels):
            starts.append(total)
            gx, gy, gz = self.meta.grid_dims(l)
            total += gx * gy * gz
        return starts, total

    def _validate_index(self, file_size: int) -> None:
        data_start = _HEADER.size + len(self._index) * _INDEX_ENTRY.size
        itemsize = np.dtype(self.meta.np_dtype).itemsize
        offsets = self._index["offset"].astype(np.int64)
        lengths = self._index["length"].astype(np.int64)
        for i, key in enumerate(self.meta.iter_keys()):
            ex, ey, ez = self.meta.block_extent(key.level, key.bx, key.by, key.bz)
            if lengths[i] != ex * ey * ez * itemsize:
                raise CorruptFile(f"chunk {i} length {lengths[i]} != extent bytes")
        if np.any(offsets < data_start) or np.any(offsets + lengths > file_size):
            raise CorruptFile("chunk region outside file")
        order = np.argsort(offsets, kind="stable")
        ends = offsets[order] + lengths[order]
        if np.any(offsets[order][1:] < ends[:-1]):
            raise CorruptFile("overlapping chunk regions")

    def index_entry(self, key: BlockKey) -> tuple:
        """(offset, length, min, max) straight from the on-disk index."""
        self.meta.validate_key(key)
        i = self._entry_index(key)
        e = self._index[i]
        return int(e["offset"]), int(e["length"]), int(e["min"]), int(e["max"])

    def _entry_index(self, key: BlockKey) -> int:
        gx, gy, _ = self.meta.grid_dims(key.level)
        within = (key.bz * (gx * gy)) + key.by * gx + key.bx
        tc = key.timepoint * self.meta.channels + key.channel
        return tc * self._blocks_per_tc + self._level_starts[key.level] + within

    def read_block(self, key: BlockKey) -> Block:
        self.meta.validate_key(key)
        e = self._index[self._entry_index(key)]
        offset, length = int(e["offset"]), int(e["length"])
        raw = os.pread(self._fd, length, offset)
        if len(raw) != length:
            raise CorruptFile(f"short chunk read at offset {offset}")
        ex, ey, ez = self.meta.block_extent(key.level, key.bx, key.by, key.bz)
        arr = np.frombuffer(raw, dtype=self.meta.np_dtype).reshape(ez, ey, ex).copy()
        return _block_from_array(key, (ex, ey, ez), arr)

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ProceduralSource:
    """Pure scalar field evaluated on demand: same key always yields the same data."""

    def __init__(self, meta: VolumeMeta, field, name: str = "procedural"):
        self.meta = meta
        self.name = name
        self._field = field  # field(level, z, y, x, channel, timepoint) -> array

    def read_block(self, key: BlockKey) -> Block:
        self.meta.validate_key(key)
        ex, ey, ez = self.meta.block_extent(key.level, key.bx, key.by, key.bz)
        bs = self.meta.block_size
        z = np.arange(key.bz * bs, key.bz * bs + ez, dtype=np.int64)
        y = np.arange(key.by * bs, key.by * bs + ey, dtype=np.int64)
        x = np.arange(key.bx * bs, key.bx * bs + ex, dtype=np.int64)
        zz, yy, xx = np.meshgrid(z, y, x, indexing="ij")
        data = self._field(key.level, zz, yy, xx, key.channel, key.timepoint)
        data = np.ascontiguousarray(data, dtype=self.meta.np_dtype)
        return _block_from_array(key, (ex, ey, ez), data)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# Procedural field family (for tests, demos, and beyond-RAM datasets)


def _hash01(x, y, z, seed):
    """Deterministic lattice hash -> [0, 1); vectorized, pure integer mixing."""
    seed_mix = (int(seed) * 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF
    h = (x.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ y.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ z.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
         ^ np.uint64(seed_mix))
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(px, py, pz, seed):
    """Trilinear interpolation of lattice hashes at continuous coords."""
    ix, iy, iz = np.floor(px), np.floor(py), np.floor(pz)
    fx, fy, fz = px - ix, py - iy, pz - iz
    ix, iy, iz = ix.astype(np.int64), iy.astype(np.int64), iz.astype(np.int64)
    out = np.zeros(px.shape, dtype=np.float64)
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                w = ((fx if dx else 1.0 - fx)
                     * (fy if dy else 1.0 - fy)
                     * (fz if dz else 1.0 - fz))
                out += w * _hash01(ix + dx, iy + dy, iz + dz, seed)
    return out


def make_procedural(name: str, dim: int = 64, channels: int = 1,
                    timepoints: int = 1, block_size: int = 32,
                    levels: int | None = None) -> ProceduralSource:
    """Built-in procedural volumes: constant[:value], hotvoxel, radial, noise."""
    base, _, arg = name.partition("=")
    dims0 = (dim, dim, dim)
    n_levels = levels if levels is not None else max_levels(dims0, block_size)
    meta = VolumeMeta(dims0, "u8", block_size, n_levels, channels, timepoints)
    vmax = 255.0

    if base == "constant":
        value = int(arg) if arg else 7

        def field(level, z, y, x, c, t):
            return np.full(z.shape, value, dtype=np.uint8)

    elif base == "hotvoxel":
        hot = tuple(d // 2 for d in dims0)  # (x, y, z) at level 0

        def field(level, z, y, x, c, t):
            value = int(np.floor(vmax / float(8 ** level) + 0.5))
            hx, hy, hz = (h >> level for h in hot)
            mask = (x == hx) & (y == hy) & (z == hz)
            return np.where(mask, value, 0).astype(np.uint8)

    elif base == "radial":
        def field(level, z, y, x, c, t):
            dl = meta.level_dims(level)
            px = (x + 0.5) / dl[0] - 0.5
            py = (y + 0.5) / dl[1] - 0.5
            pz = (z + 0.5) / dl[2] - 0.5
            r = np.sqrt(px * px + py * py + pz * pz) / 0.5
            v = np.clip(1.0 - r, 0.0, 1.0) * vmax
            return np.floor(v + 0.5).astype(np.uint8)

    elif base == "noise":
        octaves = 4
        base_freq = 4.0

        def field(level, z, y, x, c, t):
            dl = meta.level_dims(level)
            px = (x + 0.5) / dl[0]
            py = (y + 0.5) / dl[1]
            pz = (z + 0.5) / dl[2]
            acc = np.zeros(z.shape, dtype=np.float64)
            amp, freq, norm = 1.0, base_freq, 0.0
            for o in range(octaves):
                acc += amp * _value_noise(px * freq, py * freq, pz * freq,
                                          seed=1000 * (t + 1) + 10 * (c + 1) + o)
                norm += amp
                amp *= 0.5
                freq *= 2.0
            v = acc / norm * vmax
            return np.floor(v + 0.5).astype(np.uint8)

    else:
        raise ValueError(f"unknown procedural volume '{base}'")

    return ProceduralSource(meta, field, name=f"{name}:{dim}")


def parse_procedural_spec(spec: str) -> ProceduralSource:
    """Parse 'name[:dim[:channels[:timepoints]]]', e.g. 'noise:2048' or 'radial:64:1:4'."""
    parts = spec.split(":")
    name = parts[0]
    dim = int(parts[1]) if len(parts) > 1 else 64
    channels = int(parts[2]) if len(parts) > 2 else 1
    timepoints = int(parts[3]) if len(parts) > 3 else 1
    return make_procedural(name, dim=dim, channels=channels, timepoints=timepoints)


def open_source(spec: str):
    """Open an OOCV file path or a 'procedural:...' spec.

    Returns (source, meta); the header and chunk index are fully validated
    before a FileSource is returned.
    """
    if spec.startswith("procedural:"):
        src = parse_procedural_spec(spec[len("procedural:"):])
        return src, src.meta
    src = FileSource(spec)
    return src, src.meta


def reassemble_level(source, level: int, channel: int = 0, timepoint: int = 0) -> np.ndarray:
    """Dense (z, y, x) array of one level, reading every block. Test/demo helper."""
    meta = source.meta
    dx, dy, dz = meta.level_dims(level)
    out = np.empty((dz, dy, dx), dtype=meta.np_dtype)
    bs = meta.block_size
    gx, gy, gz = meta.grid_dims(level)
    for bz in range(gz):
        for by in range(gy):
            for bx in range(gx):
                blk = source.read_block(BlockKey(level, bx, by, bz, channel, timepoint))
                ex, ey, ez = blk.extent
                out[bz * bs:bz * bs + ez, by * bs:by * bs + ey, bx * bs:bx * bs + ex] = blk.data
    return out
