"""Mesh hierarchy: repeated decimation plus per-level spiral tables.

The hierarchy is a pure function of (template topology, reference coords,
decimation factors, spiral lengths), so it is built once and cached on disk.
The cache file stores the inputs' fingerprint; a mismatch triggers a rebuild
rather than an error, since a stale cache is an inconvenience, not a fault.
"""

from __future__ import annotations

import io
import os
import struct
import sys
from dataclasses import dataclass

import numpy as np

from .decimate import qem_decimate
from .errors import FormatError
from .sampling import SamplingOperator
from .spiral import SpiralIndexTable, build_spiral_table
from .topology import TemplateTopology, build_topology

CACHE_MAGIC = b"SPHC"
CACHE_VERSION = 1
CACHE_ENV_VAR = "SPATR_CACHE_DIR"
CACHE_FILENAME = "hierarchy.bin"


@dataclass(frozen=True)
class MeshHierarchy:
    """Per-level topologies, reference geometry, spirals, and transfer ops.

    levels[0] is the input template. downs[i] maps level i features to
    level i+1; ups[i] maps level i+1 back to level i.
    """
    levels: tuple          # TemplateTopology per level
    ref_coords: tuple      # (V_i, 3) float64 per level
    spirals: tuple         # SpiralIndexTable per level
    downs: tuple           # len(levels) - 1 SamplingOperator, kind="down"
    ups: tuple             # len(levels) - 1 SamplingOperator, kind="up"
    factors: tuple
    spiral_lengths: tuple
    source_checksum: int

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def vertex_counts(self):
        return tuple(t.vertex_count for t in self.levels)


def build_hierarchy(topology: TemplateTopology, ref_coords: np.ndarray,
                    factors, spiral_lengths) -> MeshHierarchy:
    factors = tuple(float(f) for f in factors)
    spiral_lengths = tuple(int(s) for s in spiral_lengths)
    if len(spiral_lengths) != len(factors) + 1:
        raise ValueError(
            f"need one spiral length per level: {len(factors)} factors imply "
            f"{len(factors) + 1} levels, got {len(spiral_lengths)} lengths")

    levels = [topology]
    coords = [np.asarray(ref_coords, dtype=np.float64)]
    downs, ups = [], []
    for f in factors:
        coarse_topo, coarse_coords, down, up = qem_decimate(
            levels[-1], coords[-1], f)
        levels.append(coarse_topo)
        coords.append(coarse_coords)
        downs.append(down)
        ups.append(up)
    spirals = [build_spiral_table(t, s, ref_frame=c)
               for t, s, c in zip(levels, spiral_lengths, coords)]
    return MeshHierarchy(
        levels=tuple(levels), ref_coords=tuple(coords),
        spirals=tuple(spirals), downs=tuple(downs), ups=tuple(ups),
        factors=factors, spiral_lengths=spiral_lengths,
        source_checksum=topology.checksum)


def _write_array(fh, arr: np.ndarray, dtype: str):
    a = np.ascontiguousarray(arr, dtype=dtype)
    fh.write(struct.pack("<I", a.ndim))
    fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
    fh.write(a.tobytes())


def _read_array(fh, dtype: str) -> np.ndarray:
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, count * np.dtype(dtype).itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated hierarchy cache: wanted {n} bytes, "
                          f"got {len(raw)}")
    return raw


def _write_operator(fh, op: SamplingOperator):
    fh.write(struct.pack("<III", op.rows, op.cols, 1 if op.kind == "up" else 0))
    _write_array(fh, op.row_idx, "<i4")
    _write_array(fh, op.col_idx, "<i4")
    _write_array(fh, op.weights, "<f8")


def _read_operator(fh) -> SamplingOperator:
    rows, cols, kind_flag = struct.unpack("<III", _read_exact(fh, 12))
    row_idx = _read_array(fh, "<i4")
    col_idx = _read_array(fh, "<i4")
    weights = _read_array(fh, "<f8")
    return SamplingOperator(rows=rows, cols=cols, row_idx=row_idx,
                            col_idx=col_idx, weights=weights,
                            kind="up" if kind_flag else "down")


def _cache_key(checksum: int, factors, spiral_lengths) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", checksum))
    buf.write(struct.pack("<I", len(factors)))
    for f in factors:
        buf.write(struct.pack("<d", float(f)))
    buf.write(struct.pack("<I", len(spiral_lengths)))
    for s in spiral_lengths:
        buf.write(struct.pack("<I", int(s)))
    return buf.getvalue()


def save_hierarchy(path: str, h: MeshHierarchy):
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        key = _cache_key(h.source_checksum, h.factors, h.spiral_lengths)
        fh.write(struct.pack("<I", len(key)))
        fh.write(key)
        fh.write(struct.pack("<I", h.level_count))
        for topo, coords, spiral in zip(h.levels, h.ref_coords, h.spirals):
            fh.write(struct.pack("<I", topo.vertex_count))
            _write_array(fh, topo.faces, "<i4")
            _write_array(fh, coords, "<f8")
            fh.write(struct.pack("<I", spiral.length))
            _write_array(fh, spiral.indices, "<i4")
        for down, up in zip(h.downs, h.ups):
            _write_operator(fh, down)
            _write_operator(fh, up)


def load_hierarchy(path: str, expected_checksum: int, factors,
                   spiral_lengths) -> MeshHierarchy:
    """Load a cached hierarchy; FormatError if the file does not match
    the requested (checksum, factors, spiral_lengths) triple."""
    factors = tuple(float(f) for f in factors)
    spiral_lengths = tuple(int(s) for s in spiral_lengths)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise FormatError(f"bad hierarchy cache magic: expected "
                              f"{CACHE_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CACHE_VERSION:
            raise FormatError(f"unsupported hierarchy cache version {version}")
        (key_len,) = struct.unpack("<I", _read_exact(fh, 4))
        key = _read_exact(fh, key_len)
        expected_key = _cache_key(expected_checksum, factors, spiral_lengths)
        if key != expected_key:
            raise FormatError("hierarchy cache was built for a different "
                              "(template, factors, spiral lengths) combination")
        (n_levels,) = struct.unpack("<I", _read_exact(fh, 4))
        levels, coords, spirals = [], [], []
        for _ in range(n_levels):
            (vc,) = struct.unpack("<I", _read_exact(fh, 4))
            faces = _read_array(fh, "<i4")
            levels.append(build_topology(vc, faces))
            coords.append(_read_array(fh, "<f8"))
            (slen,) = struct.unpack("<I", _read_exact(fh, 4))
            indices = _read_array(fh, "<i4")
            spirals.append(SpiralIndexTable(length=slen, indices=indices))
        downs, ups = [], []
        for _ in range(n_levels - 1):
            downs.append(_read_operator(fh))
            ups.append(_read_operator(fh))
    return MeshHierarchy(
        levels=tuple(levels), ref_coords=tuple(coords), spirals=tuple(spirals),
        downs=tuple(downs), ups=tuple(ups), factors=factors,
        spiral_lengths=spiral_lengths, source_checksum=expected_checksum)


def cache_dir(override: str = None) -> str:
    if override:
        return override
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "meshact")


def get_hierarchy(topology: TemplateTopology, ref_coords: np.ndarray,
                  factors, spiral_lengths, cache_root: str = None,
                  verbose: bool = True) -> MeshHierarchy:
    """Cached build: load if the stored fingerprint matches, else rebuild."""
    root = cache_dir(cache_root)
    os.makedirs(root, exist_ok=True)
    path = os.path.join(root, CACHE_FILENAME)
    if os.path.exists(path):
        try:
            return load_hierarchy(path, topology.checksum, factors,
                                  spiral_lengths)
        except FormatError as e:
            if verbose:
                print(f"rebuilding hierarchy cache: {e}", file=sys.stderr)
    h = build_hierarchy(topology, ref_coords, factors, spiral_lengths)
    save_hierarchy(path, h)
    return h
