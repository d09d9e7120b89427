"""SRAM geometry, fault maps and their on-disk CSV format.

A fault map is stored sparsely as a sorted array of flat cell indices
``block * rows * cols + row * cols + col``; sorting the flat index is the same
as sorting by ``(block, row, col)``.
"""

from __future__ import annotations

import io
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, TextIO

import numpy as np

from .errors import (
    CoordinateOutOfRange,
    DuplicateFault,
    GeometryMismatch,
    MalformedHeader,
    MalformedRecord,
)

RECORD_HEADER = "block,row,col"
_HEADER_RE = re.compile(
    r"^#\s*blocks=(\d+)\s+rows=(\d+)\s+cols=(\d+)\s+voltage=(\d+)\s*$"
)
_FILENAME_RE = re.compile(r"^faults_(\d+)mV\.csv$")


@dataclass(frozen=True)
class SramGeometry:
    rows: int = 1024
    cols: int = 16
    blocks: int = 1

    def __post_init__(self):
        for name in ("rows", "cols", "blocks"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def bits_per_block(self) -> int:
        return self.rows * self.cols

    @property
    def total_cells(self) -> int:
        return self.blocks * self.rows * self.cols

    def with_blocks(self, blocks: int) -> "SramGeometry":
        return SramGeometry(self.rows, self.cols, blocks)

    def to_dict(self) -> dict:
        return {"blocks": self.blocks, "rows": self.rows, "cols": self.cols}

    @classmethod
    def from_dict(cls, d: dict) -> "SramGeometry":
        return cls(rows=int(d["rows"]), cols=int(d["cols"]), blocks=int(d["blocks"]))


class CellAddress(NamedTuple):
    block: int
    row: int
    col: int


def _as_flat(geometry: SramGeometry, block, row, col) -> np.ndarray:
    block = np.asarray(block, dtype=np.int64)
    row = np.asarray(row, dtype=np.int64)
    col = np.asarray(col, dtype=np.int64)
    if block.size and (
        block.min() < 0 or block.max() >= geometry.blocks
        or row.min() < 0 or row.max() >= geometry.rows
        or col.min() < 0 or col.max() >= geometry.cols
    ):
        raise GeometryMismatch(f"address outside {geometry}")
    return (block * geometry.rows + row) * geometry.cols + col


@dataclass(frozen=True, eq=False)
class FaultMap:
    """Immutable set of faulty bitcells over ``geometry``.

    Build one with :meth:`from_addresses`, :meth:`from_coords` or
    :meth:`from_flat`; the constructor expects an already sorted, unique
    flat-index array.
    """

    geometry: SramGeometry
    flat: np.ndarray = field(repr=False)
    voltage_mv: int | None = None

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=np.int64)
        if flat.ndim != 1:
            raise ValueError("flat must be one-dimensional")
        if flat.size:
            if flat[0] < 0 or flat[-1] >= self.geometry.total_cells:
                raise GeometryMismatch("fault index outside geometry")
            if np.any(np.diff(flat) <= 0):
                raise ValueError("flat indices must be strictly increasing")
        flat = flat.copy()
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    @classmethod
    def from_flat(cls, geometry: SramGeometry, flat, voltage_mv: int | None = None) -> "FaultMap":
        return cls(geometry, np.unique(np.asarray(flat, dtype=np.int64)), voltage_mv)

    @classmethod
    def from_coords(cls, geometry: SramGeometry, block, row, col,
                    voltage_mv: int | None = None) -> "FaultMap":
        return cls.from_flat(geometry, _as_flat(geometry, block, row, col), voltage_mv)

    @classmethod
    def from_addresses(cls, geometry: SramGeometry, addresses: Iterable,
                       voltage_mv: int | None = None) -> "FaultMap":
        arr = np.array([tuple(a) for a in addresses], dtype=np.int64).reshape(-1, 3)
        return cls.from_coords(geometry, arr[:, 0], arr[:, 1], arr[:, 2], voltage_mv)

    @classmethod
    def empty(cls, geometry: SramGeometry, voltage_mv: int | None = None) -> "FaultMap":
        return cls(geometry, np.empty(0, dtype=np.int64), voltage_mv)

    @property
    def fault_count(self) -> int:
        return int(self.flat.size)

    def __len__(self) -> int:
        return self.fault_count

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(block, row, col)`` arrays in sorted order."""
        g = self.geometry
        block, rem = np.divmod(self.flat, g.rows * g.cols)
        row, col = np.divmod(rem, g.cols)
        return block, row, col

    def addresses(self) -> Iterator[CellAddress]:
        for b, r, c in zip(*(a.tolist() for a in self.coords())):
            yield CellAddress(b, r, c)

    @property
    def faults(self) -> frozenset[CellAddress]:
        return frozenset(self.addresses())

    def __contains__(self, address) -> bool:
        b, r, c = address
        idx = _as_flat(self.geometry, b, r, c)
        pos = np.searchsorted(self.flat, idx)
        return bool(pos < self.flat.size and self.flat[pos] == idx)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FaultMap):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.voltage_mv == other.voltage_mv
            and np.array_equal(self.flat, other.flat)
        )

    __hash__ = None

    def faulty_blocks(self) -> np.ndarray:
        return np.unique(self.flat // self.geometry.bits_per_block)

    def select_blocks(self, blocks) -> "FaultMap":
        """Return a map over ``len(blocks)`` blocks holding the listed source
        blocks, renumbered in the given order."""
        blocks = np.asarray(blocks, dtype=np.int64)
        g = self.geometry
        if blocks.size and (blocks.min() < 0 or blocks.max() >= g.blocks):
            raise GeometryMismatch("block index outside geometry")
        if np.unique(blocks).size != blocks.size:
            raise ValueError("block indices must be distinct")
        bpb = g.bits_per_block
        src_block = self.flat // bpb
        remap = np.full(g.blocks, -1, dtype=np.int64)
        remap[blocks] = np.arange(blocks.size)
        new_block = remap[src_block]
        keep = new_block >= 0
        flat = new_block[keep] * bpb + self.flat[keep] % bpb
        return FaultMap.from_flat(g.with_blocks(max(int(blocks.size), 1)), flat, self.voltage_mv)

    def with_voltage(self, voltage_mv: int | None) -> "FaultMap":
        return FaultMap(self.geometry, self.flat, voltage_mv)

    def dense(self) -> np.ndarray:
        """Boolean grid of shape ``(blocks, rows, cols)``."""
        g = self.geometry
        grid = np.zeros(g.total_cells, dtype=bool)
        grid[self.flat] = True
        return grid.reshape(g.blocks, g.rows, g.cols)


def fault_rate(fmap: FaultMap) -> float:
    """Fraction of faulty bitcells over every cell of the geometry."""
    return fmap.fault_count / fmap.geometry.total_cells


# --- CSV format -------------------------------------------------------------

def _parse_header(line: str) -> tuple[SramGeometry, int]:
    m = _HEADER_RE.match(line.strip())
    if not m:
        raise MalformedHeader(f"line 1: expected '# blocks=<n> rows=<n> cols=<n> voltage=<mV>', got {line.strip()!r}")
    blocks, rows, cols, voltage = (int(x) for x in m.groups())
    try:
        geometry = SramGeometry(rows=rows, cols=cols, blocks=blocks)
    except ValueError as exc:
        raise MalformedHeader(f"line 1: {exc}") from None
    return geometry, voltage


def parse_faultmap(stream: TextIO | str) -> FaultMap:
    """Read a fault map from a text stream (or a string holding the file)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header = stream.readline()
    if not header:
        raise MalformedHeader("line 1: empty input")
    geometry, voltage = _parse_header(header)
    second = stream.readline()
    if second.strip() != RECORD_HEADER:
        raise MalformedHeader(f"line 2: expected {RECORD_HEADER!r}, got {second.strip()!r}")

    flat: list[int] = []
    lines: list[int] = []
    rows, cols, blocks = geometry.rows, geometry.cols, geometry.blocks
    for lineno, raw in enumerate(stream, start=3):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3 or not all(p.isdigit() for p in parts):
            raise MalformedRecord(f"expected 'block,row,col', got {line!r}", lineno)
        b, r, c = int(parts[0]), int(parts[1]), int(parts[2])
        if b >= blocks or r >= rows or c >= cols:
            raise CoordinateOutOfRange(
                f"({b},{r},{c}) outside blocks={blocks} rows={rows} cols={cols}", lineno
            )
        flat.append((b * rows + r) * cols + c)
        lines.append(lineno)

    arr = np.asarray(flat, dtype=np.int64)
    uniq, first, counts = np.unique(arr, return_index=True, return_counts=True)
    if uniq.size != arr.size:
        dup_lines = sorted(set(range(arr.size)) - set(first.tolist()))
        shown = ", ".join(str(lines[i]) for i in dup_lines[:5])
        warnings.warn(
            f"{arr.size - uniq.size} duplicate fault record(s) merged (lines {shown}"
            f"{', ...' if len(dup_lines) > 5 else ''})",
            DuplicateFault,
            stacklevel=2,
        )
    return FaultMap(geometry, uniq, voltage)


def serialize_faultmap(fmap: FaultMap) -> str:
    g = fmap.geometry
    voltage = fmap.voltage_mv if fmap.voltage_mv is not None else 0
    out = [f"# blocks={g.blocks} rows={g.rows} cols={g.cols} voltage={voltage}", RECORD_HEADER]
    b, r, c = fmap.coords()
    out.extend(f"{x},{y},{z}" for x, y, z in zip(b.tolist(), r.tolist(), c.tolist()))
    return "\n".join(out) + "\n"


def read_faultmap(path: str | Path) -> FaultMap:
    with open(path, encoding="utf-8") as fh:
        return parse_faultmap(fh)


def write_faultmap(fmap: FaultMap, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(serialize_faultmap(fmap), encoding="utf-8")
    return path


def faultmap_filename(voltage_mv: int) -> str:
    return f"faults_{voltage_mv}mV.csv"


# --- datasets ---------------------------------------------------------------

@dataclass(frozen=True)
class FaultDataset:
    """Fault maps of one device at several voltages, highest voltage first."""

    entries: tuple[FaultMap, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            return
        geometry = entries[0].geometry
        for m in entries:
            if m.geometry != geometry:
                raise GeometryMismatch("all maps in a dataset must share one geometry")
            if m.voltage_mv is None:
                raise ValueError("dataset maps must carry a voltage")
        volts = [m.voltage_mv for m in entries]
        if any(a <= b for a, b in zip(volts, volts[1:])):
            raise ValueError(f"voltages must be strictly decreasing, got {volts}")

    @classmethod
    def from_maps(cls, maps: Iterable[FaultMap]) -> "FaultDataset":
        return cls(tuple(sorted(maps, key=lambda m: -m.voltage_mv)))

    @property
    def geometry(self) -> SramGeometry:
        return self.entries[0].geometry

    @property
    def voltages(self) -> list[int]:
        return [m.voltage_mv for m in self.entries]

    def at(self, voltage_mv: int) -> FaultMap:
        for m in self.entries:
            if m.voltage_mv == voltage_mv:
                return m
        raise KeyError(voltage_mv)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def load_dataset(directory: str | Path) -> FaultDataset:
    directory = Path(directory)
    maps = []
    for path in sorted(directory.iterdir()):
        m = _FILENAME_RE.match(path.name)
        if not m:
            continue
        fmap = read_faultmap(path)
        if fmap.voltage_mv != int(m.group(1)):
            raise MalformedHeader(f"{path.name}: header voltage {fmap.voltage_mv} disagrees with filename")
        maps.append(fmap)
    if not maps:
        raise FileNotFoundError(f"no faults_<V>mV.csv files in {directory}")
    return FaultDataset.from_maps(maps)


def save_dataset(dataset: FaultDataset, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [write_faultmap(m, directory / faultmap_filename(m.voltage_mv)) for m in dataset]
