"""Coarse- and fine-grained fault features of a fault map.

Row features look along the 16-cell rows of each faulty block, column
features along the 1024-cell columns. Histograms keep raw integer counts;
normalization happens where a distribution is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .faultmap import FaultMap, SramGeometry


@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).copy()
        if counts.ndim != 1:
            raise ValueError("histogram counts must be one-dimensional")
        if counts.size and counts.min() < 0:
            raise ValueError("histogram counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, size: int) -> "Histogram":
        return cls(np.zeros(size, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return int(self.counts.size)

    def normalized(self) -> np.ndarray:
        total = self.total
        if total == 0:
            return np.zeros(self.counts.size)
        return self.counts / total

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    def __add__(self, other: "Histogram") -> "Histogram":
        if len(self) != len(other):
            raise ValueError("histogram sizes differ")
        return Histogram(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Histogram):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "total": self.total}

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        h = cls(np.asarray(d["counts"], dtype=np.int64))
        if "total" in d and int(d["total"]) != h.total:
            raise ValueError(f"histogram total {d['total']} does not match counts ({h.total})")
        return h


@dataclass(frozen=True)
class CoarseProfile:
    p_f: float
    p_s: float
    faults: int = 0
    faulty_blocks: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_f <= 1.0 and 0.0 <= self.p_s <= 1.0):
            raise ValueError("p_f and p_s must lie in [0, 1]")
        if self.p_f > 0 and self.p_s == 0:
            raise ValueError("p_f > 0 requires p_s > 0")


@dataclass(frozen=True)
class RowFeatures:
    faulty_rows_per_block: Histogram  # index 0..rows
    bitfaults_per_row: Histogram      # index 0..cols
    row_distances: Histogram          # index 1..cols-1 used, slot 0 always empty


@dataclass(frozen=True)
class ColumnFeatures:
    faulty_cols_per_block: Histogram  # index 0..cols
    bitfaults_per_col: Histogram      # index 0..rows
    col_distances: Histogram          # index 1..rows-1 used, slot 0 always empty

    def histograms(self) -> tuple[Histogram, Histogram, Histogram]:
        return self.faulty_cols_per_block, self.bitfaults_per_col, self.col_distances

    def to_dict(self) -> dict:
        return {
            "faulty_cols_per_block": self.faulty_cols_per_block.to_dict(),
            "bitfaults_per_col": self.bitfaults_per_col.to_dict(),
            "col_distances": self.col_distances.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnFeatures":
        return cls(*(Histogram.from_dict(d[k]) for k in
                     ("faulty_cols_per_block", "bitfaults_per_col", "col_distances")))


@dataclass(frozen=True)
class BlockColumns:
    """Column features of one faulty block, kept in compact form.

    ``faults_per_col`` has one entry per column; ``col_distances`` lists every
    vertical distance between consecutive faults of a column.
    """

    faults_per_col: tuple[int, ...]
    col_distances: tuple[int, ...]

    def features(self, geometry: SramGeometry) -> ColumnFeatures:
        per_col = np.asarray(self.faults_per_col, dtype=np.int64)
        return ColumnFeatures(
            Histogram(np.bincount([int(np.count_nonzero(per_col))], minlength=geometry.cols + 1)),
            Histogram(np.bincount(per_col, minlength=geometry.rows + 1)),
            Histogram(np.bincount(np.asarray(self.col_distances, dtype=np.int64),
                                  minlength=geometry.rows)),
        )


@dataclass(frozen=True)
class FaultProfile:
    geometry: SramGeometry
    voltage_mv: int | None
    coarse: CoarseProfile
    rows: RowFeatures
    cols: ColumnFeatures
    block_cols: tuple[BlockColumns, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "voltage_mv": self.voltage_mv,
            "coarse": {
                "p_f": self.coarse.p_f,
                "p_s": self.coarse.p_s,
                "faults": self.coarse.faults,
                "faulty_blocks": self.coarse.faulty_blocks,
            },
            "rows": {
                "faulty_rows_per_block": self.rows.faulty_rows_per_block.to_dict(),
                "bitfaults_per_row": self.rows.bitfaults_per_row.to_dict(),
                "row_distances": self.rows.row_distances.to_dict(),
            },
            "cols": self.cols.to_dict(),
            "block_cols": [
                {"faults_per_col": list(b.faults_per_col), "col_distances": list(b.col_distances)}
                for b in self.block_cols
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FaultProfile":
        rows = d["rows"]
        coarse = d["coarse"]
        return cls(
            geometry=SramGeometry.from_dict(d["geometry"]),
            voltage_mv=d.get("voltage_mv"),
            coarse=CoarseProfile(
                p_f=float(coarse["p_f"]),
                p_s=float(coarse["p_s"]),
                faults=int(coarse.get("faults", 0)),
                faulty_blocks=int(coarse.get("faulty_blocks", 0)),
            ),
            rows=RowFeatures(*(Histogram.from_dict(rows[k]) for k in
                               ("faulty_rows_per_block", "bitfaults_per_row", "row_distances"))),
            cols=ColumnFeatures.from_dict(d["cols"]),
            block_cols=tuple(
                BlockColumns(tuple(b["faults_per_col"]), tuple(b["col_distances"]))
                for b in d.get("block_cols", [])
            ),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def save_profile(profile: FaultProfile, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(profile.to_json() + "\n", encoding="utf-8")
    return path


def load_profile(path: str | Path) -> FaultProfile:
    return FaultProfile.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def profile_filename(voltage_mv: int) -> str:
    return f"profile_{voltage_mv}mV.json"


# --- extraction -------------------------------------------------------------

def extract_coarse(fmap: FaultMap) -> CoarseProfile:
    g = fmap.geometry
    n_faulty = int(fmap.faulty_blocks().size)
    return CoarseProfile(
        p_f=fmap.fault_count / g.total_cells,
        p_s=n_faulty / g.blocks,
        faults=fmap.fault_count,
        faulty_blocks=n_faulty,
    )


def _line_features(major: np.ndarray, minor: np.ndarray, n_blocks_faulty: int,
                   lines_per_block: int, cells_per_line: int, block_of_line: np.ndarray):
    """Shared row/column logic.

    ``major`` identifies the line (block-qualified row or column) of each fault
    and ``minor`` its position along the line; both must already be sorted by
    ``(major, minor)``.
    """
    line_ids, per_line = np.unique(major, return_counts=True)
    # lines with >= 1 fault per faulty block
    _, lines_per_faulty_block = np.unique(block_of_line(line_ids), return_counts=True)
    faulty_lines_hist = np.bincount(lines_per_faulty_block, minlength=lines_per_block + 1)

    per_line_hist = np.bincount(per_line, minlength=cells_per_line + 1)
    per_line_hist[0] = n_blocks_faulty * lines_per_block - line_ids.size

    same_line = major[1:] == major[:-1]
    distances = (minor[1:] - minor[:-1])[same_line]
    dist_hist = np.bincount(distances, minlength=cells_per_line)
    return Histogram(faulty_lines_hist), Histogram(per_line_hist), Histogram(dist_hist)


def extract_row_features(fmap: FaultMap) -> RowFeatures:
    g = fmap.geometry
    block, row, col = fmap.coords()
    n_faulty = int(np.unique(block).size)
    # flat order is already (block, row, col)
    major = block * g.rows + row
    return RowFeatures(*_line_features(
        major, col, n_faulty, g.rows, g.cols, lambda ids: ids // g.rows
    ))


def _column_order(fmap: FaultMap):
    block, row, col = fmap.coords()
    order = np.lexsort((row, col, block))
    return block[order], row[order], col[order]


def extract_col_features(fmap: FaultMap) -> ColumnFeatures:
    g = fmap.geometry
    block, row, col = _column_order(fmap)
    n_faulty = int(np.unique(block).size)
    major = block * g.cols + col
    return ColumnFeatures(*_line_features(
        major, row, n_faulty, g.cols, g.rows, lambda ids: ids // g.cols
    ))


def extract_block_columns(fmap: FaultMap) -> tuple[BlockColumns, ...]:
    """Per-block column features for every faulty block, in block order."""
    g = fmap.geometry
    block, row, col = _column_order(fmap)
    if block.size == 0:
        return ()
    same_col = (block[1:] == block[:-1]) & (col[1:] == col[:-1])
    dist = row[1:] - row[:-1]
    starts = np.flatnonzero(np.r_[True, block[1:] != block[:-1]])
    ends = np.r_[starts[1:], block.size]
    out = []
    for s, e in zip(starts.tolist(), ends.tolist()):
        per_col = np.bincount(col[s:e], minlength=g.cols)
        d = dist[s:e - 1][same_col[s:e - 1]]
        out.append(BlockColumns(tuple(per_col.tolist()), tuple(d.tolist())))
    return tuple(out)


def extract_profile(fmap: FaultMap) -> FaultProfile:
    return FaultProfile(
        geometry=fmap.geometry,
        voltage_mv=fmap.voltage_mv,
        coarse=extract_coarse(fmap),
        rows=extract_row_features(fmap),
        cols=extract_col_features(fmap),
        block_cols=extract_block_columns(fmap),
    )
