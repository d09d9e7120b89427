"""Synthetic structured fault data.

Measured undervolting fault maps are not bundled, so tests and demos use maps
planted with the spatial regularities seen in such data: a handful of faulty
rows per faulty block, rows holding mostly two faults eight cells apart,
never more than eight cells between neighbours in a row, and faulty rows
stacked an even number of rows apart over the same columns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .faultmap import FaultDataset, FaultMap, SramGeometry
from .rng import substream


def _dist(weights: dict[int, float]) -> tuple[np.ndarray, np.ndarray]:
    values = np.array(sorted(weights), dtype=np.int64)
    p = np.array([weights[v] for v in values], dtype=float)
    return values, p / p.sum()


@dataclass(frozen=True)
class StructuredSpec:
    """Parameters of a planted fault map.

    ``rows_per_block``, ``faults_per_row`` and ``row_gap`` map a value to its
    (unnormalized) probability. ``stack_prob`` is the chance that a further
    faulty row repeats the previous row's columns ``stack_offset`` rows below.
    """

    p_s: float = 0.2
    rows_per_block: dict = None
    faults_per_row: dict = None
    row_gap: dict = None
    stack_prob: float = 0.35
    stack_offset: dict = None

    def __post_init__(self):
        defaults = {
            "rows_per_block": {1: 0.35, 2: 0.25, 3: 0.15, 4: 0.1, 5: 0.08, 6: 0.07},
            "faults_per_row": {1: 0.15, 2: 0.7, 3: 0.15},
            "row_gap": {8: 0.55, 4: 0.15, 6: 0.1, 2: 0.08, 7: 0.05, 5: 0.04, 3: 0.02, 1: 0.01},
            "stack_offset": {2: 0.6, 4: 0.25, 6: 0.15},
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)


# few faulty rows per block, mostly fault pairs eight columns apart
SPARSE = StructuredSpec()

# dense rows and a heavy tail of very faulty blocks
CLUSTERED = StructuredSpec(
    p_s=0.5,
    rows_per_block={1: 0.3, 2: 0.2, 4: 0.15, 8: 0.1, 16: 0.08, 48: 0.07, 128: 0.05, 256: 0.05},
    faults_per_row={3: 0.2, 4: 0.35, 5: 0.3, 6: 0.15},
    row_gap={1: 0.2, 2: 0.35, 3: 0.3, 4: 0.15},
    stack_prob=0.5,
)


def _row_pattern(rng, spec_arrays, cols: int) -> np.ndarray:
    (k_vals, k_p), (g_vals, g_p) = spec_arrays
    k = int(rng.choice(k_vals, p=k_p))
    while True:
        gaps = rng.choice(g_vals, size=k - 1, p=g_p) if k > 1 else np.empty(0, np.int64)
        if gaps.sum() <= cols - 1:
            break
    offsets = np.concatenate([[0], np.cumsum(gaps)]).astype(np.int64)
    start = rng.integers(0, cols - offsets[-1])
    return start + offsets


def _block_faults(rng, spec: StructuredSpec, g: SramGeometry, arrays) -> list[tuple[int, np.ndarray]]:
    r_vals, r_p = arrays["rows"]
    o_vals, o_p = arrays["offset"]
    n_rows = min(int(rng.choice(r_vals, p=r_p)), g.rows)
    used: dict[int, np.ndarray] = {}
    prev_row, prev_cols = None, None
    guard = 0
    while len(used) < n_rows and guard < 50 * n_rows:
        guard += 1
        if prev_row is not None and rng.random() < spec.stack_prob:
            row = prev_row + int(rng.choice(o_vals, p=o_p))
            cols = prev_cols
        else:
            row = int(rng.integers(0, g.rows))
            cols = _row_pattern(rng, arrays["pattern"], g.cols)
        if row >= g.rows or row in used:
            prev_row = None
            continue
        used[row] = cols
        prev_row, prev_cols = row, cols
    return list(used.items())


def structured_faultmap(n_blocks: int, seed: int, spec: StructuredSpec = SPARSE,
                        geometry: SramGeometry | None = None,
                        voltage_mv: int | None = None) -> FaultMap:
    g = (geometry or SramGeometry()).with_blocks(n_blocks)
    rng = substream(seed, 7)
    n_faulty = int(round(n_blocks * spec.p_s))
    blocks = np.sort(rng.choice(n_blocks, size=n_faulty, replace=False))
    arrays = {
        "rows": _dist(spec.rows_per_block),
        "offset": _dist(spec.stack_offset),
        "pattern": (_dist(spec.faults_per_row), _dist(spec.row_gap)),
    }
    flat = []
    for b in blocks.tolist():
        for row, cols in _block_faults(rng, spec, g, arrays):
            flat.append((b * g.rows + row) * g.cols + cols)
    flat = np.concatenate(flat) if flat else np.empty(0, np.int64)
    return FaultMap.from_flat(g, flat, voltage_mv)


FAMILY_VOLTAGES = (600, 590, 580, 570, 560, 550, 540)


def voltage_family(n_blocks: int, seed: int, spec: StructuredSpec = SPARSE,
                   voltages=FAMILY_VOLTAGES, geometry: SramGeometry | None = None) -> FaultDataset:
    """Maps whose fault rate rises as the voltage drops.

    Step ``i`` of ``n`` (highest voltage first) keeps a fraction ``(i/(n-1))**2``
    of the faulty blocks of ``spec`` and scales the faulty-row counts by
    ``0.25 + 0.75 * i/(n-1)``, so both coarse features grow monotonically.
    """
    maps = []
    n = len(voltages)
    for i, v in enumerate(sorted(voltages, reverse=True)):
        level = i / (n - 1) if n > 1 else 1.0
        scale = 0.25 + 0.75 * level
        rows = {}
        for k, p in spec.rows_per_block.items():
            kk = max(1, int(round(k * scale)))
            rows[kk] = rows.get(kk, 0.0) + p
        step_spec = replace(spec, p_s=spec.p_s * level ** 2, rows_per_block=rows)
        maps.append(structured_faultmap(n_blocks, seed + i, step_spec, geometry, v))
    return FaultDataset.from_maps(maps)
