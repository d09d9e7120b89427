"""Artificial fault maps from a :class:`~sramfault.profiler.FaultProfile`.

Two models are provided:

* the *Random* model uses only the coarse features: a fixed number of faulty
  blocks picked uniformly and a fixed number of faults spread uniformly over
  their cells;
* the *Mixed* model builds every faulty block row by row from the
  fine-grained row histograms and keeps a candidate block only when its
  column features are similar enough to the measured ones.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .errors import EmptyHistogram, GeometryMismatch, InfeasibleTarget, RetryBudgetExhausted
from .faultmap import FaultMap, SramGeometry
from .profiler import BlockColumns, ColumnFeatures, FaultProfile, Histogram
from .rng import substream

MIXED = "mixed"
RANDOM = "random"

# attempts at redrawing the distances of a row that does not fit in the row
_FIT_ATTEMPTS = 16
# slots generated per batch of the mixed model
_BATCH = 32


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def floor_count(x: float) -> int:
    return int(math.floor(x + 1e-9))


# --- empirical distributions ------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalDist:
    """Categorical distribution over integer ``support`` values."""

    support: np.ndarray
    probabilities: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        p = np.asarray(self.probabilities, dtype=np.float64)
        if support.shape != p.shape or support.ndim != 1 or support.size == 0:
            raise ValueError("support and probabilities must be equal-length, non-empty vectors")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "_cdf", cdf)

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        idx = np.searchsorted(self._cdf, u, side="right")
        idx = np.minimum(idx, self.support.size - 1)
        out = self.support[idx]
        return int(out) if size is None else out

    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities))


def make_sampler(h: Histogram, minimum: int = 0) -> EmpiricalDist:
    """Normalize a histogram into a sampler over its non-empty bins.

    Bins below ``minimum`` are dropped before normalizing, which gives the
    distribution conditioned on ``value >= minimum``.
    """
    counts = h.counts.copy()
    counts[:minimum] = 0
    total = int(counts.sum())
    if total == 0:
        raise EmptyHistogram("cannot sample from a histogram with no counts"
                             + (f" at index >= {minimum}" if minimum else ""))
    support = np.flatnonzero(counts)
    return EmpiricalDist(support, counts[support] / total)


# --- similarity ---------------------------------------------------------------

def _tv_similarity(a: Histogram, b: Histogram) -> float:
    ta, tb = a.total, b.total
    if ta == 0 and tb == 0:
        return 1.0
    if ta == 0 or tb == 0:
        return 0.0
    n = max(len(a), len(b))
    pa = np.zeros(n)
    pb = np.zeros(n)
    pa[:len(a)] = a.counts / ta
    pb[:len(b)] = b.counts / tb
    return 1.0 - 0.5 * float(np.abs(pa - pb).sum())


def similarity(a: ColumnFeatures, b: ColumnFeatures) -> float:
    """Mean total-variation similarity of the three column histograms."""
    if tuple(map(len, a.histograms())) != tuple(map(len, b.histograms())):
        raise GeometryMismatch("column features come from different geometries")
    return sum(_tv_similarity(x, y) for x, y in zip(a.histograms(), b.histograms())) / 3.0


def log2_bin(values) -> np.ndarray:
    """0 -> 0, 1 -> 1, 2..3 -> 2, 4..7 -> 3, ..."""
    v = np.asarray(values, dtype=np.int64)
    out = np.zeros(v.shape, dtype=np.int64)
    pos = v > 0
    out[pos] = np.floor(np.log2(v[pos])).astype(np.int64) + 1
    return out


def _coarsen(h: Histogram) -> Histogram:
    idx = log2_bin(np.arange(len(h)))
    return Histogram(np.bincount(idx, weights=h.counts, minlength=int(idx.max()) + 1).astype(np.int64))


def gate_view(features: ColumnFeatures) -> ColumnFeatures:
    """Column features as seen by the acceptance gate: faults-per-column and
    vertical distances grouped into log2 bins, faulty-column count exact."""
    return ColumnFeatures(features.faulty_cols_per_block,
                          _coarsen(features.bitfaults_per_col),
                          _coarsen(features.col_distances))


class _AggregateReference:
    def __init__(self, features: ColumnFeatures, geometry: SramGeometry):
        self.features = gate_view(features)
        self.geometry = geometry

    def score(self, block: BlockColumns) -> float:
        return similarity(gate_view(block.features(self.geometry)), self.features)


class _BlockReference:
    """Best gate similarity of a candidate block against every measured
    faulty block; a vectorized ``max(similarity(gate_view(cand), gate_view(ref)))``."""

    def __init__(self, blocks: tuple[BlockColumns, ...], geometry: SramGeometry):
        self.geometry = geometry
        self.fc_len = int(log2_bin(geometry.rows)) + 1
        self.cd_len = int(log2_bin(geometry.rows - 1)) + 1
        per_col = np.array([b.faults_per_col for b in blocks], dtype=np.int64)
        self.n_faulty_cols = np.count_nonzero(per_col, axis=1)
        self.fc = np.stack([self._fc_row(r) for r in per_col])
        self.cd = np.stack([self._cd_row(b.col_distances) for b in blocks])
        self.cd_empty = np.array([not b.col_distances for b in blocks])

    def _fc_row(self, per_col) -> np.ndarray:
        return np.bincount(log2_bin(per_col), minlength=self.fc_len) / self.geometry.cols

    def _cd_row(self, distances) -> np.ndarray:
        if not distances:
            return np.zeros(self.cd_len)
        counts = np.bincount(log2_bin(distances), minlength=self.cd_len)
        return counts / counts.sum()

    def score(self, block: BlockColumns) -> float:
        per_col = np.asarray(block.faults_per_col, dtype=np.int64)
        sc = (self.n_faulty_cols == np.count_nonzero(per_col)).astype(float)
        fc = 1.0 - 0.5 * np.abs(self.fc - self._fc_row(per_col)).sum(axis=1)
        if block.col_distances:
            cd = 1.0 - 0.5 * np.abs(self.cd - self._cd_row(block.col_distances)).sum(axis=1)
            cd[self.cd_empty] = 0.0
        else:
            cd = self.cd_empty.astype(float)
        return float(((sc + fc + cd) / 3.0).max())


# --- configuration and report -------------------------------------------------

@dataclass(frozen=True)
class GenerationConfig:
    n_blocks: int
    seed: int = 0
    similarity_threshold: float = 0.80
    max_retries_per_block: int = 1000
    model: Literal["mixed", "random"] = MIXED
    # "blocks": nearest measured faulty block; "aggregate": pooled column
    # histograms of the whole measured map
    reference: Literal["blocks", "aggregate"] = "blocks"
    threads: int = 1

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in [0, 1]")
        if self.max_retries_per_block < 0:
            raise ValueError("max_retries_per_block must be >= 0")
        if self.model not in (MIXED, RANDOM):
            raise ValueError(f"unknown model {self.model!r}")
        if self.reference not in ("blocks", "aggregate"):
            raise ValueError(f"unknown similarity reference {self.reference!r}")


@dataclass
class GenerationReport:
    model: str
    n_blocks: int
    target_faulty_blocks: int
    target_faults: int
    accepted_blocks: int = 0
    placed_faults: int = 0
    total_retries: int = 0
    blocks: list[int] = field(default_factory=list)
    best_similarity_per_block: list[float] = field(default_factory=list)
    flagged_blocks: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# --- Random model -------------------------------------------------------------

def random_targets(profile: FaultProfile, n_blocks: int) -> tuple[int, int]:
    """``(faulty blocks, faults)`` the Random model places for ``n_blocks``."""
    g = profile.geometry
    return (round_half_up(n_blocks * profile.coarse.p_s),
            round_half_up(n_blocks * g.bits_per_block * profile.coarse.p_f))


def _skip_taken(x: np.ndarray, taken_sorted: np.ndarray) -> np.ndarray:
    # map ranks among the free cells to cell indices, ``taken_sorted`` excluded
    adjusted = taken_sorted - np.arange(taken_sorted.size)
    return x + np.searchsorted(adjusted, x, side="right")


def generate_random(profile: FaultProfile, cfg: GenerationConfig) -> FaultMap:
    g = profile.geometry.with_blocks(cfg.n_blocks)
    bpb = g.bits_per_block
    n_faulty, n_faults = random_targets(profile, cfg.n_blocks)
    if n_faults == 0:
        return FaultMap.empty(g, profile.voltage_mv)
    if n_faulty == 0 or n_faults < n_faulty:
        raise InfeasibleTarget(
            f"{n_faults} faults cannot make {n_faulty} blocks faulty")
    if n_faults > n_faulty * bpb:
        raise InfeasibleTarget(
            f"{n_faults} faults exceed the {n_faulty * bpb} cells of {n_faulty} faulty blocks")

    rng = substream(cfg.seed, 0)
    blocks = np.sort(rng.choice(cfg.n_blocks, size=n_faulty, replace=False))
    # one fault per chosen block so every chosen block is faulty, the rest
    # uniformly over the remaining cells of the chosen blocks
    anchors = np.arange(n_faulty) * bpb + rng.integers(0, bpb, size=n_faulty)
    rest = rng.choice(n_faulty * bpb - n_faulty, size=n_faults - n_faulty, replace=False)
    local = np.concatenate([anchors, _skip_taken(np.sort(rest), anchors)])
    flat = blocks[local // bpb] * bpb + local % bpb
    return FaultMap.from_flat(g, flat, profile.voltage_mv)


# --- Mixed model --------------------------------------------------------------

@dataclass
class _Candidate:
    rows: list[np.ndarray]   # column positions per faulty row, in generation order
    row_ids: np.ndarray
    similarity: float
    attempts: int

    @property
    def fault_count(self) -> int:
        return sum(r.size for r in self.rows)


class _MixedSampler:
    def __init__(self, profile: FaultProfile, cfg: GenerationConfig):
        g = profile.geometry
        self.geometry = g
        rows = profile.rows
        if rows.faulty_rows_per_block.total == 0:
            raise EmptyHistogram("faulty-rows-per-block histogram is empty")
        self.faulty_rows = make_sampler(rows.faulty_rows_per_block)
        # a row picked as faulty carries at least one fault
        self.faults_in_row = make_sampler(rows.bitfaults_per_row, minimum=1)
        self.distance = None
        if self.faults_in_row.support.max() > 1:
            self.distance = make_sampler(rows.row_distances, minimum=1)
        self.degenerate = bool(self.faulty_rows.support.max() == 0)
        if cfg.reference == "blocks" and profile.block_cols:
            self.reference = _BlockReference(profile.block_cols, g)
        else:
            self.reference = _AggregateReference(profile.cols, g)

    def _row(self, rng: np.random.Generator, k: int) -> np.ndarray:
        cols = self.geometry.cols
        if k == 1 or self.distance is None:
            return np.array([rng.integers(0, cols)])
        gaps = self.distance.sample(rng, k - 1)
        for _ in range(_FIT_ATTEMPTS):
            if gaps.sum() <= cols - 1:
                break
            gaps = self.distance.sample(rng, k - 1)
        else:
            # keep the longest prefix of the row that fits
            gaps = gaps[: int(np.searchsorted(np.cumsum(gaps), cols - 1, side="right"))]
        offsets = np.concatenate([[0], np.cumsum(gaps)])
        start = rng.integers(0, cols - offsets[-1])
        return start + offsets

    def block(self, rng: np.random.Generator) -> tuple[list[np.ndarray], np.ndarray]:
        g = self.geometry
        n_rows = min(self.faulty_rows.sample(rng), g.rows)
        row_ids = rng.choice(g.rows, size=n_rows, replace=False) if n_rows else np.empty(0, np.int64)
        ks = self.faults_in_row.sample(rng, n_rows) if n_rows else np.empty(0, np.int64)
        return [self._row(rng, int(k)) for k in ks], row_ids

    def columns(self, rows: list[np.ndarray], row_ids: np.ndarray) -> BlockColumns:
        g = self.geometry
        if not rows:
            return BlockColumns((0,) * g.cols, ())
        col = np.concatenate(rows)
        row = np.repeat(row_ids, [r.size for r in rows])
        order = np.lexsort((row, col))
        col, row = col[order], row[order]
        same = col[1:] == col[:-1]
        dist = (row[1:] - row[:-1])[same]
        return BlockColumns(tuple(np.bincount(col, minlength=g.cols).tolist()),
                            tuple(dist.tolist()))

    def candidate(self, seed: int, slot: int, threshold: float, max_retries: int) -> _Candidate:
        rng = substream(seed, 1, slot)
        best = None
        for attempt in range(max_retries + 1):
            rows, row_ids = self.block(rng)
            sim = self.reference.score(self.columns(rows, row_ids))
            if best is None or sim > best.similarity:
                best = _Candidate(rows, row_ids, sim, attempt + 1)
            if sim >= threshold - 1e-12:
                return _Candidate(rows, row_ids, sim, attempt + 1)
        best.attempts = max_retries + 1
        return best


def _truncate(cand: _Candidate, budget: int) -> tuple[list[np.ndarray], np.ndarray]:
    rows, ids, used = [], [], 0
    for r, rid in zip(cand.rows, cand.row_ids.tolist()):
        if used >= budget:
            break
        take = r[: budget - used]
        rows.append(take)
        ids.append(rid)
        used += take.size
    return rows, np.asarray(ids, dtype=np.int64)


def generate_mixed(profile: FaultProfile, cfg: GenerationConfig,
                   warn: bool = True) -> tuple[FaultMap, GenerationReport]:
    g = profile.geometry.with_blocks(cfg.n_blocks)
    target_faults = floor_count(cfg.n_blocks * g.bits_per_block * profile.coarse.p_f)
    target_blocks = min(round_half_up(cfg.n_blocks * profile.coarse.p_s), cfg.n_blocks)
    report = GenerationReport(MIXED, cfg.n_blocks, target_blocks, target_faults)
    # a fault-free profile legitimately has empty fine-grained histograms
    if profile.coarse.p_f == 0:
        return FaultMap.empty(g, profile.voltage_mv), report
    sampler = _MixedSampler(profile, cfg)
    if sampler.degenerate or target_faults == 0 or target_blocks == 0:
        return FaultMap.empty(g, profile.voltage_mv), report

    order = substream(cfg.seed, 0).permutation(cfg.n_blocks)[:target_blocks]
    threshold, retries = cfg.similarity_threshold, cfg.max_retries_per_block

    def make(slot):
        return sampler.candidate(cfg.seed, slot, threshold, retries)

    flat_parts = []
    faults_left, slot = target_faults, 0
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        while slot < target_blocks and faults_left > 0:
            batch = range(slot, min(slot + _BATCH, target_blocks))
            cands = list(pool.map(make, batch)) if pool else [make(s) for s in batch]
            for s, cand in zip(batch, cands):
                if faults_left <= 0:
                    break
                slot = s + 1
                rows, row_ids = cand.rows, cand.row_ids
                sim = cand.similarity
                if cand.fault_count > faults_left:
                    rows, row_ids = _truncate(cand, faults_left)
                    sim = sampler.reference.score(sampler.columns(rows, row_ids))
                block = int(order[s])
                n = sum(r.size for r in rows)
                if n:
                    row_of = np.repeat(row_ids, [r.size for r in rows])
                    flat_parts.append((block * g.rows + row_of) * g.cols + np.concatenate(rows))
                faults_left -= n
                report.accepted_blocks += 1
                report.placed_faults += n
                report.total_retries += cand.attempts - 1
                report.blocks.append(block)
                report.best_similarity_per_block.append(round(sim, 12))
                if sim < threshold - 1e-12:
                    report.flagged_blocks.append(block)
            else:
                slot = batch.stop
    finally:
        if pool:
            pool.shutdown()

    if report.flagged_blocks and warn:
        warnings.warn(
            f"{len(report.flagged_blocks)} block(s) accepted below similarity {threshold}",
            RetryBudgetExhausted, stacklevel=2)
    flat = np.concatenate(flat_parts) if flat_parts else np.empty(0, np.int64)
    return FaultMap.from_flat(g, flat, profile.voltage_mv), report


def generate(profile: FaultProfile, cfg: GenerationConfig,
             warn: bool = True) -> tuple[FaultMap, GenerationReport]:
    """Run the configured model; the Random model gets a report too."""
    if cfg.model == MIXED:
        return generate_mixed(profile, cfg, warn)
    fmap = generate_random(profile, cfg)
    n_faulty, n_faults = random_targets(profile, cfg.n_blocks)
    blocks = fmap.faulty_blocks().tolist()
    report = GenerationReport(RANDOM, cfg.n_blocks, n_faulty, n_faults,
                              accepted_blocks=len(blocks), placed_faults=fmap.fault_count,
                              blocks=blocks)
    return fmap, report
