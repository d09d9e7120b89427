"""Accuracy of a network whose weights sit in faulty SRAM, and voltage sweeps.

A single evaluation quantizes the weights, lays them onto blocks, flips the
bits under the fault map, reads them back and measures accuracy. A sweep
repeats that over voltages, fault models and option grids with one derived
seed per iteration.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CapacityExceeded, GridMismatch, MissingProfile
from .faultmap import FaultDataset, FaultMap, SramGeometry
from .generator import GenerationConfig, generate
from .injector import (
    BitMapping,
    MaskPolicy,
    Precision,
    WeightImage,
    blocks_required,
    inject,
    layout,
    quantize,
    readback,
)
from .nn import LabeledData, Network, accuracy
from .profiler import FaultProfile, extract_profile
from .rng import derive_seed, substream

REAL, MIXED, RANDOM = "real", "mixed", "random"
MODELS = (REAL, MIXED, RANDOM)


def fmt(x: float) -> str:
    """Fixed 6-significant-digit rendering used by every report."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6g}"


@dataclass(frozen=True)
class EvalOptions:
    precision: Precision
    mapping: BitMapping = BitMapping.MSB
    mask: MaskPolicy | None = MaskPolicy.TO_ZERO
    include_biases: bool = False

    @property
    def masking(self) -> str:
        # masking never applies to fixed point or binary weights
        if not self.precision.is_float or self.mask is None:
            return "none"
        return self.mask.value


def options_grid(precisions, mappings, masks, include_biases: bool = False) -> list[EvalOptions]:
    """Cartesian product, with the mask axis collapsed for non-float precisions."""
    out, seen = [], set()
    for p, m, k in itertools.product(precisions, mappings, masks):
        opts = EvalOptions(p, m, k if p.is_float else None, include_biases)
        key = (opts.precision, opts.mapping, opts.masking)
        if key not in seen:
            seen.add(key)
            out.append(opts)
    return out


class Evaluator:
    """Caches the clean layout of one network under one option set."""

    def __init__(self, net: Network, data: LabeledData, opts: EvalOptions):
        self.net, self.data, self.opts = net, data, opts
        self.quantized = quantize(net.weight_order(opts.include_biases), opts.precision)
        self.blocks = blocks_required(len(self.quantized), opts.precision)
        self._images: dict[SramGeometry, WeightImage] = {}

    def image(self, geometry: SramGeometry) -> WeightImage:
        img = self._images.get(geometry)
        if img is None:
            img = self._images[geometry] = layout(self.quantized, self.opts.mapping, geometry)
        return img

    def clean_accuracy(self) -> float:
        w = self.quantized.values
        return accuracy(self.net.with_weights(w, self.opts.include_biases), self.data)

    def __call__(self, faults: FaultMap) -> float:
        faulty = inject(self.image(faults.geometry), faults)
        w = readback(faulty, self.opts.mask)
        return accuracy(self.net.with_weights(w, self.opts.include_biases), self.data)


def evaluate(net: Network, data: LabeledData, faults: FaultMap, opts: EvalOptions) -> float:
    """Accuracy after quantize, layout, inject, readback and rebuild."""
    return Evaluator(net, data, opts)(faults)


# --- reports ------------------------------------------------------------------------

ROW_KEYS = ("voltage_mv", "model", "precision", "mapping", "masking")
CSV_FIELDS = ROW_KEYS + ("iterations", "mean_accuracy", "stddev", "clean_accuracy")


@dataclass
class EvalRow:
    voltage_mv: int
    model: str
    precision: str
    mapping: str
    masking: str
    accuracies: list[float]
    clean_accuracy: float

    @property
    def iterations(self) -> int:
        return len(self.accuracies)

    @property
    def mean_accuracy(self) -> float:
        return math.fsum(self.accuracies) / len(self.accuracies)

    @property
    def stddev(self) -> float:
        if len(self.accuracies) < 2:
            return 0.0
        return statistics.stdev(self.accuracies)

    @property
    def key(self) -> tuple:
        return tuple(getattr(self, k) for k in ROW_KEYS)

    def grid_key(self) -> tuple:
        return (self.voltage_mv, self.precision, self.mapping, self.masking)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ROW_KEYS}
        d.update(iterations=self.iterations, mean_accuracy=self.mean_accuracy,
                 stddev=self.stddev, clean_accuracy=self.clean_accuracy,
                 accuracies=list(self.accuracies))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRow":
        return cls(int(d["voltage_mv"]), d["model"], d["precision"], d["mapping"], d["masking"],
                   [float(a) for a in d["accuracies"]], float(d["clean_accuracy"]))


@dataclass
class EvalReport:
    rows: list[EvalRow]
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def row(self, voltage_mv: int, model: str, precision: str = None, mapping: str = None,
            masking: str = None) -> EvalRow:
        for r in self.rows:
            if r.voltage_mv == voltage_mv and r.model == model \
                    and precision in (None, r.precision) and mapping in (None, r.mapping) \
                    and masking in (None, r.masking):
                return r
        raise KeyError((voltage_mv, model, precision, mapping, masking))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "meta": self.meta, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([EvalRow.from_dict(r) for r in d["rows"]], int(d.get("seed", 0)), d.get("meta", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([r.voltage_mv, r.model, r.precision, r.mapping, r.masking, r.iterations,
                        fmt(r.mean_accuracy), fmt(r.stddev), fmt(r.clean_accuracy)])
        return buf.getvalue()

    def save(self, directory: str | Path, stem: str = "report") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        jp, cp = directory / f"{stem}.json", directory / f"{stem}.csv"
        jp.write_text(self.to_json() + "\n", encoding="utf-8")
        cp.write_text(self.to_csv(), encoding="utf-8")
        return jp, cp


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- sweep --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    iterations: int = 300
    seed: int = 0
    threads: int = 1
    # size of each generated Mixed/Random map before block subsetting;
    # None means the block count of the measured map behind the profile
    model_blocks: int | None = None
    similarity_threshold: float = 0.80
    max_retries_per_block: int = 1000

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def _source_map(model: str, voltage: int, it_seed: int, dataset, profiles, cfg: SweepConfig):
    if model == REAL:
        return dataset.at(voltage), 0
    profile = profiles[voltage]
    n = cfg.model_blocks or profile.geometry.blocks
    gen = GenerationConfig(n_blocks=n, seed=it_seed, model=model,
                           similarity_threshold=cfg.similarity_threshold,
                           max_retries_per_block=cfg.max_retries_per_block)
    fmap, report = generate(profile, gen, warn=False)
    return fmap, len(report.flagged_blocks)


def _subset(fmap: FaultMap, need: int, it_seed: int) -> FaultMap:
    """``need`` randomly chosen blocks; prefixes of one permutation, so
    narrower precisions see a subset of the blocks wider ones see."""
    if need > fmap.geometry.blocks:
        raise CapacityExceeded(need, fmap.geometry.blocks)
    order = substream(it_seed, 1).permutation(fmap.geometry.blocks)[:need]
    return fmap.select_blocks(order)


def sweep(net: Network, data: LabeledData, grid: list[EvalOptions], *,
          dataset: FaultDataset | None = None,
          profiles: dict[int, FaultProfile] | None = None,
          models=MODELS, voltages=None, cfg: SweepConfig = SweepConfig()) -> EvalReport:
    """Evaluate every (voltage, model, option) point ``cfg.iterations`` times.

    Real iterations draw a random block subset from the measured map of the
    voltage. Mixed and Random iterations generate a fresh map from the
    voltage's profile (with their own derived seed) and subset it the same way.
    Without explicit ``profiles`` they are extracted from ``dataset``.
    """
    models = tuple(models)
    for m in models:
        if m not in MODELS:
            raise ValueError(f"unknown model {m!r}")
    if REAL in models and dataset is None:
        raise ValueError("the real model needs a fault dataset")
    if profiles is None and dataset is not None:
        profiles = {v: extract_profile(dataset.at(v)) for v in dataset.voltages}
    profiles = profiles or {}
    if voltages is None:
        voltages = dataset.voltages if dataset is not None else sorted(profiles, reverse=True)
    voltages = [int(v) for v in voltages]
    for v in voltages:
        if any(m != REAL for m in models) and v not in profiles:
            raise MissingProfile(f"no profile or fault map for {v} mV")
        if REAL in models and v not in dataset.voltages:
            raise MissingProfile(f"no profile or fault map for {v} mV")

    evaluators = [Evaluator(net, data, o) for o in grid]
    clean = [e.clean_accuracy() for e in evaluators]

    def run(task):
        vi, mi, it = task
        v, m = voltages[vi], models[mi]
        it_seed = derive_seed(cfg.seed, v, MODELS.index(m), it)
        fmap, flagged = _source_map(m, v, it_seed, dataset, profiles, cfg)
        subsets: dict[int, FaultMap] = {}
        accs = []
        for e in evaluators:
            if e.blocks not in subsets:
                subsets[e.blocks] = _subset(fmap, e.blocks, it_seed)
            accs.append(e(subsets[e.blocks]))
        return accs, flagged

    tasks = [(vi, mi, it) for vi in range(len(voltages)) for mi in range(len(models))
             for it in range(cfg.iterations)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    rows, flagged_total = [], 0
    pos = 0
    for v in voltages:
        for m in models:
            chunk = results[pos: pos + cfg.iterations]
            pos += cfg.iterations
            flagged_total += sum(f for _, f in chunk)
            for gi, o in enumerate(grid):
                rows.append(EvalRow(v, m, o.precision.label, o.mapping.value, o.masking,
                                    [c[0][gi] for c in chunk], clean[gi]))
    meta = {
        "iterations": cfg.iterations,
        "models": list(models),
        "voltages": voltages,
        "blocks_required": {o.precision.label: e.blocks for o, e in zip(grid, evaluators)},
        "flagged_generated_blocks": flagged_total,
    }
    return EvalReport(rows, cfg.seed, meta)


# --- comparison ---------------------------------------------------------------------

@dataclass
class Comparison:
    reference: str
    series: list[str]
    rows: list[dict]
    ratio: bool

    def mean_gaps(self) -> dict[str, float]:
        return {s: math.fsum(r[f"gap_{s}"] for r in self.rows) / len(self.rows) for s in self.series}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["voltage_mv", "precision", "mapping", "masking", f"acc_{self.reference}"]
        head += [f"acc_{s}" for s in self.series] + [f"gap_{s}" for s in self.series]
        if self.ratio:
            head.append("ratio_random_over_mixed")
        w.writerow(head)
        for r in self.rows:
            w.writerow([r[h] if h in ("voltage_mv", "precision", "mapping", "masking") else fmt(r[h])
                        for h in head])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"reference": self.reference, "series": self.series, "rows": self.rows,
                "mean_gaps": self.mean_gaps()}


def gap_ratio(random_gap: float, mixed_gap: float) -> float:
    """How many times farther the Random model lands from the reference."""
    if mixed_gap == 0:
        return 1.0 if random_gap == 0 else math.inf
    return random_gap / mixed_gap


def compare(reports: list[EvalReport]) -> Comparison:
    """Per grid point accuracy gaps between a reference series and the others.

    Each report is split by model into series. The reference is the ``real``
    series when present, otherwise the first series. A series label that
    repeats gets a ``#2``, ``#3``... suffix.
    """
    series: dict[str, dict[tuple, EvalRow]] = {}
    for report in reports:
        by_model: dict[str, dict[tuple, EvalRow]] = {}
        for r in report.rows:
            by_model.setdefault(r.model, {})[r.grid_key()] = r
        for model, rows in by_model.items():
            label, n = model, 1
            while label in series:
                n += 1
                label = f"{model}#{n}"
            series[label] = rows
    if len(series) < 2:
        raise GridMismatch("comparison needs at least two series")
    reference = REAL if REAL in series else next(iter(series))
    ref = series[reference]
    others = [s for s in series if s != reference]
    for s in others:
        if set(series[s]) != set(ref):
            raise GridMismatch(f"series {s!r} does not cover the same grid as {reference!r}")
    ratio = MIXED in others and RANDOM in others
    rows = []
    for key in sorted(ref, key=lambda k: (-k[0], k[1:])):
        v, p, m, k = key
        row = {"voltage_mv": v, "precision": p, "mapping": m, "masking": k,
               f"acc_{reference}": ref[key].mean_accuracy}
        for s in others:
            acc = series[s][key].mean_accuracy
            row[f"acc_{s}"] = acc
            row[f"gap_{s}"] = abs(acc - ref[key].mean_accuracy)
        if ratio:
            row["ratio_random_over_mixed"] = gap_ratio(row["gap_random"], row["gap_mixed"])
        rows.append(row)
    return Comparison(reference, others, rows, ratio)
