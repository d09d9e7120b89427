"""Weight quantization, bit-exact layout onto SRAM blocks, and bit flips.

Bits of a weight are indexed by significance (bit 0 is the LSB). A layout
records, for every weight and every bit, the flat cell that stores it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityExceeded, GeometryMismatch, MaskRequired, NonFiniteInput
from .faultmap import FaultMap, SramGeometry


class Kind(enum.Enum):
    FP32 = ("fp32", 32)
    FP16 = ("fp16", 16)
    Q4_4 = ("q4.4", 8)
    Q2_2 = ("q2.2", 4)
    BINARY = ("binary", 1)

    def __init__(self, label: str, width: int):
        self.label = label
        self.width = width


BINARY_SETS = {(-1, 1), (-1, 0), (0, 1)}


@dataclass(frozen=True)
class Precision:
    kind: Kind
    binary_values: tuple[int, int] = (-1, 1)

    def __post_init__(self):
        if tuple(self.binary_values) not in BINARY_SETS:
            raise ValueError(f"binary value set must be one of {sorted(BINARY_SETS)}")
        object.__setattr__(self, "binary_values", tuple(self.binary_values))

    @property
    def width(self) -> int:
        return self.kind.width

    @property
    def is_float(self) -> bool:
        return self.kind in (Kind.FP32, Kind.FP16)

    @property
    def label(self) -> str:
        if self.kind is Kind.BINARY and self.binary_values != (-1, 1):
            lo, hi = self.binary_values
            return f"binary:{lo},{hi}"
        return self.kind.label

    @classmethod
    def parse(cls, text: str) -> "Precision":
        """``fp32``, ``fp16``, ``q4.4``, ``q2.2``, ``binary`` or ``binary:-1,0``."""
        name, _, values = text.strip().lower().partition(":")
        for kind in Kind:
            if kind.label == name:
                if values:
                    if kind is not Kind.BINARY:
                        raise ValueError(f"only binary takes a value set: {text!r}")
                    lo, hi = (int(v) for v in values.split(","))
                    return cls(kind, (lo, hi))
                return cls(kind)
        raise ValueError(f"unknown precision {text!r}")

    def __str__(self) -> str:
        return self.label


FP32 = Precision(Kind.FP32)
FP16 = Precision(Kind.FP16)
Q4_4 = Precision(Kind.Q4_4)
Q2_2 = Precision(Kind.Q2_2)
BINARY = Precision(Kind.BINARY)
ALL_PRECISIONS = (FP32, FP16, Q4_4, Q2_2, BINARY)

# (integer bits incl. sign, fractional bits)
_Q_FORMATS = {Kind.Q4_4: (4, 4), Kind.Q2_2: (2, 2)}


class BitMapping(enum.Enum):
    MSB = "msb"
    LSB = "lsb"
    MSB_LSB = "msb-lsb"
    LSB_MSB = "lsb-msb"

    @classmethod
    def parse(cls, text: str) -> "BitMapping":
        key = text.strip().lower().replace("_", "-").replace("|", "-")
        return cls(key)

    def bit_order(self, width: int) -> np.ndarray:
        """Significance of the bit stored at each consecutive cell of a weight."""
        msb_first = np.arange(width - 1, -1, -1)
        if self is BitMapping.MSB:
            return msb_first
        if self is BitMapping.LSB:
            return msb_first[::-1].copy()
        # the first half of the cells follows the named end, the rest the other
        half = width // 2
        upper, lower = msb_first[: width - half], msb_first[width - half:]
        if self is BitMapping.MSB_LSB:
            return np.concatenate([upper, lower[::-1]])
        return np.concatenate([lower[::-1], upper])


class MaskPolicy(enum.Enum):
    TO_ZERO = "zero"
    TO_ONE = "one"

    @classmethod
    def parse(cls, text: str) -> "MaskPolicy":
        return cls(text.strip().lower())

    @property
    def value_float(self) -> float:
        return 0.0 if self is MaskPolicy.TO_ZERO else 1.0


# --- quantization -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuantizedWeights:
    precision: Precision
    values: np.ndarray    # float32, exactly representable decoded values
    raw_bits: np.ndarray  # uint32 bit patterns, ``precision.width`` bits used

    def __len__(self):
        return int(self.values.size)


def _fixed_raw(x: np.ndarray, kind: Kind) -> np.ndarray:
    ibits, fbits = _Q_FORMATS[kind]
    width = ibits + fbits
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    q = np.clip(np.rint(x * (1 << fbits)), lo, hi).astype(np.int64)
    return (q & ((1 << width) - 1)).astype(np.uint32)


def decode(raw: np.ndarray, precision: Precision) -> np.ndarray:
    """Bit patterns to float32 values (no masking)."""
    raw = np.asarray(raw, dtype=np.uint32)
    kind = precision.kind
    if kind is Kind.FP32:
        return raw.view(np.float32).copy()
    if kind is Kind.FP16:
        return raw.astype(np.uint16).view(np.float16).astype(np.float32)
    if kind is Kind.BINARY:
        lo, hi = precision.binary_values
        return np.where(raw & 1, hi, lo).astype(np.float32)
    ibits, fbits = _Q_FORMATS[kind]
    width = ibits + fbits
    signed = raw.astype(np.int64)
    signed = np.where(signed >= 1 << (width - 1), signed - (1 << width), signed)
    return (signed / (1 << fbits)).astype(np.float32)


def quantize(weights, precision: Precision) -> QuantizedWeights:
    x = np.asarray(weights, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("weights must be finite")
    kind = precision.kind
    if kind in (Kind.FP32, Kind.FP16):
        # numpy rounds double -> float32/half to nearest even; values that
        # would round to infinity saturate at the largest finite value
        dtype = np.float32 if kind is Kind.FP32 else np.float16
        with np.errstate(over="ignore"):
            f = x.astype(dtype)
        f = np.where(np.isinf(f), np.copysign(np.finfo(dtype).max, x), f).astype(dtype)
        raw = f.view(np.uint32 if kind is Kind.FP32 else np.uint16).astype(np.uint32)
    elif kind is Kind.BINARY:
        raw = (x >= 0).astype(np.uint32)
    else:
        raw = _fixed_raw(x, kind)
    raw = raw.astype(np.uint32)
    values = decode(raw, precision)
    values.setflags(write=False)
    raw.setflags(write=False)
    return QuantizedWeights(precision, values, raw)


# --- layout -----------------------------------------------------------------------

def _slots(width: int, geometry: SramGeometry) -> tuple[int, int]:
    """``(weights per block, rows per weight)`` for a given bit width."""
    cols, rows = geometry.cols, geometry.rows
    if width <= cols:
        return (cols // width) * rows, 1
    if width % cols:
        raise ValueError(f"a {width}-bit weight cannot be split over {cols}-cell rows")
    per = width // cols
    return (rows // per), per


def blocks_required(n_weights: int, precision: Precision,
                    geometry: SramGeometry | None = None) -> int:
    geometry = geometry or SramGeometry()
    per_block, _ = _slots(precision.width, geometry)
    if per_block == 0:
        raise ValueError("a single weight does not fit in one block")
    return max(1, -(-n_weights // per_block))


@dataclass(frozen=True, eq=False)
class WeightImage:
    geometry: SramGeometry
    bits: np.ndarray      # uint8, shape (blocks, rows, cols)
    cells: np.ndarray     # int64, shape (n_weights, width); cells[w, b] stores bit b
    precision: Precision
    mapping: BitMapping

    @property
    def n_weights(self) -> int:
        return int(self.cells.shape[0])

    def cell_addresses(self, weight: int) -> list[tuple[int, int, int]]:
        """Cells of one weight in storage order (first cell first)."""
        g = self.geometry
        order = np.argsort(self.cells[weight])
        out = []
        for flat in self.cells[weight][order].tolist():
            block, rem = divmod(flat, g.rows * g.cols)
            out.append((block, *divmod(rem, g.cols)))
        return out

    def mapped_mask(self) -> np.ndarray:
        mask = np.zeros(self.geometry.total_cells, dtype=bool)
        mask[self.cells.ravel()] = True
        return mask.reshape(self.bits.shape)

    def same_bits(self, other: "WeightImage") -> bool:
        return np.array_equal(self.bits, other.bits)


def _cell_table(n_weights: int, precision: Precision, mapping: BitMapping,
                geometry: SramGeometry) -> np.ndarray:
    width = precision.width
    cols, rows = geometry.cols, geometry.rows
    per_block, rows_per_weight = _slots(width, geometry)
    w = np.arange(n_weights, dtype=np.int64)
    block, slot = np.divmod(w, per_block)
    if rows_per_weight == 1:
        per_row = cols // width
        row, pos_in_row = np.divmod(slot, per_row)
        first = (block * rows + row) * cols + pos_in_row * width
        storage = first[:, None] + np.arange(width)[None, :]
    else:
        row0 = slot * rows_per_weight
        p = np.arange(width)
        storage = ((block[:, None] * rows + row0[:, None] + (p // cols)[None, :]) * cols
                   + (p % cols)[None, :])
    # storage[:, i] is the i-th cell of the weight; it holds bit order[i]
    order = mapping.bit_order(width)
    cells = np.empty_like(storage)
    cells[:, order] = storage
    return cells


def layout(q: QuantizedWeights, mapping: BitMapping,
           geometry: SramGeometry | None = None) -> WeightImage:
    """Place quantized weights onto ``geometry``.

    Weights fill block 0 row 0 from its first cell, then the following rows
    and blocks. Narrow weights never straddle rows; 32-bit weights use two
    consecutive rows of one block.
    """
    geometry = geometry or SramGeometry(blocks=blocks_required(len(q), q.precision))
    need = blocks_required(len(q), q.precision, geometry)
    if len(q) and need > geometry.blocks:
        raise CapacityExceeded(need, geometry.blocks)
    cells = _cell_table(len(q), q.precision, mapping, geometry)
    width = q.precision.width
    bits = np.zeros(geometry.total_cells, dtype=np.uint8)
    if len(q):
        shifts = np.arange(width, dtype=np.uint32)
        bits[cells] = ((q.raw_bits[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    bits = bits.reshape(geometry.blocks, geometry.rows, geometry.cols)
    bits.setflags(write=False)
    cells.setflags(write=False)
    return WeightImage(geometry, bits, cells, q.precision, mapping)


def inject(img: WeightImage, faults: FaultMap) -> WeightImage:
    """Flip every bit stored in a faulty cell."""
    if faults.geometry != img.geometry:
        raise GeometryMismatch(f"fault map {faults.geometry} vs image {img.geometry}")
    bits = img.bits.reshape(-1).copy()
    bits[faults.flat] ^= 1
    bits = bits.reshape(img.bits.shape)
    bits.setflags(write=False)
    return WeightImage(img.geometry, bits, img.cells, img.precision, img.mapping)


def read_raw(img: WeightImage) -> np.ndarray:
    width = img.precision.width
    flat = img.bits.reshape(-1)
    gathered = flat[img.cells].astype(np.uint32)
    return (gathered << np.arange(width, dtype=np.uint32)[None, :]).sum(axis=1, dtype=np.uint64).astype(np.uint32)


def readback(img: WeightImage, mask: MaskPolicy | None = None) -> np.ndarray:
    """Decode every weight; non-finite float weights become the mask value."""
    values = decode(read_raw(img), img.precision)
    if img.precision.is_float:
        bad = ~np.isfinite(values)
        if bad.any():
            if mask is None:
                raise MaskRequired(f"{int(bad.sum())} non-finite weight(s) and no mask policy")
            values[bad] = mask.value_float
    return values


def changed_bits(clean: WeightImage, faulty: WeightImage) -> int:
    """Number of weight bits that differ between two images of one layout."""
    a = clean.bits.reshape(-1)[clean.cells]
    b = faulty.bits.reshape(-1)[faulty.cells]
    return int(np.count_nonzero(a != b))


# --- weight tensor files -----------------------------------------------------------

def save_tensor(directory: str | Path, name: str, array, precision: str = "fp32") -> dict:
    """Write ``<name>.bin`` (little-endian float32) and return its manifest."""
    directory = Path(directory)
    arr = np.asarray(array, dtype="<f4")
    blob = f"{name}.bin"
    (directory / blob).write_bytes(arr.tobytes(order="C"))
    manifest = {"name": name, "shape": list(arr.shape), "precision": precision, "blob": blob}
    (directory / f"{name}.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest


def load_tensor(directory: str | Path, manifest: dict | str) -> np.ndarray:
    directory = Path(directory)
    if isinstance(manifest, str):
        manifest = json.loads((directory / manifest).read_text(encoding="utf-8"))
    data = np.frombuffer((directory / manifest["blob"]).read_bytes(), dtype="<f4")
    shape = tuple(manifest["shape"])
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"{manifest['blob']}: {data.size} values for shape {shape}")
    return data.reshape(shape).astype(np.float32)
