import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sramfault.errors import CoordinateOutOfRange, DuplicateFault, GeometryMismatch, MalformedHeader, MalformedRecord
from sramfault.faultmap import (
    CellAddress,
    FaultDataset,
    FaultMap,
    SramGeometry,
    fault_rate,
    load_dataset,
    parse_faultmap,
    save_dataset,
    serialize_faultmap,
)

HEADER = "# blocks=2 rows=1024 cols=16 voltage=540\nblock,row,col\n"


@st.composite
def fault_maps(draw):
    g = SramGeometry(rows=draw(st.integers(1, 40)), cols=draw(st.integers(1, 20)),
                     blocks=draw(st.integers(1, 5)))
    cells = draw(st.lists(st.integers(0, g.total_cells - 1), max_size=60))
    voltage = draw(st.integers(0, 1000))
    return FaultMap.from_flat(g, cells, voltage)


def test_geometry_defaults():
    g = SramGeometry()
    assert (g.rows, g.cols, g.blocks) == (1024, 16, 1)
    assert g.bits_per_block == 16384
    with pytest.raises(ValueError):
        SramGeometry(blocks=0)


def test_parse_two_faults():
    m = parse_faultmap(HEADER + "0,5,3\n1,0,0\n")
    assert m.fault_count == 2
    assert m.faults == {CellAddress(0, 5, 3), CellAddress(1, 0, 0)}
    assert m.voltage_mv == 540 and m.geometry.blocks == 2


def test_parse_empty_body():
    m = parse_faultmap(HEADER)
    assert m.fault_count == 0


def test_out_of_range_names_line():
    with pytest.raises(CoordinateOutOfRange) as exc:
        parse_faultmap(HEADER + "0,1,1\n0,1024,3\n")
    assert exc.value.line == 4


@pytest.mark.parametrize("text", [
    "blocks=2 rows=1024 cols=16 voltage=540\nblock,row,col\n",
    "# blocks=2 rows=1024 cols=16\nblock,row,col\n",
    "# blocks=0 rows=1024 cols=16 voltage=540\nblock,row,col\n",
    "# blocks=2 rows=1024 cols=16 voltage=540\nrow,col\n",
    "",
])
def test_bad_header(text):
    with pytest.raises(MalformedHeader):
        parse_faultmap(text)


@pytest.mark.parametrize("record", ["0,1", "a,1,2", "0,1,2,3", "-1,2,3", "0, 1,2"])
def test_bad_record(record):
    with pytest.raises(MalformedRecord) as exc:
        parse_faultmap(HEADER + record + "\n")
    assert exc.value.line == 3


def test_duplicates_are_merged_with_warning():
    with pytest.warns(DuplicateFault):
        m = parse_faultmap(HEADER + "0,5,3\n0,5,3\n1,0,0\n")
    assert m.fault_count == 2


def test_serialize_orders_records():
    g = SramGeometry(blocks=2)
    m = FaultMap.from_addresses(g, [(1, 0, 0), (0, 5, 3)], 540)
    body = serialize_faultmap(m).splitlines()[2:]
    assert body == ["0,5,3", "1,0,0"]


def test_serialize_empty():
    m = FaultMap.empty(SramGeometry(blocks=3), 600)
    assert serialize_faultmap(m) == "# blocks=3 rows=1024 cols=16 voltage=600\nblock,row,col\n"


@settings(max_examples=150, deadline=None)
@given(fault_maps())
def test_round_trip(m):
    assert parse_faultmap(serialize_faultmap(m)) == m


@settings(max_examples=60, deadline=None)
@given(fault_maps(), st.randoms(use_true_random=False))
def test_fault_rate_ignores_record_order(m, rnd):
    lines = serialize_faultmap(m).splitlines()
    body = lines[2:]
    rnd.shuffle(body)
    shuffled = parse_faultmap("\n".join(lines[:2] + body) + "\n")
    assert shuffled == m
    assert fault_rate(shuffled) == fault_rate(m)


def test_fault_rate_examples():
    g = SramGeometry(rows=8, cols=8, blocks=1)
    assert fault_rate(FaultMap.empty(g)) == 0.0
    assert fault_rate(FaultMap.from_flat(g, range(18))) == 0.28125
    assert fault_rate(FaultMap.from_flat(g, range(64))) == 1.0


def test_out_of_geometry_construction():
    with pytest.raises(GeometryMismatch):
        FaultMap.from_coords(SramGeometry(), [1], [0], [0])


def test_select_blocks_renumbers():
    g = SramGeometry(rows=4, cols=4, blocks=3)
    m = FaultMap.from_addresses(g, [(0, 1, 1), (2, 3, 0), (1, 0, 0)])
    sub = m.select_blocks([2, 0])
    assert sub.geometry.blocks == 2
    assert sub.faults == {CellAddress(0, 3, 0), CellAddress(1, 1, 1)}


def test_dataset_ordering_and_io(tmp_path):
    g = SramGeometry(blocks=2)
    maps = [FaultMap.from_addresses(g, [(0, i, 0) for i in range(k)], v)
            for v, k in ((560, 3), (600, 0), (580, 1))]
    ds = FaultDataset.from_maps(maps)
    assert ds.voltages == [600, 580, 560]
    save_dataset(ds, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "faults_560mV.csv", "faults_580mV.csv", "faults_600mV.csv"]
    again = load_dataset(tmp_path)
    assert [m.fault_count for m in again] == [0, 1, 3]


def test_dataset_rejects_bad_order_and_geometry():
    a = FaultMap.empty(SramGeometry(blocks=2), 600)
    with pytest.raises(ValueError):
        FaultDataset((a, FaultMap.empty(SramGeometry(blocks=2), 610)))
    with pytest.raises(GeometryMismatch):
        FaultDataset((a, FaultMap.empty(SramGeometry(blocks=3), 590)))


def test_dataset_does_not_require_monotone_fault_counts():
    g = SramGeometry(blocks=1)
    ds = FaultDataset.from_maps([FaultMap.from_flat(g, [1, 2], 600), FaultMap.from_flat(g, [1], 590)])
    assert [m.fault_count for m in ds] == [2, 1]
