from sramfault.fixtures import CLUSTERED, FAMILY_VOLTAGES, SPARSE, structured_faultmap, voltage_family
from sramfault.profiler import extract_profile


def test_family_fault_rate_rises_as_voltage_drops():
    fam = voltage_family(300, 1, CLUSTERED)
    assert sorted(fam.voltages) == sorted(FAMILY_VOLTAGES)
    counts = [fam.at(v).fault_count for v in sorted(fam.voltages, reverse=True)]
    assert counts[0] == 0
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_family_maps_are_nested():
    fam = voltage_family(200, 2, SPARSE, voltages=(570, 540))
    assert set(fam.at(570).flat.tolist()) <= set(fam.at(540).flat.tolist())


def test_structured_map_is_seeded():
    assert structured_faultmap(100, 4) == structured_faultmap(100, 4)
    assert structured_faultmap(100, 4) != structured_faultmap(100, 5)


def test_faulty_block_fraction_is_exact():
    for spec in (SPARSE, CLUSTERED):
        prof = extract_profile(structured_faultmap(400, 3, spec))
        assert prof.coarse.faulty_blocks == round(400 * spec.p_s)
