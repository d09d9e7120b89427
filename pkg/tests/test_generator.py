import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sramfault.errors import EmptyHistogram, GeometryMismatch, InfeasibleTarget, RetryBudgetExhausted
from sramfault.faultmap import FaultMap, SramGeometry
from sramfault.fixtures import structured_faultmap
from sramfault.generator import (
    EmpiricalDist,
    GenerationConfig,
    _BlockReference,
    gate_view,
    generate,
    generate_mixed,
    generate_random,
    log2_bin,
    make_sampler,
    random_targets,
    similarity,
)
from sramfault.profiler import (
    CoarseProfile,
    ColumnFeatures,
    FaultProfile,
    Histogram,
    RowFeatures,
    extract_block_columns,
    extract_profile,
)
from sramfault.rng import substream


def cf(a, b, c):
    return ColumnFeatures(Histogram(a), Histogram(b), Histogram(c))


def synthetic_profile(p_f, p_s, rows=None, geometry=SramGeometry(blocks=1000)):
    """A profile with hand-set coarse features and fixture-shaped fine features."""
    base = extract_profile(structured_faultmap(200, 3))
    r = base.rows if rows is None else rows
    return FaultProfile(geometry, 540, CoarseProfile(p_f, p_s), r, base.cols, base.block_cols)


# --- samplers -------------------------------------------------------------------------

def test_make_sampler_normalizes():
    d = make_sampler(Histogram([0, 3, 1]))
    full = np.zeros(3)
    full[d.support] = d.probabilities
    assert full.tolist() == [0, 0.75, 0.25]


def test_single_bin_sampler():
    d = make_sampler(Histogram([0, 0, 5]))
    assert set(d.sample(substream(1), 1000).tolist()) == {2}


def test_sampler_law_of_large_numbers():
    d = make_sampler(Histogram([3, 1]))
    draws = d.sample(substream(2024), 10**6)
    freq = np.bincount(draws, minlength=2) / draws.size
    assert abs(freq[0] - 0.75) <= 0.01 and abs(freq[1] - 0.25) <= 0.01


def test_empty_sampler():
    with pytest.raises(EmptyHistogram):
        make_sampler(Histogram([0, 0]))
    with pytest.raises(EmptyHistogram):
        make_sampler(Histogram([4, 0]), minimum=1)


def test_conditioned_sampler():
    d = make_sampler(Histogram([100, 1, 3]), minimum=1)
    assert d.support.tolist() == [1, 2]
    assert d.probabilities.tolist() == [0.25, 0.75]


def test_empirical_dist_validation():
    with pytest.raises(ValueError):
        EmpiricalDist([2, 1], [0.5, 0.5])
    with pytest.raises(ValueError):
        EmpiricalDist([0, 1], [0.5, 0.6])


# --- similarity -----------------------------------------------------------------------

def test_similarity_identity_and_disjoint():
    x = cf([0, 1, 0], [0, 2, 0, 0], [0, 1, 1, 0])
    assert similarity(x, x) == 1.0
    y = cf([1, 0, 0], [0, 0, 0, 3], [0, 0, 0, 1])
    z = cf([0, 0, 1], [3, 0, 0, 0], [0, 1, 0, 0])
    assert similarity(y, z) == 0.0


def test_similarity_half_shared():
    # every component shares exactly half of its mass: TV = 0.5
    a = cf([1, 1, 0], [2, 2, 0, 0], [0, 1, 1, 0])
    b = cf([0, 1, 1], [0, 2, 2, 0], [0, 0, 1, 1])
    assert similarity(a, b) == pytest.approx(0.5, abs=1e-15)


def test_similarity_empty_pairs():
    a = cf([0, 1], [1, 0], [0, 0])
    b = cf([0, 1], [1, 0], [0, 0])
    c = cf([0, 1], [1, 0], [0, 5])
    assert similarity(a, b) == 1.0
    assert similarity(a, c) == pytest.approx(2 / 3)


def test_similarity_geometry_mismatch():
    with pytest.raises(GeometryMismatch):
        similarity(cf([1], [1], [1]), cf([1, 0], [1], [1]))


hist = st.lists(st.integers(0, 5), min_size=4, max_size=4)


@settings(max_examples=200, deadline=None)
@given(hist, hist, hist, hist, hist, hist)
def test_similarity_symmetric_and_bounded(a1, a2, a3, b1, b2, b3):
    a, b = cf(a1, a2, a3), cf(b1, b2, b3)
    s = similarity(a, b)
    assert 0.0 <= s <= 1.0 + 1e-12
    assert s == pytest.approx(similarity(b, a), abs=1e-12)


def test_log2_bins():
    assert log2_bin([0, 1, 2, 3, 4, 7, 8, 1023]).tolist() == [0, 1, 2, 2, 3, 3, 4, 10]


@st.composite
def block_sets(draw):
    g = SramGeometry(rows=draw(st.integers(2, 24)), cols=draw(st.integers(1, 8)))
    def block():
        cells = draw(st.lists(st.integers(0, g.bits_per_block - 1), min_size=1, max_size=20))
        return extract_block_columns(FaultMap.from_flat(g, cells))[0]
    return g, [block() for _ in range(draw(st.integers(1, 5)))], block()


@settings(max_examples=150, deadline=None)
@given(block_sets())
def test_block_reference_matches_pure_similarity(case):
    g, refs, cand = case
    ref = _BlockReference(tuple(refs), g)
    oracle = max(similarity(gate_view(cand.features(g)), gate_view(r.features(g))) for r in refs)
    assert ref.score(cand) == pytest.approx(oracle, abs=1e-12)


# --- Random model ---------------------------------------------------------------------

def test_random_block_count_example():
    fmap = generate_random(synthetic_profile(0.0007, 0.102), GenerationConfig(1000, seed=4, model="random"))
    p = extract_profile(fmap)
    assert p.coarse.faulty_blocks == 102
    assert p.coarse.faults == round(1000 * 16384 * 0.0007)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.01), st.floats(0.0, 1.0), st.integers(1, 300), st.integers(0, 2**63))
def test_random_counts_are_exact(p_f, p_s, n, seed):
    assume(p_s > 0 or p_f == 0)
    prof = synthetic_profile(p_f, p_s)
    blocks, faults = random_targets(prof, n)
    cfg = GenerationConfig(n, seed=seed, model="random")
    if faults and (faults < blocks or blocks == 0 or faults > blocks * 16384):
        with pytest.raises(InfeasibleTarget):
            generate_random(prof, cfg)
        return
    m = generate_random(prof, cfg)
    c = extract_profile(m).coarse
    assert c.faults == faults
    assert c.faulty_blocks == (blocks if faults else 0)


def test_random_zero_rate_and_determinism():
    empty = generate_random(synthetic_profile(0.0, 0.0), GenerationConfig(50, seed=1, model="random"))
    assert empty.fault_count == 0
    prof = synthetic_profile(0.001, 0.3)
    a = generate_random(prof, GenerationConfig(500, seed=9, model="random"))
    b = generate_random(prof, GenerationConfig(500, seed=9, model="random"))
    c = generate_random(prof, GenerationConfig(500, seed=10, model="random"))
    assert a == b and a != c


def test_random_infeasible():
    with pytest.raises(InfeasibleTarget):
        generate_random(synthetic_profile(0.9, 0.1), GenerationConfig(10, model="random"))


# --- Mixed model ----------------------------------------------------------------------

def test_mixed_fault_budget_example():
    prof = synthetic_profile(0.0007, 0.102)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RetryBudgetExhausted)
        fmap, rep = generate_mixed(prof, GenerationConfig(1000, seed=2))
    assert rep.target_faults == 11468
    assert rep.target_faulty_blocks == 102
    assert rep.placed_faults <= rep.target_faults
    assert rep.accepted_blocks <= 102
    assert fmap.fault_count == rep.placed_faults
    assert set(fmap.faulty_blocks().tolist()) <= set(rep.blocks)


def test_mixed_degenerate_row_histogram():
    base = extract_profile(structured_faultmap(100, 1))
    zero_rows = RowFeatures(Histogram(np.bincount([0], minlength=1025) * 7),
                            base.rows.bitfaults_per_row, base.rows.row_distances)
    prof = synthetic_profile(0.001, 0.2, rows=zero_rows)
    fmap, rep = generate_mixed(prof, GenerationConfig(100, seed=1))
    assert fmap.fault_count == 0 and rep.placed_faults == 0


def test_mixed_empty_histograms_raise():
    z = Histogram.zeros
    prof = synthetic_profile(0.001, 0.2, rows=RowFeatures(z(1025), z(17), z(16)))
    with pytest.raises(EmptyHistogram):
        generate_mixed(prof, GenerationConfig(100))


def test_mixed_fault_free_profile_gives_empty_map():
    prof = extract_profile(FaultMap.empty(SramGeometry(blocks=50), 600))
    fmap, rep = generate(prof, GenerationConfig(50))
    assert fmap.fault_count == 0 and rep.target_faults == 0


def test_mixed_deterministic_across_threads(structured_profile):
    cfg = dict(n_blocks=600, seed=77)
    a, ra = generate_mixed(structured_profile, GenerationConfig(**cfg, threads=1))
    b, rb = generate_mixed(structured_profile, GenerationConfig(**cfg, threads=8))
    assert a == b and ra.to_dict() == rb.to_dict()


def test_mixed_report_invariants(structured_map, structured_profile):
    fmap, rep = generate_mixed(structured_profile, GenerationConfig(2000, seed=5))
    assert rep.accepted_blocks <= rep.target_faulty_blocks
    assert rep.placed_faults == fmap.fault_count <= rep.target_faults
    assert len(rep.blocks) == len(set(rep.blocks)) == rep.accepted_blocks
    for block, sim in zip(rep.blocks, rep.best_similarity_per_block):
        assert (sim >= 0.8) or (block in rep.flagged_blocks)
    # generated rows respect the measured row-distance support
    measured = set(np.flatnonzero(structured_profile.rows.row_distances.counts).tolist())
    produced = set(np.flatnonzero(extract_profile(fmap).rows.row_distances.counts).tolist())
    assert produced <= measured


def test_mixed_retry_cap_flags_blocks(structured_profile):
    with pytest.warns(RetryBudgetExhausted):
        _, rep = generate_mixed(structured_profile,
                                GenerationConfig(300, seed=1, similarity_threshold=1.0,
                                                 max_retries_per_block=2))
    assert rep.flagged_blocks
    assert rep.total_retries <= 2 * rep.accepted_blocks


def test_retries_grow_with_threshold(structured_profile):
    totals = []
    for th in (0.0, 0.8, 0.95):
        _, rep = generate_mixed(structured_profile, GenerationConfig(1000, seed=3, similarity_threshold=th))
        totals.append(rep.total_retries)
    assert totals[0] == 0
    assert totals[0] <= totals[1] < totals[2]


def test_aggregate_reference_runs(structured_profile):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RetryBudgetExhausted)
        fmap, rep = generate_mixed(structured_profile,
                                   GenerationConfig(200, seed=1, reference="aggregate",
                                                    max_retries_per_block=5))
    assert rep.accepted_blocks == rep.target_faulty_blocks or rep.placed_faults == rep.target_faults


def test_config_validation():
    with pytest.raises(ValueError):
        GenerationConfig(0)
    with pytest.raises(ValueError):
        GenerationConfig(10, similarity_threshold=1.5)
    with pytest.raises(ValueError):
        GenerationConfig(10, model="uniform")
