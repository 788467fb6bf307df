import math

import pytest
from hypothesis import given, settings, strategies as st

from sdsim import ClusterConfig, SynthParams, gen_synthetic, parse_swf
from sdsim.errors import ConfigError, ParseError, WorkloadError
from sdsim.workload import format_swf, load_swf, malleability_flags

CL = ClusterConfig(16, 2, 24)


def rec(id, submit, run, procs, req, alloc=-1):
    f = [-1] * 18
    f[0], f[1], f[3], f[4], f[7], f[8] = id, submit, run, alloc, procs, req
    return " ".join(map(str, f))


def test_parse_basic_fields():
    text = "; comment\n" + rec(7, 5, 100, 96, 300) + "\n" + rec(3, 5, 50, 1, -1) + "\n"
    jobs, meta = parse_swf(text, CL)
    assert [j.id for j in jobs] == [3, 7]  # submit ties broken by id
    j3, j7 = jobs
    assert (j7.requested_nodes, j7.requested_time, j7.base_runtime) == (2, 300, 100)
    assert j3.requested_nodes == 1 and j3.requested_time == 50  # missing request falls back to run time
    assert [j.priority for j in jobs] == [0, 1]
    assert meta.job_count == 2 and meta.dropped == 0


def test_procs_round_up_to_whole_nodes():
    jobs, _ = parse_swf(rec(1, 0, 10, 49, 10), CL)
    assert jobs[0].requested_nodes == 2


def test_allocated_procs_used_when_requested_missing():
    jobs, _ = parse_swf(rec(1, 0, 10, -1, 10, alloc=144), CL)
    assert jobs[0].requested_nodes == 3


def test_drops_unusable_records():
    text = "\n".join([rec(1, 0, 10, 48, 10), rec(2, 0, 0, 48, 10), rec(3, 0, 10, -1, 10)])
    jobs, meta = parse_swf(text, CL)
    assert [j.id for j in jobs] == [1]
    assert meta.dropped == 2


def test_bad_field_count_reports_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_swf(rec(1, 0, 10, 48, 10) + "\n1 2 3\n", CL)


def test_non_numeric_field():
    with pytest.raises(ParseError):
        parse_swf(rec(1, 0, 10, 48, 10).replace("48", "x"), CL)


def test_job_larger_than_cluster_rejected():
    with pytest.raises(ParseError, match="requests 17 nodes"):
        parse_swf(rec(1, 0, 10, 48 * 17, 10), CL)


def test_empty_and_duplicates():
    with pytest.raises(WorkloadError):
        parse_swf("; nothing\n", CL)
    with pytest.raises(WorkloadError, match="duplicate"):
        parse_swf(rec(1, 0, 10, 48, 10) + "\n" + rec(1, 5, 10, 48, 10), CL)


def test_malleable_fraction_extremes():
    text = "\n".join(rec(i, i, 10, 48, 10) for i in range(1, 50))
    assert all(j.malleable for j in parse_swf(text, CL, malleable_fraction=1.0)[0])
    assert not any(j.malleable for j in parse_swf(text, CL, malleable_fraction=0.0)[0])
    with pytest.raises(ConfigError):
        malleability_flags(3, 1.5, 0)


def test_malleable_fraction_is_seeded():
    a = malleability_flags(500, 0.3, 4)
    assert a == malleability_flags(500, 0.3, 4)
    assert a != malleability_flags(500, 0.3, 5)
    assert 0.2 < sum(a) / 500 < 0.4


def test_synthetic_respects_ranges():
    p = SynthParams(400, node_range=(2, 8), runtime_range=(100, 200), estimate_inflation_range=(1.5, 2.0))
    jobs, meta = gen_synthetic(p, 3, CL)
    assert len(jobs) == 400 == meta.job_count
    assert jobs[0].submit_time == 0
    for j in jobs:
        assert 2 <= j.requested_nodes <= 8
        assert 100 <= j.base_runtime <= 200
        assert math.ceil(1.5 * j.base_runtime) - 1 <= j.requested_time <= math.ceil(2.0 * j.base_runtime)
    assert [j.submit_time for j in jobs] == sorted(j.submit_time for j in jobs)
    assert {j.requested_nodes for j in jobs} == set(range(2, 9))


def test_synthetic_validation():
    with pytest.raises(ConfigError):
        gen_synthetic(SynthParams(10, node_range=(1, 32)), 0, CL)
    with pytest.raises(ConfigError):
        SynthParams(10, estimate_inflation_range=(0.5, 1.0)).validate()
    with pytest.raises(ConfigError):
        SynthParams(0).validate()


def test_synthetic_seed_repetition():
    p = SynthParams(50, node_range=(1, 16))
    assert gen_synthetic(p, 9, CL) == gen_synthetic(p, 9, CL)
    assert gen_synthetic(p, 9, CL)[0] != gen_synthetic(p, 10, CL)[0]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 10**6), frac=st.sampled_from([0.0, 0.25, 1.0]),
       hi=st.integers(1, 16))
def test_generated_workload_round_trips(n, seed, frac, hi):
    p = SynthParams(n, node_range=(1, hi), runtime_range=(1, 5000), malleable_fraction=frac)
    jobs, _ = gen_synthetic(p, seed, CL)
    back, meta = parse_swf(format_swf(jobs, CL), CL, malleable_fraction=frac, rng_seed=seed)
    assert back == jobs
    assert meta.dropped == 0


def test_load_swf(tmp_path):
    path = tmp_path / "w.swf"
    path.write_text(rec(1, 0, 10, 48, 20) + "\n")
    jobs, _ = load_swf(path, CL)
    assert jobs[0].requested_time == 20
