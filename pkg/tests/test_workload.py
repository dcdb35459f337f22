import numpy as np
import pytest

from throttlesim.config import TRACE_PRESETS
from throttlesim.workload import (TRACE_KINDS, ArrivalGenerator, Trace, TraceError, TracePoint,
                                  arrivals_for_period, fluctuate, gen_trace, load_trace, save_trace,
                                  validate_composition)


@pytest.mark.parametrize("kind", TRACE_KINDS)
@pytest.mark.parametrize("app", sorted(TRACE_PRESETS))
def test_generated_traces_respect_range(kind, app):
    lo, avg, hi = TRACE_PRESETS[app][kind]
    tr = gen_trace(kind, 3600, lo, avg, hi, seed=3)
    got_lo, got_avg, got_hi = tr.stats()
    assert len(tr) == 3600
    assert got_lo >= lo - 1e-9 and got_hi <= hi + 1e-9
    assert abs(got_avg - avg) <= 0.05 * avg


def test_constant_social_network_example():
    tr = gen_trace("constant", 3600, 390, 500, 588, seed=0)
    lo, avg, hi = tr.stats()
    assert 390 <= lo and hi <= 588 and abs(avg - 500) <= 25


def test_diurnal_shape_hits_extremes():
    tr = gen_trace("diurnal", 3600, 227, 394, 656)
    lo, _, hi = tr.stats()
    assert hi == pytest.approx(656)
    assert lo == pytest.approx(227, abs=1.0)
    peak = int(np.argmax(tr.rps))
    assert 1200 < peak < 2400


def test_degenerate_traces():
    assert len(gen_trace("diurnal", 0, 1, 2, 3)) == 0
    flat = gen_trace("diurnal", 100, 50, 50, 50)
    assert set(flat.rps) == {50.0}
    with pytest.raises(TraceError):
        gen_trace("diurnal", 10, 5, 3, 9)
    with pytest.raises(TraceError):
        gen_trace("sawtooth", 10, 1, 2, 3)


def test_gen_trace_is_seeded():
    a = gen_trace("noisy", 600, 10, 20, 40, seed=7).rps
    b = gen_trace("noisy", 600, 10, 20, 40, seed=7).rps
    c = gen_trace("noisy", 600, 10, 20, 40, seed=8).rps
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_load_trace(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("0,100\n1,110")
    tr = load_trace(p)
    assert len(tr) == 2 and tr.rps_at(0.5) == 100 and tr.rps_at(1.0) == 110


@pytest.mark.parametrize("text,line", [("0,100\n0,110\n", 2), ("0,100\n1,abc\n", 2), ("0,1,2\n", 1),
                                       ("0,-5\n", 1), ("0,1\n\n2,3\n", 2)])
def test_load_trace_errors_carry_line_number(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(TraceError, match=f":{line}:"):
        load_trace(p)


def test_load_trace_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(TraceError):
        load_trace(p)


def test_save_load_roundtrip(tmp_path):
    tr = gen_trace("bursty", 120, 10, 20, 60, seed=1)
    p = tmp_path / "rt.csv"
    save_trace(tr, p)
    back = load_trace(p)
    assert np.allclose(back.rps, tr.rps, rtol=1e-5)
    assert p.read_bytes().endswith(b"\n") and b"\r" not in p.read_bytes()


def test_trace_rejects_bad_points():
    with pytest.raises(TraceError):
        Trace([TracePoint(1, 1), TracePoint(0, 1)])
    with pytest.raises(TraceError):
        Trace([TracePoint(0, -1)])


@pytest.mark.parametrize("base,half,lo,hi", [(300, 150, 150, 450), (300, 300, 1, 600)])
def test_fluctuate_ranges(base, half, lo, hi):
    tr = Trace.from_arrays(range(600), [base] * 600)
    f = fluctuate(tr, half, 60, seed=2)
    assert f.rps.min() >= lo and f.rps.max() <= hi
    assert f.rps.max() - f.rps.min() > 0.8 * (hi - lo)


def test_fluctuate_zero_is_identity():
    tr = gen_trace("diurnal", 300, 10, 20, 30)
    assert np.array_equal(fluctuate(tr, 0, 60).rps, tr.rps)
    with pytest.raises(TraceError):
        fluctuate(tr, -1)


def test_composition_validation():
    validate_composition({"a": 0.5, "b": 0.5})
    for bad in ({}, {"a": 0.5}, {"a": 1.5, "b": -0.5}):
        with pytest.raises(TraceError):
            validate_composition(bad)


def test_poisson_arrival_mean():
    gen = ArrivalGenerator({"A": 1.0}, seed=1)
    counts = [len(gen.arrivals(100.0, k)) for k in range(10_000)]
    mean = np.mean(counts)
    assert abs(mean - 10.0) <= 3 * np.sqrt(10.0 / 10_000)


def test_arrivals_zero_rps_and_single_type():
    gen = ArrivalGenerator({"A": 1.0}, seed=1)
    assert gen.arrivals(0.0, 0) == []
    batch = gen.arrivals(500.0, 3)
    assert batch and all(r.type == "A" and r.arrival_time_ms == 300.0 for r in batch)


def test_arrival_ids_unique_and_mix_respected():
    gen = ArrivalGenerator({"a": 0.65, "b": 0.15, "c": 0.2}, seed=4)
    reqs = [r for k in range(3000) for r in gen.arrivals(100.0, k)]
    assert len({r.id for r in reqs}) == len(reqs)
    frac = np.mean([r.type == "a" for r in reqs])
    assert abs(frac - 0.65) < 0.01


def test_arrivals_for_period_deterministic():
    tr = Trace.from_arrays(range(10), [100.0] * 10)
    a = arrivals_for_period(tr, {"x": 0.5, "y": 0.5}, 4, np.random.default_rng(9))
    b = arrivals_for_period(tr, {"x": 0.5, "y": 0.5}, 4, np.random.default_rng(9))
    assert [(r.id, r.type) for r in a] == [(r.id, r.type) for r in b]
    assert all(r.arrival_time_ms == 400.0 for r in a)
    zero = Trace.from_arrays(range(10), [0.0] * 10)
    assert arrivals_for_period(zero, {"x": 1.0}, 4, np.random.default_rng(9)) == []
