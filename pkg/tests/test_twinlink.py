import math

import pytest

from twinkernel.composition import system_run
from twinkernel.core import NS_PER_S
from twinkernel.errors import CalibrationError, ComparisonError, PlantTraceError, ZenoError
from twinkernel.impact import model_source
from twinkernel.modelspec import parse_model, patch_param, validate_document
from twinkernel.twinlink import (
    calibrate_scalar, compare_series, compare_traces, load_plant_trace, parse_plant_csv, plant_from_trace,
)

DOC = parse_model(model_source("impact_conveyor_fsm.twin"), "impact_conveyor_fsm.twin")
X = "cv.belt.x"


def belt(v_speed):
    return validate_document(patch_param(DOC, "v_speed", v_speed)).system("conveyor_fsm_demo")


_plants = {}


def plant_at(v_speed):
    if v_speed not in _plants:
        _plants[v_speed] = plant_from_trace(system_run(belt(v_speed)), [X])
    return _plants[v_speed]


def test_two_row_plant_csv():
    p = parse_plant_csv("t_seconds,v\n0,0\n1,0.03\n")
    assert p.signals == ("v",)
    assert p.records == ((0, "v", 0.0), (NS_PER_S, "v", 0.03))


@pytest.mark.parametrize(
    "text, message",
    [
        ("t_seconds,v\n0,0\n1,1\n0.5,2\n", "p.csv:4: time 0.5 is earlier than the previous row"),
        ("t_seconds,v\n0,zero\n", "p.csv:2: non-numeric value 'zero' for v"),
        ("t_seconds,v\nnow,1\n", "p.csv:2: non-numeric time 'now'"),
        ("t_seconds,v\n0,1,2\n", "p.csv:2: expected 2 cells, found 3"),
        ("time,v\n0,1\n", "p.csv:1: header must start with t_seconds"),
        ("t_seconds,v\n0,nan\n", "p.csv:2: non-finite value 'nan' for v"),
        ("", "p.csv: empty file"),
    ],
)
def test_plant_csv_errors_name_the_line(text, message):
    with pytest.raises(PlantTraceError, match="^" + message.replace("(", r"\(").replace(")", r"\)") + "$"):
        parse_plant_csv(text, "p.csv")


def test_plant_file_round_trip(tmp_path):
    trace = system_run(validate_document(parse_model(model_source("impact_conveyor.twin"))).system("conveyor_demo"))
    path = tmp_path / "log.csv"
    path.write_text(trace.to_csv([X]))
    plant = load_plant_trace(path)
    assert len(plant) == 301
    assert plant.series(X) == trace.series(X)


def test_identical_traces_do_not_diverge():
    trace = system_run(belt(0.03))
    report = compare_traces(trace, plant_at(0.03), [X])
    d = report[X]
    assert (d.rmse, d.max_abs, d.first_divergence) == (0.0, 0.0, None)
    assert d.samples == 101


def test_speed_mismatch_against_closed_form():
    # the belt follows the commanded speed one 10 ms step late: dx(t) = 0.005 (t - 0.01)
    report = compare_traces(system_run(belt(0.03)), plant_at(0.035), [X], tol=1e-3)
    d = report[X]
    grid = [k / 10 for k in range(101)]
    expect = [0.005 * max(0.0, t - 0.01) for t in grid]
    assert d.max_abs == pytest.approx(0.04995, abs=1e-9)
    assert d.max_abs_t == 10 * NS_PER_S
    assert d.rmse == pytest.approx(math.sqrt(sum(e * e for e in expect) / len(grid)), abs=1e-9)
    # first grid point with 0.005 (t - 0.01) > 1e-3 is t = 0.3 s
    assert d.first_divergence == 300_000_000
    assert d.rmse <= d.max_abs


def test_magnitudes_are_symmetric():
    a, b = system_run(belt(0.03)), system_run(belt(0.035))
    ab = compare_series(a.series(X), b.series(X), 1e-3, 5_000_000)
    ba = compare_series(b.series(X), a.series(X), 1e-3, 5_000_000)
    assert (ab.rmse, ab.max_abs, ab.first_divergence) == (ba.rmse, ba.max_abs, ba.first_divergence)


def test_join_respects_max_gap():
    twin = [(0, 0.0), (100, 1.0)]
    d = compare_series(twin, [(40, 0.0), (160, 3.0)], tol=0.5, max_gap=50)
    assert d.samples == 1 and d.max_abs == 0.0
    d = compare_series(twin, [(40, 0.0), (160, 3.0)], tol=0.5, max_gap=60)
    # 40 and 160 are equally near 100; ties go to the earlier plant sample
    assert d.samples == 2 and d.max_abs == 1.0 and d.first_divergence == 100


def test_disjoint_ranges_are_an_error():
    plant = parse_plant_csv(f"t_seconds,{X}\n100,0\n101,0\n")
    with pytest.raises(ComparisonError, match="do not overlap"):
        compare_traces(system_run(belt(0.03)), plant, [X])


def test_no_common_signals():
    plant = parse_plant_csv("t_seconds,other\n0,0\n")
    with pytest.raises(ComparisonError, match="no signals in common"):
        compare_traces(system_run(belt(0.03)), plant)


def test_report_formats():
    report = compare_traces(system_run(belt(0.03)), plant_at(0.035), [X], tol=1e-3)
    assert report.to_json().startswith('{"max_gap_s":0.005,"signals":[{"first_divergence_s":0.3,')
    table = report.to_table().splitlines()
    assert table[0].split() == ["signal", "samples", "RMSE", "max", "abs", "at", "(s)", "diverges", "at", "(s)"]
    assert table[2].split()[:2] == [X, "101"]
    assert table[-1] == "tolerance 0.001"


def _recording(template):
    seen = []

    def wrapped(value):
        seen.append(value)
        return template(value)

    return wrapped, seen


def test_calibration_recovers_the_plant_speed():
    template, seen = _recording(belt)
    r = calibrate_scalar(template, "v_speed", (0.01, 0.1), plant_at(0.035), X, 1e-3, initial=0.03)
    assert abs(r.value - 0.035) <= 1e-3
    assert r.evaluations <= 40 and r.evaluations == len(set(seen))
    assert all(0.01 <= v <= 0.1 for v in seen)
    assert r.bracket_width <= 1e-3 and 0.01 <= r.value <= 0.1
    lo = compare_traces(system_run(belt(0.01)), plant_at(0.035), [X])[X].rmse
    hi = compare_traces(system_run(belt(0.1)), plant_at(0.035), [X])[X].rmse
    assert r.rmse <= min(lo, hi)


def test_calibration_keeps_an_optimal_default():
    r = calibrate_scalar(belt, "v_speed", (0.01, 0.1), plant_at(0.03), X, 1e-3, initial=0.03)
    assert abs(r.value - 0.03) <= 1e-3
    assert r.rmse <= 1e-9


def test_calibration_pins_to_the_nearest_bound():
    template, seen = _recording(belt)
    r = calibrate_scalar(template, "v_speed", (0.05, 0.1), plant_at(0.035), X, 1e-3)
    assert all(0.05 <= v <= 0.1 for v in seen)
    assert r.value == pytest.approx(0.05, abs=1e-3)
    assert r.rmse > 0.01


def test_calibration_reports_the_failing_candidate():
    good = system_run(belt(0.03))

    def run(value):
        if value > 0.5:
            raise ZenoError("too many jumps")
        return good

    with pytest.raises(CalibrationError) as exc:
        calibrate_scalar(lambda v: v, "k", (0.0, 1.0), plant_at(0.03), X, 1e-3, run=run)
    assert exc.value.candidate > 0.5
    assert "k = " in str(exc.value)


def test_calibration_rejects_bad_arguments():
    with pytest.raises(CalibrationError, match="empty search interval"):
        calibrate_scalar(belt, "v_speed", (0.1, 0.1), plant_at(0.03), X)
    with pytest.raises(CalibrationError, match="tolerance must be positive"):
        calibrate_scalar(belt, "v_speed", (0.01, 0.1), plant_at(0.03), X, 0.0)
