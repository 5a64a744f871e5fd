import json
import math
from pathlib import Path

import numpy as np
import pytest

from magnusctl import cli, fields, system
from magnusctl import experiments as ex
from magnusctl import propagators as P
from magnusctl.config import load_config

CONSTS = system.PhysicalConstants()
T_BENCH = 1.306e-9 / CONSTS.time_unit
A0_BENCH = 5e6 / CONSTS.field_unit


def test_zero_coupling_overlaps_are_one():
    n = 200
    fs = ex.random_fields(3, 3, n, T_BENCH / n, A0_BENCH)
    rows, summary = ex.overlap_benchmark(
        lambda R: system.build_rotor_system(system.RotorGeometry.equilateral(R), 1),
        (5e-9,),
        fs,
        ("zeroth", "magnus1", "magnus2"),
        coupling_scale=0.0,
    )
    assert len(rows) == 9
    assert min(r["overlap"] for r in rows) >= 1 - 1e-9
    assert [s["count"] for s in summary] == [3, 3, 3]


def test_benchmark_rejects_exact():
    with pytest.raises(ex.ConfigError):
        ex.overlap_benchmark(lambda R: None, (5e-9,), [], ("exact",))


def test_two_rotor_ladder_per_field():
    n = 999
    ladder = tuple(r * 1e-9 for r in cli.DEFAULT_LADDER_NM)
    fs = ex.random_fields(0, 5, n, T_BENCH / n, A0_BENCH)
    rows, summary = ex.overlap_benchmark(lambda R: system.build_rotor_system(system.RotorGeometry.two_rotor(R), 4), ladder, fs)
    for m in ("zeroth", "magnus1"):
        for j in range(5):
            seq = [r["overlap"] for r in rows if r["method"] == m and r["field"] == j]
            assert all(b > a for a, b in zip(seq, seq[1:])), (m, j, seq)
    mean = {(s["R"], s["method"]): s["mean"] for s in summary}
    assert all(mean[(R, "magnus1")] >= mean[(R, "zeroth")] for R in ladder)
    std = [s["std"] for s in summary if s["method"] == "zeroth" and s["R"] == ladder[0]][0]
    vals = [r["overlap"] for r in rows if r["method"] == "zeroth" and r["R"] == ladder[0]]
    assert std == pytest.approx(np.std(vals, ddof=1))


class TestSymmetry:
    def test_zero_field(self):
        spec = system.build_rotor_system(system.RotorGeometry.equilateral(5e-9), 2)
        report = ex.symmetry_check(spec, [fields.FieldGrid.zeros(50, 1.0)])
        assert report["passed"] and report["worst"]["residual"] == 0.0

    def test_two_rotor_identical(self):
        spec = system.build_rotor_system(system.RotorGeometry.two_rotor(5e-9), 2)
        n = 300
        report = ex.symmetry_check(spec, ex.random_fields(1, 3, n, T_BENCH / n, A0_BENCH))
        assert report["passed"]

    def test_sin2_vanishes_equilateral(self):
        spec = system.build_rotor_system(system.RotorGeometry.equilateral(5e-9), 2)
        n = 500
        report = ex.symmetry_check(spec, ex.random_fields(0, 5, n, T_BENCH / n, A0_BENCH))
        assert report["max_residual"]["sin2=0"] <= 1e-8
        assert report["passed"]

    def test_rotated_pair_breaks_symmetry(self):
        base = system.RotorGeometry.equilateral(5e-9)
        theta = dict(base.theta)
        theta[(0, 2)] += 0.1
        spec = system.build_rotor_system(system.RotorGeometry(3, base.R, theta), 2)
        n = 500
        report = ex.symmetry_check(spec, ex.random_fields(0, 5, n, T_BENCH / n, A0_BENCH))
        assert not report["passed"]
        assert report["worst"]["residual"] > 1e-4

    def test_no_relations_for_four(self):
        with pytest.raises(ex.ConfigError):
            ex.symmetry_relations(4)


ENTANGLE = """
[system]
geometry = "two-rotor"
R = "5 nm"
M = 1

[grid]
n = 60
T = "0.8 ns"

[field]
a0 = "5e6 V/m"
b = [0.2, 0.3, 0.3, 0.2]

[objective]
kind = "projection-onto-target"
target = "mes"

[optimizer]
j_thresh = "inf"
max_iters = 20
seed = 3
"""


def test_entanglement_run_reports_entropies(tmp_path):
    cfg = tmp_path / "ent.toml"
    cfg.write_text(ENTANGLE)
    assert cli.main(["optimize", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "optimize.json").read_text())
    for key in ("J_magnus", "J_exact", "difference", "entropy_magnus", "entropy_exact"):
        assert key in doc
    assert doc["difference"] == pytest.approx(doc["J_magnus"] - doc["J_exact"], abs=1e-15)
    assert 0 <= doc["entropy_exact"] <= math.log(3) + 1e-12


def test_threshold_below_trial_keeps_trial(tmp_path):
    cfg = tmp_path / "low.toml"
    cfg.write_text(ENTANGLE.replace('j_thresh = "inf"', "j_thresh = -1.0"))
    assert cli.main(["optimize", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "optimize.json").read_text())
    assert doc["terminated_by"] == "threshold" and doc["iterations"] == 0
    trial = load_config(cfg).build_field()
    np.testing.assert_array_equal(fields.read_csv(tmp_path / "best_field.csv").values, trial.values)


def test_state_recomputable_from_field_file(tmp_path):
    cfg = tmp_path / "ent.toml"
    cfg.write_text(ENTANGLE)
    assert cli.main(["propagate", str(cfg), "--method", "magnus1", "--out", str(tmp_path)]) == 0
    rc = load_config(cfg)
    f = fields.read_csv(tmp_path / "field.csv")
    psi = P.propagate_magnus1(rc.build_spec(), f, rc.initial_factors())
    rows = np.loadtxt(tmp_path / "state_magnus1.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 3] + 1j * rows[:, 4], psi)


def test_state_rows_layout():
    spec = system.build_rotor_system(system.RotorGeometry.two_rotor(5e-9), 1)
    psi = np.arange(9) + 0j
    rows = ex.state_rows(spec, psi)
    assert rows[0][:3] == [0, -1, -1]
    assert rows[5][:3] == [5, 0, 1]
    assert ex.unit_norm_defect(psi / np.linalg.norm(psi)) < 1e-15


@pytest.mark.slow
def test_timing_ratio_three_rotor():
    # hardware dependent; the exact path makes n full-space steps against one for magnus1
    cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "timing_three_rotor.toml")
    rows = ex.timing(cfg.build_spec(), cfg.build_field(), ("exact", "magnus1"), repeat=1)
    by = {r["method"]: r for r in rows}
    assert by["exact"]["expm_multiply_calls"] == cfg.n
    assert by["magnus1"]["expm_multiply_calls"] == 1
    assert by["magnus1"]["exact_over_method"] > 10
