import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stressgate.benchmarks import (
    PROBLEM_IDS, PROBLEM_IDS_2D, PROBLEM_IDS_3D, SIGMA_YIELD_FIXED_VOLUME_REFERENCE, SIGMA_YIELD_REFERENCE,
    CalibrationError, builtin_problem, calibrate_sigma_yield, parse_problem_ids, percentile,
)
from stressgate.evaluator import void_mask
from stressgate.problem import ProblemSpec
from stressgate.simp import SimpOptimizer

# (id, mesh, n_e, v_f) for every built-in problem
SUITE = [
    (1, (80, 20), 1600, 0.18), (2, (80, 20), 1600, 0.25), (3, (80, 40), 3200, 0.25),
    (4, (60, 30), 1800, 0.12), (5, (90, 30), 2700, 0.18), (6, (60, 60), 3600, 0.22),
    (7, (40, 40), 1600, 0.30), (8, (40, 60), 2400, 0.25), (9, (80, 20), 1600, 0.30),
    (10, (60, 40), 2400, 0.22), (11, (90, 30), 2700, 0.30), (12, (60, 30), 1800, 0.35),
    (13, (80, 40), 3200, 0.15), (14, (60, 30), 1800, 0.35), (15, (90, 30), 2700, 0.35),
    (16, (60, 30), 1800, 0.30), (17, (40, 20, 10), 8000, 0.25), (18, (40, 14, 6), 3360, 0.18),
    (19, (30, 10, 6), 1800, 0.18), (20, (20, 20, 5), 2000, 0.25), (21, (24, 12, 6), 1728, 0.12),
    (22, (20, 10, 8), 1600, 0.18),
]


@pytest.mark.parametrize("pid, dims, n_e, vf", SUITE)
def test_suite_rows(pid, dims, n_e, vf):
    spec = builtin_problem(pid)
    assert tuple(spec.dims) == dims and spec.n_elements == n_e and spec.vf == vf
    spec.validate()
    assert spec.id == pid and spec.name
    assert ProblemSpec.from_dict(json.loads(json.dumps(spec.to_dict()))).to_dict() == spec.to_dict()


def test_id_sets():
    assert PROBLEM_IDS_2D + PROBLEM_IDS_3D == PROBLEM_IDS
    with pytest.raises(KeyError):
        builtin_problem(23)


def test_l_bracket_void_excluded_from_volume():
    spec = builtin_problem(7)
    mask = void_mask(spec)
    c = spec.mesh.centroids[mask]
    assert mask.any() and np.all(c[:, 0] > 16) and np.all(c[:, 1] > 16)
    opt = SimpOptimizer(max_iter=10, tail_iterations=0).fit(spec)
    assert opt.density_[~mask].mean() == pytest.approx(spec.vf, abs=1e-6)


def test_percentile_examples():
    maxima = list(range(1, 17))
    assert percentile(maxima, 50) == 8.5
    assert percentile(maxima, 0) == 1
    assert percentile(maxima, 100) == 16
    assert calibrate_sigma_yield(q=50, maxima={i: float(i) for i in maxima}) == 8.5
    with pytest.raises(ValueError):
        percentile(maxima, 101)
    with pytest.raises(ValueError):
        percentile([], 50)


@settings(max_examples=50)
@given(st.lists(st.floats(0.1, 1e3), min_size=1, max_size=20), st.floats(0, 100), st.floats(0, 100))
def test_percentile_monotone(values, q1, q2):
    lo, hi = sorted((q1, q2))
    assert percentile(values, lo) <= percentile(values, hi)


def test_reference_constants():
    assert SIGMA_YIELD_REFERENCE == 120.3
    assert SIGMA_YIELD_FIXED_VOLUME_REFERENCE == 163.457


def test_parse_problem_ids():
    assert parse_problem_ids("1..3,14") == [1, 2, 3, 14]
    assert parse_problem_ids("1..22") == list(PROBLEM_IDS)


def test_calibration_failure_names_problem(monkeypatch):
    import stressgate.benchmarks as bm

    def boom(spec, **kw):
        raise RuntimeError("no")

    monkeypatch.setattr(bm, "reference_max_stress", boom)
    with pytest.raises(CalibrationError) as err:
        bm.calibration_maxima([4])
    assert err.value.problem_id == 4


@pytest.mark.slow
def test_2d_compliance_only_solves_are_finite(designs_2d):
    for pid, d in designs_2d.items():
        assert np.isfinite(d["compliance"]) and d["compliance"] > 0, pid
        assert np.isfinite(d["max_stress"]) and d["max_stress"] > 0, pid
        assert np.all((d["density"] >= 1e-3 - 1e-12) & (d["density"] <= 1))


@pytest.mark.slow
@pytest.mark.parametrize("pid", PROBLEM_IDS_3D)
def test_3d_problems_solve(pid):
    # a short schedule is enough to show the assembled 3D system is well posed
    opt = SimpOptimizer(max_iter=2, tail_iterations=0).fit(builtin_problem(pid))
    assert np.isfinite(opt.compliance_) and opt.compliance_ > 0
