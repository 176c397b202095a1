import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq
from sklearn.base import clone

from stressgate.fea import Mesh, StiffnessSystem, youngs_modulus
from stressgate.regions import SeedRegion
from stressgate.simp import (
    FREE, FROZEN_SOLID, FROZEN_VOID, RHO_MIN, ContinuationSchedule, OCConvergenceError, SimpOptimizer,
    ThreeField, apply_seed_initialization, compliance_sensitivity, density_filter, heaviside_derivative,
    heaviside_project, oc_update,
)

from conftest import FAST, cantilever_spec, clamped_bc


def _brute_filter(rho, dims, rmin):
    nx, ny = dims
    out = np.empty_like(rho)
    for i in range(nx):
        for j in range(ny):
            num = den = 0.0
            for k in range(nx):
                for m in range(ny):
                    w = max(0.0, rmin - np.hypot(i - k, j - m))
                    num += w * rho[k * ny + m]
                    den += w
            out[i * ny + j] = num / den
    return out


@pytest.mark.parametrize("rmin", [1.0, 1.5, 2.4, 3.1])
def test_filter_matches_brute_force(rmin):
    rng = np.random.default_rng(0)
    dims = (7, 5)
    rho = rng.random(35)
    np.testing.assert_allclose(density_filter(rho, dims, rmin), _brute_filter(rho, dims, rmin), rtol=1e-13)


def test_filter_preserves_constant_field():
    np.testing.assert_allclose(density_filter(np.full(60, 0.3), (5, 4, 3), 2.0), 0.3, rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 64.0), st.floats(0.0, 1.0))
def test_projection_bounds_and_derivative(beta, x):
    y = heaviside_project(x, beta)
    assert -1e-12 <= y <= 1 + 1e-12
    h = 1e-6
    fd = (heaviside_project(x + h, beta) - heaviside_project(x - h, beta)) / (2 * h)
    assert heaviside_derivative(x, beta) == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_projection_endpoints():
    for beta in (1, 8, 32):
        assert heaviside_project(0.0, beta) == pytest.approx(0.0, abs=1e-14)
        assert heaviside_project(1.0, beta) == pytest.approx(1.0, abs=1e-14)
        assert heaviside_project(0.5, beta) == pytest.approx(0.5)


def _compliance(field3, system, x, p):
    return system.solve(youngs_modulus(field3.physical(x), p))[1]


@pytest.mark.parametrize("beta, rmin", [(1.0, 1.5), (4.0, 2.4), (8.0, 1.0)])
def test_chained_sensitivity_matches_central_difference(beta, rmin):
    mesh = Mesh((6, 4))
    system = StiffnessSystem(mesh, clamped_bc(mesh), solver="dense")
    rng = np.random.default_rng(5)
    roles = np.full(24, FREE, dtype=np.int8)
    roles[3] = FROZEN_VOID
    roles[10] = FROZEN_SOLID
    field3 = ThreeField(mesh.dims, rmin, beta, roles)
    x = rng.uniform(0.3, 0.7, 24)
    p = 3.0
    xp = field3.physical(x)
    u, _ = system.solve(youngs_modulus(xp, p))
    grad = field3.chain(x, compliance_sensitivity(xp, system.element_energy(u), p))
    h = 1e-6
    for e in range(24):
        xa, xb = x.copy(), x.copy()
        xa[e] += h
        xb[e] -= h
        fd = (_compliance(field3, system, xa, p) - _compliance(field3, system, xb, p)) / (2 * h)
        assert grad[e] == pytest.approx(fd, rel=1e-4, abs=1e-9 * abs(grad).max())


def test_oc_update_matches_root_found_multiplier():
    rng = np.random.default_rng(1)
    rho = rng.uniform(0.2, 0.8, 50)
    dc = -rng.uniform(0.1, 2.0, 50)
    vf, move = 0.45, 0.2

    def cand(lam):
        return np.clip(rho * np.sqrt(-dc / lam), np.maximum(RHO_MIN, rho - move), np.minimum(1, rho + move))

    lam = brentq(lambda l: cand(l).mean() - vf, 1e-10, 1e10, xtol=1e-16, rtol=1e-15)
    x = oc_update(rho, dc, vf, move)
    np.testing.assert_allclose(x, cand(lam), atol=1e-6)
    assert abs(x.mean() - vf) <= 1e-6
    assert np.all(np.abs(x - rho) <= move + 1e-15)


def test_oc_update_respects_frozen_and_bounds():
    rho = np.array([0.5, 0.5, 1.0, RHO_MIN, 0.5])
    free = np.array([True, True, False, False, True])
    x = oc_update(rho, -np.array([1.0, 2.0, 0.0, 0.0, 3.0]), 0.5, 0.2, free=free)
    assert x[2] == 1.0 and x[3] == RHO_MIN
    assert x[free].mean() == pytest.approx(0.5, abs=1e-6)
    assert np.all((x >= RHO_MIN) & (x <= 1))


def test_oc_update_widens_move_for_unreachable_target():
    rho = np.full(10, 0.2)
    x = oc_update(rho, -np.ones(10), 0.6, 0.1)
    assert x.mean() == pytest.approx(0.6, abs=1e-6)


def test_oc_update_rejects_positive_sensitivity():
    with pytest.raises(ValueError):
        oc_update(np.full(4, 0.5), np.array([-1.0, 1.0, -1.0, -1.0]), 0.5, 0.2)


def test_oc_update_unreachable_raises():
    # only frozen-like bounds: target above 1 cannot be met
    with pytest.raises(OCConvergenceError):
        oc_update(np.full(4, 0.5), -np.ones(4), 1.5, 0.2)


def test_schedule_phases():
    s = ContinuationSchedule(max_iter=120, p_end=4.5, rmin_end=1.2)
    assert s.at(0)[:3] == (1.0, 1.0, 2.4)
    assert s.at(60)[0] == 4.5 and s.at(60)[1] == 2.0
    assert s.at(69)[1] == 2.0 and s.at(70)[1] == 4.0
    assert s.at(119)[1] == 32.0 and s.at(119)[2] == pytest.approx(1.2)
    assert s.at(79)[2] == 2.4
    assert s.at(120) == (4.5, 32.0, 1.2, 0.05)
    assert s.total_iterations == 160
    # main move scaled by 1/sqrt(beta) with a tail_move floor
    assert s.at(0)[3] == pytest.approx(0.2)
    assert s.at(70)[3] == pytest.approx(0.1)
    assert s.at(119)[3] == pytest.approx(0.05)
    assert ContinuationSchedule(scale_move=False).at(119)[3] == 0.2


def test_schedule_monotone():
    s = ContinuationSchedule()
    vals = np.array([s.at(k) for k in range(s.total_iterations)])
    assert np.all(np.diff(vals[:, 0]) >= 0)
    assert np.all(np.diff(vals[:, 1]) >= 0)
    assert np.all(np.diff(vals[:, 2]) <= 1e-15)


def test_schedule_for_3d_spec():
    spec = cantilever_spec().copy(dims=(8, 4, 2), fixed=[{"select": {"x": 0}, "dofs": "xyz"}],
                                  loads=[{"select": {"x": 8, "y": 2}, "force": [0, -1, 0]}])
    assert ContinuationSchedule.for_spec(spec).max_iter == 80


def test_seed_initialization_precedence():
    spec = cantilever_spec(vf=0.4, regions=[
        SeedRegion.circle((6, 6), 3, "seed", 0.9),
        SeedRegion.circle((6, 6), 2.0, "solid"),
        SeedRegion.rectangle((6, 6), (0.6, 0.6), "void"),
    ])
    init = apply_seed_initialization(spec)
    c = spec.mesh.centroids
    at = lambda x, y: int(np.flatnonzero((c[:, 0] == x) & (c[:, 1] == y))[0])
    assert init.rho[at(5.5, 5.5)] == RHO_MIN and init.roles[at(5.5, 5.5)] == FROZEN_VOID
    assert init.rho[at(6.5, 4.5)] == 1.0 and init.roles[at(6.5, 4.5)] == FROZEN_SOLID
    assert init.rho[at(8.5, 5.5)] == 0.9 and init.roles[at(8.5, 5.5)] == FREE
    assert init.rho[at(20.5, 1.5)] == 0.4


def test_optimizer_volume_and_frozen_roles():
    spec = cantilever_spec(regions=[SeedRegion.circle((12, 3), 1.5, "solid"),
                                    SeedRegion.circle((4, 9), 1.5, "void")])
    opt = SimpOptimizer(**FAST).fit(spec)
    free = opt.roles_ == FREE
    assert opt.n_iter_ == 40 and opt.n_max_ == 30
    assert max(opt.volume_errors_) <= 1e-6
    assert abs(opt.density_[free].mean() - spec.vf) <= 1e-6
    assert np.all(opt.density_[opt.roles_ == FROZEN_SOLID] == 1.0)
    assert np.all(opt.density_[opt.roles_ == FROZEN_VOID] == RHO_MIN)
    assert np.isfinite(opt.compliance_) and opt.compliance_ > 0
    assert opt.compliance_history_[-1] == pytest.approx(opt.compliance_, rel=1e-3)


def test_optimizer_is_deterministic_and_sklearn_compatible():
    spec = cantilever_spec(16, 8)
    a = SimpOptimizer(**FAST)
    b = clone(a)
    assert b.get_params() == a.get_params()
    np.testing.assert_array_equal(a.transform(spec), b.fit(spec).density_)
    assert b.set_params(move=0.1).move == 0.1


def test_optimizer_full_schedule_reduces_compliance():
    spec = cantilever_spec(30, 15, vf=0.5)
    opt = SimpOptimizer().fit(spec)
    # a clean cantilever: near-binary and far stiffer than the first (gray) iterate
    assert opt.n_iter_ == 160
    assert opt.compliance_ < opt.compliance_history_[0]
    gray = np.mean(4 * opt.density_ * (1 - opt.density_))
    assert gray < 0.1
