import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

from stressgate.fea import BoundaryConditions, Mesh
from stressgate.problem import ProblemSpec

# short schedules keep loop-level tests fast
FAST = {"max_iter": 30, "tail_iterations": 10}


def cantilever_spec(nx=24, ny=12, vf=0.4, **kw):
    return ProblemSpec(
        dims=(nx, ny), vf=vf,
        fixed=[{"select": {"x": 0}, "dofs": "xy"}],
        loads=[{"select": {"x": nx, "y": ny // 2}, "force": [0, -1]}],
        id=kw.pop("id", 99), name=kw.pop("name", "mini cantilever"), **kw,
    )


def clamped_bc(mesh: Mesh, load=(0.0, -1.0)) -> BoundaryConditions:
    """Left face clamped, point load at the top-right corner node."""
    coords = mesh.node_coords
    left = np.flatnonzero(coords[:, 0] == 0)
    d = mesh.dof_per_node
    fixed = (left[:, None] * d + np.arange(d)).ravel()
    corner = list(mesh.dims)
    node = mesh.node_index(corner)
    loads = [(node * d + c, m) for c, m in enumerate(load) if m != 0]
    return BoundaryConditions(fixed, loads)


@pytest.fixture
def small_spec():
    return cantilever_spec()


@pytest.fixture
def fast_params():
    return dict(FAST)


def make_evaluation(failing=(), checkerboard=0.0, lpe=1.0):
    from stressgate.evaluator import DIAGNOSTIC_NAMES, GATE_NAMES, EvaluationResult, Gate

    gates = {g: Gate(g not in failing, 0.0) for g in GATE_NAMES}
    diag = dict.fromkeys(DIAGNOSTIC_NAMES, 0.0)
    diag.update(checkerboard=checkerboard, load_path_efficiency=lpe)
    return EvaluationResult(gates, diag, 120.3)


def make_context(spec=None, failing=("max_stress",), sigma=None, rho=None, history=(), step=0, **kw):
    from stressgate.controller.strategies import InterpreterContext

    spec = spec or cantilever_spec()
    n = spec.n_elements
    rng = np.random.default_rng(11)
    sigma = rng.random(n) if sigma is None else np.asarray(sigma, float)
    rho = np.ones(n) if rho is None else np.asarray(rho, float)
    return InterpreterContext(spec=spec, densities=rho, stress=sigma, evaluation=make_evaluation(failing),
                              c_current=50.0, c_retained=50.0, history=list(history), step=step,
                              density_png=b"\x89PNG-d", stress_png=b"\x89PNG-s", **kw)


@pytest.fixture(scope="session")
def designs_2d():
    """Compliance-only final designs of the 16 built-in 2D problems, solved once per session.

    Maps problem id -> dict with compliance, density, peak solid von Mises
    stress and the largest per-step volume error.
    """
    from stressgate.benchmarks import PROBLEM_IDS_2D, builtin_problem
    from stressgate.simp import SimpOptimizer
    from stressgate.stress import stress_pass

    out = {}
    for pid in PROBLEM_IDS_2D:
        spec = builtin_problem(pid)
        opt = SimpOptimizer().fit(spec)
        stress = stress_pass(spec.mesh, spec.boundary_conditions(), opt.density_)
        out[pid] = {"compliance": opt.compliance_, "density": opt.density_,
                    "max_stress": stress.solid_max(opt.density_),
                    "volume_error": max(opt.volume_errors_), "n_steps": len(opt.volume_errors_)}
    return out
