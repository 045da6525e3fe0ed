import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jetfault import multibody as mb
from jetfault import refgen as rg
from jetfault.momentum import momentum_acceleration_map
from jetfault.simulator import data_dir

from conftest import box_model_dict
from oracles import det_lu, point_line_distance_sq

seeds = st.integers(0, 2**32 - 1)


def quad_model():
    """Box with four upward jets on the corners of a 0.4 m square around the CoM."""
    d = box_model_dict()
    base = d["thrusters"][0]
    d["thrusters"] = [
        dict(base, name=f"jet{k}", position=[x, y, 0.0])
        for k, (x, y) in enumerate([(0.2, 0.2), (-0.2, 0.2), (-0.2, -0.2), (0.2, -0.2)])
    ]
    return mb.model_from_dict(d)


def quad_problem(model, T0, faulty=()):
    upper = np.concatenate([np.zeros(3), model.max_thrusts])
    for name in faulty:
        upper[3 + model.thruster_index(name)] = 0.0
    return rg.ReferenceProblem(
        name="quad",
        x0=np.concatenate([np.zeros(3), T0]),
        W_x=np.ones(7),
        W_lambda=0.0,
        lower=np.zeros(7),
        upper=upper,
        faulty=tuple(faulty),
    )


# --------------------------------------------------------------------------
# constraint functions


def test_sphere_pair_oracles():
    assert rg.sphere_pair_clearance([0, 0, 0], [3, 0, 0], 1.0, 1.0) == pytest.approx(5.0)
    assert rg.sphere_pair_clearance([0, 0, 0], [2, 0, 0], 1.0, 1.0) == pytest.approx(0.0)
    assert rg.sphere_pair_clearance([0, 0, 0], [1, 0, 0], 1.0, 1.0) < 0


def test_line_clearance_oracles():
    a = np.array([0.0, 0.0, -1.0])
    rho = 0.3
    assert rg.line_clearance(np.zeros(3), a, [0, 0, -1.0], rho) == pytest.approx(-(rho**2))
    assert rg.line_clearance(np.zeros(3), a, [2 * rho, 0, -1.0], rho) == pytest.approx(3 * rho**2)
    # beyond the segment end the endpoint distance applies
    assert rg.line_clearance(np.zeros(3), a, [0, 0, -3.0], rho, length=2.0) == pytest.approx(1.0 - rho**2)
    assert rg.line_clearance(np.zeros(3), a, [0, 0, 1.0], rho, length=2.0) == pytest.approx(1.0 - rho**2)


@given(seeds)
def test_line_clearance_matches_cross_product(seed):
    rng = np.random.default_rng(seed)
    p, c = rng.normal(size=3), rng.normal(size=3)
    a = rng.normal(size=3)
    a /= np.linalg.norm(a)
    rho = rng.uniform(0.01, 1.0)
    assert rg.line_clearance(p, a, c, rho) == pytest.approx(point_line_distance_sq(c, p, a) - rho**2, abs=1e-12)


def test_self_collision_matches_pairwise(jetbot, rng):
    x = np.concatenate([rng.uniform(-0.3, 0.3, 3), rng.uniform(*jetbot.joint_limits), rng.uniform(0, 100, 4)])
    q = rg.configuration(x, jetbot)
    spheres = rg.sphere_centers(jetbot, q)
    expected = [
        rg.sphere_pair_clearance(ci, cj, ri, rj)
        for n, (li, ci, ri, _) in enumerate(spheres)
        for (lj, cj, rj, _) in spheres[n + 1 :]
        if li != lj
    ]
    assert np.allclose(rg.self_collision_constraints(x, jetbot), expected, atol=1e-12)


def test_jet_constraints_layout_and_values(jetbot, rng):
    cone = rg.ConeGeometry(half_angle_deg=10.0, lines=8, length=2.0)
    active = np.array([True, False, True, True])
    x = np.concatenate([np.zeros(3), rng.uniform(*jetbot.joint_limits), np.full(4, 50.0)])
    q = rg.configuration(x, jetbot)
    lower = [(c, r) for (_, c, r, low) in rg.sphere_centers(jetbot, q) if low]
    h = rg.jet_collision_constraints(x, jetbot, cone, active)
    assert len(h) == 3 * cone.lines * len(lower)
    lines = rg.cone_lines(jetbot, q, cone, active)
    assert [k for k, _, _ in lines] == [0] * 8 + [2] * 8 + [3] * 8
    expected = [rg.line_clearance(p, a, c, r, cone.length) for _, p, a in lines for c, r in lower]
    assert np.allclose(h, expected, atol=1e-12)


def test_cone_lines_open_at_half_angle(jetbot):
    cone = rg.ConeGeometry(half_angle_deg=12.0, lines=6)
    q = mb.neutral_configuration(jetbot)
    kin = mb.forward_kinematics(jetbot, q)
    for k, _, a in rg.cone_lines(jetbot, q, cone):
        assert np.linalg.norm(a) == pytest.approx(1.0)
        assert np.degrees(np.arccos(-a @ kin.thruster_axes[k])) == pytest.approx(12.0)


def test_cone_validation():
    with pytest.raises(ValueError):
        rg.ConeGeometry(half_angle_deg=50.0)
    with pytest.raises(ValueError):
        rg.ConeGeometry(lines=0)


# --------------------------------------------------------------------------
# objective


def test_equilibrium_at_zero_thrust_is_weight_squared(jetbot):
    x = np.zeros(3 + jetbot.n_joints + jetbot.n_thrusters)
    assert rg.equilibrium_constraint(x, jetbot) == pytest.approx((jetbot.mass * 9.81) ** 2)


def test_equilibrium_symmetric_quad():
    model = quad_model()
    x = np.concatenate([np.zeros(3), np.full(4, model.mass * 9.81 / 4)])
    assert rg.equilibrium_constraint(x, model) <= 1e-24


def test_manipulability_matches_lu(jetbot, rng):
    x = np.concatenate([rng.uniform(-0.3, 0.3, 3), rng.uniform(*jetbot.joint_limits), rng.uniform(20, 150, 4)])
    q = rg.configuration(x, jetbot)
    L = momentum_acceleration_map(jetbot, q, np.zeros(jetbot.n_dof), x[-4:]).Lambda
    assert rg.manipulability_at(x, jetbot) == pytest.approx(det_lu(L @ L.T), rel=1e-9)


def test_objective_at_x0_and_weight_linearity(jetbot):
    problem = rg.load_problem(data_dir() / "problems" / "back_fault.json", jetbot)
    det = rg.manipulability_at(problem.x0, jetbot)
    f = rg.objective(problem.x0, problem, jetbot)
    assert f == pytest.approx(problem.W_lambda / np.sqrt(det), rel=1e-12)
    doubled = copy.copy(problem)
    doubled.W_lambda = 2 * problem.W_lambda
    assert rg.objective(problem.x0, doubled, jetbot) == pytest.approx(2 * f, rel=1e-12)


def test_singular_cost_is_capped():
    assert rg.manipulability_cost(0.0, 2.0) == pytest.approx(2.0 / np.sqrt(rg.SINGULAR_DET))


def test_fd_gradient_second_order():
    fun = lambda z: float(np.sin(z[0]) * z[1] ** 3 + np.exp(z[2]))  # noqa: E731
    z = np.array([0.3, -0.7, 0.2])
    exact = np.array([np.cos(z[0]) * z[1] ** 3, 3 * np.sin(z[0]) * z[1] ** 2, np.exp(z[2])])
    assert np.abs(rg._fd_gradient(fun, z, 1e-6) - exact).max() <= 1e-8


def test_objective_gradient_on_jetbot(jetbot):
    """The solver's central-difference gradient (step 1e-6) against a five-point stencil at 20 random points."""
    problem = rg.load_problem(data_dir() / "problems" / "arm_fault.json", jetbot)
    rng = np.random.default_rng(5)
    fun = lambda x: rg.objective(x, problem, jetbot)  # noqa: E731
    h = 1e-4
    for _ in range(20):
        x = rng.uniform(problem.lower, problem.upper)
        g = rg._fd_gradient(fun, x, 1e-6)
        ref = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            ref[i] = (-fun(x + 2 * e) + 8 * fun(x + e) - 8 * fun(x - e) + fun(x - 2 * e)) / (12 * h)
        assert np.linalg.norm(g - ref) <= 1e-4 * np.linalg.norm(ref)


# --------------------------------------------------------------------------
# problem files


def test_problem_pins_faulty_thrust(jetbot):
    problem = rg.load_problem(data_dir() / "problems" / "arm_fault.json", jetbot)
    assert problem.faulty
    for name in problem.faulty:
        k = 3 + jetbot.n_joints + jetbot.thruster_index(name)
        assert problem.lower[k] == problem.upper[k] == 0.0
    assert not rg.active_thrusters(problem, jetbot)[jetbot.thruster_index(problem.faulty[0])]


def test_problem_rejects_bad_input(jetbot):
    d = json.loads((data_dir() / "problems" / "nofault.json").read_text())
    bad = dict(d, x0=dict(d["x0"], s=[0.0]))
    with pytest.raises(ValueError):
        rg.ReferenceProblem.from_dict(bad, jetbot)
    with pytest.raises(ValueError):
        rg.ReferenceProblem.from_dict(dict(d, W_lambda=-1.0), jetbot)
    with pytest.raises(KeyError):
        rg.ReferenceProblem.from_dict(dict(d, faulty=["no_such_jet"]), jetbot)


@pytest.mark.parametrize("name", ["nofault", "arm_fault", "back_fault"])
def test_shipped_references_feasible(jetbot, name):
    ref = rg.load_reference(data_dir() / "references" / f"{name}.json", jetbot)
    problem = rg.load_problem(data_dir() / "problems" / f"{name}.json", jetbot)
    x = np.concatenate([ref.rpy, ref.s, ref.T])
    rep = rg.make_report(x, problem, jetbot)
    assert rep.feasible
    assert rep.equilibrium <= 1e-6
    assert rep.min_self_collision >= -1e-9 and rep.min_jet_collision >= -1e-9
    for fname in problem.faulty:
        assert ref.T[jetbot.thruster_index(fname)] == 0.0


def test_reference_round_trip(jetbot, tmp_path):
    ref = rg.HoverReference(np.array([0.1, -0.05, 0.0]), np.array([0.1, 0.2, 0.3, 0.4]), np.array([1.0, 2.0, 3.0, 4.0]), "demo")
    path = tmp_path / "ref.json"
    rg.save_reference(path, ref, jetbot)
    back = rg.load_reference(path, jetbot)
    assert np.array_equal(back.rpy, ref.rpy) and np.array_equal(back.s, ref.s) and np.array_equal(back.T, ref.T)
    assert np.allclose(json.loads(path.read_text())["R"], ref.R)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        rg.load_reference(path)


# --------------------------------------------------------------------------
# solver


def test_solver_projects_onto_balance_manifold():
    """With W_lambda = 0 and no collision geometry the solution is the weighted projection of x0."""
    model = quad_model()
    T0 = np.array([30.0, 5.0, 12.0, 8.0])
    x, rep = rg.solve_reference_problem(quad_problem(model, T0), model)
    assert rep.feasible
    pos = np.array([th.position for th in model.thrusters])
    A = np.vstack([np.ones(4), pos[:, 1], pos[:, 0]])
    b = np.array([model.mass * 9.81, 0.0, 0.0])
    T_star = T0 + A.T @ np.linalg.solve(A @ A.T, b - A @ T0)
    assert np.abs(x[3:] - T_star).max() <= 1e-4


def test_solver_faulty_corner_uses_diagonal_pair():
    model = quad_model()
    x, rep = rg.solve_reference_problem(quad_problem(model, np.full(4, 8.0), faulty=["jet0"]), model)
    mg = model.mass * 9.81
    assert rep.feasible
    assert x[3] == 0.0
    assert np.allclose(x[4:], [mg / 2, 0.0, mg / 2], atol=1e-4)


def test_solver_back_fault_deterministic_and_feasible(jetbot):
    problem = rg.load_problem(data_dir() / "problems" / "back_fault.json", jetbot)
    x1, rep1 = rg.solve_reference_problem(problem, jetbot)
    x2, _ = rg.solve_reference_problem(problem, jetbot)
    assert np.array_equal(x1, x2)
    assert rep1.feasible and not rep1.max_iterations
    assert x1[3 + jetbot.n_joints + jetbot.thruster_index("l_back_jet")] == 0.0
