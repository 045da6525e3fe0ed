import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jetfault import checks
from jetfault import multibody as mb
from jetfault.spatial import exp_so3

from conftest import arm_model_dict, box_model_dict
from oracles import axis_angle, homogeneous, skew

seeds = st.integers(0, 2**32 - 1)


def random_q(model, rng):
    return checks.random_state(model, rng)


# --------------------------------------------------------------------------
# loading


def test_jetbot_loads(jetbot):
    assert jetbot.n_joints == 4 and jetbot.n_thrusters == 4
    assert jetbot.mass == pytest.approx(44.0)
    assert jetbot.mass == pytest.approx(sum(lk.mass for lk in jetbot.links))
    for th in jetbot.thrusters:
        assert abs(np.linalg.norm(th.axis) - 1) <= 1e-12


@pytest.mark.parametrize(
    "edit, field",
    [
        (lambda d: d["links"][0].__setitem__("mass", -1.0), "links[0].mass"),
        (lambda d: d["thrusters"][0].__setitem__("axis", [0.0, 0.0, 1.1]), "thrusters[0].axis"),
        (lambda d: d["joints"][0].__setitem__("axis", [0.0, 0.5, 0.5]), "joints[0].axis"),
        (lambda d: d["links"][1].__setitem__("inertia", [1.0, 1.0, -1.0, 0, 0, 0]), "links[1].inertia"),
        (lambda d: d["joints"][1].__setitem__("parent", "nowhere"), "joints[1].parent"),
        (lambda d: d.pop("gravity"), "gravity"),
    ],
)
def test_invalid_models_name_the_field(edit, field):
    d = copy.deepcopy(arm_model_dict())
    edit(d)
    with pytest.raises(mb.ModelError) as err:
        mb.model_from_dict(d)
    assert err.value.path == field


def test_second_parent_rejected():
    d = arm_model_dict()
    d["joints"].append(dict(d["joints"][1], name="j3"))
    with pytest.raises(mb.ModelError, match="two parents"):
        mb.model_from_dict(d)


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "links": [,]\n}')
    with pytest.raises(mb.ModelError, match=r"bad.json:2:"):
        mb.load_model(p)


def test_model_hash_tracks_file(tmp_path, jetbot):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(arm_model_dict()))
    h1 = mb.load_model(p).source_hash
    p.write_text(json.dumps(arm_model_dict()) + " ")
    assert mb.load_model(p).source_hash != h1
    assert len(jetbot.source_hash) == 64


# --------------------------------------------------------------------------
# kinematics


def hand_composed_points(model_dict, q):
    """Thruster points of the 2-joint arm from explicit 4x4 products."""
    base = homogeneous(q.R, q.p)
    j1, j2 = model_dict["joints"]
    rx, ry, rz = j2["origin"]["rpy"]
    Rx = axis_angle([1, 0, 0], rx)
    Ry = axis_angle([0, 1, 0], ry)
    Rz = axis_angle([0, 0, 1], rz)
    T1 = homogeneous(np.eye(3), j1["origin"]["xyz"]) @ homogeneous(axis_angle(j1["axis"], q.s[0]), np.zeros(3))
    T2 = homogeneous(Rz @ Ry @ Rx, j2["origin"]["xyz"]) @ homogeneous(axis_angle(j2["axis"], q.s[1]), np.zeros(3))
    fore = base @ T1 @ T2
    pts = []
    for th in model_dict["thrusters"]:
        frame = fore if th["link"] == "fore" else base
        pts.append((frame @ np.append(th["position"], 1.0))[:3])
    return np.array(pts)


@given(seeds)
def test_fk_matches_hand_composed_chain(seed):
    d = arm_model_dict()
    model = mb.model_from_dict(d)
    q, _ = random_q(model, np.random.default_rng(seed))
    kin = mb.forward_kinematics(model, q)
    assert np.abs(kin.thruster_points - hand_composed_points(d, q)).max() <= 1e-12
    assert np.allclose(np.linalg.norm(kin.thruster_axes, axis=1), 1.0, atol=1e-12)


def test_fk_zero_configuration(jetbot):
    kin = mb.forward_kinematics(jetbot, mb.neutral_configuration(jetbot))
    for k, th in enumerate(jetbot.thrusters):
        assert np.allclose(kin.thruster_axes[k], th.axis, atol=1e-15)


@given(seeds)
def test_fk_frame_equivariance(seed):
    model = mb.load_jetbot()
    rng = np.random.default_rng(seed)
    q, _ = random_q(model, rng)
    R = exp_so3(rng.normal(size=3))
    q_rot = mb.Configuration(R @ q.p, R @ q.R, q.s)
    a = mb.forward_kinematics(model, q).thruster_axes
    b = mb.forward_kinematics(model, q_rot).thruster_axes
    assert np.allclose(b, a @ R.T, atol=1e-12)


@given(seeds)
def test_point_jacobian_fd(seed):
    model = mb.load_jetbot()
    q, nu = random_q(model, np.random.default_rng(seed))
    assert checks.jacobian_fd_error(model, q, nu) <= 1e-5


def test_point_jacobian_zero_velocity_and_base_mount(jetbot, rng):
    q, _ = random_q(jetbot, rng)
    for k, th in enumerate(jetbot.thrusters):
        J = mb.point_jacobian(jetbot, q, k)
        assert np.allclose(J @ np.zeros(jetbot.n_dof), 0.0)
        if th.link == 0:
            assert np.all(J[:, 6:] == 0.0)
    with pytest.raises(IndexError):
        mb.point_jacobian(jetbot, q, jetbot.n_thrusters)


# --------------------------------------------------------------------------
# dynamics


def test_single_box_terms():
    m, I = 3.0, np.diag([0.2, 0.3, 0.4])
    model = mb.model_from_dict(box_model_dict())
    R = exp_so3([0.3, -0.2, 0.5])
    q = mb.Configuration(np.array([1.0, 2.0, 3.0]), R, np.zeros(0))
    M = mb.mass_matrix(model, q)
    assert np.allclose(M[:3, :3], m * np.eye(3))
    assert np.allclose(M[:3, 3:], 0.0, atol=1e-14)
    # omega is world-frame, so the rotational block is the world inertia
    assert np.allclose(M[3:, 3:], R @ I @ R.T)
    G = mb.gravity_vector(model, q)
    assert np.allclose(G, [0, 0, m * 9.81, 0, 0, 0])


@given(seeds)
def test_mass_matrix_spd_and_skew(seed):
    model = mb.load_jetbot()
    q, nu = random_q(model, np.random.default_rng(seed))
    M = mb.mass_matrix(model, q)
    assert np.allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0
    N = checks.mass_matrix_rate(model, q, nu) - 2 * mb.coriolis_matrix(model, q, nu)
    assert np.abs(N + N.T).max() <= 1e-6


@given(seeds)
def test_coriolis_consistent_with_rnea(seed):
    model = mb.load_jetbot()
    q, nu = random_q(model, np.random.default_rng(seed))
    terms = mb.dynamics_terms(model, q, nu)
    assert np.allclose(terms.coriolis_matrix @ nu + terms.gravity, mb.bias_forces(model, q, nu), atol=1e-9)


def per_link_kinetic_energy(model, q, nu):
    kin = mb.forward_kinematics(model, q)
    J = mb.body_jacobians(model, q)
    E = 0.0
    for i, lk in enumerate(model.links):
        w, v = (J[i] @ nu)[:3], (J[i] @ nu)[3:]
        vc = v + np.cross(w, lk.com)
        E += 0.5 * lk.mass * vc @ vc + 0.5 * w @ lk.inertia @ w
    return E


@given(seeds)
def test_kinetic_energy_per_link(seed):
    model = mb.load_jetbot()
    q, nu = random_q(model, np.random.default_rng(seed))
    E = mb.kinetic_energy(model, q, nu)
    assert abs(E - per_link_kinetic_energy(model, q, nu)) <= 1e-10 * max(E, 1.0)


def test_gravity_is_potential_gradient(jetbot, rng):
    q, _ = random_q(jetbot, rng)
    G = mb.gravity_vector(jetbot, q)
    h = 1e-6
    for i in range(jetbot.n_dof):
        e = np.zeros(jetbot.n_dof)
        e[i] = 1.0
        dU = (mb.potential_energy(jetbot, mb.integrate_configuration(q, e, h))
              - mb.potential_energy(jetbot, mb.integrate_configuration(q, e, -h))) / (2 * h)
        assert G[i] == pytest.approx(dU, abs=1e-6)


def _energy_defect(model, q, nu, tau, dt, duration):
    from jetfault.simulator import forward_dynamics

    E0 = mb.kinetic_energy(model, q, nu) + mb.potential_energy(model, q)
    work = 0.0
    for _ in range(int(round(duration / dt))):
        nu_new = nu + dt * forward_dynamics(model, q, nu, tau, np.zeros(model.n_thrusters))
        work += dt * tau @ (0.5 * (nu[6:] + nu_new[6:]))
        nu = nu_new
        q = mb.integrate_configuration(q, nu, dt)
    return mb.kinetic_energy(model, q, nu) + mb.potential_energy(model, q) - E0 - work, E0


def test_energy_balance_rollout(jetbot, rng):
    """d/dt (KE + PE) = tau . sdot: the defect is pure O(dt) integration error."""
    q, nu = random_q(jetbot, rng)
    nu *= 0.3
    tau = rng.normal(size=jetbot.n_joints)
    d1, E0 = _energy_defect(jetbot, q, nu, tau, 1e-4, 0.05)
    d2, _ = _energy_defect(jetbot, q, nu, tau, 5e-5, 0.05)
    assert abs(d2) <= 1e-5 * E0
    assert 1.8 <= d1 / d2 <= 2.2


# --------------------------------------------------------------------------
# centroidal quantities


@given(seeds)
def test_cmm_matches_link_sum(seed):
    model = mb.load_jetbot()
    q, nu = random_q(model, np.random.default_rng(seed))
    h, JG = mb.centroidal_momentum(model, q, nu)
    ref = checks.link_momentum_sum(model, q, nu)
    assert np.linalg.norm(h - ref) <= 1e-9 * np.linalg.norm(ref)
    assert np.allclose(JG @ nu, h)


def test_pure_translation_momentum(jetbot, rng):
    q, _ = random_q(jetbot, rng)
    v = np.array([0.3, -1.0, 2.0])
    nu = np.concatenate([v, np.zeros(3 + jetbot.n_joints)])
    h, _ = mb.centroidal_momentum(jetbot, q, nu)
    assert np.allclose(h[:3], jetbot.mass * v)
    assert np.allclose(h[3:], 0.0, atol=1e-12)
    h0, _ = mb.centroidal_momentum(jetbot, q, np.zeros(jetbot.n_dof))
    assert np.all(h0 == 0.0)


def test_linear_momentum_is_mass_times_com_velocity(jetbot, rng):
    q, nu = random_q(jetbot, rng)
    h, _ = mb.centroidal_momentum(jetbot, q, nu)
    d = 1e-6
    vc = (mb.center_of_mass(jetbot, mb.integrate_configuration(q, nu, d))
          - mb.center_of_mass(jetbot, mb.integrate_configuration(q, nu, -d))) / (2 * d)
    assert np.allclose(h[:3], jetbot.mass * vc, atol=1e-6)


def parallel_axis_inertia(model, s):
    q = mb.Configuration(np.zeros(3), np.eye(3), np.asarray(s))
    kin = mb.forward_kinematics(model, q)
    cs = [kin.link_p[i] + kin.link_R[i] @ lk.com for i, lk in enumerate(model.links)]
    com = sum(lk.mass * c for lk, c in zip(model.links, cs)) / model.mass
    I = np.zeros((3, 3))
    for i, lk in enumerate(model.links):
        r = cs[i] - com
        I += kin.link_R[i] @ lk.inertia @ kin.link_R[i].T - lk.mass * skew(r) @ skew(r)
    return I


@given(seeds)
def test_locked_inertia(seed):
    model = mb.load_jetbot()
    rng = np.random.default_rng(seed)
    q, _ = random_q(model, rng)
    I = mb.locked_inertia(model, q.s)
    assert np.allclose(I, I.T) and np.linalg.eigvalsh(I).min() > 0
    assert np.abs(I - parallel_axis_inertia(model, q.s)).max() <= 1e-10
    # angular block of J_G for pure base rotation, in body coordinates
    q0 = mb.Configuration(q.p, np.eye(3), q.s)
    _, JG = mb.centroidal_momentum(model, q0, np.zeros(model.n_dof))
    assert np.abs(JG[3:, 3:6] - I).max() <= 1e-10
    # translation invariance is exact
    q1 = mb.Configuration(q.p + 5.0, q.R, q.s)
    assert np.array_equal(mb.locked_inertia(model, q1.s), I)


def test_locked_inertia_symmetric_model():
    d = box_model_dict()
    model = mb.model_from_dict(d)
    I = mb.locked_inertia(model, np.zeros(0))
    assert np.allclose(I, np.diag(np.diag(I)))


def test_free_fall_momentum_rate(jetbot, rng):
    """Under zero thrust the centroidal momentum changes by gravity only."""
    from jetfault.simulator import forward_dynamics

    q, nu = random_q(jetbot, rng)
    nu *= 0.2
    h0, _ = mb.centroidal_momentum(jetbot, q, nu)
    dt, T = 1e-3, 1.0
    for _ in range(int(T / dt)):
        nu = nu + dt * forward_dynamics(jetbot, q, nu, np.zeros(jetbot.n_joints), np.zeros(jetbot.n_thrusters))
        q = mb.integrate_configuration(q, nu, dt)
    h1, _ = mb.centroidal_momentum(jetbot, q, nu)
    expected = h0 + T * np.concatenate([jetbot.mass * jetbot.gravity_vector, np.zeros(3)])
    assert np.abs(h1 - expected).max() <= 1e-4 * (1 + np.abs(expected).max())
