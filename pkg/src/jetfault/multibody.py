"""Floating-base kinematics and dynamics for a tree of 1-DoF revolute joints.

Conventions
-----------
Configuration ``q = (p_B, R_B, s)``. Velocity ``nu`` is a flat array of length
``6 + n`` laid out as ``(v_B, omega_B, sdot)``, with ``v_B`` the world velocity
of the base origin and ``omega_B`` the base angular velocity, both expressed in
the inertial frame (``dR_B/dt = skew(omega_B) @ R_B``).

Internally each link carries a body twist ``(omega, v)`` in its own frame
(angular-first) and a constant spatial inertia about its frame origin.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spatial import (
    cross,
    cross3,
    exp_so3,
    force_cross,
    force_cross_bar,
    motion_cross,
    orthonormalize,
    parent_to_child_transform,
    rodrigues,
    rpy_to_rot,
    skew,
    spatial_inertia,
)

UNIT_TOL = 1e-12


class ModelError(ValueError):
    """Invalid robot description; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    lower_body: bool = False


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # about the CoM, link-frame axes
    spheres: tuple = ()


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    child: int
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rot: np.ndarray
    limits: tuple


@dataclass(frozen=True)
class Thruster:
    name: str
    link: int
    position: np.ndarray
    axis: np.ndarray
    max_thrust: float
    max_rpm: float


@dataclass(frozen=True)
class RobotModel:
    name: str
    links: tuple
    joints: tuple
    thrusters: tuple
    gravity: float
    source_hash: str = ""
    # derived at load time
    mass: float = field(init=False)
    spatial_inertias: np.ndarray = field(init=False, repr=False)
    parent_joint: tuple = field(init=False, repr=False)
    joint_order: tuple = field(init=False, repr=False)
    joint_subtree: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mass", float(sum(lk.mass for lk in self.links)))
        I6 = np.array([spatial_inertia(lk.mass, lk.com, lk.inertia) for lk in self.links])
        I6.setflags(write=False)
        object.__setattr__(self, "spatial_inertias", I6)
        parent_joint = [-1] * len(self.links)
        for j, jt in enumerate(self.joints):
            parent_joint[jt.child] = j
        object.__setattr__(self, "parent_joint", tuple(parent_joint))
        # joints sorted so that a parent link is always resolved before its children
        depth = {0: 0}
        order = []
        pending = list(range(len(self.joints)))
        while pending:
            progressed = False
            for j in list(pending):
                jt = self.joints[j]
                if jt.parent in depth:
                    depth[jt.child] = depth[jt.parent] + 1
                    order.append(j)
                    pending.remove(j)
                    progressed = True
            if not progressed:
                raise ModelError("joints", "links are not connected to the base")
        object.__setattr__(self, "joint_order", tuple(order))
        subtree = []
        for jt in self.joints:
            members = {jt.child}
            for j in order:
                if self.joints[j].parent in members:
                    members.add(self.joints[j].child)
            subtree.append(frozenset(members))
        object.__setattr__(self, "joint_subtree", tuple(subtree))

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_thrusters(self):
        return len(self.thrusters)

    @property
    def n_dof(self):
        return 6 + len(self.joints)

    @property
    def gravity_vector(self):
        return np.array([0.0, 0.0, -self.gravity])

    @property
    def joint_limits(self):
        lim = np.array([jt.limits for jt in self.joints], dtype=float).reshape(-1, 2)
        return lim[:, 0], lim[:, 1]

    @property
    def max_thrusts(self):
        return np.array([th.max_thrust for th in self.thrusters])

    def link_index(self, name):
        for i, lk in enumerate(self.links):
            if lk.name == name:
                return i
        raise KeyError(name)

    def thruster_index(self, name):
        for i, th in enumerate(self.thrusters):
            if th.name == name:
                return i
        raise KeyError(name)


@dataclass
class Configuration:
    p: np.ndarray
    R: np.ndarray
    s: np.ndarray

    def copy(self):
        return Configuration(self.p.copy(), self.R.copy(), self.s.copy())


# --------------------------------------------------------------------------
# loading and validation


def _vec(d, key, path, size=3):
    if key not in d:
        raise ModelError(f"{path}.{key}", "missing")
    try:
        v = np.asarray(d[key], dtype=float)
    except (TypeError, ValueError):
        raise ModelError(f"{path}.{key}", "not numeric") from None
    if v.shape != (size,):
        raise ModelError(f"{path}.{key}", f"expected {size} numbers, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ModelError(f"{path}.{key}", "non-finite value")
    return v


def _unit(v, path):
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > UNIT_TOL:
        raise ModelError(path, f"axis must have unit norm (|a| = {nrm:.15g})")
    return v


def _positive(d, key, path):
    if key not in d:
        raise ModelError(f"{path}.{key}", "missing")
    val = d[key]
    if not isinstance(val, (int, float)) or not np.isfinite(val) or val <= 0:
        raise ModelError(f"{path}.{key}", f"must be a positive number, got {val!r}")
    return float(val)


def _inertia(d, path):
    if "inertia" not in d:
        raise ModelError(f"{path}.inertia", "missing")
    I = np.asarray(d["inertia"], dtype=float)
    if I.shape == (6,):  # ixx, iyy, izz, ixy, ixz, iyz
        ixx, iyy, izz, ixy, ixz, iyz = I
        I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    if I.shape != (3, 3):
        raise ModelError(f"{path}.inertia", "expected 3x3 matrix or 6 components")
    if not np.allclose(I, I.T, atol=1e-12):
        raise ModelError(f"{path}.inertia", "not symmetric")
    if np.linalg.eigvalsh(I).min() <= 0:
        raise ModelError(f"{path}.inertia", "not positive definite")
    return I


def model_from_dict(data, source_hash=""):
    """Build a RobotModel from the JSON structure documented in docs/formats.md."""
    for key in ("links", "joints", "thrusters", "gravity"):
        if key not in data:
            raise ModelError(key, "missing")
    links = []
    names = {}
    for i, ld in enumerate(data["links"]):
        path = f"links[{i}]"
        name = ld.get("name")
        if not isinstance(name, str) or not name:
            raise ModelError(f"{path}.name", "missing")
        if name in names:
            raise ModelError(f"{path}.name", f"duplicate link {name!r}")
        names[name] = i
        mass = _positive(ld, "mass", path)
        com = _vec(ld, "com", path) if "com" in ld else np.zeros(3)
        spheres = []
        for k, sd in enumerate(ld.get("spheres", [])):
            sp = f"{path}.spheres[{k}]"
            spheres.append(
                Sphere(_vec(sd, "center", sp), _positive(sd, "radius", sp), bool(sd.get("lower_body", False)))
            )
        links.append(Link(name, mass, com, _inertia(ld, path), tuple(spheres)))
    if not links:
        raise ModelError("links", "empty")

    joints = []
    has_parent = set()
    for j, jd in enumerate(data["joints"]):
        path = f"joints[{j}]"
        for key in ("parent", "child"):
            if jd.get(key) not in names:
                raise ModelError(f"{path}.{key}", f"unknown link {jd.get(key)!r}")
        parent, child = names[jd["parent"]], names[jd["child"]]
        if child == 0:
            raise ModelError(f"{path}.child", "the base link (links[0]) cannot have a parent")
        if child in has_parent:
            raise ModelError(f"{path}.child", f"link {jd['child']!r} has two parents")
        has_parent.add(child)
        axis = _unit(_vec(jd, "axis", path), f"{path}.axis")
        origin = jd.get("origin", {})
        xyz = _vec(origin, "xyz", f"{path}.origin") if "xyz" in origin else np.zeros(3)
        rpy = _vec(origin, "rpy", f"{path}.origin") if "rpy" in origin else np.zeros(3)
        lim = jd.get("limits", [-np.pi, np.pi])
        if len(lim) != 2 or not lim[0] <= lim[1]:
            raise ModelError(f"{path}.limits", "expected [lower, upper] with lower <= upper")
        joints.append(Joint(jd.get("name", f"joint{j}"), parent, child, axis, xyz, rpy_to_rot(rpy), (float(lim[0]), float(lim[1]))))
    if len(has_parent) != len(links) - 1:
        missing = [lk.name for i, lk in enumerate(links) if i and i not in has_parent]
        raise ModelError("joints", f"links without parent joint: {missing}")

    thrusters = []
    for k, td in enumerate(data["thrusters"]):
        path = f"thrusters[{k}]"
        if td.get("link") not in names:
            raise ModelError(f"{path}.link", f"unknown link {td.get('link')!r}")
        thrusters.append(
            Thruster(
                td.get("name", f"jet{k}"),
                names[td["link"]],
                _vec(td, "position", path),
                _unit(_vec(td, "axis", path), f"{path}.axis"),
                _positive(td, "max_thrust", path),
                _positive(td, "max_rpm", path),
            )
        )
    gravity = data["gravity"]
    if not isinstance(gravity, (int, float)) or gravity <= 0:
        raise ModelError("gravity", "must be a positive magnitude")
    return RobotModel(data.get("name", "robot"), tuple(links), tuple(joints), tuple(thrusters), float(gravity), source_hash)


def load_model(path):
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path.name}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return model_from_dict(data, hashlib.sha256(raw).hexdigest())


def default_model_path():
    return Path(__file__).parent / "data" / "jetbot.json"


def load_jetbot():
    return load_model(default_model_path())


# --------------------------------------------------------------------------
# kinematics


def neutral_configuration(model):
    return Configuration(np.zeros(3), np.eye(3), np.zeros(model.n_joints))


def integrate_configuration(q, nu, dt):
    """Advance q along the velocity nu for a time dt (exponential map on SO(3))."""
    n = len(q.s)
    return Configuration(q.p + dt * nu[:3], exp_so3(dt * nu[3:6]) @ q.R, q.s + dt * nu[6 : 6 + n])


def _frames(model, q):
    """World rotations/positions of all link frames plus parent-to-child transforms."""
    nl = len(model.links)
    R = np.empty((nl, 3, 3))
    p = np.empty((nl, 3))
    X = np.zeros((nl, 6, 6))
    R[0] = q.R
    p[0] = q.p
    for j in model.joint_order:
        jt = model.joints[j]
        R_pc = jt.origin_rot @ rodrigues(jt.axis, q.s[j])
        R[jt.child] = R[jt.parent] @ R_pc
        p[jt.child] = p[jt.parent] + R[jt.parent] @ jt.origin_xyz
        X[jt.child] = parent_to_child_transform(R_pc, jt.origin_xyz)
    return R, p, X


@dataclass
class Kinematics:
    link_R: np.ndarray
    link_p: np.ndarray
    thruster_points: np.ndarray
    thruster_axes: np.ndarray


def forward_kinematics(model, q):
    """World pose of every link, and world application point/axis of every thruster."""
    R, p, _ = _frames(model, q)
    pts = np.array([p[th.link] + R[th.link] @ th.position for th in model.thrusters]).reshape(-1, 3)
    axes = np.array([R[th.link] @ th.axis for th in model.thrusters]).reshape(-1, 3)
    return Kinematics(R, p, pts, axes)


def _base_jacobian(model, R_B):
    J0 = np.zeros((6, model.n_dof))
    J0[:3, 3:6] = R_B.T
    J0[3:, :3] = R_B.T
    return J0


def _body_jacobians(model, q, X):
    nl = len(model.links)
    J = np.zeros((nl, 6, model.n_dof))
    J[0] = _base_jacobian(model, q.R)
    for j in model.joint_order:
        jt = model.joints[j]
        J[jt.child] = X[jt.child] @ J[jt.parent]
        J[jt.child, :3, 6 + j] += jt.axis
    return J


def body_jacobians(model, q):
    """Per-link body Jacobians (nl, 6, 6+n): link twist in link coordinates = J @ nu."""
    _, _, X = _frames(model, q)
    return _body_jacobians(model, q, X)


def body_jacobians_dot(model, q, nu):
    """Time derivatives of the body Jacobians along the velocity nu."""
    _, _, X = _frames(model, q)
    J = _body_jacobians(model, q, X)
    return _body_jacobians_dot(model, q, nu, X, J)


def _body_jacobians_dot(model, q, nu, X, J):
    Jd = np.zeros_like(J)
    W = skew(nu[3:6])
    Jd[0, :3, 3:6] = -q.R.T @ W
    Jd[0, 3:, :3] = -q.R.T @ W
    for j in model.joint_order:
        jt = model.joints[j]
        vJ = np.concatenate([jt.axis * nu[6 + j], np.zeros(3)])
        XJ = X[jt.child] @ J[jt.parent]
        Jd[jt.child] = X[jt.child] @ Jd[jt.parent] - motion_cross(vJ) @ XJ
    return Jd


def _point_jacobian(R, Ji, r):
    return R @ (Ji[3:] - skew(r) @ Ji[:3])


def point_jacobian(model, q, k):
    """3 x (6+n) Jacobian of the world velocity of thruster k's application point."""
    if not 0 <= k < model.n_thrusters:
        raise IndexError(f"thruster index {k} out of range [0, {model.n_thrusters})")
    R, _, X = _frames(model, q)
    J = _body_jacobians(model, q, X)
    th = model.thrusters[k]
    return _point_jacobian(R[th.link], J[th.link], th.position)


def thruster_jacobians(model, q):
    R, _, X = _frames(model, q)
    J = _body_jacobians(model, q, X)
    return np.array([_point_jacobian(R[th.link], J[th.link], th.position) for th in model.thrusters])


# --------------------------------------------------------------------------
# dynamics


def mass_matrix(model, q):
    """Composite-rigid-body algorithm, mapped to the (v_B, omega_B, sdot) velocity."""
    _, _, X = _frames(model, q)
    return _crba(model, q, X)


def _crba(model, q, X):
    n = model.n_joints
    Ic = model.spatial_inertias.copy()
    for j in reversed(model.joint_order):
        jt = model.joints[j]
        Ic[jt.parent] += X[jt.child].T @ Ic[jt.child] @ X[jt.child]
    H = np.zeros((6 + n, 6 + n))
    H[:6, :6] = Ic[0]
    for j in model.joint_order:
        jt = model.joints[j]
        S = np.concatenate([jt.axis, np.zeros(3)])
        F = Ic[jt.child] @ S
        H[6 + j, 6 + j] = S @ F
        k = jt.child
        while True:
            F = X[k].T @ F
            k = model.joints[model.parent_joint[k]].parent
            if k == 0:
                H[:6, 6 + j] = F
                H[6 + j, :6] = F
                break
            jj = model.parent_joint[k]
            Sk = np.concatenate([model.joints[jj].axis, np.zeros(3)])
            H[6 + j, 6 + jj] = H[6 + jj, 6 + j] = Sk @ F
    # base coordinates: body twist = B @ (v_B, omega_B)
    B = _base_jacobian(model, q.R)[:, :6]
    M = H.copy()
    M[:6, :6] = B.T @ H[:6, :6] @ B
    M[:6, 6:] = B.T @ H[:6, 6:]
    M[6:, :6] = M[:6, 6:].T
    return M


def inverse_dynamics(model, q, nu, nudot, gravity=True):
    """Recursive Newton-Euler: returns M nudot + C nu + (G if gravity)."""
    _, _, X = _frames(model, q)
    return _rnea(model, q, nu, nudot, X, gravity)


def _rnea(model, q, nu, nudot, X, gravity, f_ext=None):
    """Generalized forces M nudot + C nu (+ G) (- J^T f_ext).

    ``f_ext`` optionally holds one external wrench per link, (moment, force)
    about the link origin in link coordinates.
    """
    nl = len(model.links)
    I6 = model.spatial_inertias
    RBt = q.R.T
    w_B = nu[3:6]
    V = np.empty((nl, 6))
    A = np.empty((nl, 6))
    V[0, :3] = RBt @ w_B
    V[0, 3:] = RBt @ nu[:3]
    A[0, :3] = RBt @ nudot[3:6] - RBt @ cross3(w_B, w_B)
    A[0, 3:] = RBt @ nudot[:3] - RBt @ cross3(w_B, nu[:3])
    if gravity:
        A[0, 3:] -= RBt @ model.gravity_vector
    for j in model.joint_order:
        jt = model.joints[j]
        c, pl = jt.child, jt.parent
        wJ = jt.axis * nu[6 + j]
        V[c] = X[c] @ V[pl]
        A[c] = X[c] @ A[pl]
        # V x vJ with vJ = (wJ, 0), evaluated before adding vJ
        A[c, :3] += cross3(V[c, :3], wJ) + jt.axis * nudot[6 + j]
        A[c, 3:] += cross3(V[c, 3:], wJ)
        V[c, :3] += wJ
    f = np.einsum("kij,kj->ki", I6, A)
    h = np.einsum("kij,kj->ki", I6, V)
    w, v = V[:, :3], V[:, 3:]
    f[:, :3] += cross(w, h[:, :3]) + cross(v, h[:, 3:])
    f[:, 3:] += cross(w, h[:, 3:])
    if f_ext is not None:
        f -= f_ext
    tau = np.zeros(model.n_dof)
    for j in reversed(model.joint_order):
        jt = model.joints[j]
        tau[6 + j] = jt.axis @ f[jt.child, :3]
        f[jt.parent] += X[jt.child].T @ f[jt.child]
    tau[:3] = q.R @ f[0, 3:]
    tau[3:6] = q.R @ f[0, :3]
    return tau


def _composite_base_inertia(model, q, X):
    """Base block of the mass matrix (whole-robot composite inertia, base velocity coordinates)."""
    Ic = model.spatial_inertias.copy()
    for j in reversed(model.joint_order):
        jt = model.joints[j]
        Ic[jt.parent] += X[jt.child].T @ Ic[jt.child] @ X[jt.child]
    B = _base_jacobian(model, q.R)[:, :6]
    return B.T @ Ic[0] @ B


def bias_forces(model, q, nu, gravity=True):
    """C(q, nu) nu + G(q)."""
    return inverse_dynamics(model, q, nu, np.zeros(model.n_dof), gravity)


def gravity_vector(model, q):
    n = model.n_dof
    return inverse_dynamics(model, q, np.zeros(n), np.zeros(n), True)


def coriolis_matrix(model, q, nu):
    """Coriolis matrix with Mdot - 2C skew-symmetric.

    Built per link as J^T (I Jdot + Y J), where Y is the skew matrix
    x -> x x* (I V); the body-frame inertia is constant so skew-symmetry
    follows from the skew Y term.
    """
    _, _, X = _frames(model, q)
    J = _body_jacobians(model, q, X)
    Jd = _body_jacobians_dot(model, q, nu, X, J)
    return _coriolis(model, nu, J, Jd)


def _coriolis(model, nu, J, Jd):
    I6 = model.spatial_inertias
    C = np.zeros((model.n_dof, model.n_dof))
    for i in range(len(model.links)):
        h = I6[i] @ (J[i] @ nu)
        C += J[i].T @ (I6[i] @ Jd[i] + force_cross_bar(h) @ J[i])
    return C


@dataclass
class DynamicsTerms:
    mass_matrix: np.ndarray
    coriolis_matrix: np.ndarray
    gravity: np.ndarray


def dynamics_terms(model, q, nu):
    _, _, X = _frames(model, q)
    J = _body_jacobians(model, q, X)
    Jd = _body_jacobians_dot(model, q, nu, X, J)
    zeros = np.zeros(model.n_dof)
    return DynamicsTerms(_crba(model, q, X), _coriolis(model, nu, J, Jd), _rnea(model, q, zeros, zeros, X, True))


def kinetic_energy(model, q, nu):
    return 0.5 * nu @ mass_matrix(model, q) @ nu


def potential_energy(model, q):
    return -model.mass * model.gravity_vector @ center_of_mass(model, q)


# --------------------------------------------------------------------------
# centroidal quantities


def _com_from_frames(model, R, p):
    return sum(lk.mass * (p[i] + R[i] @ lk.com) for i, lk in enumerate(model.links)) / model.mass


def center_of_mass(model, q):
    R, p, _ = _frames(model, q)
    return _com_from_frames(model, R, p)


def _centroidal_matrix(model, R, p, J, com):
    JG = np.zeros((6, model.n_dof))
    for i in range(len(model.links)):
        H = model.spatial_inertias[i] @ J[i]
        lin = R[i] @ H[3:]
        JG[:3] += lin
        JG[3:] += R[i] @ H[:3] + skew(p[i] - com) @ lin
    return JG


def centroidal_momentum(model, q, nu):
    """Centroidal momentum (l, w) about the CoM with inertial orientation, and J_G."""
    R, p, X = _frames(model, q)
    J = _body_jacobians(model, q, X)
    JG = _centroidal_matrix(model, R, p, J, _com_from_frames(model, R, p))
    return JG @ nu, JG


def locked_inertia(model, s):
    """Rotational inertia of the frozen robot about its CoM, in base coordinates."""
    R, p, _ = _frames(model, Configuration(np.zeros(3), np.eye(3), np.asarray(s, dtype=float)))
    com = _com_from_frames(model, R, p)
    I = np.zeros((3, 3))
    for i, lk in enumerate(model.links):
        d = p[i] + R[i] @ lk.com - com
        I += R[i] @ lk.inertia @ R[i].T + lk.mass * ((d @ d) * np.eye(3) - np.outer(d, d))
    return I


def validate_configuration(q, tol=1e-9):
    R = q.R
    return np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol


def reorthonormalize(q):
    return Configuration(q.p, orthonormalize(q.R), q.s)
