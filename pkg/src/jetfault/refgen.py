"""Offline hover reference generator for faulty-turbine flight.

Finds ``x = (rpy_B, s, T)`` that keeps the robot in static balance with the
faulty turbines switched off, stays close to a nominal guess ``x0`` and keeps
the momentum acceleration map well conditioned:

    min  1/2 |x - x0|^2_Wx + W_lambda / sqrt(det(Lambda Lambda^T))
    s.t. Ldot(x) = 0,  lb <= x <= ub,  h_self(x) >= 0,  h_jet(x) >= 0

Solved with an augmented Lagrangian outer loop and a projected BFGS inner
loop on central finite-difference gradients. Everything is deterministic.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import multibody as mb
from .momentum import _thrust_geometry, momentum_acceleration_map
from .spatial import cross, rodrigues, rpy_to_rot

log = logging.getLogger(__name__)

REFERENCE_FORMAT = "jetfault-reference/1"
SINGULAR_DET = 1e-12


@dataclass
class ConeGeometry:
    half_angle_deg: float = 10.0
    lines: int = 8
    length: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.half_angle_deg < 45.0:
            raise ValueError("cone half-angle must lie in (0, 45) degrees")
        if self.lines < 1 or self.length <= 0:
            raise ValueError("cone needs at least one line and a positive length")


@dataclass
class SolverConfig:
    max_outer: int = 40
    max_inner: int = 200
    inner_tol: float = 1e-9
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e12
    fd_step: float = 1e-6
    margin: float = 1e-6  # inequalities are enforced as h >= margin internally
    polish_iterations: int = 20

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ReferenceProblem:
    name: str
    x0: np.ndarray
    W_x: np.ndarray  # diagonal
    W_lambda: float
    lower: np.ndarray
    upper: np.ndarray
    faulty: tuple = ()
    cone: ConeGeometry = field(default_factory=ConeGeometry)
    equilibrium_tol: float = 1e-6  # on |Ldot|^2, N^2
    base_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.W_x = np.asarray(self.W_x, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError(f"problem {self.name}: lower bound above upper bound")
        if np.any(self.W_x < 0) or self.W_lambda < 0:
            raise ValueError(f"problem {self.name}: weights must be nonnegative")

    @classmethod
    def from_dict(cls, d, model):
        """Build a problem from its file representation; see docs/formats.md."""
        n, n_p = model.n_joints, model.n_thrusters
        s_lo, s_hi = model.joint_limits
        x0 = np.concatenate([d["x0"]["rpy"], d["x0"]["s"], d["x0"]["T"]]).astype(float)
        if len(x0) != 3 + n + n_p:
            raise ValueError(f"x0 has {len(x0)} entries, model needs {3 + n + n_p}")
        w = d.get("weights", {})
        W_x = np.concatenate(
            [np.full(3, w.get("rpy", 1.0)), np.full(n, w.get("s", 0.1)), np.full(n_p, w.get("T", 1e-5))]
        )
        rpy_lo = np.asarray(d.get("rpy_lower", [-0.5, -0.5, 0.0]), dtype=float)
        rpy_hi = np.asarray(d.get("rpy_upper", [0.5, 0.5, 0.0]), dtype=float)
        lower = np.concatenate([rpy_lo, s_lo, np.zeros(n_p)])
        upper = np.concatenate([rpy_hi, s_hi, model.max_thrusts])
        faulty = tuple(d.get("faulty", ()))
        for name in faulty:
            upper[3 + n + model.thruster_index(name)] = 0.0
        return cls(
            name=d.get("name", "problem"),
            x0=x0,
            W_x=W_x,
            W_lambda=float(d.get("W_lambda", 1e4)),
            lower=lower,
            upper=upper,
            faulty=faulty,
            cone=ConeGeometry(**d.get("cone", {})),
            equilibrium_tol=float(d.get("equilibrium_tol", 1e-6)),
            base_position=np.asarray(d.get("base_position", [0.0, 0.0, 0.0]), dtype=float),
        )


def load_problem(path, model):
    with open(path) as fh:
        return ReferenceProblem.from_dict(json.load(fh), model)


# --------------------------------------------------------------------------
# model evaluations


def split(x, model):
    n = model.n_joints
    return x[:3], x[3 : 3 + n], x[3 + n :]


def configuration(x, model, base_position=None):
    rpy, s, _ = split(np.asarray(x, dtype=float), model)
    p = np.zeros(3) if base_position is None else np.asarray(base_position, dtype=float)
    return mb.Configuration(p.copy(), rpy_to_rot(rpy), np.array(s))


def _momentum_rate(model, R, p, T):
    com = mb._com_from_frames(model, R, p)
    pts, axes = _thrust_geometry(model, R, p)
    f = axes.T @ T + model.mass * model.gravity_vector
    tau = cross(pts - com, axes).T @ T
    return np.concatenate([f, tau])


def momentum_rate_at(x, model):
    """Ldot = A(q(x)) T + F_G (linear N, angular N m)."""
    R, p, _ = mb._frames(model, configuration(x, model))
    return _momentum_rate(model, R, p, split(x, model)[2])


def equilibrium_constraint(x, model):
    """|Ldot|^2 at the static state implied by x."""
    Ld = momentum_rate_at(x, model)
    return float(Ld @ Ld)


def manipulability_at(x, model):
    q = configuration(x, model)
    T = split(x, model)[2]
    amap = momentum_acceleration_map(model, q, np.zeros(model.n_dof), T)
    return float(np.linalg.det(amap.Lambda @ amap.Lambda.T))


def manipulability_cost(det, W_lambda):
    """W_lambda / sqrt(det), capped by a finite penalty near singularity."""
    return W_lambda / np.sqrt(max(det, SINGULAR_DET))


def objective(x, problem, model):
    dx = np.asarray(x, dtype=float) - problem.x0
    f = 0.5 * float(dx @ (problem.W_x * dx))
    if problem.W_lambda == 0.0:
        return f
    return f + manipulability_cost(manipulability_at(x, model), problem.W_lambda)


def sphere_centers(model, q):
    """World centers of all collision spheres: list of (link, center, radius, lower_body)."""
    R, p, _ = mb._frames(model, q)
    out = []
    for i, lk in enumerate(model.links):
        for sp in lk.spheres:
            out.append((i, p[i] + R[i] @ sp.center, sp.radius, sp.lower_body))
    return out


def sphere_pair_clearance(c_i, c_j, rho_i, rho_j):
    d = np.asarray(c_i) - np.asarray(c_j)
    return float(d @ d - (rho_i + rho_j) ** 2)


def line_clearance(p, a, c, rho, length=None):
    """(p - c)^T N (p - c) - rho^2 with N = I - a a^T; a is a unit line direction.

    With ``length`` the line is the segment p + t a, t in [0, length]; beyond
    its ends the distance to the nearest endpoint is used.
    """
    d = np.asarray(p, dtype=float) - np.asarray(c, dtype=float)
    if length is not None:
        t = -(d @ a)
        if t < 0.0 or t > length:
            e = d + np.clip(t, 0.0, length) * a
            return float(e @ e - rho * rho)
    N = np.eye(3) - np.outer(a, a)
    return float(d @ N @ d - rho * rho)


def _local_cone_directions(model, cone):
    """Unit exhaust-line directions of every thruster, in its link frame."""
    half = np.deg2rad(cone.half_angle_deg)
    dirs = []
    for th in model.thrusters:
        e = -th.axis
        ref = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        perp = np.cross(e, ref)
        perp /= np.linalg.norm(perp)
        tilted = rodrigues(perp, half) @ e
        dirs.append([rodrigues(e, 2.0 * np.pi * m / cone.lines) @ tilted for m in range(cone.lines)])
    return np.array(dirs)


class CollisionGeometry:
    """Precomputed sphere and cone-line layout for fast constraint evaluation."""

    def __init__(self, model, cone=None, active=None):
        self.model = model
        self.cone = cone or ConeGeometry()
        self.active = np.ones(model.n_thrusters, bool) if active is None else np.asarray(active, bool)
        link, center, radius, lower = [], [], [], []
        for i, lk in enumerate(model.links):
            for sp in lk.spheres:
                link.append(i)
                center.append(sp.center)
                radius.append(sp.radius)
                lower.append(sp.lower_body)
        self.link = np.array(link, dtype=int)
        self.center = np.array(center, dtype=float).reshape(-1, 3)
        self.radius = np.array(radius, dtype=float)
        self.lower = np.array(lower, dtype=bool)
        ia, ib = np.triu_indices(len(link), k=1)
        keep = self.link[ia] != self.link[ib]
        self.pairs = (ia[keep], ib[keep])
        self.thrusters = np.flatnonzero(self.active)
        self.local_dirs = _local_cone_directions(model, self.cone)[self.thrusters]

    def world_centers(self, R, p):
        return p[self.link] + np.einsum("nij,nj->ni", R[self.link], self.center)

    def self_collision(self, R, p):
        c = self.world_centers(R, p)
        ia, ib = self.pairs
        d = c[ia] - c[ib]
        return np.einsum("ni,ni->n", d, d) - (self.radius[ia] + self.radius[ib]) ** 2

    def jet_collision(self, R, p):
        if not self.lower.any():
            return np.zeros(0)
        c = self.world_centers(R, p)[self.lower]
        rho = self.radius[self.lower]
        h = []
        for k, dirs in zip(self.thrusters, self.local_dirs):
            th = self.model.thrusters[k]
            nozzle = p[th.link] + R[th.link] @ th.position
            A = dirs @ R[th.link].T  # (lines, 3)
            d = nozzle[None, None, :] - c[None, :, :]  # (1, spheres, 3)
            t = np.clip(-np.einsum("lsi,li->ls", np.broadcast_to(d, (len(A),) + d.shape[1:]), A), 0.0, self.cone.length)
            e = d + t[..., None] * A[:, None, :]
            h.append((np.einsum("lsi,lsi->ls", e, e) - rho**2).ravel())
        return np.concatenate(h) if h else np.zeros(0)

    def cone_lines(self, R, p):
        out = []
        for k, dirs in zip(self.thrusters, self.local_dirs):
            th = self.model.thrusters[k]
            nozzle = p[th.link] + R[th.link] @ th.position
            out.extend((k, nozzle, R[th.link] @ a) for a in dirs)
        return out


def self_collision_constraints(x, model, geometry=None):
    """|c_i - c_j|^2 - (rho_i + rho_j)^2 for every sphere pair on distinct links."""
    geometry = geometry or CollisionGeometry(model)
    R, p, _ = mb._frames(model, configuration(x, model))
    return geometry.self_collision(R, p)


def cone_lines(model, q, cone, active=None):
    """Nozzle points and unit directions of the exhaust-cone lines of active thrusters."""
    R, p, _ = mb._frames(model, q)
    return CollisionGeometry(model, cone, active).cone_lines(R, p)


def jet_collision_constraints(x, model, cone=None, active=None, geometry=None):
    """Clearance between lower-body spheres and the exhaust-cone lines.

    One entry per (cone line, lower-body sphere) pair, lines grouped by thruster.
    """
    geometry = geometry or CollisionGeometry(model, cone, active)
    R, p, _ = mb._frames(model, configuration(x, model))
    return geometry.jet_collision(R, p)


def active_thrusters(problem, model):
    return np.array([th.name not in problem.faulty for th in model.thrusters])


# --------------------------------------------------------------------------
# solver


@dataclass
class SolverReport:
    objective: float
    equilibrium: float  # |Ldot|^2, N^2
    min_self_collision: float
    min_jet_collision: float
    bound_violation: float
    manipulability: float
    outer_iterations: int
    inner_iterations: int
    max_iterations: bool
    feasible: bool

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in asdict(self).items()}


class _Scaled:
    """Problem functions in the scaled variable z = (x - lower) / width."""

    def __init__(self, problem, model):
        self.problem = problem
        self.model = model
        w = problem.upper - problem.lower
        self.width = np.where(w > 0, w, 1.0)
        self.hi = np.where(w > 0, 1.0, 0.0)  # pinned variables live on [0, 0]
        self.active = active_thrusters(problem, model)
        self.eq_scale = model.mass * model.gravity
        self.geometry = CollisionGeometry(model, problem.cone, self.active)

    def x(self, z):
        return self.problem.lower + self.width * z

    def z(self, x):
        return (x - self.problem.lower) / self.width

    def parts(self, z):
        x = self.x(z)
        p, m = self.problem, self.model
        q = configuration(x, m)
        R, pos, _ = mb._frames(m, q)
        c = _momentum_rate(m, R, pos, split(x, m)[2]) / self.eq_scale
        g = np.concatenate([self.geometry.self_collision(R, pos), self.geometry.jet_collision(R, pos)])
        return objective(x, p, m), c, g


def _augmented(parts, lam, mu, rho, margin):
    f, c, g = parts
    gm = g - margin
    return f + lam @ c + 0.5 * rho * (c @ c) + (np.sum(np.maximum(0.0, mu - rho * gm) ** 2) - mu @ mu) / (2.0 * rho)


def _fd_gradient(fun, z, h):
    grad = np.empty_like(z)
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = h
        grad[i] = (fun(z + e) - fun(z - e)) / (2.0 * h)
    return grad


def _projected_bfgs(fun, z, h, max_iter, tol, hi):
    """Minimise fun over the box [0, hi]. Returns (z, iterations)."""
    d = len(z)
    Hinv = np.eye(d)
    fz = fun(z)
    g = _fd_gradient(fun, z, h)
    for it in range(1, max_iter + 1):
        pg = z - np.clip(z - g, 0.0, hi)
        if np.max(np.abs(pg)) <= tol:
            return z, it
        pinned = ((z <= 0.0) & (g > 0)) | ((z >= hi) & (g < 0))
        free = ~pinned
        step = np.zeros(d)
        step[free] = -Hinv[np.ix_(free, free)] @ g[free]
        if g @ step >= 0:
            Hinv = np.eye(d)
            step = np.where(free, -g, 0.0)
        t = 1.0
        while True:
            z_new = np.clip(z + t * step, 0.0, hi)
            f_new = fun(z_new)
            if f_new <= fz + 1e-4 * g @ (z_new - z) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            return z, it
        g_new = _fd_gradient(fun, z_new, h)
        s, y = z_new - z, g_new - g
        sy = s @ y
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            r = 1.0 / sy
            V = np.eye(d) - r * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + r * np.outer(s, s)
        z, fz, g = z_new, f_new, g_new
    return z, max_iter


def _polish_equilibrium(sc, z, iterations):
    """Gauss-Newton steps on Ldot = 0 over the variables that are not at a bound."""
    h = 1e-7
    for _ in range(iterations):
        c = sc.parts(z)[1]
        if (c @ c) * sc.eq_scale**2 <= 1e-3 * sc.problem.equilibrium_tol:
            break
        free = (z > 1e-12) & (z < sc.hi - 1e-12)
        J = np.zeros((len(c), len(z)))
        for i in np.flatnonzero(free):
            e = np.zeros_like(z)
            e[i] = h
            J[:, i] = (momentum_rate_at(sc.x(z + e), sc.model) - momentum_rate_at(sc.x(z - e), sc.model)) / (
                2.0 * h * sc.eq_scale
            )
        step = np.linalg.lstsq(J, c, rcond=None)[0]
        t = 1.0
        while t > 1e-6:
            z_new = np.clip(z - t * step, 0.0, sc.hi)
            c_new = sc.parts(z_new)[1]
            if c_new @ c_new < c @ c:
                break
            t *= 0.5
        else:
            break
        z = z_new
    return z


def solve_reference_problem(problem, model, config=None):
    """Returns (x*, SolverReport)."""
    cfg = config or SolverConfig()
    sc = _Scaled(problem, model)
    z = np.clip(sc.z(problem.x0), 0.0, sc.hi)
    f0, c0, g0 = sc.parts(z)
    lam = np.zeros(len(c0))
    mu = np.zeros(len(g0))
    rho = cfg.rho0
    prev_viol = np.inf
    inner_total = 0
    outer = 0
    converged = False
    for outer in range(1, cfg.max_outer + 1):
        fun = lambda zz: _augmented(sc.parts(zz), lam, mu, rho, cfg.margin)  # noqa: E731
        # loose inner solves while far from feasibility
        tol = max(cfg.inner_tol, min(1e-4, 1e-2 * prev_viol))
        z, its = _projected_bfgs(fun, z, cfg.fd_step, cfg.max_inner, tol, sc.hi)
        inner_total += its
        f, c, g = sc.parts(z)
        eq_viol = float(c @ c) * sc.eq_scale**2
        ineq_viol = float(np.max(np.maximum(0.0, cfg.margin - g), initial=0.0))
        viol = max(np.sqrt(eq_viol) / sc.eq_scale, ineq_viol)
        log.debug("outer %d: f=%.6g eq=%.3e ineq=%.3e rho=%.1e", outer, f, eq_viol, ineq_viol, rho)
        lam = lam + rho * c
        mu = np.maximum(0.0, mu - rho * (g - cfg.margin))
        if eq_viol <= 1e-2 * problem.equilibrium_tol and ineq_viol <= 0.1 * cfg.margin:
            converged = True
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        prev_viol = viol
    z = _polish_equilibrium(sc, z, cfg.polish_iterations)
    x = np.clip(sc.x(z), problem.lower, problem.upper)
    report = make_report(x, problem, model, outer, inner_total, not converged)
    if not report.feasible:
        log.warning("reference problem %s: no feasible point found (%s)", problem.name, report)
    return x, report


def make_report(x, problem, model, outer=0, inner=0, max_iterations=False):
    eq = equilibrium_constraint(x, model)
    geometry = CollisionGeometry(model, problem.cone, active_thrusters(problem, model))
    hs = self_collision_constraints(x, model, geometry)
    hj = jet_collision_constraints(x, model, geometry=geometry)
    bv = float(np.max(np.maximum(0.0, np.maximum(problem.lower - x, x - problem.upper))))
    min_s = float(hs.min()) if len(hs) else np.inf
    min_j = float(hj.min()) if len(hj) else np.inf
    feasible = eq <= problem.equilibrium_tol and min_s >= -1e-9 and min_j >= -1e-9 and bv <= 1e-9
    return SolverReport(
        objective=objective(x, problem, model),
        equilibrium=eq,
        min_self_collision=min_s,
        min_jet_collision=min_j,
        bound_violation=bv,
        manipulability=manipulability_at(x, model),
        outer_iterations=outer,
        inner_iterations=inner,
        max_iterations=bool(max_iterations),
        feasible=bool(feasible),
    )


# --------------------------------------------------------------------------
# reference files


@dataclass
class HoverReference:
    """Solver output handed to the flight controller."""

    rpy: np.ndarray
    s: np.ndarray
    T: np.ndarray
    problem: str = ""
    report: dict = field(default_factory=dict)

    @property
    def R(self):
        return rpy_to_rot(self.rpy)

    @classmethod
    def from_x(cls, x, model, problem="", report=None):
        rpy, s, T = split(np.asarray(x, dtype=float), model)
        return cls(rpy.copy(), s.copy(), T.copy(), problem, report or {})


def save_reference(path, ref, model):
    data = {
        "format": REFERENCE_FORMAT,
        "problem": ref.problem,
        "model": model.name,
        "model_sha256": model.source_hash,
        "joints": [j.name for j in model.joints],
        "thrusters": [t.name for t in model.thrusters],
        "rpy": ref.rpy.tolist(),
        "R": ref.R.tolist(),
        "s": ref.s.tolist(),
        "T": ref.T.tolist(),
        "report": ref.report,
    }
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def load_reference(path, model=None):
    data = json.loads(Path(path).read_text())
    if data.get("format") != REFERENCE_FORMAT:
        raise ValueError(f"{path}: not a {REFERENCE_FORMAT} file")
    ref = HoverReference(
        np.array(data["rpy"], dtype=float),
        np.array(data["s"], dtype=float),
        np.array(data["T"], dtype=float),
        data.get("problem", ""),
        data.get("report", {}),
    )
    if model is not None and (len(ref.s) != model.n_joints or len(ref.T) != model.n_thrusters):
        raise ValueError(f"{path}: dimensions do not match model {model.name}")
    return ref
