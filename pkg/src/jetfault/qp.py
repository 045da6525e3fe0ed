"""Dense box-constrained convex QP:  min 1/2 x'Hx + f'x  s.t.  lb <= x <= ub.

Primal active-set method. The working set holds variables pinned at a bound;
each iteration takes an exact Newton step on the free subspace, truncated at
the first blocking bound. At a subspace minimiser, the pinned variable with
the most negative multiplier is released. For positive definite H the
objective decreases monotonically and the method terminates finitely.
"""

from dataclasses import dataclass

import numpy as np

REGULARIZATION = 1e-8


class InfeasibleBounds(ValueError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, best, residual, iterations):
        super().__init__(f"box QP did not converge in {iterations} iterations (KKT residual {residual:.3e})")
        self.best = best
        self.residual = residual
        self.iterations = iterations


@dataclass
class BoxQP:
    H: np.ndarray
    f: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def dim(self):
        return len(self.f)

    def objective(self, x):
        return 0.5 * x @ self.H @ x + self.f @ x

    def with_bounds(self, lb, ub):
        return BoxQP(self.H, self.f, np.asarray(lb, dtype=float), np.asarray(ub, dtype=float))


@dataclass
class QPResult:
    x: np.ndarray
    residual: float
    iterations: int
    objective: float


def kkt_residual(problem, x):
    """Infinity norm of the projected-gradient step x - P(x - grad)."""
    g = problem.H @ x + problem.f
    return float(np.max(np.abs(x - np.clip(x - g, problem.lb, problem.ub)), initial=0.0))


def _subspace_solve(H, rhs):
    try:
        return np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, rhs, rcond=None)[0]


def solve_box_qp(problem, tol=1e-10, max_iter=500, x0=None):
    H, f = problem.H, problem.f
    lb = np.asarray(problem.lb, dtype=float)
    ub = np.asarray(problem.ub, dtype=float)
    d = len(f)
    if np.any(lb > ub):
        bad = np.flatnonzero(lb > ub)
        raise InfeasibleBounds(f"lb > ub at indices {bad.tolist()}")

    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    x = np.clip(x, lb, ub)
    g = H @ x + f
    # -1 pinned at lb, +1 pinned at ub, 0 free; a bound hit exactly counts as active
    work = np.zeros(d, dtype=int)
    work[(x <= lb) & (g >= 0)] = -1
    work[(x >= ub) & (g <= 0)] = 1

    for it in range(1, max_iter + 1):
        free = work == 0
        if free.any():
            g = H @ x + f
            step = np.zeros(d)
            step[free] = -_subspace_solve(H[np.ix_(free, free)], g[free])
            alpha, blocking = 1.0, -1
            for i in np.flatnonzero(free):
                if step[i] < 0 and np.isfinite(lb[i]):
                    a = (lb[i] - x[i]) / step[i]
                    if a < alpha:
                        alpha, blocking = a, i
                elif step[i] > 0 and np.isfinite(ub[i]):
                    a = (ub[i] - x[i]) / step[i]
                    if a < alpha:
                        alpha, blocking = a, i
            alpha = max(alpha, 0.0)
            x = x + alpha * step
            if blocking >= 0:
                work[blocking] = -1 if step[blocking] < 0 else 1
                x[blocking] = lb[blocking] if work[blocking] < 0 else ub[blocking]
                x = np.clip(x, lb, ub)
                continue
        x[work < 0] = lb[work < 0]
        x[work > 0] = ub[work > 0]
        g = H @ x + f
        # multipliers of pinned bounds: g >= 0 at lb, g <= 0 at ub
        mult = np.where(work < 0, g, np.where(work > 0, -g, np.inf))
        i = int(np.argmin(mult))
        if mult[i] < 0 and abs(mult[i]) > tol:
            work[i] = 0
            continue
        res = kkt_residual(problem, x)
        if res <= tol:
            return QPResult(x, res, it, float(problem.objective(x)))
        # numerically stalled on a correct working set: refine the free part
        free = work == 0
        if free.any():
            x[free] -= _subspace_solve(H[np.ix_(free, free)], g[free])
            x = np.clip(x, lb, ub)
            res = kkt_residual(problem, x)
            if res <= tol:
                return QPResult(x, res, it, float(problem.objective(x)))
        work[(work == 0) & (x <= lb)] = -1
        work[(work == 0) & (x >= ub)] = 1
    res = kkt_residual(problem, x)
    raise NonConvergence(x, res, max_iter)


def _weight_matrix(W, rows):
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        return float(W) * np.eye(rows)
    if W.ndim == 1:
        if len(W) != rows:
            raise ValueError(f"weight vector length {len(W)} != task rows {rows}")
        return np.diag(W)
    if W.shape != (rows, rows):
        raise ValueError(f"weight matrix shape {W.shape} != ({rows}, {rows})")
    return W


def stack_tasks(tasks, eps=REGULARIZATION):
    """Least-squares task stack sum_i |J_i x - b_i|^2_{W_i} / 2 as an unbounded BoxQP.

    ``tasks`` is a sequence of ``(J, b, W)``; W may be a scalar, a diagonal
    given as a vector, or a full matrix.
    """
    if not tasks:
        raise ValueError("empty task list")
    d = np.atleast_2d(tasks[0][0]).shape[1]
    H = eps * np.eye(d)
    f = np.zeros(d)
    for k, (J, b, W) in enumerate(tasks):
        J = np.atleast_2d(np.asarray(J, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if J.shape[1] != d:
            raise ValueError(f"task {k}: {J.shape[1]} columns, expected {d}")
        if b.shape != (J.shape[0],):
            raise ValueError(f"task {k}: target has shape {b.shape}, expected ({J.shape[0]},)")
        Wm = _weight_matrix(W, J.shape[0])
        JtW = J.T @ Wm
        H += JtW @ J
        f -= JtW @ b
    H = 0.5 * (H + H.T)
    return BoxQP(H, f, np.full(d, -np.inf), np.full(d, np.inf))
