"""Bound-constrained trust-region minimization of the frequency misfit.

The objective is ``phi(x) = sum_i w_i^2 (f_i(x) - f_hat_i)^2``. Each outer
iteration minimizes a reduced-order surrogate of the frequencies inside the
trust region and then verifies the candidate with one full eigen-solve; only
full-model values are ever accepted.

Optimization runs in box-relative coordinates ``u = (x - a) / (b - a)`` of the
problem's search box, so tolerances are unit-free.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import lsq_linear, minimize

from .diagnostics import ellipsoid_svd, relative_jacobian, unit_jacobian
from .eig import TWO_PI, FreqJacobian, ModalSolution, SolverOptions, fd_jacobian, freq_jacobian, solve_modes
from .errors import ModelError, NotPositiveDefinite
from .model import ParamBox, UpdatingProblem

log = logging.getLogger(__name__)

MAX_INFEASIBLE = 10  # non-PD candidates tolerated before a solve gives up


@dataclass(frozen=True)
class LocalOptions:
    max_iter: int = 200
    gtol: float = 1e-8
    xtol: float = 1e-10
    accept_ratio: float = 0.1
    expand_ratio: float = 0.75
    shrink: float = 0.25
    expand: float = 2.0
    init_radius: float = 0.1  # fraction of the scaled box diagonal
    inner_iter: int = 20
    subspace: int | None = None  # surrogate/Lanczos basis size
    fd_step: float = 1e-6
    solver: SolverOptions = field(default_factory=SolverOptions)

    def solver_options(self) -> SolverOptions:
        if self.subspace is None:
            return self.solver
        return replace(self.solver, subspace=self.subspace)


# -- surrogate ----------------------------------------------------------------


@dataclass
class SurrogateModel:
    """Galerkin projection of the affine pencil onto a fixed basis.

    Evaluating it costs O(m^3) for an m-column basis, independent of n.
    """

    center: np.ndarray
    basis: np.ndarray
    K_red: np.ndarray  # (p + 1, m, m)
    M_red: np.ndarray
    q: int
    radius: float = np.inf

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def reduced_pencil(self, x) -> tuple[np.ndarray, np.ndarray]:
        c = np.concatenate([[1.0], np.asarray(x, dtype=float)])
        return np.tensordot(c, self.K_red, axes=1), np.tensordot(c, self.M_red, axes=1)

    def modes(self, x) -> tuple[np.ndarray, np.ndarray]:
        Kr, Mr = self.reduced_pencil(x)
        try:
            lam, Y = sla.eigh(Kr, Mr, subset_by_index=[0, self.q - 1])
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("reduced mass matrix not positive definite", x=x) from None
        if np.any(lam <= 0):
            raise NotPositiveDefinite("reduced stiffness not positive definite", x=x)
        return lam, Y

    def freqs(self, x) -> np.ndarray:
        return np.sqrt(self.modes(x)[0]) / TWO_PI

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Surrogate frequencies and their Jacobian (Hz per parameter unit)."""
        lam, Y = self.modes(x)
        f = np.sqrt(lam) / TWO_PI
        kq = np.einsum("ai,jab,bi->ji", Y, self.K_red[1:], Y)
        mq = np.einsum("ai,jab,bi->ji", Y, self.M_red[1:], Y)
        J = ((kq - mq * lam) / (8.0 * np.pi**2 * f)).T
        return f, J


def _surrogate_from_basis(pencil, center, basis, q) -> SurrogateModel:
    Kr, Mr = pencil.project(basis)
    return SurrogateModel(center=np.array(center, dtype=float), basis=basis, K_red=Kr, M_red=Mr, q=q)


def build_surrogate(pencil, x_c, q: int, m: int, opts: SolverOptions | None = None, solution=None) -> SurrogateModel:
    """Reduced model anchored at ``x_c`` on the m-dimensional Lanczos basis."""
    if m < q:
        raise ModelError(f"surrogate basis size m={m} is smaller than q={q}")
    opts = replace(opts or SolverOptions(), subspace=m)
    if solution is None or solution.basis.shape[1] < min(m, pencil.n):
        solution = solve_modes(pencil, x_c, q, opts)
    basis = solution.basis[:, : min(m, solution.basis.shape[1])]
    return _surrogate_from_basis(pencil, x_c, basis, q)


def augment_surrogate(pencil, sur: SurrogateModel, vectors) -> SurrogateModel:
    """Enlarge the basis with ``vectors`` (M(center)-orthogonalized, near-dependent ones dropped)."""
    _, Mc = pencil.assemble(sur.center)
    V = sur.basis
    MV = Mc @ V
    extra = []
    for v in np.asarray(vectors, dtype=float).T:
        v = v.copy()
        ref = np.sqrt(max(v @ (Mc @ v), 0.0))
        for _ in range(2):
            v -= V @ (MV.T @ v)
            for e in extra:
                v -= e * (e @ (Mc @ v))
        nrm = np.sqrt(max(v @ (Mc @ v), 0.0))
        if ref > 0 and nrm > 1e-8 * ref:
            extra.append(v / nrm)
    if not extra:
        return sur
    basis = np.column_stack([V, *extra])
    return _surrogate_from_basis(pencil, sur.center, basis, sur.q)


# -- local minimum record -------------------------------------------------------


@dataclass
class MinimumRecord:
    """Outcome of one local solve.

    ``active_bounds`` holds ``(index, "lower"|"upper", "domain"|"internal")``
    tags; "domain" faces belong to the problem's search box, "internal" ones
    only to the subdivision box the solve was confined to.
    """

    x_star: np.ndarray
    phi: float
    freqs: np.ndarray
    J: np.ndarray  # physical d f / d x
    J_scaled: np.ndarray  # relative: J_ij * x_j / f_hat_i
    J_unit: np.ndarray  # J_ij * (b_j - a_j) / f_hat_i, search-box coordinates
    sigma: np.ndarray
    U: np.ndarray
    jacobian_valid: bool
    active_bounds: tuple
    iterations: int
    converged: bool
    evaluations: int
    reason: str = ""
    pg_norm: float = np.nan
    box: ParamBox | None = None
    x_start: np.ndarray | None = None
    phi_history: list = field(default_factory=list)

    def on_internal_face(self) -> bool:
        return any(tag[2] == "internal" for tag in self.active_bounds)


@dataclass
class _Point:
    x: np.ndarray
    u: np.ndarray
    sol: ModalSolution
    jac: FreqJacobian
    r: np.ndarray
    Ju: np.ndarray
    phi: float

    @property
    def grad(self) -> np.ndarray:
        return 2.0 * self.Ju.T @ self.r


class _Evaluator:
    """Full-model evaluations with a running solve count."""

    def __init__(self, problem: UpdatingProblem, box: ParamBox, opts: LocalOptions):
        self.problem = problem
        self.box = box
        self.omega = problem.box
        self.opts = opts
        self.solver = opts.solver_options()
        self.count = 0

    def residual(self, f):
        return self.problem.weights * (f - self.problem.targets)

    def __call__(self, x) -> _Point:
        p = self.problem
        x = np.asarray(x, dtype=float)
        self.count += 1
        sol = solve_modes(p.pencil, x, p.q, self.solver)
        jac = freq_jacobian(p.pencil, sol)
        if not jac.valid:
            jac, extra = fd_jacobian(p.pencil, x, p.q, self.opts.fd_step, self.box, self.solver)
            self.count += extra
        r = self.residual(sol.freqs)
        Ju = (p.weights[:, None] * jac.J) * self.omega.width
        return _Point(x=x, u=self.omega.to_unit(x), sol=sol, jac=jac, r=r, Ju=Ju, phi=float(r @ r))


def objective(problem: UpdatingProblem, x, opts: SolverOptions | None = None) -> float:
    """Weighted squared frequency misfit at ``x`` (full model)."""
    sol = solve_modes(problem.pencil, x, problem.q, opts)
    r = problem.weights * (sol.freqs - problem.targets)
    return float(r @ r)


def _projected_gradient(u, g, lo, hi) -> float:
    return float(np.linalg.norm(np.clip(u - g, lo, hi) - u))


def _make_record(problem, box, pt: _Point, *, iterations, converged, reason, evaluations, pg, x_start, history, opts):
    omega = problem.box
    g = pt.grad
    active = []
    for j in range(problem.p):
        gtol = opts.gtol
        if pt.x[j] <= box.lower[j] and g[j] > gtol:
            face = "domain" if box.lower[j] <= omega.lower[j] else "internal"
            active.append((j, "lower", face))
        elif pt.x[j] >= box.upper[j] and g[j] < -gtol:
            face = "domain" if box.upper[j] >= omega.upper[j] else "internal"
            active.append((j, "upper", face))
    J_unit = unit_jacobian(pt.jac.J, omega.width, problem.targets)
    sigma, U = ellipsoid_svd(J_unit)
    return MinimumRecord(
        x_star=pt.x.copy(),
        phi=pt.phi,
        freqs=pt.sol.freqs.copy(),
        J=pt.jac.J.copy(),
        J_scaled=relative_jacobian(pt.jac.J, pt.x, problem.targets),
        J_unit=J_unit,
        sigma=sigma,
        U=U,
        jacobian_valid=pt.jac.method == "analytic",
        active_bounds=tuple(active),
        iterations=iterations,
        converged=converged,
        evaluations=evaluations,
        reason=reason,
        pg_norm=pg,
        box=box,
        x_start=np.asarray(x_start, dtype=float).copy(),
        phi_history=history,
    )


def solve_local(problem: UpdatingProblem, box: ParamBox | None = None, x_start=None, opts: LocalOptions | None = None) -> MinimumRecord:
    """Local minimum of the misfit inside ``box`` starting from ``x_start``.

    ``box`` defaults to the problem's search box and ``x_start`` to the box
    midpoint. Raises :class:`NotPositiveDefinite` if the start is infeasible.
    """
    opts = opts or LocalOptions()
    box = box or problem.box
    omega = problem.box
    x_start = box.midpoint if x_start is None else np.asarray(x_start, dtype=float)
    if not box.contains(x_start):
        raise ModelError(f"start point {x_start} is outside the box")
    if not (omega.contains(box.lower) and omega.contains(box.upper)):
        raise ModelError("local box must lie inside the problem box")

    evaluate = _Evaluator(problem, box, opts)
    lo, hi = omega.to_unit(box.lower), omega.to_unit(box.upper)
    lo, hi = np.maximum(lo, 0.0), np.minimum(hi, 1.0)

    def to_x(u):
        # Snap to exact box faces so active-bound tests are exact.
        x = box.clip(omega.from_unit(u))
        x[u <= lo] = box.lower[u <= lo]
        x[u >= hi] = box.upper[u >= hi]
        return x

    cur = evaluate(x_start)
    m = opts.solver_options().subspace_size(problem.q, problem.pencil.n)
    sur = build_surrogate(problem.pencil, cur.x, problem.q, m, evaluate.solver, solution=cur.sol)
    radius = opts.init_radius * float(np.linalg.norm(hi - lo))
    max_radius = float(np.linalg.norm(hi - lo))
    history = [cur.phi]
    gn_failures = 0
    iterations = 0
    converged, reason = False, "max-iterations"
    pg = _projected_gradient(cur.u, cur.grad, lo, hi)
    infeasible_hits = 0

    def sur_eval(u):
        f, J = sur.evaluate(to_x(u))
        r = evaluate.residual(f)
        return r, (problem.weights[:, None] * J) * omega.width

    while True:
        pg = _projected_gradient(cur.u, cur.grad, lo, hi)
        if pg <= opts.gtol:
            converged, reason = True, "gradient"
            break
        if iterations >= opts.max_iter:
            break
        iterations += 1
        lo_tr = np.maximum(lo, cur.u - radius)
        hi_tr = np.minimum(hi, cur.u + radius)
        use_sd = gn_failures >= 2
        try:
            r0, _ = sur_eval(cur.u)
            phi_s0 = float(r0 @ r0)
            if use_sd:
                u_new, phi_s = _steepest_descent(sur_eval, cur.u, cur.grad, lo_tr, hi_tr, radius)
            else:
                u_new, phi_s = _gauss_newton(sur_eval, cur.u, lo_tr, hi_tr, opts.inner_iter)
        except NotPositiveDefinite:
            u_new, phi_s, phi_s0 = cur.u, np.inf, cur.phi
        step = u_new - cur.u
        step_norm = float(np.max(np.abs(step))) if step.size else 0.0
        pred = phi_s0 - phi_s

        cand = None
        if step_norm > 0 and pred > 0:
            try:
                cand = evaluate(to_x(u_new))
            except NotPositiveDefinite:
                infeasible_hits += 1
                if infeasible_hits >= MAX_INFEASIBLE:
                    reason = "infeasible"
                    break
        rho = (cur.phi - cand.phi) / pred if cand is not None else -np.inf

        if cand is not None and rho >= opts.accept_ratio and cand.phi < cur.phi:
            if rho > opts.expand_ratio and step_norm >= 0.99 * radius:
                radius = min(opts.expand * radius, max_radius)
            big = step_norm > 0.5 * radius
            cur = cand
            history.append(cur.phi)
            gn_failures = 0
            if big or sur.m > 3 * m:
                sur = build_surrogate(problem.pencil, cur.x, problem.q, m, evaluate.solver, solution=cur.sol)
            else:
                sur = augment_surrogate(problem.pencil, sur, cur.sol.modes)
            if step_norm <= opts.xtol:
                converged, reason = True, "step"
                break
            continue

        # Rejected: shrink, enrich the local model with what the candidate taught us.
        radius *= opts.shrink
        if use_sd:
            gn_failures = 0  # give Gauss-Newton another chance on the smaller region
        else:
            gn_failures += 1
        if cand is not None:
            sur = augment_surrogate(problem.pencil, sur, cand.sol.modes)
        elif step_norm == 0 or pred <= 0:
            # Surrogate sees no descent: re-anchor it at the current iterate.
            sur = build_surrogate(problem.pencil, cur.x, problem.q, m, evaluate.solver, solution=cur.sol)
        if radius <= opts.xtol:
            converged, reason = True, "step"
            break

    log.debug("local solve from %s: %s after %d iterations, phi=%.3e", x_start, reason, iterations, cur.phi)
    return _make_record(
        problem,
        box,
        cur,
        iterations=iterations,
        converged=converged,
        reason=reason,
        evaluations=evaluate.count,
        pg=pg,
        x_start=x_start,
        history=history,
        opts=opts,
    )


def _gauss_newton(sur_eval, u0, lo, hi, max_iter: int):
    """Projected Gauss-Newton on the surrogate residual within ``[lo, hi]``."""
    u = u0.copy()
    r, Ju = sur_eval(u)
    phi = float(r @ r)
    for _ in range(max_iter):
        lb, ub = lo - u, hi - u
        ub = np.maximum(ub, lb + 1e-300)
        d = lsq_linear(Ju, -r, bounds=(lb, ub), method="bvls").x
        if not np.all(np.isfinite(d)) or np.max(np.abs(d)) <= 1e-15:
            break
        t = 1.0
        improved = False
        while t > 1e-6:
            cand = np.clip(u + t * d, lo, hi)
            try:
                r2, J2 = sur_eval(cand)
            except NotPositiveDefinite:
                t *= 0.5
                continue
            phi2 = float(r2 @ r2)
            if phi2 < phi:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        gain = phi - phi2
        u, r, Ju, phi = cand, r2, J2, phi2
        if gain <= 1e-15 * max(phi, 1e-300) or phi == 0.0:
            break
    return _quasi_newton(sur_eval, u, phi, lo, hi, max_iter)


def _quasi_newton(sur_eval, u0, phi0, lo, hi, max_iter: int):
    """Bounded L-BFGS refinement of the surrogate misfit.

    Gauss-Newton drops the second-order residual term and so only converges
    linearly at minima where the residual stays nonzero and the Jacobian is
    (nearly) rank deficient; the quasi-Newton model picks that curvature up.
    """
    if np.all(hi - lo <= 0):
        return u0, phi0

    def fun(u):
        try:
            r, Ju = sur_eval(np.clip(u, lo, hi))
        except NotPositiveDefinite:
            return np.inf, np.zeros_like(u)
        return float(r @ r), 2.0 * Ju.T @ r

    res = minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"maxiter": 5 * max_iter, "ftol": 1e-15, "gtol": 1e-14})
    if np.isfinite(res.fun) and res.fun < phi0:
        return np.clip(res.x, lo, hi), float(res.fun)
    return u0, phi0


def _steepest_descent(sur_eval, u0, grad, lo, hi, radius):
    """Backtracking projected steepest descent on the surrogate."""
    r, _ = sur_eval(u0)
    phi = float(r @ r)
    gn = np.linalg.norm(grad)
    if gn == 0:
        return u0.copy(), phi
    d = -grad / gn * radius
    t = 1.0
    while t > 1e-8:
        cand = np.clip(u0 + t * d, lo, hi)
        try:
            r2, _ = sur_eval(cand)
        except NotPositiveDefinite:
            t *= 0.5
            continue
        phi2 = float(r2 @ r2)
        if phi2 < phi:
            return cand, phi2
        t *= 0.5
    return u0.copy(), phi
