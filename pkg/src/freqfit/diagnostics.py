"""Identifiability of the parameters at a minimum.

Everything here works on the *scaled* Jacobian, i.e. frequencies measured
relative to their targets and parameters relative to their optimal values, so
that ``Js[i, j] = (d f_i / d x_j) * x_j / f_hat_i``. For each parameter:

* ``zeta_j``: norm of column j, the sensitivity of the frequencies to x_j.
* ``eta_j``: the smallest directional derivative over directions in which
  x_j moves at unit speed while the other parameters move at combined speed
  at most one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import SingularScaling

log = logging.getLogger(__name__)

UNIDENTIFIABLE = "unidentifiable"
RELIABLE = "reliable"
MIXED = "mixed"


# -- Jacobian scalings ------------------------------------------------------


def relative_jacobian(J, x_hat, f_hat) -> np.ndarray:
    """``J[i, j] * x_hat[j] / f_hat[i]``."""
    f_hat = np.asarray(f_hat, dtype=float)
    if np.any(f_hat == 0):
        raise SingularScaling("zero reference frequency")
    return np.asarray(J, dtype=float) * np.asarray(x_hat, dtype=float)[None, :] / f_hat[:, None]


def unit_jacobian(J, width, f_hat) -> np.ndarray:
    """Jacobian of ``f / f_hat`` with respect to box-relative coordinates."""
    return relative_jacobian(J, width, f_hat)


def ellipsoid_svd(Js) -> tuple[np.ndarray, np.ndarray]:
    """``(sigma, U)`` from the SVD ``U diag(sigma) V^T`` of ``Js^T``.

    ``sigma`` has p entries (zero-padded when q < p) so that ``diag(sigma) U^T``
    is square.
    """
    A = np.asarray(Js, dtype=float).T  # p x q
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    sigma = np.zeros(A.shape[0])
    sigma[: s.size] = s
    return sigma, U


@dataclass
class ScaledJacobian:
    Js: np.ndarray
    x_hat: np.ndarray
    f_hat: np.ndarray
    weighted: np.ndarray | None = None  # diag(w) J diag(x_hat)
    method: str = "analytic"


def scaled_jacobian(problem, record) -> ScaledJacobian:
    """Recompute the relative Jacobian at ``record.x_star``.

    Falls back to central differences when a needed eigenvalue is
    (nearly) repeated.
    """
    from .eig import fd_jacobian, freq_jacobian, solve_modes

    x_hat = np.asarray(record.x_star, dtype=float)
    sol = solve_modes(problem.pencil, x_hat, problem.q)
    jac = freq_jacobian(problem.pencil, sol)
    if not jac.valid:
        jac, _ = fd_jacobian(problem.pencil, x_hat, problem.q, box=problem.box)
    Js = relative_jacobian(jac.J, x_hat, problem.targets)
    weighted = problem.weights[:, None] * jac.J * x_hat[None, :]
    return ScaledJacobian(Js=Js, x_hat=x_hat, f_hat=problem.targets.copy(), weighted=weighted, method=jac.method)


def _matrix(Js) -> np.ndarray:
    return np.asarray(Js.Js if isinstance(Js, ScaledJacobian) else Js, dtype=float)


# -- zeta / eta -------------------------------------------------------------


def zeta(Js) -> np.ndarray:
    return np.linalg.norm(_matrix(Js), axis=0)


@dataclass
class EtaResult:
    value: float
    v: np.ndarray  # full direction, v[j] == 1
    path: str  # "unconstrained" | "constrained"
    degraded: bool = False
    iterations: int = 0


def _insert(v_other: np.ndarray, j: int) -> np.ndarray:
    return np.insert(v_other, j, 1.0)


def eta(Js, j: int, max_iter: int = 100, kkt_tol: float = 1e-10) -> EtaResult:
    """``min ||Js v||`` over ``v`` with ``v_j = 1`` and ``||v_{-j}|| <= 1``.

    The unconstrained least-squares minimizer (pseudoinverse) is returned when
    it already lies in the unit ball; otherwise an SQP solve starts from its
    projection onto the ball and a Newton solve of the optimality conditions
    on the sphere refines the result.
    """
    A = _matrix(Js)
    p = A.shape[1]
    if not 0 <= j < p:
        raise IndexError(f"parameter index {j} out of range for p={p}")
    a = A[:, j]
    B = np.delete(A, j, axis=1)
    zeta_j = float(zeta(A)[j])
    if p == 1:
        return EtaResult(zeta_j, np.ones(1), "unconstrained")

    v_bar = -np.linalg.pinv(B) @ a
    if np.linalg.norm(v_bar) <= 1.0:
        v = _insert(v_bar, j)
        value = float(np.linalg.norm(A @ v))
        return EtaResult(min(value, zeta_j), v, "unconstrained")

    v0 = v_bar / np.linalg.norm(v_bar)
    # The SQP tolerances are absolute, so solve on a copy with ||a|| = 1.
    a_s, B_s = a / zeta_j, B / zeta_j

    def fun(z):
        r = a_s + B_s @ z
        return float(r @ r)

    def grad(z):
        return 2.0 * B_s.T @ (a_s + B_s @ z)

    cons = {"type": "ineq", "fun": lambda z: 1.0 - z @ z, "jac": lambda z: -2.0 * z}
    res = minimize(fun, v0, jac=grad, constraints=[cons], method="SLSQP", options={"maxiter": max_iter, "ftol": kkt_tol})
    z = res.x
    nz = np.linalg.norm(z)
    if nz > 1.0:
        z = z / nz
    z_kkt = _kkt_polish(B_s, a_s, z)
    candidates = [(np.linalg.norm(a + B @ z), z), (np.linalg.norm(a + B @ v0), v0), (zeta_j, np.zeros(p - 1))]
    if z_kkt is not None:
        candidates.insert(0, (np.linalg.norm(a + B @ z_kkt), z_kkt))
    value, z_best = min(candidates, key=lambda c: c[0])
    degraded = not res.success and z_kkt is None
    if degraded:
        log.warning("eta_%d: SQP did not converge (%s); reporting an upper bound", j, res.message)
    return EtaResult(float(value), _insert(z_best, j), "constrained", degraded, int(res.nit))


def _kkt_polish(B, a, z, max_iter: int = 50, tol: float = 1e-14):
    """Newton iteration on the boundary KKT system of ``min ||a + B z||``.

    Solves ``(B^T B + mu I) z = -B^T a`` with ``||z|| = 1`` and ``mu >= 0``
    starting from ``z``; returns ``None`` if it does not converge there.
    """
    G = B.T @ B
    g = B.T @ a
    k = z.size
    z = z / np.linalg.norm(z)
    mu = max(-float(z @ (G @ z + g)), 0.0)
    for _ in range(max_iter):
        F = np.concatenate([G @ z + mu * z + g, [0.5 * (z @ z - 1.0)]])
        scale = 1.0 + np.linalg.norm(g)
        if np.linalg.norm(F) <= tol * scale:
            break
        H = np.zeros((k + 1, k + 1))
        H[:k, :k] = G + mu * np.eye(k)
        H[:k, k] = z
        H[k, :k] = z
        try:
            step = np.linalg.solve(H, -F)
        except np.linalg.LinAlgError:
            return None
        z, mu = z + step[:k], mu + step[k]
    else:
        return None
    if mu < 0 or not np.all(np.isfinite(z)):
        return None
    return z / np.linalg.norm(z)


def classify(zeta_j: float, eta_j: float, small_thr: float = 0.1, large_thr: float = 0.5) -> str:
    if zeta_j < small_thr:
        return UNIDENTIFIABLE
    if eta_j > large_thr:
        return RELIABLE
    return MIXED


@dataclass
class ParameterQuality:
    label: str
    zeta: float
    eta: float
    inv_zeta: float
    inv_eta: float
    cls: str
    eta_path: str
    degraded: bool = False


@dataclass
class ReliabilityReport:
    """Per-parameter zeta/eta table plus the SVD of the scaled Jacobian.

    ``inv_zeta``/``inv_eta`` read as the first-order percentage error of a
    parameter per 1 % frequency error (lower and upper estimate).
    """

    params: list[ParameterQuality]
    singular_values: np.ndarray
    right_vectors: np.ndarray  # columns are right singular vectors
    Js: np.ndarray = field(repr=False, default=None)

    @property
    def zeta(self) -> np.ndarray:
        return np.array([q.zeta for q in self.params])

    @property
    def eta(self) -> np.ndarray:
        return np.array([q.eta for q in self.params])

    @property
    def classes(self) -> list[str]:
        return [q.cls for q in self.params]


def _inv(v: float) -> float:
    return 1.0 / v if v > 0 else np.inf


def reliability(Js, labels=None, small_thr: float = 0.1, large_thr: float = 0.5) -> ReliabilityReport:
    A = _matrix(Js)
    p = A.shape[1]
    labels = list(labels) if labels is not None else [f"x{j + 1}" for j in range(p)]
    z = zeta(A)
    rows = []
    for j in range(p):
        e = eta(A, j)
        rows.append(
            ParameterQuality(
                label=labels[j],
                zeta=float(z[j]),
                eta=e.value,
                inv_zeta=_inv(z[j]),
                inv_eta=_inv(e.value),
                cls=classify(z[j], e.value, small_thr, large_thr),
                eta_path=e.path,
                degraded=e.degraded,
            )
        )
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    return ReliabilityReport(params=rows, singular_values=s, right_vectors=Vt.T, Js=A)


# -- pseudominimum ellipsoid ------------------------------------------------


@dataclass
class EllipsoidSet:
    """First-order set of points that reproduce the targets within ``epsilon``.

    Membership is ``||diag(sigma) U^T ((x - center) / scale)|| <= epsilon``;
    ``scale`` maps physical displacements to the coordinates the Jacobian was
    taken in.
    """

    center: np.ndarray
    sigma: np.ndarray
    U: np.ndarray
    epsilon: float
    scale: np.ndarray

    def distance(self, x) -> float:
        d = (np.asarray(x, dtype=float) - self.center) / self.scale
        return float(np.linalg.norm(self.sigma * (self.U.T @ d)))

    def contains(self, x) -> bool:
        return self.distance(x) <= self.epsilon


def ellipsoid(problem, record, epsilon: float | None = None) -> EllipsoidSet:
    """Pseudominimum ellipsoid of ``record`` in search-box coordinates."""
    eps = problem.epsilon if epsilon is None else epsilon
    return EllipsoidSet(
        center=np.asarray(record.x_star, dtype=float).copy(),
        sigma=record.sigma.copy(),
        U=record.U.copy(),
        epsilon=float(eps),
        scale=problem.box.width.copy(),
    )
