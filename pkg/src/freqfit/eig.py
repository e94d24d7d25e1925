"""Lowest eigenpairs of ``K(x) u = lambda M(x) u`` and frequency derivatives.

The solver is a shift-invert Lanczos iteration with shift 0: Krylov vectors of
``K^{-1} M`` are built in the M-inner product with full reorthogonalization
and thick (Krylov-Schur) restarts. Convergence is judged on the true residual
``||K u - lambda M u|| / ||K u||`` of each wanted Ritz pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, ModelError, NotPositiveDefinite, SingularScaling
from .sparse import factorize_spd

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    subspace: int | None = None  # default max(2q + 10, 30)
    max_restarts: int = 100
    dense_crossover: int = 600
    verify: bool = True
    verify_rtol: float = 1e-8
    gap_threshold: float = 1e-6
    method: str = "lanczos"  # or "dense"
    seed: int = 0

    def subspace_size(self, q: int, n: int) -> int:
        m = self.subspace if self.subspace is not None else max(2 * q + 10, 30)
        return int(min(max(m, q + 1), n))


@dataclass
class ModalSolution:
    """Lowest ``q`` modes at parameter point ``x``.

    ``basis`` is an M(x)-orthonormal n x m basis whose first q columns are the
    modes; it spans the final Krylov space and seeds reduced-order models.
    """

    x: np.ndarray
    lambdas: np.ndarray
    freqs: np.ndarray
    modes: np.ndarray
    residuals: np.ndarray
    gap_ok: np.ndarray
    basis: np.ndarray
    restarts: int = 0
    method: str = "lanczos"
    next_lambda: float = np.inf

    @property
    def q(self) -> int:
        return self.lambdas.size


@dataclass
class FreqJacobian:
    """``J[i, j] = d f_i / d x_j`` in Hz per parameter unit."""

    J: np.ndarray
    valid: bool
    dlambda: np.ndarray = field(repr=False, default=None)
    method: str = "analytic"


def _residuals(K, M, lambdas, U) -> np.ndarray:
    KU = K @ U
    R = KU - (M @ U) * lambdas
    return np.linalg.norm(R, axis=0) / np.linalg.norm(KU, axis=0)


def _gap_flags(lambdas: np.ndarray, next_lambda: float, threshold: float) -> np.ndarray:
    ext = np.concatenate([lambdas, [next_lambda]])
    ok = np.ones(lambdas.size, dtype=bool)
    for i, lam in enumerate(lambdas):
        others = np.delete(ext, i)
        gap = np.min(np.abs(others - lam)) / abs(lam) if others.size else np.inf
        ok[i] = gap >= threshold
    return ok


def _m_normalize(w, M):
    Mw = M @ w
    nrm2 = float(w @ Mw)
    return nrm2, Mw


def lanczos_shift_invert(K, M, q: int, opts: SolverOptions = SolverOptions(), x=None):
    """Krylov-Schur Lanczos on ``K^{-1} M`` in the M-inner product.

    Returns ``(lambdas, U, basis, next_lambda, restarts)`` with eigenvalues
    ascending and ``U`` M-orthonormal.
    """
    n = K.shape[0]
    if not 1 <= q <= n:
        raise ModelError(f"cannot compute {q} modes of a {n}-DOF model")
    factor = factorize_spd(K, x=x)
    m = opts.subspace_size(q, n)
    keep = min(q + max((m - q) // 2, 1), m - 1) if m > q else q
    rng = np.random.default_rng(opts.seed)

    V = np.zeros((n, m + 1))
    MV = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))

    def start_vector(j):
        # Random vector M-orthogonal to V[:, :j]; None when the space is exhausted.
        for _ in range(3):
            v = rng.standard_normal(n)
            for _ in range(2):
                v -= V[:, :j] @ (MV[:, :j].T @ v)
            nrm2, Mv = _m_normalize(v, M)
            if nrm2 < 0:
                raise NotPositiveDefinite("M(x) is not positive definite", x=x)
            if nrm2 > 1e-20:
                s = np.sqrt(nrm2)
                return v / s, Mv / s
        return None

    sv = start_vector(0)
    V[:, 0], MV[:, 0] = sv
    j0 = 0
    restarts = 0
    best_res = None
    while True:
        exhausted_at = None
        for j in range(j0, m):
            w = factor.solve(MV[:, j])
            h = MV[:, : j + 1].T @ w
            w -= V[:, : j + 1] @ h
            h2 = MV[:, : j + 1].T @ w
            w -= V[:, : j + 1] @ h2
            h += h2
            H[: j + 1, j] = h
            nrm2, Mw = _m_normalize(w, M)
            if nrm2 < -1e-12 * max(abs(h[j]), 1e-300) ** 2:
                raise NotPositiveDefinite("M(x) is not positive definite", x=x)
            beta = np.sqrt(max(nrm2, 0.0))
            if beta > 1e-12 * max(np.abs(h).max(), 1e-300):
                H[j + 1, j] = beta
                V[:, j + 1] = w / beta
                MV[:, j + 1] = Mw / beta
                continue
            # Invariant subspace: decouple and continue with a fresh direction.
            H[j + 1, j] = 0.0
            sv = start_vector(j + 1) if j + 1 < n else None
            if sv is None:
                exhausted_at = j + 1
                break
            V[:, j + 1], MV[:, j + 1] = sv

        size = exhausted_at if exhausted_at is not None else m
        Hm = H[:size, :size]
        Hm = 0.5 * (Hm + Hm.T)
        theta, S = np.linalg.eigh(Hm)
        order = np.argsort(theta)[::-1]
        theta, S = theta[order], S[:, order]
        if np.any(theta[:q] <= 0):
            raise NotPositiveDefinite("non-positive eigenvalue: M(x) is not positive definite", x=x)
        Y = V[:, :size] @ S
        lambdas = 1.0 / theta[:q]
        res = _residuals(K, M, lambdas, Y[:, :q])
        best_res = res if best_res is None else np.minimum(best_res, res)
        next_lambda = 1.0 / theta[q] if size > q and theta[q] > 0 else np.inf
        if np.all(res <= opts.tol) or exhausted_at is not None or size == n:
            return lambdas, Y[:, :q], Y, next_lambda, restarts
        if restarts >= opts.max_restarts:
            raise ConvergenceError(
                f"Lanczos did not converge after {restarts} restarts (max residual {res.max():.3e})",
                residuals=best_res,
            )
        restarts += 1
        coupling = H[m, :m] @ S[:, :keep]
        vnext, Mvnext = V[:, m].copy(), MV[:, m].copy()
        V[:, :keep] = Y[:, :keep]
        MV[:, :keep] = MV[:, :m] @ S[:, :keep]
        V[:, keep], MV[:, keep] = vnext, Mvnext
        H[:] = 0.0
        H[:keep, :keep] = np.diag(theta[:keep])
        H[keep, :keep] = coupling
        j0 = keep


def _dense_eigs(K, M, q: int, x=None):
    """Lowest ``min(q + 1, n)`` eigenpairs through the inverted pencil.

    Solving ``M v = mu K v`` for its largest ``mu = 1 / lambda`` keeps full
    relative accuracy on the smallest eigenvalues of stiff models, where a
    direct dense solve loses digits in proportion to the conditioning of K.
    """
    n = K.shape[0]
    k = min(q + 1, n)
    try:
        mu, V = sla.eigh(M.toarray(), K.toarray(), subset_by_index=[n - k, n - 1])
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("dense generalized eigensolve failed (K not positive definite)", x=x) from None
    mu, V = mu[::-1], V[:, ::-1]
    if np.any(mu[: min(q, n)] <= 0):
        raise NotPositiveDefinite("M(x) is not positive definite", x=x)
    with np.errstate(divide="ignore"):
        lam = np.where(mu > 0, 1.0 / mu, np.inf)
    scale = np.sqrt(np.einsum("ij,ij->j", V, M @ V).clip(min=np.finfo(float).tiny))
    return lam, V / scale


def solve_modes(pencil, x, q: int, opts: SolverOptions | None = None) -> ModalSolution:
    """The ``q`` smallest eigenpairs of the pencil at ``x``."""
    opts = opts or SolverOptions()
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    K, M = pencil.assemble(x)
    n = pencil.n
    if not 1 <= q <= n:
        raise ModelError(f"cannot compute {q} modes of a {n}-DOF model")

    if opts.method == "dense":
        factorize_spd(K, x=x)
        lam, U = _dense_eigs(K, M, q, x)
        lambdas, modes = lam[:q], U[:, :q]
        next_lambda = lam[q] if lam.size > q else np.inf
        basis, restarts = modes, 0
    elif opts.method == "lanczos":
        lambdas, modes, basis, next_lambda, restarts = lanczos_shift_invert(K, M, q, opts, x=x)
        if opts.verify and n <= opts.dense_crossover:
            lam, _ = _dense_eigs(K, M, q, x)
            err = np.abs(lam[:q] - lambdas) / np.abs(lam[:q])
            if np.any(err > opts.verify_rtol):
                raise ConvergenceError(
                    f"Lanczos eigenvalues disagree with dense solve (max rel err {err.max():.3e})",
                    residuals=err,
                )
    else:
        raise ModelError(f"unknown eigensolver method {opts.method!r}")

    if np.any(lambdas <= 0):
        raise NotPositiveDefinite("non-positive eigenvalue", x=x)
    order = np.argsort(lambdas, kind="stable")
    lambdas, modes = lambdas[order], modes[:, order]
    residuals = _residuals(K, M, lambdas, modes)
    return ModalSolution(
        x=x,
        lambdas=lambdas,
        freqs=np.sqrt(lambdas) / TWO_PI,
        modes=modes,
        residuals=residuals,
        gap_ok=_gap_flags(lambdas, next_lambda, opts.gap_threshold),
        basis=basis,
        restarts=restarts,
        method=opts.method,
        next_lambda=next_lambda,
    )


def freq_jacobian(pencil, solution: ModalSolution) -> FreqJacobian:
    """Analytic ``d f / d x`` from first-order eigenvalue perturbation.

    With M-normalized modes, ``d lambda_i / d x_j = u_i^T (K_j - lambda_i M_j) u_i``
    and ``d f_i = d lambda_i / (8 pi^2 f_i)``.
    """
    f = solution.freqs
    if np.any(f == 0):
        raise SingularScaling("zero frequency: derivative of sqrt is undefined")
    kq, mq = pencil.quadratic_forms(solution.modes)
    dlam = (kq[1:] - mq[1:] * solution.lambdas).T  # (q, p)
    J = dlam / (8.0 * np.pi**2 * f[:, None])
    valid = bool(np.all(solution.gap_ok) and np.all(np.isfinite(J)))
    return FreqJacobian(J=J, valid=valid, dlambda=dlam)


def fd_jacobian(pencil, x, q: int, rel_step: float = 1e-6, box=None, opts: SolverOptions | None = None):
    """Central-difference Jacobian of the sorted frequency vector.

    Steps are ``rel_step * max(|x_j|, 1)``; near a box face the difference
    becomes one-sided so that every evaluation stays inside ``box``.
    Returns ``(FreqJacobian, evaluations)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = x.size
    J = np.zeros((q, p))
    evals = 0
    f0 = None
    for j in range(p):
        h = rel_step * max(abs(x[j]), 1.0)
        lo_ok = box is None or x[j] - h >= box.lower[j]
        hi_ok = box is None or x[j] + h <= box.upper[j]
        xp, xm = x.copy(), x.copy()
        if lo_ok and hi_ok:
            xp[j] += h
            xm[j] -= h
            fp = solve_modes(pencil, xp, q, opts).freqs
            fm = solve_modes(pencil, xm, q, opts).freqs
            evals += 2
            J[:, j] = (fp - fm) / (2 * h)
            continue
        if f0 is None:
            f0 = solve_modes(pencil, x, q, opts).freqs
            evals += 1
        if hi_ok:
            xp[j] += h
            J[:, j] = (solve_modes(pencil, xp, q, opts).freqs - f0) / h
        else:
            xm[j] -= h
            J[:, j] = (f0 - solve_modes(pencil, xm, q, opts).freqs) / h
        evals += 1
    return FreqJacobian(J=J, valid=True, method="finite-difference"), evals
