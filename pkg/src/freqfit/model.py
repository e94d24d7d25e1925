"""Parametric stiffness/mass pencils, parameter boxes and updating problems.

The pencil is affine in the parameters::

    K(x) = K0 + sum_j x_j K_j        M(x) = M0 + sum_j x_j M_j

All components of K (and separately of M) are stored on one shared sparsity
pattern, so assembling at a new parameter point is a single dense
combination of value arrays.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ModelError, NotPositiveDefinite
from .sparse import SYMMETRY_RTOL, asymmetry, factorize_spd


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned box ``[a_1, b_1] x ... x [a_p, b_p]``."""

    lower: np.ndarray
    upper: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise ModelError("box bounds must be 1-d vectors of equal, nonzero length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ModelError("box bounds must be finite")
        if not np.all(lower < upper):
            raise ModelError("box requires lower < upper on every axis")
        labels = tuple(self.labels) if self.labels else tuple(f"x{j + 1}" for j in range(lower.size))
        if len(labels) != lower.size:
            raise ModelError("one label per parameter is required")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    def corners(self) -> list[np.ndarray]:
        bounds = np.stack([self.lower, self.upper])
        return [bounds[list(bits), range(self.p)] for bits in itertools.product((0, 1), repeat=self.p)]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_unit(self, x) -> np.ndarray:
        """Map physical coordinates to box-relative ones in ``[0, 1]^p``."""
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width

    def with_bounds(self, lower, upper) -> "ParamBox":
        return ParamBox(lower, upper, self.labels)


def _keys(A: sp.csr_matrix, n: int) -> np.ndarray:
    C = A.tocoo()
    return C.row.astype(np.int64) * n + C.col


def _union_pattern(mats: Sequence[sp.csr_matrix], n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sorted linear keys, CSR indptr and column indices of the union pattern."""
    keys = np.unique(np.concatenate([_keys(A, n) for A in mats]))
    rows, cols = np.divmod(keys, n)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))])
    return keys, indptr, cols.astype(np.int32)


def _values_on(keys: np.ndarray, A: sp.csr_matrix, n: int) -> np.ndarray:
    out = np.zeros(keys.size)
    C = A.tocoo()
    out[np.searchsorted(keys, _keys(A, n))] = C.data
    return out


class AffinePencil:
    """Immutable affine pencil ``(K(x), M(x))`` on ``n`` DOFs and ``p`` parameters.

    Parameters
    ----------
    K0, M0 : sparse or dense (n, n)
        Parameter-independent parts. ``None`` means zero.
    K_comps, M_comps : sequence of p matrices
        Coefficient matrices of each parameter; ``None`` entries are zero.
    labels, units : optional metadata per parameter.
    box : ParamBox, optional
        If given, positive definiteness is checked at its midpoint and corners.
    """

    def __init__(self, K0, M0, K_comps, M_comps, labels=(), units=(), box: ParamBox | None = None):
        K_comps = list(K_comps)
        M_comps = list(M_comps)
        if len(K_comps) != len(M_comps):
            raise ModelError("K_comps and M_comps must have one entry per parameter")
        first = next((A for A in [K0, M0, *K_comps, *M_comps] if A is not None), None)
        if first is None:
            raise ModelError("pencil has no matrices")
        n = first.shape[0]
        p = len(K_comps)

        def prep(A, name):
            if A is None:
                return sp.csr_matrix((n, n))
            A = sp.csr_matrix(A, dtype=float)
            if A.shape != (n, n):
                raise ModelError(f"{name} has shape {A.shape}, expected {(n, n)}")
            if A.nnz and not np.all(np.isfinite(A.data)):
                raise ModelError(f"{name} has non-finite entries")
            if asymmetry(A) > SYMMETRY_RTOL:
                raise ModelError(f"{name} is not symmetric")
            A = (0.5 * (A + A.T)).tocsr()
            A.sort_indices()
            return A

        Ks = [prep(K0, "K0")] + [prep(A, f"K_comps[{j}]") for j, A in enumerate(K_comps)]
        Ms = [prep(M0, "M0")] + [prep(A, f"M_comps[{j}]") for j, A in enumerate(M_comps)]
        self.n = n
        self.p = p
        k_keys, *self._k_pattern = _union_pattern(Ks, n)
        m_keys, *self._m_pattern = _union_pattern(Ms, n)
        self._k_data = np.stack([_values_on(k_keys, A, n) for A in Ks])
        self._m_data = np.stack([_values_on(m_keys, A, n) for A in Ms])
        self._k_rc = np.divmod(k_keys, n)
        self._m_rc = np.divmod(m_keys, n)
        self._k_data.flags.writeable = False
        self._m_data.flags.writeable = False
        self.labels = tuple(labels) if labels else tuple(f"x{j + 1}" for j in range(p))
        self.units = tuple(units) if units else ("",) * p
        if len(self.labels) != p or len(self.units) != p:
            raise ModelError("labels/units must have one entry per parameter")
        if box is not None:
            self.check_box(box)

    # -- component access -------------------------------------------------
    def _matrix(self, pattern, values) -> sp.csr_matrix:
        indptr, indices = pattern
        return sp.csr_matrix((values, indices.copy(), indptr.copy()), shape=(self.n, self.n))

    @property
    def K0(self) -> sp.csr_matrix:
        return self._matrix(self._k_pattern, self._k_data[0].copy())

    @property
    def M0(self) -> sp.csr_matrix:
        return self._matrix(self._m_pattern, self._m_data[0].copy())

    @property
    def K_comps(self) -> list[sp.csr_matrix]:
        return [self._matrix(self._k_pattern, d.copy()) for d in self._k_data[1:]]

    @property
    def M_comps(self) -> list[sp.csr_matrix]:
        return [self._matrix(self._m_pattern, d.copy()) for d in self._m_data[1:]]

    # -- evaluation -------------------------------------------------------
    def _coeffs(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.p,):
            raise ModelError(f"parameter vector has shape {x.shape}, expected ({self.p},)")
        if not np.all(np.isfinite(x)):
            raise ModelError("parameter vector must be finite")
        return np.concatenate([[1.0], x])

    def assemble(self, x) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Return ``(K(x), M(x))`` as CSR matrices."""
        c = self._coeffs(x)
        return (self._matrix(self._k_pattern, c @ self._k_data), self._matrix(self._m_pattern, c @ self._m_data))

    def quadratic_forms(self, U) -> tuple[np.ndarray, np.ndarray]:
        """``u_i^T A u_i`` for every column of ``U`` and every component.

        Returns two arrays of shape (p + 1, q): row 0 is the base matrix, row
        ``j + 1`` the coefficient matrix of parameter ``j``.
        """
        U = np.asarray(U, dtype=float).reshape(self.n, -1)
        (kr, kc), (mr, mc) = self._k_rc, self._m_rc
        return self._k_data @ (U[kr] * U[kc]), self._m_data @ (U[mr] * U[mc])

    def project(self, V) -> tuple[np.ndarray, np.ndarray]:
        """Galerkin projections ``V^T A V`` of all components, shape (p + 1, m, m)."""
        V = np.asarray(V, dtype=float)
        Kr = np.stack([V.T @ (A @ V) for A in [self.K0, *self.K_comps]])
        Mr = np.stack([V.T @ (A @ V) for A in [self.M0, *self.M_comps]])
        return 0.5 * (Kr + Kr.transpose(0, 2, 1)), 0.5 * (Mr + Mr.transpose(0, 2, 1))

    def scaled(self, k_factor: float = 1.0, m_factor: float = 1.0) -> "AffinePencil":
        """Pencil with every stiffness (mass) component multiplied by a constant."""
        return AffinePencil(
            k_factor * self.K0,
            m_factor * self.M0,
            [k_factor * A for A in self.K_comps],
            [m_factor * A for A in self.M_comps],
            labels=self.labels,
            units=self.units,
        )

    def check_box(self, box: ParamBox) -> None:
        """Raise NotPositiveDefinite unless K and M factor at box midpoint and corners."""
        if box.p != self.p:
            raise ModelError(f"box has {box.p} parameters, pencil has {self.p}")
        for x in [box.midpoint, *box.corners()]:
            K, M = self.assemble(x)
            factorize_spd(K, x=x)
            try:
                factorize_spd(M, x=x)
            except NotPositiveDefinite as exc:
                raise NotPositiveDefinite(f"M(x) not positive definite at {x}", x=x) from exc

    def __repr__(self) -> str:
        return f"AffinePencil(n={self.n}, p={self.p}, labels={self.labels})"


@dataclass
class UpdatingProblem:
    """Frequencies to match, the pencil that produces them and the search box.

    ``weights`` defaults to relative weighting ``1 / f_hat``; whatever is
    given is normalized to unit Euclidean norm.
    """

    pencil: AffinePencil
    box: ParamBox
    targets: np.ndarray
    weights: np.ndarray | None = None
    epsilon: float = 1e-3
    check_pd: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.targets, dtype=float)).copy()
        if t.ndim != 1 or t.size == 0:
            raise ModelError("targets must be a nonempty vector")
        if not np.all(np.isfinite(t)) or not np.all(t > 0):
            raise ModelError("target frequencies must be finite and positive")
        if not np.all(np.diff(t) >= 0):
            raise ModelError("target frequencies must be sorted ascending")
        if self.box.p != self.pencil.p:
            raise ModelError(f"box has {self.box.p} parameters, pencil has {self.pencil.p}")
        if t.size < self.pencil.p:
            raise ModelError(f"need at least as many frequencies ({t.size}) as parameters ({self.pencil.p})")
        if t.size > self.pencil.n:
            raise ModelError("more target frequencies than degrees of freedom")
        w = 1.0 / t if self.weights is None else np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        if w.shape != t.shape:
            raise ModelError("one weight per target frequency is required")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ModelError("weights must be finite and nonnegative")
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ModelError("at least one weight must be nonzero")
        if not (self.epsilon >= 0 and np.isfinite(self.epsilon)):
            raise ModelError("epsilon must be a finite nonnegative number")
        self.targets = t
        self.weights = w / norm
        if self.check_pd:
            self.pencil.check_box(self.box)

    @property
    def q(self) -> int:
        return self.targets.size

    @property
    def p(self) -> int:
        return self.pencil.p


def make_weights(mode: str, targets, custom=None) -> np.ndarray:
    """Unit-norm weight vector for mode ``unit``, ``relative`` or ``custom``."""
    t = np.asarray(targets, dtype=float)
    if mode == "unit":
        w = np.ones_like(t)
    elif mode == "relative":
        w = 1.0 / t
    elif mode == "custom":
        if custom is None:
            raise ModelError("custom weight mode needs explicit weights")
        w = np.asarray(custom, dtype=float)
    else:
        raise ModelError(f"unknown weight mode {mode!r}")
    return w / np.linalg.norm(w)


# -- builders ---------------------------------------------------------------


def build_spring_chain(n_dof: int, masses, param_groups, labels=()) -> AffinePencil:
    """Fixed-base spring-mass chain.

    Spring ``i`` joins DOF ``i - 1`` to DOF ``i`` (spring 0 ties DOF 0 to the
    ground). ``param_groups`` lists, per parameter, the springs whose
    stiffness equals that parameter.
    """
    if n_dof < 1:
        raise ModelError("a chain needs at least one DOF")
    masses = np.asarray(masses, dtype=float)
    if masses.shape != (n_dof,):
        raise ModelError(f"need {n_dof} masses, got {masses.shape}")
    if np.any(masses <= 0):
        raise ModelError("masses must be positive")
    groups = [list(g) for g in param_groups]
    seen: list[int] = []
    for j, g in enumerate(groups):
        if not g:
            raise ModelError(f"parameter group {j} is empty")
        seen.extend(g)
    if sorted(seen) != list(range(n_dof)):
        raise ModelError("every spring must belong to exactly one parameter group")

    comps = []
    for g in groups:
        A = sp.lil_matrix((n_dof, n_dof))
        for i in g:
            A[i, i] += 1.0
            if i > 0:
                A[i - 1, i - 1] += 1.0
                A[i - 1, i] -= 1.0
                A[i, i - 1] -= 1.0
        comps.append(A.tocsr())
    return AffinePencil(None, sp.diags(masses).tocsr(), comps, [None] * len(groups), labels=labels)


@dataclass(frozen=True)
class Segment:
    """Uniform beam segment.

    ``e_index``/``rho_index`` select the parameter that plays the role of the
    Young's modulus / mass density of this segment; ``None`` fixes it to
    ``modulus``/``density``.
    """

    length: float
    e_index: int | None
    rho_index: int | None
    elements: int = 4
    area: float = 1.0
    inertia: float = 1.0
    modulus: float = 1.0
    density: float = 1.0


def _beam_element(L: float, dof_per_node: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Unit-property element matrices: (k_bend, k_axial, m_bend, m_axial)."""
    kb = np.array(
        [
            [12, 6 * L, -12, 6 * L],
            [6 * L, 4 * L**2, -6 * L, 2 * L**2],
            [-12, -6 * L, 12, -6 * L],
            [6 * L, 2 * L**2, -6 * L, 4 * L**2],
        ]
    ) / L**3
    mb = np.array(
        [
            [156, 22 * L, 54, -13 * L],
            [22 * L, 4 * L**2, 13 * L, -3 * L**2],
            [54, 13 * L, 156, -22 * L],
            [-13 * L, -3 * L**2, -22 * L, 4 * L**2],
        ]
    ) * (L / 420.0)
    ka = np.array([[1.0, -1.0], [-1.0, 1.0]]) / L
    ma = np.array([[2.0, 1.0], [1.0, 2.0]]) * (L / 6.0)
    return kb, ka, mb, ma


def build_cantilever_beam(segments, dof_per_node: int = 2, n_params: int | None = None, labels=()) -> AffinePencil:
    """Euler-Bernoulli cantilever clamped at its base.

    ``segments`` are :class:`Segment` objects or ``(length, e_index,
    rho_index)`` tuples, listed from base to tip. Each segment is split into
    ``Segment.elements`` two-node elements. With ``dof_per_node=2`` nodes carry
    (deflection, rotation); with 3 an axial displacement is added.
    """
    if dof_per_node not in (2, 3):
        raise ModelError("dof_per_node must be 2 (bending) or 3 (axial + bending)")
    segs = [s if isinstance(s, Segment) else Segment(*s) for s in segments]
    if not segs:
        raise ModelError("at least one segment is required")
    indices = [i for s in segs for i in (s.e_index, s.rho_index) if i is not None]
    p = n_params if n_params is not None else (max(indices) + 1 if indices else 0)
    for s in segs:
        if not (s.length > 0 and np.isfinite(s.length)):
            raise ModelError("segment length must be positive")
        if s.elements < 1:
            raise ModelError("segment needs at least one element")
        if s.area <= 0 or s.inertia <= 0:
            raise ModelError("section area and inertia must be positive")
        for i in (s.e_index, s.rho_index):
            if i is not None and not 0 <= i < p:
                raise ModelError(f"parameter index {i} outside 0..{p - 1}")

    n_nodes = 1 + sum(s.elements for s in segs)
    n_full = n_nodes * dof_per_node
    keep = np.arange(dof_per_node, n_full)  # clamp node 0
    n = keep.size

    def blank():
        return sp.lil_matrix((n_full, n_full))

    K0, M0 = blank(), blank()
    Kc = [blank() for _ in range(p)]
    Mc = [blank() for _ in range(p)]
    if dof_per_node == 2:
        bend_local, axial_local = [0, 1], None
    else:
        bend_local, axial_local = [1, 2], [0]

    node = 0
    for s in segs:
        L = s.length / s.elements
        kb, ka, mb, ma = _beam_element(L, dof_per_node)
        K_target = K0 if s.e_index is None else Kc[s.e_index]
        M_target = M0 if s.rho_index is None else Mc[s.rho_index]
        e_scale = s.modulus if s.e_index is None else 1.0
        r_scale = s.density if s.rho_index is None else 1.0
        for _ in range(s.elements):
            a, b = node * dof_per_node, (node + 1) * dof_per_node
            bend = [a + bend_local[0], a + bend_local[1], b + bend_local[0], b + bend_local[1]]
            for r in range(4):
                for c in range(4):
                    K_target[bend[r], bend[c]] += e_scale * s.inertia * kb[r, c]
                    M_target[bend[r], bend[c]] += r_scale * s.area * mb[r, c]
            if axial_local is not None:
                ax = [a + axial_local[0], b + axial_local[0]]
                for r in range(2):
                    for c in range(2):
                        K_target[ax[r], ax[c]] += e_scale * s.area * ka[r, c]
                        M_target[ax[r], ax[c]] += r_scale * s.area * ma[r, c]
            node += 1

    def reduce(A):
        return A.tocsr()[keep][:, keep]

    return AffinePencil(
        reduce(K0),
        reduce(M0),
        [reduce(A) for A in Kc],
        [reduce(A) for A in Mc],
        labels=labels,
    )


# -- Matrix Market interchange ----------------------------------------------

from .mmio import load_pencil, save_pencil  # noqa: E402  (re-export)

__all__ = [
    "AffinePencil",
    "ParamBox",
    "Segment",
    "UpdatingProblem",
    "build_cantilever_beam",
    "build_spring_chain",
    "load_pencil",
    "make_weights",
    "save_pencil",
]
