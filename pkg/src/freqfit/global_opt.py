"""Global search for all local minima by recursive 2^p box subdivision.

1. Solve locally on the whole search box from its midpoint.
2. Split the box at its midpoints into 2^p children and solve locally on each
   child from the child's midpoint.
3. Recurse into a child only if its minimum is new (outside the pseudominimum
   ellipsoid of every minimum found so far, and with none of those inside its
   own ellipsoid) and not pinned to a face created
   by the subdivision. A minimum pinned to such a face is re-solved on the
   whole search box from where it stopped; if that yields a new minimum, the
   child containing it is subdivided in turn.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, FreqFitError, InfeasibleProblem, NotPositiveDefinite
from .local_opt import LocalOptions, MinimumRecord, solve_local
from .model import ParamBox, UpdatingProblem

log = logging.getLogger(__name__)

PHI_TIE = 1e-14


@dataclass(frozen=True)
class GlobalOptions:
    max_depth: int = 6
    max_local_solves: int = 10_000
    threads: int = 1
    escape_faces: bool = True
    local: LocalOptions = field(default_factory=LocalOptions)


@dataclass
class SubdivisionNode:
    box: ParamBox
    depth: int
    parent_minimum: MinimumRecord | None = None


@dataclass
class MinimaRegistry:
    records: list[MinimumRecord]
    epsilon: float
    global_index: int
    boundary_rejects: int = 0
    duplicates: int = 0
    failures: list = field(default_factory=list)
    local_solves: int = 0
    escapes: int = 0
    evaluations: int = 0
    max_depth_reached: int = 0
    budget_exhausted: bool = False
    elapsed: float = 0.0

    @property
    def ellipsoids(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(r.sigma, r.U) for r in self.records]

    @property
    def global_minimum(self) -> MinimumRecord:
        return self.records[self.global_index]


def subdivide(box: ParamBox) -> list[ParamBox]:
    """The 2^p midpoint children of ``box``.

    Child ``k`` takes the upper half of axis ``j`` iff bit ``j`` of ``k`` is set.
    """
    mid = box.midpoint
    children = []
    for k in range(2 ** box.p):
        bits = np.array([(k >> j) & 1 for j in range(box.p)], dtype=bool)
        lower = np.where(bits, mid, box.lower)
        upper = np.where(bits, box.upper, mid)
        children.append(box.with_bounds(lower, upper))
    return children


def ellipsoid_distance(candidate: MinimumRecord, existing: MinimumRecord, width) -> float:
    """``||diag(sigma) U^T (x_c - x_e)||`` in search-box coordinates."""
    d = (np.asarray(candidate.x_star) - np.asarray(existing.x_star)) / width
    return float(np.linalg.norm(existing.sigma * (existing.U.T @ d)))


def is_same_minimum(candidate: MinimumRecord, existing: MinimumRecord, epsilon: float, width=None) -> bool:
    """True iff ``candidate`` lies in the epsilon-pseudominimum set of ``existing``.

    ``width`` is the search-box width that defines the scaled coordinates
    (taken from ``existing.box`` lineage when omitted, i.e. unit scaling).
    Without a usable Jacobian on ``existing`` the test degrades to a plain
    scaled distance.
    """
    width = np.ones_like(existing.x_star) if width is None else np.asarray(width, dtype=float)
    if not np.all(np.isfinite(existing.sigma)) or not np.all(np.isfinite(existing.U)):
        log.warning("invalid Jacobian on existing minimum; using plain scaled distance")
        d = (np.asarray(candidate.x_star) - np.asarray(existing.x_star)) / width
        return bool(np.linalg.norm(d) <= epsilon)
    return ellipsoid_distance(candidate, existing, width) <= epsilon


def _global_index(records: list[MinimumRecord]) -> int:
    best = min(r.phi for r in records)
    tied = [i for i, r in enumerate(records) if r.phi <= best + PHI_TIE]
    return min(tied, key=lambda i: tuple(records[i].x_star))


def _local(problem, box, opts: LocalOptions):
    try:
        return solve_local(problem, box, box.midpoint, opts)
    except NotPositiveDefinite as exc:
        return exc
    except (ConvergenceError, FreqFitError) as exc:
        return exc


def solve_global(problem: UpdatingProblem, opts: GlobalOptions | None = None) -> MinimaRegistry:
    """Collect distinct local minima of the misfit over the problem's box."""
    opts = opts or GlobalOptions()
    t0 = time.perf_counter()
    omega = problem.box
    eps = problem.epsilon
    registry: list[MinimumRecord] = []
    failures: list = []
    stats = {"solves": 0, "evals": 0, "rejects": 0, "dups": 0, "depth": 0, "escapes": 0}

    def register(rec, box, depth) -> MinimumRecord | None:
        """Insert ``rec`` if it is a new converged minimum off internal faces."""
        if isinstance(rec, Exception):
            failures.append({"box": [box.lower.tolist(), box.upper.tolist()], "depth": depth, "error": str(rec)})
            return None
        stats["evals"] += rec.evaluations
        if not rec.converged:
            failures.append({"box": [box.lower.tolist(), box.upper.tolist()], "depth": depth, "error": "not converged"})
            return None
        if rec.on_internal_face():
            stats["rejects"] += 1
            return escape(rec, depth)
        # Checked both ways so that no record lies in another's ellipsoid.
        if any(is_same_minimum(rec, e, eps, omega.width) or is_same_minimum(e, rec, eps, omega.width) for e in registry):
            stats["dups"] += 1
            return None
        registry.append(rec)
        stats["depth"] = max(stats["depth"], depth)
        return rec

    def escape(rec, depth) -> MinimumRecord | None:
        # A minimum pinned to a subdivision face points at a basin across that
        # face; re-solve on the whole search box from there.
        if not opts.escape_faces or stats["solves"] >= opts.max_local_solves:
            return None
        key = tuple(np.round(omega.to_unit(rec.x_star), 12))
        if key in escaped:
            return None
        escaped.add(key)
        stats["solves"] += 1
        stats["escapes"] += 1
        try:
            polished = solve_local(problem, omega, rec.x_star, opts.local)
        except FreqFitError as exc:
            failures.append({"box": "escape", "depth": depth, "error": str(exc)})
            return None
        return register(polished, omega, depth)

    escaped: set = set()
    root = _local(problem, omega, opts.local)
    stats["solves"] += 1
    register(root, omega, 0)
    frontier = [SubdivisionNode(omega, 0, root if isinstance(root, MinimumRecord) else None)]
    budget_exhausted = False

    pool = ThreadPoolExecutor(max_workers=opts.threads) if opts.threads > 1 else None
    try:
        while frontier:
            next_frontier = []
            for node in frontier:
                if node.depth >= opts.max_depth:
                    continue
                children = subdivide(node.box)
                if stats["solves"] + len(children) > opts.max_local_solves:
                    budget_exhausted = True
                    break
                if pool is not None:
                    results = list(pool.map(lambda b: _local(problem, b, opts.local), children))
                else:
                    results = [_local(problem, b, opts.local) for b in children]
                stats["solves"] += len(children)
                scheduled: list[int] = []
                found: dict[int, MinimumRecord] = {}
                # Merge strictly in subdivision order for determinism.
                for child, rec in zip(children, results):
                    new = register(rec, child, node.depth + 1)
                    if new is None:
                        continue
                    home = next((i for i, c in enumerate(children) if c.contains(new.x_star)), None)
                    if home is not None and home not in scheduled:
                        scheduled.append(home)
                        found[home] = new
                for i in sorted(scheduled):
                    next_frontier.append(SubdivisionNode(children[i], node.depth + 1, found[i]))
            if budget_exhausted:
                log.warning("local-solve budget of %d exhausted", opts.max_local_solves)
                break
            frontier = next_frontier
    finally:
        if pool is not None:
            pool.shutdown()

    if not registry:
        if failures and all("not converged" != f["error"] for f in failures):
            raise InfeasibleProblem("no subproblem produced a feasible minimum", diagnostics=failures)
        raise ConvergenceError("no converged interior minimum was found", residuals=failures)

    return MinimaRegistry(
        records=registry,
        epsilon=eps,
        global_index=_global_index(registry),
        boundary_rejects=stats["rejects"],
        duplicates=stats["dups"],
        failures=failures,
        local_solves=stats["solves"],
        escapes=stats["escapes"],
        evaluations=stats["evals"],
        max_depth_reached=stats["depth"],
        budget_exhausted=budget_exhausted,
        elapsed=time.perf_counter() - t0,
    )

