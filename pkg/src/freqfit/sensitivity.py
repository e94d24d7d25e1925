"""Elementary-effects screening of the frequencies over the parameter box.

Each trajectory starts at a Latin-hypercube base point snapped to a regular
grid of ``levels`` values per axis and moves one axis at a time by
``delta`` (box-relative units), always from the base point. With base ``x``
and step ``s_j = +-delta`` along axis ``j``::

    EE_j = (g(x + s_j e_j (b_j - a_j)) - g(x)) / s_j

``mu_star`` is the mean of ``|EE_j|`` over trajectories and ``sigma`` their
sample standard deviation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, ConvergenceError, FreqFitError
from .model import ParamBox, UpdatingProblem

log = logging.getLogger(__name__)

MAX_DROP_FRACTION = 0.2


def lhs_sample(box: ParamBox, count: int, seed: int = 0) -> np.ndarray:
    """``count`` Latin-hypercube points in ``box``, one row per point."""
    if count < 1:
        raise ConfigError(f"sample count must be >= 1, got {count}")
    unit = qmc.LatinHypercube(d=box.p, seed=np.random.default_rng(seed)).random(count)
    return box.from_unit(unit)


@dataclass(frozen=True)
class EETDesign:
    box: ParamBox
    r: int = 10
    levels: int = 4
    delta: float | None = None  # default levels / (2 (levels - 1))
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"trajectory count r must be >= 1, got {self.r}")
        if self.levels < 2 or self.levels % 2:
            raise ConfigError(f"levels must be an even count >= 2, got {self.levels}")
        if not 0.0 < self.step <= 1.0:
            raise ConfigError(f"delta must lie in (0, 1], got {self.step}")

    @property
    def step(self) -> float:
        return self.levels / (2.0 * (self.levels - 1)) if self.delta is None else float(self.delta)

    @property
    def evaluations(self) -> int:
        return self.r * (self.box.p + 1)

    def trajectories(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(base, signed_steps)`` per trajectory in box-relative coordinates."""
        lhs = qmc.LatinHypercube(d=self.box.p, seed=np.random.default_rng(self.seed)).random(self.r)
        grid = np.minimum(np.floor(lhs * self.levels), self.levels - 1) / (self.levels - 1)
        out = []
        for base in grid:
            steps = np.where(base + self.step <= 1.0 + 1e-12, self.step, -self.step)
            out.append((base, steps))
        return out


@dataclass
class EETReport:
    mu_star: np.ndarray  # q x p
    sigma: np.ndarray  # q x p
    evaluations: int
    dropped: int
    effects: np.ndarray = field(repr=False)  # r_kept x q x p
    labels: list[str] = field(default_factory=list)

    @property
    def r_used(self) -> int:
        return self.effects.shape[0]


def _trajectory(g, box: ParamBox, base, steps):
    x0 = box.from_unit(base)
    y0 = np.atleast_1d(np.asarray(g(x0), dtype=float))
    ee = np.empty((y0.size, box.p))
    for j in range(box.p):
        u = base.copy()
        u[j] = np.clip(u[j] + steps[j], 0.0, 1.0)
        yj = np.atleast_1d(np.asarray(g(box.from_unit(u)), dtype=float))
        ee[:, j] = (yj - y0) / steps[j]
    return ee


def frequency_function(problem: UpdatingProblem, opts=None) -> Callable[[np.ndarray], np.ndarray]:
    from .eig import solve_modes

    return lambda x: solve_modes(problem.pencil, x, problem.q, opts).freqs


def elementary_effects(model, design: EETDesign, threads: int = 1) -> EETReport:
    """Elementary effects of ``model`` (an UpdatingProblem or ``g(x) -> vector``)."""
    if isinstance(model, UpdatingProblem):
        g = frequency_function(model)
        labels = list(model.pencil.labels)
    else:
        g = model
        labels = list(design.box.labels)
    box = design.box
    trajs = design.trajectories()

    def run(t):
        base, steps = t
        try:
            return _trajectory(g, box, base, steps)
        except FreqFitError as exc:
            log.warning("trajectory from %s dropped: %s", box.from_unit(base), exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, trajs))
    else:
        results = [run(t) for t in trajs]

    kept = [e for e in results if e is not None]
    dropped = len(results) - len(kept)
    if dropped > MAX_DROP_FRACTION * len(results) or not kept:
        raise ConvergenceError(f"{dropped} of {len(results)} trajectories failed", residuals=np.array([dropped]))
    effects = np.stack(kept)
    mu_star = np.mean(np.abs(effects), axis=0)
    sigma = np.std(effects, axis=0, ddof=1) if len(kept) >= 2 else np.zeros_like(mu_star)
    evaluations = len(kept) * (box.p + 1)
    log.info("EET: %d trajectories, %d evaluations, %d dropped", len(kept), evaluations, dropped)
    return EETReport(mu_star=mu_star, sigma=sigma, evaluations=evaluations, dropped=dropped, effects=effects, labels=labels)


def importance(mu_star, reference=None) -> np.ndarray:
    """Per-parameter importance: column norms of ``mu_star`` with each output
    row divided by ``reference`` (e.g. target frequencies)."""
    A = np.asarray(mu_star, dtype=float)
    if reference is not None:
        A = A / np.asarray(reference, dtype=float)[:, None]
    return np.linalg.norm(A, axis=0)
