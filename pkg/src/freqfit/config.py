"""JSON run configuration.

Example::

    {
      "model": {"builder": "spring_chain", "n_dof": 2, "masses": [1, 1],
                "param_groups": [[0], [1]], "labels": ["k1", "k2"]},
      "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
      "targets": {"from_parameters": [1, 1], "modes": 2},
      "weights": "relative",
      "epsilon": 0.001,
      "global": {"max_depth": 6},
      "sensitivity": {"r": 20, "levels": 4, "seed": 0},
      "output": {"directory": "out"}
    }

``model`` may instead name a builder ``"cantilever"`` (``segments`` as a list
of objects with the :class:`~freqfit.model.Segment` fields) or point to a
Matrix Market manifest with ``{"manifest": "path.json"}``. Relative paths
resolve against the configuration file's directory. ``targets`` is either a
list of frequencies in Hz or the frequencies of the model itself at
``from_parameters``. ``weights`` is ``"unit"``, ``"relative"`` or a list.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .eig import SolverOptions, solve_modes
from .errors import ConfigError, ModelError
from .global_opt import GlobalOptions
from .local_opt import LocalOptions
from .mmio import load_pencil
from .model import ParamBox, Segment, UpdatingProblem, build_cantilever_beam, build_spring_chain, make_weights

TOP_KEYS = ("model", "box", "targets", "weights", "epsilon", "solver", "local", "global", "diagnostics", "sensitivity", "output")


def read_json(path) -> dict:
    """Parse a JSON file; malformed input raises ConfigError naming the byte offset."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: invalid UTF-8 at byte offset {exc.start}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ConfigError(f"{path}: malformed JSON at byte offset {offset} (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


# -- typed field access -----------------------------------------------------


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}: required field is missing")
    return d[key]


def _object(v, where: str) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(f"{where}: expected an object")
    return v


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {json.dumps(v)}")
    return float(v)


def _integer(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {json.dumps(v)}")
    return v


def _vector(v, where: str) -> np.ndarray:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a nonempty list of numbers")
    return np.array([_number(e, f"{where}[{i}]") for i, e in enumerate(v)])


def _strings(v, where: str) -> list[str]:
    if not isinstance(v, list) or not all(isinstance(e, str) for e in v):
        raise ConfigError(f"{where}: expected a list of strings")
    return list(v)


def _check_keys(d: dict, allowed, where: str) -> None:
    extra = [k for k in d if k not in allowed]
    if extra:
        raise ConfigError(f"{where}.{extra[0]}: unknown field")


def _options(cls, d, where: str, skip=()):
    """Instantiate dataclass ``cls`` from ``d``, type-checking against defaults."""
    d = _object(d, where)
    names = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    _check_keys(d, names, where)
    kwargs = {}
    defaults = cls()
    for k, v in d.items():
        default = getattr(defaults, k)
        path = f"{where}.{k}"
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{path}: expected true or false")
            kwargs[k] = v
        elif isinstance(default, int) or (default is None and isinstance(v, int) and not isinstance(v, bool)):
            kwargs[k] = None if v is None else _integer(v, path)
        elif isinstance(default, float):
            kwargs[k] = _number(v, path)
        elif isinstance(default, str):
            if not isinstance(v, str):
                raise ConfigError(f"{path}: expected a string")
            kwargs[k] = v
        else:
            kwargs[k] = v
    return cls(**kwargs)


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class SensitivityConfig:
    r: int = 10
    levels: int = 4
    delta: float | None = None
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class DiagnosticsConfig:
    small_thr: float = 0.1
    large_thr: float = 0.5


@dataclass
class RunConfig:
    """Validated run configuration; ``model`` keeps the model section verbatim."""

    model: dict
    box: ParamBox
    targets: np.ndarray | None
    target_parameters: np.ndarray | None
    modes: int | None
    weights: str | list
    epsilon: float
    solver: SolverOptions
    local: LocalOptions
    global_: GlobalOptions
    diagnostics: DiagnosticsConfig
    sensitivity: SensitivityConfig | None
    output: Path
    base_dir: Path = field(default_factory=Path)
    box_labels: tuple = ()

    def with_overrides(self, *, out=None, max_depth=None, epsilon=None, seed=None, threads=None, r=None, levels=None) -> "RunConfig":
        cfg = dataclasses.replace(self)
        if out is not None:
            cfg.output = Path(out)
        if max_depth is not None:
            if max_depth < 0:
                raise ConfigError("--max-depth must be >= 0")
            cfg.global_ = dataclasses.replace(cfg.global_, max_depth=max_depth)
        if epsilon is not None:
            if not epsilon >= 0:
                raise ConfigError("--epsilon must be >= 0")
            cfg.epsilon = epsilon
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg.global_ = dataclasses.replace(cfg.global_, threads=threads)
            if cfg.sensitivity is not None:
                cfg.sensitivity = dataclasses.replace(cfg.sensitivity, threads=threads)
        if seed is not None:
            cfg.solver = dataclasses.replace(cfg.solver, seed=seed)
            if cfg.sensitivity is not None:
                cfg.sensitivity = dataclasses.replace(cfg.sensitivity, seed=seed)
        if r is not None and cfg.sensitivity is not None:
            cfg.sensitivity = dataclasses.replace(cfg.sensitivity, r=r)
        if levels is not None and cfg.sensitivity is not None:
            cfg.sensitivity = dataclasses.replace(cfg.sensitivity, levels=levels)
        cfg.local = dataclasses.replace(cfg.local, solver=cfg.solver)
        cfg.global_ = dataclasses.replace(cfg.global_, local=cfg.local)
        return cfg

    def effective(self) -> dict:
        """Every setting with defaults filled in, as plain JSON data."""

        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in ("solver", "local")}
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            return obj

        return {
            "model": self.model,
            "box": {"lower": self.box.lower.tolist(), "upper": self.box.upper.tolist(), "labels": list(self.box_labels)},
            "targets": self.targets.tolist() if self.targets is not None else {"from_parameters": self.target_parameters.tolist(), "modes": self.modes},
            "weights": self.weights,
            "epsilon": self.epsilon,
            "solver": plain(self.solver),
            "local": plain(self.local),
            "global": plain(self.global_),
            "diagnostics": plain(self.diagnostics),
            "sensitivity": plain(self.sensitivity),
            "output": {"directory": str(self.output)},
        }


def parse_config(data: dict, base_dir=".") -> RunConfig:
    where = "config"
    _check_keys(data, TOP_KEYS, where)
    model = _object(_need(data, "model", where), f"{where}.model")

    box_d = _object(_need(data, "box", where), f"{where}.box")
    _check_keys(box_d, ("lower", "upper", "labels"), f"{where}.box")
    lower = _vector(_need(box_d, "lower", f"{where}.box"), f"{where}.box.lower")
    upper = _vector(_need(box_d, "upper", f"{where}.box"), f"{where}.box.upper")
    labels = _strings(box_d.get("labels", []), f"{where}.box.labels")
    try:
        box = ParamBox(lower, upper, tuple(labels))
    except ModelError as exc:
        raise ConfigError(f"{where}.box: {exc}") from None

    t = _need(data, "targets", where)
    targets = target_x = modes = None
    if isinstance(t, dict):
        _check_keys(t, ("from_parameters", "modes"), f"{where}.targets")
        target_x = _vector(_need(t, "from_parameters", f"{where}.targets"), f"{where}.targets.from_parameters")
        modes = _integer(t.get("modes", target_x.size), f"{where}.targets.modes")
        if modes < 1:
            raise ConfigError(f"{where}.targets.modes: must be >= 1")
    else:
        targets = _vector(t, f"{where}.targets")

    w = data.get("weights", "relative")
    if isinstance(w, list):
        _vector(w, f"{where}.weights")
    elif w not in ("unit", "relative"):
        raise ConfigError(f"{where}.weights: expected \"unit\", \"relative\" or a list of numbers")

    epsilon = _number(data.get("epsilon", 1e-3), f"{where}.epsilon")
    if epsilon < 0:
        raise ConfigError(f"{where}.epsilon: must be >= 0")

    solver = _options(SolverOptions, data.get("solver", {}), f"{where}.solver")
    if solver.method not in ("lanczos", "dense"):
        raise ConfigError(f"{where}.solver.method: expected \"lanczos\" or \"dense\"")
    local = dataclasses.replace(_options(LocalOptions, data.get("local", {}), f"{where}.local", skip=("solver",)), solver=solver)
    glob = dataclasses.replace(_options(GlobalOptions, data.get("global", {}), f"{where}.global", skip=("local",)), local=local)
    diag = _options(DiagnosticsConfig, data.get("diagnostics", {}), f"{where}.diagnostics")
    sens = None
    if "sensitivity" in data and data["sensitivity"] is not None:
        sens = _options(SensitivityConfig, data["sensitivity"], f"{where}.sensitivity")
        if sens.delta is not None:
            _number(sens.delta, f"{where}.sensitivity.delta")

    out_d = _object(data.get("output", {}), f"{where}.output")
    _check_keys(out_d, ("directory",), f"{where}.output")
    out = out_d.get("directory", "freqfit-out")
    if not isinstance(out, str):
        raise ConfigError(f"{where}.output.directory: expected a string")

    return RunConfig(
        model=model,
        box=box,
        targets=targets,
        target_parameters=target_x,
        modes=modes,
        weights=w,
        epsilon=epsilon,
        solver=solver,
        local=local,
        global_=glob,
        diagnostics=diag,
        sensitivity=sens,
        output=Path(base_dir) / out if not Path(out).is_absolute() else Path(out),
        base_dir=Path(base_dir),
        box_labels=tuple(labels),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(read_json(path), base_dir=path.parent)


# -- problem construction -----------------------------------------------------


def build_pencil(model: dict, base_dir=".", where: str = "config.model"):
    try:
        if "manifest" in model:
            _check_keys(model, ("manifest",), where)
            m = model["manifest"]
            if isinstance(m, str):
                p = Path(m)
                return load_pencil(p if p.is_absolute() else Path(base_dir) / p)
            return load_pencil(_object(m, f"{where}.manifest"), base_dir=base_dir)
        builder = _need(model, "builder", where)
        if builder == "spring_chain":
            _check_keys(model, ("builder", "n_dof", "masses", "param_groups", "labels"), where)
            n = _integer(_need(model, "n_dof", where), f"{where}.n_dof")
            masses = _vector(model.get("masses", [1.0] * max(n, 1)), f"{where}.masses")
            groups = _need(model, "param_groups", where)
            if not isinstance(groups, list) or not all(isinstance(g, list) for g in groups):
                raise ConfigError(f"{where}.param_groups: expected a list of lists of spring indices")
            groups = [[_integer(i, f"{where}.param_groups[{j}]") for i in g] for j, g in enumerate(groups)]
            return build_spring_chain(n, masses, groups, labels=_strings(model.get("labels", []), f"{where}.labels"))
        if builder == "cantilever":
            _check_keys(model, ("builder", "segments", "dof_per_node", "n_params", "labels"), where)
            segs_raw = _need(model, "segments", where)
            if not isinstance(segs_raw, list):
                raise ConfigError(f"{where}.segments: expected a list")
            seg_fields = [f.name for f in dataclasses.fields(Segment)]
            segs = []
            for i, s in enumerate(segs_raw):
                s = _object(s, f"{where}.segments[{i}]")
                _check_keys(s, seg_fields, f"{where}.segments[{i}]")
                segs.append(Segment(**s))
            n_params = model.get("n_params")
            return build_cantilever_beam(
                segs,
                dof_per_node=_integer(model.get("dof_per_node", 2), f"{where}.dof_per_node"),
                n_params=None if n_params is None else _integer(n_params, f"{where}.n_params"),
                labels=_strings(model.get("labels", []), f"{where}.labels"),
            )
        raise ConfigError(f"{where}.builder: unknown builder {builder!r} (expected spring_chain or cantilever)")
    except (TypeError, ModelError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def build_problem(cfg: RunConfig) -> UpdatingProblem:
    pencil = build_pencil(cfg.model, cfg.base_dir)
    if pencil.p != cfg.box.p:
        raise ConfigError(f"config.box: {cfg.box.p} bounds given for a model with {pencil.p} parameters")
    box = cfg.box if cfg.box_labels else ParamBox(cfg.box.lower, cfg.box.upper, tuple(pencil.labels))
    if cfg.targets is not None:
        targets = cfg.targets
    else:
        if cfg.target_parameters.size != pencil.p:
            raise ConfigError(f"config.targets.from_parameters: expected {pencil.p} values")
        targets = solve_modes(pencil, cfg.target_parameters, cfg.modes, cfg.solver).freqs
    try:
        if isinstance(cfg.weights, list):
            w = make_weights("custom", targets, cfg.weights)
        else:
            w = make_weights(cfg.weights, targets)
        return UpdatingProblem(pencil, box, targets, weights=w, epsilon=cfg.epsilon)
    except ModelError as exc:
        raise ConfigError(f"config: {exc}") from None
