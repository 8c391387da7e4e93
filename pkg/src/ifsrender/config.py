"""Run configuration files: a sectioned key=value format.

A complete 2-dimensional example::

    [space]
    dimension = 2
    x = 0 1
    y = 0 1

    [system]
    mode = fuzzy-ifs          # ifs | fuzzy-ifs | gifs | fuzzy-gifs
    arity = 1                 # m; >= 2 for the gifs modes

    [map.1]
    x = 0.5*x1
    y = 0.5*y1
    # lipschitz = 0.5         # optional override (required for
                              # non-affine expression maps)

    [grey.1]                  # fuzzy modes only, one per map
    pieces = 0: 0; 0.2505: 0.25; 0.505: 0.5; 0.7505: 0.75
    # or: expr = t            # expression in t

    [net]
    kind = uniform            # uniform | aleatory
    n = 200
    # na = 1000000            # aleatory only: sample count
    # seed = 1                # aleatory only: PRNG seed (default 0)

    [run]
    iterations = 11           # exactly one of iterations / delta
    # delta = 0.01            # target resolution, planner derives (eps, N)
    # theta = 0.5             # bound split, only with delta
    # diameter = 1.4142135    # D; defaults to the box diagonal
    tol = 0                   # stop when the step distance drops below
    backend = ram             # ram | file (inverse-table storage)
    # table_path = phi.bin    # file backend; default: temp file
    # initial = 0 0; 1 1      # start set (fuzzy: "x y : membership")
    # step_budget / table_budget: override the work guards

    [output]
    path = out.pgm
    invert = false

Grey piecewise tables list "breakpoint: value" pairs separated by
semicolons; breakpoints are the left endpoints of the pieces, the first
must be 0, and values may be expressions in t.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import expr as ex
from .nets import Box
from .systems import (GreyMapSpec, MapSpec, SystemSpec, map_variables,
                      try_extract_affine, validate_system, variable_aliases)

MODES = ("ifs", "fuzzy-ifs", "gifs", "fuzzy-gifs")
FUZZY_MODES = ("fuzzy-ifs", "fuzzy-gifs")
GENERALIZED_MODES = ("gifs", "fuzzy-gifs")


class ConfigError(ValueError):
    """Unusable configuration; the message says which key and why."""


@dataclass
class RunConfig:
    """Everything a render run needs, already parsed and validated."""

    mode: str
    box: Box
    system: SystemSpec
    net_kind: str = "uniform"
    n: int = 100
    na: int = 0
    seed: int = 0
    iterations: Optional[int] = None
    delta: Optional[float] = None
    theta: float = 0.5
    diameter: Optional[float] = None
    tol: float = 0.0
    initial: Optional[list[tuple[tuple[float, ...], float]]] = None
    backend: str = "ram"
    table_path: Optional[Path] = None
    step_budget: Optional[int] = None
    table_budget: Optional[int] = None
    output_path: Optional[Path] = None
    invert: bool = False
    warnings: list[str] = field(default_factory=list)
    source_path: Optional[Path] = None


def _floats(text: str, count: int, where: str) -> list[float]:
    parts = text.split()
    if len(parts) != count:
        raise ConfigError(f"{where}: expected {count} number(s), got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_expr(text: str, variables: list[str], where: str) -> ex.Expression:
    try:
        return ex.parse(text, variables)
    except ex.ExprSyntaxError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_grey(section: configparser.SectionProxy, where: str) -> GreyMapSpec:
    has_expr = "expr" in section
    has_pieces = "pieces" in section
    if has_expr == has_pieces:
        raise ConfigError(f"{where}: give exactly one of 'expr' or 'pieces'")
    if has_expr:
        return GreyMapSpec(_parse_expr(section["expr"], ["t"], where))
    breakpoints: list[float] = []
    pieces: list = []
    for chunk in section["pieces"].split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError(f"{where}: piece {chunk!r} is not 'breakpoint: value'")
        b_text, v_text = chunk.split(":", 1)
        try:
            breakpoints.append(float(b_text))
        except ValueError:
            raise ConfigError(f"{where}: bad breakpoint {b_text.strip()!r}") from None
        v_text = v_text.strip()
        try:
            pieces.append(float(v_text))
        except ValueError:
            pieces.append(_parse_expr(v_text, ["t"], where))
    try:
        return GreyMapSpec(ex.PiecewiseMap(breakpoints, pieces))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _numbered_sections(parser: configparser.ConfigParser, prefix: str) -> list[str]:
    found = {}
    for name in parser.sections():
        if name.startswith(prefix + "."):
            suffix = name[len(prefix) + 1:]
            if not suffix.isdigit():
                raise ConfigError(f"section [{name}]: index must be a number")
            found[int(suffix)] = name
    if not found:
        return []
    expected = list(range(1, max(found) + 1))
    if sorted(found) != expected:
        raise ConfigError(f"[{prefix}.k] sections must be numbered 1..{max(found)} without gaps")
    return [found[k] for k in expected]


def load_config(path) -> RunConfig:
    """Parse and validate a configuration file into a :class:`RunConfig`."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    for required in ("space", "system", "net", "run"):
        if required not in parser:
            raise ConfigError(f"{path}: missing [{required}] section")

    space = parser["space"]
    try:
        dimension = space.getint("dimension")
    except ValueError:
        raise ConfigError("[space] dimension: not an integer") from None
    if dimension not in (1, 2):
        raise ConfigError("[space] dimension must be 1 or 2")
    axes = ["x", "y"][:dimension]
    los, his = [], []
    for axis in axes:
        if axis not in space:
            raise ConfigError(f"[space]: missing interval for axis {axis}")
        a, b = _floats(space[axis], 2, f"[space] {axis}")
        los.append(a)
        his.append(b)
    if dimension == 1 and "y" in space:
        raise ConfigError("[space]: y interval given but dimension = 1")
    try:
        box = Box(tuple(los), tuple(his))
    except ValueError as exc:
        raise ConfigError(f"[space]: {exc}") from None

    system_sec = parser["system"]
    mode = system_sec.get("mode", "").strip()
    if mode not in MODES:
        raise ConfigError(f"[system] mode must be one of {', '.join(MODES)}")
    try:
        arity = system_sec.getint("arity", fallback=1)
    except ValueError:
        raise ConfigError("[system] arity: not an integer") from None
    if mode in GENERALIZED_MODES and arity < 2:
        raise ConfigError(f"[system] mode {mode} needs arity >= 2")
    if mode not in GENERALIZED_MODES and arity != 1:
        raise ConfigError(f"[system] mode {mode} needs arity = 1")

    map_sections = _numbered_sections(parser, "map")
    if not map_sections:
        raise ConfigError("at least one [map.k] section required")
    variables = map_variables(arity, dimension)
    accepted = variables + list(variable_aliases(arity, dimension))
    maps = []
    for name in map_sections:
        sec = parser[name]
        exprs = []
        for axis in axes:
            if axis not in sec:
                raise ConfigError(f"[{name}]: missing coordinate expression {axis!r}")
            exprs.append(_parse_expr(sec[axis], accepted, f"[{name}] {axis}"))
        override = None
        if "lipschitz" in sec:
            try:
                override = sec.getfloat("lipschitz")
            except ValueError:
                raise ConfigError(f"[{name}] lipschitz: not a number") from None
        affine = try_extract_affine(exprs, arity, dimension)
        matrix, offset = affine if affine is not None else (None, None)
        maps.append(MapSpec(arity=arity, dimension=dimension, exprs=tuple(exprs),
                            matrix=matrix, offset=offset, lipschitz_override=override))

    grey_sections = _numbered_sections(parser, "grey")
    grey = None
    if mode in FUZZY_MODES:
        if len(grey_sections) != len(maps):
            raise ConfigError(
                f"mode {mode} needs one [grey.k] per map: have {len(grey_sections)} "
                f"grey map(s) for {len(maps)} map(s)")
        grey = [_parse_grey(parser[name], f"[{name}]") for name in grey_sections]
    elif grey_sections:
        raise ConfigError(f"mode {mode} does not take [grey.k] sections")

    system = SystemSpec(box=box, arity=arity, maps=maps, grey=grey)

    net_sec = parser["net"]
    net_kind = net_sec.get("kind", "uniform").strip()
    if net_kind not in ("uniform", "aleatory"):
        raise ConfigError("[net] kind must be uniform or aleatory")
    try:
        n = net_sec.getint("n")
    except (ValueError, TypeError):
        raise ConfigError("[net] n: missing or not an integer") from None
    if n is None or n < 1:
        raise ConfigError("[net] n must be a positive integer")
    na = seed = 0
    if net_kind == "aleatory":
        try:
            na = net_sec.getint("na")
        except (ValueError, TypeError):
            raise ConfigError("[net] na: missing or not an integer") from None
        if na is None or na < 1:
            raise ConfigError("[net] na must be a positive integer for aleatory nets")
        seed = net_sec.getint("seed", fallback=0)

    run_sec = parser["run"]
    has_delta = "delta" in run_sec
    has_iter = "iterations" in run_sec
    if has_delta == has_iter:
        raise ConfigError("[run]: give exactly one of 'delta' or 'iterations'")
    delta = run_sec.getfloat("delta") if has_delta else None
    iterations = run_sec.getint("iterations") if has_iter else None
    if iterations is not None and iterations < 0:
        raise ConfigError("[run] iterations must be >= 0")
    if "theta" in run_sec and not has_delta:
        raise ConfigError("[run] theta only applies together with delta")
    theta = run_sec.getfloat("theta", fallback=0.5)
    if not 0.0 < theta < 1.0:
        raise ConfigError("[run] theta must lie in (0, 1)")
    diameter = run_sec.getfloat("diameter") if "diameter" in run_sec else None
    tol = run_sec.getfloat("tol", fallback=0.0)
    backend = run_sec.get("backend", "ram").strip()
    if backend not in ("ram", "file"):
        raise ConfigError("[run] backend must be ram or file")
    table_path = Path(run_sec["table_path"]) if "table_path" in run_sec else None
    step_budget = run_sec.getint("step_budget") if "step_budget" in run_sec else None
    table_budget = run_sec.getint("table_budget") if "table_budget" in run_sec else None

    initial = None
    if "initial" in run_sec:
        initial = []
        for chunk in run_sec["initial"].split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            membership = 1.0
            if ":" in chunk:
                if mode not in FUZZY_MODES:
                    raise ConfigError("[run] initial: memberships only apply to fuzzy modes")
                chunk, mu_text = chunk.rsplit(":", 1)
                try:
                    membership = float(mu_text)
                except ValueError:
                    raise ConfigError(f"[run] initial: bad membership {mu_text.strip()!r}") from None
                if not 0.0 <= membership <= 1.0:
                    raise ConfigError("[run] initial: memberships must lie in [0, 1]")
            coords = _floats(chunk, dimension, "[run] initial")
            if not bool(box.contains(np.array([coords]))[0]):
                raise ConfigError(f"[run] initial: point {coords} outside the box")
            initial.append((tuple(coords), membership))
        if not initial:
            raise ConfigError("[run] initial: no points given")
        if mode in FUZZY_MODES and max(mu for _, mu in initial) < 1.0:
            raise ConfigError("[run] initial: fuzzy start must be normal "
                              "(some membership = 1)")

    output_path = invert = None
    invert = False
    if "output" in parser:
        out_sec = parser["output"]
        if "path" in out_sec:
            output_path = Path(out_sec["path"])
        invert = out_sec.getboolean("invert", fallback=False)
        for key, want in (("width", n + 1), ("height", n + 1 if dimension == 2 else 1)):
            if key in out_sec and out_sec.getint(key) != want:
                raise ConfigError(f"[output] {key} must be {want} for n = {n}")

    report = validate_system(system)
    if not report.ok:
        raise ConfigError(f"{path}: invalid system:\n  " + "\n  ".join(report.failures))

    return RunConfig(mode=mode, box=box, system=system, net_kind=net_kind, n=n,
                     na=na, seed=seed, iterations=iterations, delta=delta,
                     theta=theta, diameter=diameter, tol=tol, initial=initial,
                     backend=backend, table_path=table_path, step_budget=step_budget,
                     table_budget=table_budget, output_path=output_path,
                     invert=invert, warnings=list(report.warnings), source_path=path)
