"""
Scenario files.

A scenario is a YAML (or JSON) mapping with the sections ``system``,
``domain`` (optional), ``noise``, ``action``, ``params``, ``tolerances`` and
``output``.  See ``docs/scenario.md`` for the grammar.  Validation errors
carry the line number of the offending key.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Segment
from .domains import DomainSpec
from .flow import DiffusionSpec, DriftSpec, Interpretation
from .solver import SystemSpec
from .systems import BUILTINS, builtin


class Action(str, enum.Enum):
    SIMULATE = "SIMULATE"
    CHECK_INVARIANCE = "CHECK_INVARIANCE"
    CHECK_COMPARISON = "CHECK_COMPARISON"
    CHECK_QUASIMONOTONE = "CHECK_QUASIMONOTONE"
    CHECK_COCYCLE = "CHECK_COCYCLE"
    PULLBACK = "PULLBACK"
    EQUILIBRIUM = "EQUILIBRIUM"
    ENVELOPE = "ENVELOPE"


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = ""):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)


# -- parsing with line marks ------------------------------------------------------------

def _lines(node, path=(), out=None):
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _lines(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _lines(v, path + (i,), out)
    return out


def parse_text(text: str, source: str = "<scenario>", is_json: bool | None = None):
    """Return ``(data, line_map)``."""
    if is_json is None:
        is_json = source.endswith(".json")
    try:
        if is_json:
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None, source) from None
    try:
        node = yaml.compose(text)
        lines = _lines(node) if node is not None else {}
    except yaml.YAMLError:
        lines = {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping", 1, source)
    return data, lines


# -- validated scenario -----------------------------------------------------------------

DEFAULT_TOLERANCES = {
    "disc_K": None,          # from packaged calibration when None
    "viol_K": None,
    "ratio": 1.5,
    "floor": 1e-12,
    "nagumo": 1e-7,
    "facet": 1e-7,
    "quasimonotone": 1e-9,
    "diam_tol": 1e-3,
    "quad_tol": 1e-6,
}


@dataclass
class Scenario:
    raw: dict
    lines: dict
    source: str
    system: SystemSpec
    domain: DomainSpec | None
    noise: dict
    action: Action
    params: dict
    tolerances: dict
    output: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def line(self, *path) -> int | None:
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, message: str, *path) -> ScenarioError:
        return ScenarioError(message, self.line(*path), self.source)

    @property
    def seeds(self) -> list:
        n = int(self.noise.get("n_seeds", 1))
        return [int(self.noise["seed"]) + k for k in range(n)]


class _Ctx:
    def __init__(self, lines, source):
        self.lines, self.source = lines, source

    def err(self, msg, *path):
        p = path
        while p and p not in self.lines:
            p = p[:-1]
        return ScenarioError(msg, self.lines.get(p), self.source)

    def require(self, d, key, *path):
        if not isinstance(d, dict) or key not in d:
            raise self.err(f"missing required key {'.'.join(map(str, path + (key,)))!r}", *path)
        return d[key]

    def number(self, v, *path, positive=False):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.err(f"{'.'.join(map(str, path))} must be a number, got {v!r}", *path)
        if positive and not v > 0:
            raise self.err(f"{'.'.join(map(str, path))} must be positive", *path)
        return float(v)


def load(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(p)) from None
    data, lines = parse_text(text, str(p))
    return build(data, lines, str(p), p.parent)


def build(data: dict, lines: dict | None = None, source: str = "<scenario>",
          base_dir: Path | None = None) -> Scenario:
    ctx = _Ctx(lines or {}, source)
    known = {"system", "domain", "noise", "action", "params", "tolerances", "output",
             "description"}
    for k in data:
        if k not in known:
            raise ctx.err(f"unknown section {k!r}", k)
    noise = ctx.require(data, "noise")
    if not isinstance(noise, dict):
        raise ctx.err("noise must be a mapping", "noise")
    seed = ctx.require(noise, "seed", "noise")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ctx.err("noise.seed must be a nonnegative integer", "noise", "seed")
    action_s = ctx.require(data, "action")
    try:
        action = Action(str(action_s).upper())
    except ValueError:
        raise ctx.err(f"unknown action {action_s!r}; expected one of "
                      f"{[a.value for a in Action]}", "action") from None
    system = _build_system(ctx, ctx.require(data, "system"))
    domain = None
    if data.get("domain") is not None:
        domain = build_domain(ctx, data["domain"], ("domain",))
    elif system is not None:
        domain = system.meta.get("domain")
    if "dt" in noise:
        ctx.number(noise["dt"], "noise", "dt", positive=True)
    if "window" in noise:
        w = noise["window"]
        if not (isinstance(w, list) and len(w) == 2):
            raise ctx.err("noise.window must be [t_minus, t_plus]", "noise", "window")
        for i, v in enumerate(w):
            ctx.number(v, "noise", "window", i)
    tol = dict(DEFAULT_TOLERANCES)
    user_tol = data.get("tolerances") or {}
    if not isinstance(user_tol, dict):
        raise ctx.err("tolerances must be a mapping", "tolerances")
    for k, v in user_tol.items():
        if k not in DEFAULT_TOLERANCES:
            raise ctx.err(f"unknown tolerance {k!r}", "tolerances", k)
        tol[k] = ctx.number(v, "tolerances", k)
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise ctx.err("params must be a mapping", "params")
    output = data.get("output") or {}
    if not isinstance(output, dict):
        raise ctx.err("output must be a mapping", "output")
    return Scenario(data, ctx.lines, source, system, domain, dict(noise), action, params,
                    tol, {"dir": output.get("dir", "out"), "prefix": output.get("prefix", "run")},
                    base_dir or Path.cwd())


# -- systems ------------------------------------------------------------------------------

def _build_system(ctx, spec):
    if not isinstance(spec, dict):
        raise ctx.err("system must be a mapping", "system")
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in BUILTINS and name != "frozen":
            raise ctx.err(f"unknown built-in system {name!r}; known: {sorted(BUILTINS)}",
                          "system", "builtin")
        params = spec.get("params") or {}
        if name == "frozen":
            from .systems import frozen
            return frozen(**params)
        try:
            return builtin(name, **params)
        except (TypeError, ValueError) as exc:
            raise ctx.err(f"invalid parameters for {name!r}: {exc}", "system", "params") from None
    if "inline" in spec:
        return inline_system(ctx, spec["inline"], ("system", "inline"))
    raise ctx.err("system needs 'builtin' or 'inline'", "system")


def _expr(ctx, spec, path, allow_lag=True):
    """Compile a coefficient expression: a list of terms
    ``{coef, factors: [{coord, lag, power}], table: {coord, lag, x, y}}``."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        spec = [{"coef": spec}]
    if not isinstance(spec, list):
        raise ctx.err("coefficient must be a number or a list of terms", *path)
    terms = []
    for k, t in enumerate(spec):
        tp = path + (k,)
        if not isinstance(t, dict):
            raise ctx.err("term must be a mapping", *tp)
        coef = ctx.number(t.get("coef", 1.0), *tp, "coef")
        factors = []
        for j, f in enumerate(t.get("factors", []) or []):
            fp = tp + ("factors", j)
            coord = int(ctx.require(f, "coord", *fp))
            lag = ctx.number(f.get("lag", 0.0), *fp, "lag")
            power = int(f.get("power", 1))
            if power < 0:
                raise ctx.err("power must be a nonnegative integer", *fp, "power")
            if lag and not allow_lag:
                raise ctx.err("lags are only allowed in H", *fp, "lag")
            factors.append((coord, lag, power))
        table = None
        if "table" in t:
            tb = t["table"]
            tpp = tp + ("table",)
            x = np.asarray(ctx.require(tb, "x", *tpp), dtype=float)
            y = np.asarray(ctx.require(tb, "y", *tpp), dtype=float)
            if x.shape != y.shape or x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
                raise ctx.err("table needs increasing x and matching y", *tpp)
            lag = ctx.number(tb.get("lag", 0.0), *tpp, "lag")
            if lag and not allow_lag:
                raise ctx.err("lags are only allowed in H", *tpp, "lag")
            table = (int(ctx.require(tb, "coord", *tpp)), lag, x, y)
        terms.append((coef, factors, table))

    def value(get):
        out = 0.0
        for coef, factors, table in terms:
            v = coef
            for coord, lag, power in factors:
                v = v * get(coord, lag) ** power
            if table is not None:
                coord, lag, x, y = table
                v = v * np.interp(get(coord, lag), x, y)
            out = out + v
        return out

    return value


def inline_system(ctx, spec, path=("system", "inline")) -> SystemSpec:
    d = int(ctx.require(spec, "dim", *path))
    delay = ctx.number(ctx.require(spec, "delay", *path), *path, "delay", positive=True)
    interp = Interpretation[str(spec.get("interpretation", "ITO")).upper()]
    H_spec = spec.get("H", [0.0] * d)
    b_spec = spec.get("b", [0.0] * d)
    if len(H_spec) != d or len(b_spec) != d:
        raise ctx.err(f"H and b need {d} components", *path)
    Hs = [_expr(ctx, e, path + ("H", i)) for i, e in enumerate(H_spec)]
    bs = [_expr(ctx, e, path + ("b", i), allow_lag=False) for i, e in enumerate(b_spec)]

    def H(t, seg):
        out = np.zeros(seg.samples.shape[1:])
        for i, f in enumerate(Hs):
            out[..., i] = f(lambda c, lag: seg.at(lag)[..., c])
        return out

    def b(t, x):
        out = np.zeros(np.shape(x))
        for i, f in enumerate(bs):
            out[..., i] = f(lambda c, lag: x[..., c])
        return out

    drift = DriftSpec(b, None, interp)
    diff_spec = spec.get("diffusion", {"diagonal": [0.0] * d})
    dp = path + ("diffusion",)
    if "diagonal" in diff_spec:
        ds = [_expr(ctx, e, dp + ("diagonal", i), allow_lag=False)
              for i, e in enumerate(diff_spec["diagonal"])]
        if len(ds) != d:
            raise ctx.err(f"diagonal diffusion needs {d} entries", *dp)
        # each entry may depend on its own coordinate only
        for i, e in enumerate(diff_spec["diagonal"]):
            for term in (e if isinstance(e, list) else []):
                coords = [f.get("coord") for f in term.get("factors", []) or []]
                if "table" in term:
                    coords.append(term["table"].get("coord"))
                if any(c != i for c in coords):
                    raise ctx.err("diagonal entry i may only depend on coordinate i",
                                  *dp, "diagonal", i)

        def sig(x):
            out = np.zeros(np.shape(x) + (d,))
            for i, f in enumerate(ds):
                out[..., i, i] = f(lambda c, lag: x[..., c])
            return out

        diff = DiffusionSpec(d, sig, None, diagonal=True, labels="inline diagonal")
    elif "matrix" in diff_spec:
        rows = diff_spec["matrix"]
        m = len(rows[0]) if rows else 0
        if len(rows) != d or any(len(r) != m for r in rows):
            raise ctx.err(f"diffusion matrix must be {d} x m", *dp)
        ms = [[_expr(ctx, e, dp + ("matrix", i, j), allow_lag=False)
               for j, e in enumerate(r)] for i, r in enumerate(rows)]

        def sig(x):
            out = np.zeros(np.shape(x) + (m,))
            for i in range(d):
                for j in range(m):
                    out[..., i, j] = ms[i][j](lambda c, lag: x[..., c])
            return out

        diff = DiffusionSpec(m, sig, None, diagonal=False, labels="inline matrix")
    else:
        raise ctx.err("diffusion needs 'diagonal' or 'matrix'", *dp)
    dom = None
    return SystemSpec(d, delay, H, drift, diff, spec.get("name", "inline"),
                      meta={"domain": dom, "diagonal": diff.diagonal, "sample_box": (-2.0, 2.0)})


# -- domains ------------------------------------------------------------------------------

def build_domain(ctx, spec, path=("domain",)) -> DomainSpec:
    if not isinstance(spec, dict):
        raise ctx.err("domain must be a mapping", *path)
    kind = str(ctx.require(spec, "kind", *path)).upper()
    try:
        if kind == "ORTHANT":
            return DomainSpec.orthant(int(ctx.require(spec, "dim", *path)))
        if kind == "BOX":
            return DomainSpec.box(ctx.require(spec, "lo", *path), ctx.require(spec, "hi", *path))
        if kind == "POLYHEDRON":
            return DomainSpec.polyhedron(ctx.require(spec, "A", *path),
                                         ctx.require(spec, "gamma", *path))
        if kind == "SIMPLEX":
            return DomainSpec.simplex(ctx.require(spec, "b", *path))
        if kind == "BALL":
            return DomainSpec.ball(ctx.require(spec, "center", *path),
                                   ctx.require(spec, "radius", *path))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ctx.err(f"invalid domain: {exc}", *path) from None
    raise ctx.err(f"unknown domain kind {kind!r}", *path, "kind")


# -- initial segments ---------------------------------------------------------------------

def initial_segment(sc: Scenario, spec, path=("params", "initial")) -> Segment:
    d, r = sc.system.dim, sc.system.delay
    if spec is None:
        if sc.domain is not None:
            return Segment.constant(sc.domain.interior_point, r)
        return Segment.constant(np.zeros(d), r)
    if not isinstance(spec, dict):
        raise sc.error("initial must be a mapping", *path)
    try:
        if "constant" in spec:
            v = np.atleast_1d(np.asarray(spec["constant"], dtype=float))
            if v.shape != (d,):
                raise sc.error(f"initial.constant needs {d} values", *path, "constant")
            return Segment.constant(v, r)
        if "samples" in spec:
            s = np.asarray(spec["samples"], dtype=float)
            if s.ndim == 1:
                s = s[:, None]
            if s.shape[-1] != d:
                raise sc.error(f"initial.samples rows need {d} values", *path, "samples")
            return Segment(r, s)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise sc.error(f"invalid initial segment: {exc}", *path) from None
    raise sc.error("initial needs 'constant' or 'samples'", *path)
