"""Run manifests: schema validation, safe coefficient expressions, object construction.

Coefficients and custom drivers may be written as arithmetic expressions such
as ``"exp(-s)"`` or ``"0.3*z + abs(z)"``. They are parsed with :mod:`ast` and
only a small whitelist of node types, names and numpy functions is accepted.
"""

from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .core import (Claim, Constant, Custom, Entropic, Family, Linear, TimeGrid, VolterraLinear,
                   VolterraQuadratic, quadratic_form_driver)
from .errors import ConfigError

_FUNCS = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs, "sin": np.sin, "cos": np.cos,
    "tanh": np.tanh, "maximum": np.maximum, "minimum": np.minimum, "where": np.where,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.Call,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Compare,
          ast.Lt, ast.LtE, ast.Gt, ast.GtE)


def compile_expression(text: str, variables, pointer="") -> callable:
    """Vectorized function of ``variables`` (positional) from an expression string."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}", pointer) from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(f"expression {text!r} uses a disallowed construct "
                              f"({type(node).__name__})", pointer)
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"expression {text!r} has a non-numeric constant", pointer)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ConfigError(f"expression {text!r} calls an unknown function", pointer)
        if isinstance(node, ast.Name) and node.id not in variables and node.id not in _FUNCS \
                and node.id not in _CONSTS:
            raise ConfigError(f"expression {text!r} uses unknown name {node.id!r} "
                              f"(allowed: {', '.join(variables)})", pointer)
    code = compile(tree, f"<{pointer or 'expression'}>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}

    def fn(*args):
        return eval(code, env, dict(zip(variables, args)))  # noqa: S307 - whitelisted AST

    return fn


def _schema(name):
    return json.loads(resources.files("horizonrisk").joinpath("schemas", name).read_text())


MANIFEST_SCHEMA = _schema("manifest.schema.json")
SUMMARY_SCHEMA = _schema("summary.schema.json")


def _pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path) if path else ""


def validate(doc) -> None:
    """Schema validation; the first error (deepest path) becomes a ConfigError."""
    v = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: (-len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        raise ConfigError(best.message, _pointer(best.absolute_path))


# ---------------------------------------------------------------------------
# drivers and claims


def _coef(x, variables, pointer):
    if isinstance(x, str):
        f = compile_expression(x, variables, pointer)
        return lambda *a: float(f(*a))
    return float(x)


def _bind_u(x, u, variables, pointer):
    """Coefficient that may mention the family horizon ``u``."""
    if isinstance(x, str):
        f = compile_expression(x, variables + ("u",), pointer)
        return lambda *a: float(f(*a, u))
    return float(x)


def _member(doc, pointer, u=None):
    kind = doc["kind"]
    bind = (lambda x, v, p: _coef(x, v, p)) if u is None else (lambda x, v, p: _bind_u(x, u, v, p))
    label = doc.get("label")
    if kind == "constant":
        return Constant(_need_number(doc, "a", pointer, u), label=label)
    if kind == "linear":
        b = doc.get("b", 0.0)
        if isinstance(b, str):
            raise ConfigError("linear slope must be numeric", f"{pointer}/b")
        return Linear(b, _need_number(doc, "a", pointer, u, 0.0), label=label)
    if kind == "entropic":
        b = _need_number(doc, "b", pointer, u)
        if not b > 0:
            raise ConfigError("entropic driver needs b > 0", f"{pointer}/b")
        return Entropic(b, bind(doc.get("a", 0.0), ("s",), f"{pointer}/a"), label=label)
    if kind == "volterra_linear":
        return VolterraLinear(bind(doc.get("a", 0.0), ("t", "s"), f"{pointer}/a"),
                              bind(doc.get("b", 0.0), ("t", "s"), f"{pointer}/b"), label=label)
    if kind == "volterra_quadratic":
        b = bind(doc.get("b", 1.0), ("t",), f"{pointer}/b")
        if not callable(b) and not b > 0:
            raise ConfigError("quadratic Volterra driver needs b > 0", f"{pointer}/b")
        return VolterraQuadratic(b, bind(doc.get("a", 0.0), ("t", "s"), f"{pointer}/a"), label=label)
    if kind == "quadratic_form":
        cs = {k: bind(doc.get(k, 0.0), ("t", "s"), f"{pointer}/{k}") for k in ("c0", "c1", "c2", "c3")}
        for k in ("c2", "c3"):
            if not callable(cs[k]) and cs[k] < 0:
                raise ConfigError(f"{k} must be non-negative", f"{pointer}/{k}")
        return quadratic_form_driver(**cs, volterra=bool(doc.get("volterra", False)), label=label)
    if kind == "custom":
        if "expression" not in doc:
            raise ConfigError("custom driver needs an expression", pointer)
        names = ("t", "s", "y", "z") + (("u",) if u is not None else ())
        f = compile_expression(doc["expression"], names, f"{pointer}/expression")
        extra = (u,) if u is not None else ()
        fn = lambda t, s, y, z: f(t, s, y, z[..., 0], *extra)  # noqa: E731
        return Custom(fn, supports_y=bool(doc.get("supports_y", False)), lipschitz=doc.get("lipschitz"),
                      volterra=bool(doc.get("volterra", False)), label=label or doc["expression"])
    raise ConfigError(f"unknown driver kind {kind!r}", f"{pointer}/kind")


def _need_number(doc, key, pointer, u, default=None):
    x = doc.get(key, default)
    if x is None:
        raise ConfigError(f"missing coefficient {key!r}", pointer)
    if isinstance(x, str):
        if u is None:
            raise ConfigError(f"coefficient {key!r} must be numeric", f"{pointer}/{key}")
        return float(compile_expression(x, ("u",), f"{pointer}/{key}")(u))
    return float(x)


def build_driver(doc, pointer, grid: TimeGrid):
    if doc["kind"] != "family":
        return _member(doc, pointer)
    if "members" in doc:
        table = {}
        for key, sub in doc["members"].items():
            p = f"{pointer}/members/{key}"
            try:
                t = float(key)
            except ValueError:
                raise ConfigError(f"family key {key!r} is not a time", p) from None
            if not grid.on_grid(t):
                raise ConfigError(f"family key {key!r} is not a grid time", p)
            table[t] = _member(sub, p)
        return Family(table, label=doc.get("label", doc["id"]))
    tpl = doc["template"]
    return Family(lambda u: _member(tpl, f"{pointer}/template", u), label=doc.get("label", doc["id"]))


def build_claim(doc, pointer):
    kind, u, label = doc["kind"], float(doc["u"]), doc["id"]
    w = doc.get("w", 1.0)
    if kind == "constant":
        return Claim.constant(doc.get("c", 0.0), u, label=label)
    if kind == "linear":
        return Claim.linear(w, u, doc.get("c", 0.0), label=label)
    if kind in ("call", "put"):
        if "K" not in doc:
            raise ConfigError("option claims need a strike K", pointer)
        return (Claim.call if kind == "call" else Claim.put)(doc["K"], u, w, label=label)
    if "expression" not in doc:
        raise ConfigError("expression claims need an expression", pointer)
    f = compile_expression(doc["expression"], ("b",), f"{pointer}/expression")

    def terminal(b):
        out = np.asarray(f(np.asarray(b, dtype=float)[:, 0]), dtype=float)
        return np.broadcast_to(out, (b.shape[0],)).copy()

    return Claim.custom(lambda p: terminal(p[:, -1, :]), u, terminal=terminal, label=label)


# ---------------------------------------------------------------------------
# the manifest


@dataclass
class Manifest:
    doc: dict
    grid: TimeGrid
    backend: str
    drivers: dict
    claims: dict
    tasks: list
    seed: int
    output_dir: str | None
    formats: tuple = ("csv",)
    mc: dict = field(default_factory=dict)


_TIME_KEYS = ("s", "t", "horizon", "T1", "T2")
_TIME_LIST_KEYS = ("u", "s_grid", "horizons")


def _check_times(task, i, grid):
    base = f"/tasks/{i}"

    def need(t, ptr):
        if not grid.on_grid(t):
            raise ConfigError(f"time {t!r} is not on the grid (T={grid.T}, N={grid.N})", ptr)

    for k in _TIME_KEYS:
        if k in task:
            need(task[k], f"{base}/{k}")
    for k in _TIME_LIST_KEYS:
        if k in task:
            vals = task[k] if isinstance(task[k], list) else [task[k]]
            for j, t in enumerate(vals):
                need(t, f"{base}/{k}" + (f"/{j}" if isinstance(task[k], list) else ""))
    if isinstance(task.get("triples"), list):
        for j, tr in enumerate(task["triples"]):
            for n, t in enumerate(tr):
                need(t, f"{base}/triples/{j}/{n}")
            if not tr[0] <= tr[1] <= tr[2]:
                raise ConfigError("triple must satisfy s <= t <= u", f"{base}/triples/{j}")
    for j, pr in enumerate(task.get("pairs", [])):
        for n, t in enumerate(pr):
            need(t, f"{base}/pairs/{j}/{n}")
        if pr[0] > pr[1]:
            raise ConfigError("pair must satisfy t <= u", f"{base}/pairs/{j}")


_NEEDS = {
    "solve": ("driver", "claim", "horizon"),
    "surface": ("driver", "claim", "horizons"),
    "gamma": ("driver", "claim", "t", "u"),
    "dual": ("driver", "claim", "t", "q_grid"),
    "recover-driver": ("driver", "s_grid", "z_grid", "eps"),
    "penalty": ("driver", "q", "s", "t"),
    "check:horizon_comparison": ("T1", "T2"),
    "check:restriction": ("driver", "pairs"),
    "check:normalization": ("driver", "pairs"),
}


def load(path, text=None) -> Manifest:
    """Parse and fully validate a manifest; problems raise :class:`ConfigError`."""
    if text is None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read manifest: {exc.strerror}", "") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})", "") from None
    validate(doc)
    T, N = doc["grid"]["T"], doc["grid"]["N"]
    grid = TimeGrid(float(T), int(N))
    drivers, claims = {}, {}
    for i, d in enumerate(doc.get("drivers", [])):
        if d["id"] in drivers:
            raise ConfigError(f"duplicate driver id {d['id']!r}", f"/drivers/{i}/id")
        drivers[d["id"]] = build_driver(d, f"/drivers/{i}", grid)
    for i, c in enumerate(doc.get("claims", [])):
        if c["id"] in claims:
            raise ConfigError(f"duplicate claim id {c['id']!r}", f"/claims/{i}/id")
        if not grid.on_grid(c["u"]):
            raise ConfigError(f"claim horizon {c['u']!r} is not on the grid", f"/claims/{i}/u")
        claims[c["id"]] = build_claim(c, f"/claims/{i}")
    seen = set()
    for i, task in enumerate(doc["tasks"]):
        if task["id"] in seen:
            raise ConfigError(f"duplicate task id {task['id']!r}", f"/tasks/{i}/id")
        seen.add(task["id"])
        for key in _NEEDS.get(task["type"], ("driver",)):
            if key not in task:
                raise ConfigError(f"task type {task['type']} needs {key!r}", f"/tasks/{i}")
        for key in ("driver", "driver2"):
            if key in task and task[key] not in drivers:
                raise ConfigError(f"unknown driver {task[key]!r}", f"/tasks/{i}/{key}")
        for key in ("claim", "claim2"):
            if key in task and task[key] not in claims:
                raise ConfigError(f"unknown claim {task[key]!r}", f"/tasks/{i}/{key}")
        if isinstance(task.get("claims"), list):
            for j, cid in enumerate(task["claims"]):
                if cid not in claims:
                    raise ConfigError(f"unknown claim {cid!r}", f"/tasks/{i}/claims/{j}")
        if isinstance(task.get("q"), str):
            compile_expression(task["q"], ("t", "b"), f"/tasks/{i}/q")
        _check_times(task, i, grid)
        if doc["backend"] == "mc" and task["type"] in _TREE_ONLY:
            raise ConfigError(f"task type {task['type']} needs the tree backend", f"/tasks/{i}/type")
    out = doc.get("output", {})
    return Manifest(doc, grid, doc["backend"], drivers, claims, doc["tasks"], int(doc.get("seed", 0)),
                    out.get("directory"), tuple(out.get("formats", ["csv"])), doc.get("mc", {}))


_TREE_ONLY = {"dual", "check:horizon_comparison", "check:cocycle", "check:weak_cocycle",
              "check:sub_penalty", "check:acceptance_inclusion"}
