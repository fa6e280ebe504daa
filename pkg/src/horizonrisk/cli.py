"""``horizonrisk run manifest.json``: execute a manifest and write CSV/JSON reports.

Exit codes: 0 when every check passes, 1 when a check fails or a task errors,
2 for configuration problems (reported with a JSON pointer).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics as diag
from .core import Claim, eval_driver, resolve
from .duality import CONVENTION, MeasureSpec, closed_form, penalty_mc
from .errors import ConfigError, HorizonRiskError
from .manifest import SUMMARY_SCHEMA, Manifest, compile_expression, load
from .mc import MCBackend, SolverConfig, mc_solve
from .tree import TreeMeasure, TreeModel, tree_dual_sup, tree_penalty, tree_solve


def fmt(x) -> str:
    """Cell text: 17 significant digits in scientific notation for floats."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".16e")
    return str(x)


def dumps(obj, indent=0) -> str:
    """Deterministic JSON with floats written like :func:`fmt` (non-finite as strings)."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else json.dumps(fmt(obj))
    return json.dumps(str(obj))


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_INT_COLS = {"node", "out_of_domain"}


def _cell(row, col):
    """Row value with manifest integers (e.g. ``"t": 1``) promoted to floats."""
    v = row.get(col)
    if col not in _INT_COLS and isinstance(v, (int, np.integer)) and not isinstance(v, (bool, np.bool_)):
        return float(v)
    return v


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(_cell(r, c)) for c in columns])
    return buf.getvalue()


class _Outcome:
    def __init__(self, columns, rows, verdict=None, worst=None, tolerance=None, notes=()):
        self.columns, self.rows = columns, rows
        self.verdict, self.worst, self.tolerance = verdict, worst, tolerance
        self.notes = list(notes)


# ---------------------------------------------------------------------------
# task runners


class Runner:
    def __init__(self, m: Manifest, tolerance=None):
        self.m = m
        self.tolerance = tolerance
        self.tree = TreeModel(m.grid) if m.backend == "tree" else None
        self._mc = None

    @property
    def backend(self):
        if self.tree is not None:
            return self.tree
        if self._mc is None:
            mc = self.m.mc
            cfg = SolverConfig(M=mc["M"], N=self.m.grid.N, basis=mc.get("basis", 3),
                               z_clip=mc.get("z_clip", 10.0), seed=mc["seed"],
                               antithetic=mc.get("antithetic", True), dim=mc.get("dim", 1))
            self._mc = MCBackend.simulate(cfg, self.m.grid)
        return self._mc

    def rng(self, index, purpose=0):
        return np.random.default_rng(np.random.SeedSequence(self.m.seed, spawn_key=(index, purpose)))

    def tol(self, task):
        if self.tolerance is not None:
            return self.tolerance
        return task.get("tolerance")

    def claims(self, task, index):
        ref = task.get("claims", {"corpus": 20})
        if isinstance(ref, list):
            return [self.m.claims[c] for c in ref]
        return diag.claim_corpus(self.rng(index, 1), ref["corpus"], tree=self.tree is not None)

    def run(self, index, task) -> _Outcome:
        kind = task["type"]
        if kind.startswith("check:"):
            return self._check(index, task, kind.split(":", 1)[1])
        return getattr(self, "_" + kind.replace("-", "_"))(index, task)

    # -- evaluation tasks

    def _values(self, d, c, s, horizon):
        """Rows for one (s, horizon) cell."""
        if self.tree is not None:
            k = self.tree.level(s)
            vals = tree_solve(self.tree, d, c, horizon, stop=k).values(k)
            b = self.tree.brownian(k)
            rows = []
            for j, (v, bj) in enumerate(zip(vals, b)):
                cf = closed_form(d, c, s, horizon, bj)
                rows.append({"s": s, "horizon": horizon, "node": j, "brownian": bj, "value": v,
                             "closed_form": cf, "stderr": 0.0, "backend": "tree"})
            return rows
        be = self.backend
        r = mc_solve(be.ens, d, c, horizon, be.cfg, s=s)
        cf = closed_form(d, c, s, horizon) if s == 0 else None
        return [{"s": s, "horizon": horizon, "node": None, "brownian": None, "value": r.value,
                 "closed_form": cf, "stderr": r.stderr, "backend": "mc"}]

    _VALUE_COLS = ["s", "horizon", "node", "brownian", "value", "closed_form", "stderr", "backend"]

    def _solve(self, index, task):
        d, c = self.m.drivers[task["driver"]], self.m.claims[task["claim"]]
        rows = self._values(d, c, task.get("s", 0.0), task["horizon"])
        return _Outcome(self._VALUE_COLS, rows)

    def _surface(self, index, task):
        d, c = self.m.drivers[task["driver"]], self.m.claims[task["claim"]]
        rows = []
        for h in task["horizons"]:
            if h + 1e-12 < c.u:
                continue
            for s in task.get("s_grid", [0.0]):
                if s <= h + 1e-12:
                    rows.extend(self._values(d, c, s, h))
        rows.sort(key=lambda r: (r["s"], r["horizon"], r["node"] or 0))
        return _Outcome(self._VALUE_COLS, rows)

    def _gamma(self, index, task):
        d, c = self.m.drivers[task["driver"]], self.m.claims[task["claim"]]
        us = task["u"] if isinstance(task["u"], list) else [task["u"]]
        rep = diag.gamma_surface(self.backend, d, c, task.get("s", 0.0), task["t"], us)
        rows = []
        for r in rep.rows:
            for g in np.atleast_1d(r["gamma"]):
                rows.append({**r, "gamma": float(g)})
        return _Outcome(["s", "t", "u", "gamma", "closed_form", "stderr", "backend"], rows)

    def _dual(self, index, task):
        tree = self.tree
        d, c = self.m.drivers[task["driver"]], self.m.claims[task["claim"]]
        s, t = task.get("s", 0.0), task["t"]
        qg = task["q_grid"]
        grid = np.linspace(qg["lo"], qg["hi"], qg["n"])
        dual, _ = tree_dual_sup(tree, d, c, s, t, grid, refine=task.get("refine", False))
        k = tree.level(s)
        primal = tree_solve(tree, d, c, t, stop=k).values(k)
        rows = [{"s": s, "t": t, "node": j, "brownian": b, "dual": dv, "primal": pv, "gap": pv - dv,
                 "backend": "tree"} for j, (b, dv, pv) in enumerate(zip(tree.brownian(k), dual, primal))]
        tol = self.tol(task)
        tol = 1e-12 if tol is None else tol
        worst = float(np.max(dual - primal))
        return _Outcome(["s", "t", "node", "brownian", "dual", "primal", "gap", "backend"], rows,
                        worst <= tol, worst, tol, ["weak duality: dual <= primal"])

    def _recover_driver(self, index, task):
        d = self.m.drivers[task["driver"]]
        horizon = task.get("horizon", self.m.grid.T)
        est = diag.recover_driver(self.backend, d, task["z_grid"], task["s_grid"], task["eps"],
                                  richardson=task.get("richardson", False), horizon=horizon)
        dd = resolve(d, horizon)
        rows = []
        for i, s in enumerate(task["s_grid"]):
            for j, z in enumerate(task["z_grid"]):
                true = eval_driver(dd, s, s, 0.0, z)
                rows.append({"s": s, "z": z, "estimate": est[i, j], "driver_value": true,
                             "error": est[i, j] - true, "backend": self._tag()})
        tol = self.tol(task)
        worst = max(abs(r["error"]) for r in rows)
        return _Outcome(["s", "z", "estimate", "driver_value", "error", "backend"], rows,
                        None if tol is None else worst <= tol, worst, tol)

    def _penalty(self, index, task):
        d = self.m.drivers[task["driver"]]
        s, t = task.get("s", 0.0), task["t"]
        q = task["q"]
        fn = compile_expression(q, ("t", "b"), f"/tasks/{index}/q") if isinstance(q, str) else None
        if self.tree is not None:
            tree = self.tree
            m = (TreeMeasure.function(tree, lambda tt, b: fn(tt, b), s, t) if fn
                 else TreeMeasure.constant(tree, q, s, t))
            k = tree.level(s)
            vals = tree_penalty(tree, d, m, s, t)
            rows = [{"s": s, "t": t, "node": j, "brownian": b, "penalty": v, "stderr": 0.0,
                     "out_of_domain": int(not math.isfinite(v)), "backend": "tree"}
                    for j, (b, v) in enumerate(zip(tree.brownian(k), vals))]
        else:
            spec = (MeasureSpec.of_state(lambda tt, b: np.asarray(fn(tt, b), dtype=float) * np.ones_like(b), s, t)
                    if fn else MeasureSpec.constant(q, s, t))
            est, se, bad = penalty_mc(self.backend.ens, d, spec, s, t)
            rows = [{"s": s, "t": t, "node": None, "brownian": None, "penalty": est, "stderr": se,
                     "out_of_domain": bad, "backend": "mc"}]
        return _Outcome(["s", "t", "node", "brownian", "penalty", "stderr", "out_of_domain", "backend"], rows)

    # -- checks

    _CHECK_COLS = ["property", "s", "t", "u", "item", "violation"]

    def _tag(self):
        return "tree" if self.tree is not None else "mc"

    def _triples(self, task):
        tr = task.get("triples", "all")
        return diag.all_triples(self.m.grid) if tr == "all" else [tuple(x) for x in tr]

    def _check(self, index, task, prop):
        tol = self.tol(task)
        be = self.backend
        if prop == "horizon_comparison":
            return self._horizon(index, task, tol)
        d = self.m.drivers[task["driver"]]
        if prop in diag.TC_KINDS:
            rep = diag.check_time_consistency(prop, be, d, self.claims(task, index), self._triples(task), tol=tol)
        elif prop in diag.STRUCTURE_KINDS:
            claims = self.claims(task, index) if "claims" in task else []
            rep = diag.check_structure(prop, be, d, claims, [tuple(p) for p in task["pairs"]], tol=tol)
        elif prop in diag.PENALTY_KINDS:
            n, bound = task.get("measures", 4), task.get("q_bound", 1.0)
            rng = self.rng(index, 2)
            triples = self._triples(task)
            pairs = {tr: [diag.random_measures(be, rng, *tr, bounds=(bound,)) for _ in range(n)] for tr in triples}
            claims = self.claims(task, index) if prop == "weak_cocycle" and "claims" in task else None
            rep = diag.check_penalty_relations(prop, be, d, lambda s, t, u: pairs[(s, t, u)], triples,
                                               tol=tol, claims=claims)
        else:
            rep = diag.check_acceptance_inclusion(be, d, self.claims(task, index), self._triples(task),
                                                  tol=1e-12 if tol is None else tol)
        rows = [{"property": prop, "s": r.get("s"), "t": r.get("t"), "u": r.get("u"),
                 "item": r.get("claim", r.get("relation", "")), "violation": r["violation"]}
                for r in rep.rows]
        return _Outcome(self._CHECK_COLS, rows, rep.verdict, rep.worst_violation, rep.tolerance, rep.notes)

    def _horizon(self, index, task, tol):
        tree = self.tree
        T1, T2 = task["T1"], task["T2"]
        tol = 1e-10 if tol is None else tol
        fixtures = []
        if "driver" in task:
            d1 = self.m.drivers[task["driver"]]
            d2 = self.m.drivers[task.get("driver2", task["driver"])]
            x1 = self.m.claims[task["claim"]] if "claim" in task else Claim.constant(0.0, T1)
            x2 = self.m.claims[task["claim2"]] if "claim2" in task else x1
            fixtures.append(("given", d1, d2, diag.place(x1, T1), diag.place(x2, T2)))
        rng = self.rng(index, 3)
        for n in range(task.get("fixtures", 0 if fixtures else 1)):
            d1, d2 = diag.comparison_fixture(rng, T1, T2)
            x1, x2 = diag.comparison_terminals(tree, rng, T1, T2)
            fixtures.append((f"fixture#{n}", d1, d2, x1, x2))
        rows, worst, ok, notes = [], -math.inf, True, []
        for name, d1, d2, x1, x2 in fixtures:
            rep = diag.check_horizon_comparison(tree, d1, d2, x1, x2, T1, T2, tol=tol)
            worst = max(worst, rep.worst_violation)
            ok &= rep.verdict
            if not rep.hypotheses:
                notes.append(f"{name}: hypotheses fail on the lattice")
            for r in rep.rows:
                rows.append({"property": "horizon_comparison", "s": tree.time(r["level"]), "t": T1, "u": T2,
                             "item": f"{name}: {r['conclusion']}", "violation": r["violation"]})
        return _Outcome(self._CHECK_COLS, rows, ok, worst, tol, notes)


# ---------------------------------------------------------------------------


def execute(m: Manifest, out_dir: Path, workers=1, tolerance=None) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = Runner(m, tolerance)

    def one(item):
        i, task = item
        try:
            return task, runner.run(i, task), None
        except HorizonRiskError as exc:
            return task, None, f"{type(exc).__name__}: {exc}"
        except (ValueError, ArithmeticError, MemoryError) as exc:
            return task, None, f"{type(exc).__name__}: {exc}"

    items = list(enumerate(m.tasks))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]

    summary_tasks, failed = [], False
    for task, out, err in results:
        entry = {"id": task["id"], "type": task["type"]}
        if err is not None:
            failed = True
            entry.update(status="error", files=[], rows=0, error=err)
            summary_tasks.append(entry)
            continue
        files = []
        if "csv" in m.formats:
            _atomic_write(out_dir / f"{task['id']}.csv", _csv(out.columns, out.rows))
            files.append(f"{task['id']}.csv")
        if "json" in m.formats:
            body = {"columns": out.columns, "rows": [[_cell(r, c) for c in out.columns] for r in out.rows]}
            _atomic_write(out_dir / f"{task['id']}.json", dumps(body) + "\n")
            files.append(f"{task['id']}.json")
        status = "ok" if out.verdict is None else ("pass" if out.verdict else "fail")
        failed |= status == "fail"
        entry.update(status=status, files=files, rows=len(out.rows))
        if out.verdict is not None:
            w = out.worst
            entry["worst_violation"] = w if w is None or math.isfinite(w) else fmt(w)
            entry["tolerance"] = out.tolerance
        if out.notes:
            entry["notes"] = out.notes
        summary_tasks.append(entry)
    code = 1 if failed else 0
    summary = {"format": "horizonrisk-summary/1", "backend": m.backend, "convention": CONVENTION,
               "exit_code": code, "tasks": summary_tasks}
    jsonschema.validate(json.loads(dumps(summary)), SUMMARY_SCHEMA)
    _atomic_write(out_dir / "summary.json", dumps(summary) + "\n")
    return code


def _parser():
    p = argparse.ArgumentParser(prog="horizonrisk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a run manifest")
    run.add_argument("manifest")
    run.add_argument("--output-dir", help="overrides output.directory of the manifest")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--tolerance", type=float, help="overrides every check tolerance")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    if args.tolerance is not None and not args.tolerance >= 0:
        print("error: --tolerance must be non-negative", file=sys.stderr)
        return 2
    try:
        m = load(args.manifest)
    except ConfigError as exc:
        print(f"configuration error at {exc.pointer or '/'}: {exc.message}", file=sys.stderr)
        return 2
    if args.output_dir:
        out = Path(args.output_dir)
    else:
        out = Path(args.manifest).resolve().parent / (m.output_dir or "reports")
    return execute(m, out, args.workers, args.tolerance)


if __name__ == "__main__":
    sys.exit(main())
