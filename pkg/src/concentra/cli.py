"""Command-line front end.

Configuration files are flat ``key = value`` lines; keys carry a dotted section
prefix (``problem.p = 3``), ``#`` starts a comment and lists are comma
separated.  ``command`` selects one of ground-state, reduce, geodesics, cc,
constants, homoclinic.  Every run writes CSV tables, plain-text profiles and a
``manifest.json`` listing the produced files together with the config hash.

Exit status: 0 on success, 2 on invalid configuration (the message names the
offending key), 3 when a solver fails (its error record goes to stderr and to
``error.json``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConcentraError, ValidationError

log = logging.getLogger("concentra")

COMMANDS = ("ground-state", "reduce", "geodesics", "cc", "constants", "homoclinic")
SECTIONS = ("problem", "numerics", "output")


# -- configuration -----------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    problem: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    source: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def canonical(self) -> str:
        lines = [f"command = {self.command}"]
        for sec in SECTIONS:
            for k in sorted(getattr(self, sec)):
                lines.append(f"{sec}.{k} = {getattr(self, sec)[k]}")
        return "\n".join(lines) + "\n"

    # typed accessors; ``key`` is "section.name"
    def _raw(self, key: str):
        sec, name = key.split(".", 1)
        return getattr(self, sec).get(name)

    def get(self, key: str, default=None, kind: Callable = str):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except (TypeError, ValueError):
            raise ValidationError(f"cannot read {raw!r} as {getattr(kind, '__name__', kind)}",
                                  field=key) from None

    def floats(self, key: str, default=None) -> list[float] | None:
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            return [float(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise ValidationError(f"expected a comma-separated list of numbers, got {raw!r}",
                                  field=key) from None

    def words(self, key: str, default=None) -> list[str] | None:
        raw = self._raw(key)
        if raw is None:
            return default
        return [x.strip() for x in raw.split(",") if x.strip()]


def parse_config(text: str) -> RunConfig:
    command = None
    sections: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'", field=f"line{lineno}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "command":
            command = value
            continue
        if "." not in key:
            raise ValidationError(f"line {lineno}: key {key!r} lacks a section prefix", field=key)
        sec, name = key.split(".", 1)
        if sec not in sections:
            raise ValidationError(f"unknown section {sec!r}", field=key)
        if name in sections[sec]:
            raise ValidationError(f"duplicate key {key!r}", field=key)
        sections[sec][name] = value
    if command is None:
        raise ValidationError("missing 'command'", field="command")
    if command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}",
                              field="command")
    return RunConfig(command, sections["problem"], sections["numerics"], sections["output"], text)


# -- output --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
        if name not in self.files:
            self.files.append(name)
        return path

    def csv(self, name: str, rows: list[dict], columns: list[str] | None = None) -> Path:
        if columns is None:
            columns = []
            for r in rows:
                columns += [k for k in r if k not in columns]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
        return self.text(name, buf.getvalue())

    def manifest(self, cfg: RunConfig, status: str) -> Path:
        records = []
        for name in sorted(self.files):
            data = (self.root / name).read_bytes()
            records.append({"path": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        doc = {"command": cfg.command, "config_sha256": cfg.digest, "status": status, "files": records}
        path = self.root / "manifest.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


# -- commands -------------------------------------------------------------------------

def _problem_spec(cfg: RunConfig, eps: float | None = None):
    from .problem import ProblemSpec

    n = cfg.get("problem.n", None, int)
    p = cfg.get("problem.p", None, float)
    if n is None:
        raise ValidationError("missing key", field="problem.n")
    if p is None:
        raise ValidationError("missing key", field="problem.p")
    A = cfg.get("problem.A")
    if A is not None:
        A = [c.strip() for c in A.split(";")]
    if eps is None:
        eps = cfg.get("problem.epsilon", 0.1, float)
    return ProblemSpec(n, p, cfg.get("problem.V", 0.0), cfg.get("problem.K", 1.0), A, eps)


def run_ground_state(cfg: RunConfig, out: Outputs, threads: int):
    from .ansatz import ground_state_integrals, solve_ground_state

    n = cfg.get("problem.n", None, int)
    p = cfg.get("problem.p", None, float)
    _problem_spec(cfg)  # validates n and p
    prof = solve_ground_state(n, p, tol=cfg.get("numerics.tol", 1e-8, float))
    c0, c1 = ground_state_integrals(prof)
    out.text(f"ground_state_n{n}_p{p:g}.txt", prof.to_text())
    out.csv("ground_state.csv", [{"n": n, "p": p, "peak": prof.peak, "decay_rate": prof.decay_rate,
                                   "residual": prof.residual, "C0": c0, "C1": c1}])


def run_reduce(cfg: RunConfig, out: Outputs, threads: int):
    from .reduction import Reducer

    eps_list = cfg.floats("numerics.eps", None) or [cfg.get("problem.epsilon", 0.1, float)]
    specs = [_problem_spec(cfg, e) for e in eps_list]
    n = specs[0].n
    box = cfg.floats("numerics.search_box", [-1.0, 1.0])
    if len(box) not in (2, 2 * n):
        raise ValidationError("search_box needs lo, hi or one pair per axis", field="numerics.search_box")
    multistart = cfg.get("numerics.multistart", 16, int)
    box_radius = cfg.get("numerics.box_radius", None, float)
    points = cfg.get("numerics.points", None, int)
    for s in specs:
        Reducer(s, box_radius, points)  # validates epsilon cap before any solve

    def one(spec):
        red = Reducer(spec, box_radius, points)
        return red.find_concentration_points(box, multistart)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, specs))
    rows, warns = [], []
    for eps, pts in zip(eps_list, results):
        for pt in sorted(pts, key=lambda q: tuple(np.atleast_1d(q.xi))):
            rows.append(pt.to_row())
        for w in pts.warnings:
            warns.append({"eps": eps, **w})
    out.csv("concentration_points.csv", rows)
    if warns:
        out.csv("warnings.csv", warns)


def run_geodesics(cfg: RunConfig, out: Outputs, threads: int):
    from .expr import Expression
    from .geodesics import MetricPerturbation, find_geodesic_candidates, refine_closed_geodesic

    N = cfg.get("problem.N", 2, int)
    kind = cfg.get("problem.h", "conformal")
    phi_src = cfg.get("problem.phi")
    if phi_src is None:
        raise ValidationError("missing key", field="problem.phi")
    ex = Expression(phi_src, field="problem.phi")
    phi = lambda s: np.broadcast_to(np.asarray(ex(s=np.asarray(s, dtype=float)), dtype=float), np.shape(s))
    if kind == "conformal":
        h = MetricPerturbation.conformal(phi, N)
    elif kind == "axis":
        h = MetricPerturbation.axis_form(phi, N, cfg.get("problem.axis", 0, int))
    else:
        raise ValidationError(f"unknown perturbation {kind!r}; use conformal or axis", field="problem.h")
    r_range = tuple(cfg.floats("numerics.r_range", [-6.0, 6.0]))
    cands, warns = find_geodesic_candidates(h, N, cfg.get("numerics.multistart", 8, int), r_range,
                                            seed=cfg.get("numerics.seed", 0, int))
    out.csv("geodesic_candidates.csv", [c.to_row() for c in cands])
    if warns:
        out.csv("warnings.csv", [w if isinstance(w, dict) else {"message": str(w)} for w in warns])
    for eps in cfg.floats("numerics.refine_eps", []) or []:
        for i, c in enumerate(cands):
            if c.classification not in ("min", "max", "saddle") and c.null_dims:
                continue
            loop = refine_closed_geodesic(c, eps, h=h)
            body = "\n".join(" ".join(repr(float(v)) for v in row) for row in loop.polyline())
            out.text(f"loops/candidate{i}_eps{eps:g}.txt", "# tau s x...\n" + body + "\n")


def run_cc(cfg: RunConfig, out: Outputs, threads: int):
    from .diagnostics import LIONS_EXPECTED, lions_classify, mass_budget, template_sequence

    kinds = cfg.words("problem.kinds", list(LIONS_EXPECTED))
    for k in kinds:
        if k not in LIONS_EXPECTED:
            raise ValidationError(f"unknown template {k!r}", field="problem.kinds")
    p = cfg.get("problem.p", 2.0, float)
    if not p > 1:
        raise ValidationError("p must exceed 1", field="problem.p")
    count = cfg.get("numerics.profiles", 20, int)
    rng = np.random.default_rng(cfg.get("numerics.seed", 0, int))
    R = np.linspace(*cfg.floats("numerics.radii", [0.25, 6.0]), cfg.get("numerics.radii_count", 24, int))
    rows, qrows = [], []
    for kind in kinds:
        for i in range(count):
            seq = template_sequence(kind, rng, p=p)
            rep = lions_classify(seq, R)
            mb = mass_budget(seq.terms(), seq.limit, p, R)
            rows.append({"template": kind, "index": i, "label": rep.label,
                         "expected": LIONS_EXPECTED[kind], "mass": rep.mass,
                         "split_mass": "" if rep.split_mass is None else rep.split_mass,
                         "nu_norm": mb.nu_norm_est, "nu_infinity": mb.nu_infinity_est,
                         "budget_residual": mb.budget_residual})
            for r in rep.rows():
                qrows.append({"template": kind, "index": i, **r})
    out.csv("lions.csv", rows)
    out.csv("q_profiles.csv", qrows)


def run_constants(cfg: RunConfig, out: Outputs, threads: int):
    from . import constants as C
    from .grid import make_grid

    task = cfg.get("problem.task", "hardy")
    rows = []
    if task in ("hardy", "probe", "S"):
        q = cfg.get("problem.q", None, float)
        P = C.HardyParams(cfg.get("problem.N", 3, int), cfg.get("problem.k", 3, int),
                          cfg.get("problem.p", 2.0, float), cfg.get("problem.alpha", 0.0, float),
                          cfg.get("problem.s", 0.0, float), q)
        base = {"N": P.N, "k": P.k, "p": P.p, "alpha": P.alpha, "s": P.s}
        if task == "hardy":
            rng = np.random.default_rng(cfg.get("numerics.seed", 0, int))
            g = make_grid(P.N, 1.0, cfg.get("numerics.points", 25 if P.N < 4 else 15, int))
            vals = [C.hardy_quotient(C.random_test_field(g, rng), P)
                    for _ in range(cfg.get("numerics.samples", 100, int))]
            rows.append({**base, "bound": P.hardy_constant, "value": min(vals),
                         "error_bar": "", "iterations": len(vals)})
        elif task == "probe":
            for m in cfg.floats("numerics.m", [1, 2, 4, 8]):
                rows.append({**base, "m": m, "bound": P.hardy_constant,
                             "value": C.hardy_constant_probe(P, m), "error_bar": "", "iterations": ""})
        else:
            est = C.hardy_sobolev_S(P, budget=cfg.get("numerics.budget", 400, int))
            rows.append({**base, "q": P.q, "value": est.value, "error_bar": "",
                         "iterations": est.iterations, "converged": est.converged})
    elif task == "aubin-talenti":
        n = cfg.get("problem.n", 3, int)
        eps = cfg.floats("numerics.eps", [1.0, 0.25])
        for e, v in zip(eps, C.aubin_talenti_quotient(n, eps)):
            rows.append({"n": n, "eps": e, "value": v, "error_bar": "", "iterations": ""})
    elif task == "brezis-nirenberg":
        n = cfg.get("problem.n", 4, int)
        lam1 = C.radial_lambda1(n)
        for frac in cfg.floats("numerics.lambda_fraction", [0.0, 0.25, 0.5]):
            est = C.brezis_nirenberg_S_lambda(frac * lam1, n, cfg.get("numerics.cells", 400, int))
            rows.append({"n": n, "lambda": frac * lam1, "value": est.value, "error_bar": est.error_bar,
                         "iterations": est.iterations, "S0": C.sobolev_constant(n)})
    elif task == "lambda1":
        n = cfg.get("problem.n", 3, int)
        pts = cfg.get("numerics.points", None, int)
        rows.append({"n": n, "value": C.lambda1_ball(n, pts), "error_bar": "", "iterations": ""})
    else:
        raise ValidationError(f"unknown constants task {task!r}", field="problem.task")
    out.csv("constants.csv", rows)


def run_homoclinic(cfg: RunConfig, out: Outputs, threads: int):
    from .homoclinic import (HamiltonianSpec, continue_branch, lambda0, seed_from_ground_level,
                             solve_homoclinic)

    spec = HamiltonianSpec(cfg.get("problem.sigma", 2.0, float), cfg.get("problem.a", "2*sech(t)^2"))
    T = cfg.get("numerics.T", 20.0, float)
    gl = lambda0(spec, T, cfg.get("numerics.M_eig", 2048, int))
    rows_meta = [{"lambda0": gl.lam0, "admissible": gl.admissible, "note": gl.note}]
    out.csv("lambda0.csv", rows_meta)
    if not gl.admissible:
        return
    M = cfg.get("numerics.M", 8192, int)
    start = solve_homoclinic(spec.at(gl.lam0 + cfg.get("numerics.offset", 0.02, float)),
                             seed_from_ground_level(gl, cfg.get("numerics.delta", 0.3, float)), T, M)
    br = continue_branch(spec, start, cfg.get("numerics.steps", 20, int), cfg.get("numerics.ds", 0.05, float))
    out.csv("branch.csv", [p.to_row(br.termination) for p in br],
            ["arclength", "lambda", "amplitude", "residual", "termination_cause"])
    stride = max(1, cfg.get("numerics.trajectory_stride", 1, int))
    for i, p in enumerate(br):
        if i % stride == 0 or i == len(br) - 1:
            out.text(f"trajectories/point{i:03d}.txt", p.to_text())


RUNNERS = {
    "ground-state": run_ground_state,
    "reduce": run_reduce,
    "geodesics": run_geodesics,
    "cc": run_cc,
    "constants": run_constants,
    "homoclinic": run_homoclinic,
}


def run(cfg: RunConfig, out_dir: Path, threads: int = 1) -> int:
    out = Outputs(out_dir)
    out.text("config.txt", cfg.canonical())
    try:
        RUNNERS[cfg.command](cfg, out, threads)
    except ValidationError as exc:
        where = f"{exc.field}: " if exc.field else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        out.manifest(cfg, "invalid")
        return 2
    except ConcentraError as exc:
        rec = exc.record()
        text = json.dumps(rec, sort_keys=True, default=str)
        print(text, file=sys.stderr)
        out.text("error.json", text + "\n")
        out.manifest(cfg, "failed")
        return 3
    out.manifest(cfg, "ok")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="concentra", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config.read_text())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc.field}: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or Path(cfg.output.get("dir", "concentra-out"))
    log.info("running %s into %s", cfg.command, out_dir)
    return run(cfg, out_dir, args.threads)


if __name__ == "__main__":
    sys.exit(main())
