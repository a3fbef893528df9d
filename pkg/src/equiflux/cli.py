"""Command line driver: ``equiflux <kind> [options]``.

Kinds
-----
solve          primal solve, energy and Galerkin residual
estimate       primal solve + equilibration + estimator on a refinement sequence
convergence    primal error rates on a refinement sequence
lift           degree-robust lifting of f + div xi
lift-weighted  weighted lifting for a piecewise affine weight
p-sweep        efficiency or lifting ratios over a list of degrees

Every run writes ``report.json`` (and, where applicable, ``table.csv``,
``elements.csv`` or ``flux.csv``) to the output directory. Wall-clock
timings go to ``timings.json`` so the other files are reproducible
byte for byte.

Exit codes: 0 success, 1 usage or input error, 2 failed check or
incompatible data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .equilibration import Equilibrator, verify_equilibration
from .errors import IncompatibleDataError, MeshError, SolverError
from .estimator import estimate
from .lifting import WeightedLiftConfig, lift, lift_weighted
from .mesh import BoundaryPartition, Mesh, read_mesh, refine_uniform, side_markers, structured_square
from .oracles import error_oracle, transfer_data
from .polyspace import dump_coefficients
from .primal import galerkin_residual, solve_primal
from .problems import get_problem, make_compatible, weight_values

log = logging.getLogger("equiflux")

KINDS = ("solve", "estimate", "convergence", "lift", "lift-weighted", "p-sweep")
EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "estimate"
    problem: str = "sinsin"
    p: int = 1
    pprime: int | None = None
    mesh: str | None = None  # prefix of .node/.ele/.bnd files
    square: int = 4
    diagonal: str = "right"
    perturb: float = 0.0
    markers: str = "D"
    seed: int = 0
    levels: int = 3
    p_list: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    quantity: str = "efficiency"  # p-sweep: efficiency, lift or lift-weighted
    weight: str = "interior-hat"
    compatible: bool = False  # shift f to satisfy the weighted compatibility condition
    data_degree: int | None = None
    out: str = "out"
    check_tol: float = 1e-10
    oracle_tol: float = 0.005
    error_tol: float = 0.001

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        tol = d.pop("tolerances", {})
        cfg = cls.from_dict(d)
        for k, v in tol.items():
            if k not in ("check_tol", "oracle_tol", "error_tol"):
                raise ConfigError(f"unknown tolerance {k!r}")
            setattr(cfg, k, float(v))
        return cfg

    def effective_pprime(self) -> int:
        if self.pprime is not None:
            return self.pprime
        return 1 if self.kind in ("lift", "lift-weighted") else self.p

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; choose from {KINDS}")
        if self.p < 1:
            raise ConfigError("p must be at least 1")
        pp = self.effective_pprime()
        if not 1 <= pp <= self.p and self.kind != "p-sweep":
            raise ConfigError(f"need 1 <= p' <= p, got p'={pp}, p={self.p}")
        if self.mesh is not None:
            for ext in (".node", ".ele", ".bnd"):
                if not Path(self.mesh).with_suffix(ext).exists():
                    raise ConfigError(f"mesh file {Path(self.mesh).with_suffix(ext)} not found")
        if self.levels < 1:
            raise ConfigError("levels must be positive")
        if self.quantity not in ("efficiency", "lift", "lift-weighted"):
            raise ConfigError(f"unknown sweep quantity {self.quantity!r}")
        try:
            get_problem(self.problem)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc


def parse_markers(text: str):
    """``D``, ``N`` or a list like ``left=D,right=N,default=N``."""
    text = text.strip()
    if text in ("D", "N"):
        return text
    try:
        sides = dict(item.split("=") for item in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad marker string {text!r}") from exc
    if not set(sides) <= {"left", "right", "bottom", "top", "default"} or not set(sides.values()) <= {"D", "N"}:
        raise ConfigError(f"bad marker string {text!r}")
    return side_markers(**sides)


def build_problem_mesh(cfg: ExperimentConfig) -> tuple[Mesh, BoundaryPartition]:
    if cfg.mesh is not None:
        return read_mesh(cfg.mesh)
    return structured_square(cfg.square, parse_markers(cfg.markers), diagonal=cfg.diagonal,
                             perturb=cfg.perturb, seed=cfg.seed)


def _partition_for(cfg, problem, mesh, partition):
    # the pure Neumann problem keeps its own boundary condition unless markers are given
    if problem.boundary == "N" and cfg.markers == "D" and cfg.mesh is None:
        return BoundaryPartition.uniform(mesh, "N")
    return partition


# -- experiment kinds ------------------------------------------------------------------

def _checks_pass(report: dict, tol: float) -> bool:
    return (report["div_residual_rel"] <= tol and report["max_interior_jump"] <= tol
            and report["max_neumann_trace"] <= tol)


def run_solve(cfg, mesh, partition, problem):
    data = problem.data(mesh, cfg.p, cfg.seed, partition, cfg.data_degree)
    sol = solve_primal(data, mesh, cfg.effective_pprime())
    res = galerkin_residual(sol)
    out = {"n_dofs": int(sol.dofmap.n_dofs), "energy": sol.energy(), "galerkin_residual": res,
           "n_elements": mesh.n_elements}
    if problem.exact_grad is not None:
        out["error"] = error_oracle(sol, data, problem.exact_grad).value
    return out, [], res <= cfg.check_tol


def _levels(mesh, partition, n):
    m, part = mesh, partition
    for level in range(n):
        yield level, m, part
        if level + 1 < n:
            m = refine_uniform(m)
            part = part.refine(m)


def run_estimate(cfg, mesh, partition, problem, element_rows=None):
    base = problem.data(mesh, cfg.p, cfg.seed, partition, cfg.data_degree)
    pp = cfg.effective_pprime()
    rows, ok = [], True
    for level, m, part in _levels(mesh, partition, cfg.levels):
        data = transfer_data(base, m, mesh, part)
        sol = solve_primal(data, m, pp)
        sigma, _ = Equilibrator(m, data, sol, cfg.p).flux()
        ver = verify_equilibration(sigma, data, cfg.p, part)
        eo = error_oracle(sol, data, problem.exact_grad, tol=cfg.error_tol)
        rep = estimate(sigma, data, sol, eo.element_values, margin=eo.margin)
        good = _checks_pass(ver, cfg.check_tol) and bool(rep.bound_holds)
        ok &= good
        rows.append({
            "level": level, "h": float(m.h.max()), "n_elements": m.n_elements,
            "error": rep.error, "eta": rep.eta, "i_eff": rep.efficiency_index,
            "oracle_margin": eo.margin, "bound_holds": rep.bound_holds,
            "div_residual_rel": ver["div_residual_rel"], "max_interior_jump": ver["max_interior_jump"],
            "max_neumann_trace": ver["max_neumann_trace"],
        })
        if element_rows is not None and level == cfg.levels - 1:
            element_rows.extend(rep.element_rows())
    return {"rows": rows, "all_checks_pass": ok}, rows, ok


def run_convergence(cfg, mesh, partition, problem):
    base = problem.data(mesh, cfg.p, cfg.seed, partition, cfg.data_degree)
    rows = []
    for level, m, part in _levels(mesh, partition, cfg.levels):
        data = transfer_data(base, m, mesh, part)
        sol = solve_primal(data, m, cfg.effective_pprime())
        err = error_oracle(sol, data, problem.exact_grad, tol=cfg.error_tol).value
        row = {"level": level, "h": float(m.h.max()), "n_dofs": int(sol.dofmap.n_dofs),
               "error": err, "energy": sol.energy(), "rate": None}
        if rows and rows[-1]["error"] > 0 and err > 0:
            row["rate"] = float(np.log(rows[-1]["error"] / err) / np.log(rows[-1]["h"] / row["h"]))
        rows.append(row)
    out = {"rows": rows}
    if problem.exact_energy is not None:
        out["exact_energy"] = problem.exact_energy
        out["energy_rel_gap"] = abs(rows[-1]["energy"] - problem.exact_energy) / problem.exact_energy
    return out, rows, True


def _lift_record(res, timings):
    d = res.to_dict()
    timings.update(d.pop("timings"))
    return d


def run_lift(cfg, mesh, partition, problem, p=None, timings=None):
    p = cfg.p if p is None else p
    data = problem.data(mesh, p, cfg.seed, partition, cfg.data_degree)
    res = lift(data.f, data.xi, partition, p, mesh, pprime=cfg.effective_pprime() if cfg.kind == "lift" else 1,
               oracle_tol=cfg.oracle_tol)
    ok = res.feasible(cfg.check_tol)
    return _lift_record(res, timings if timings is not None else {}), res, ok


def run_lift_weighted(cfg, mesh, partition, problem, p=None, timings=None):
    p = cfg.p if p is None else p
    data = problem.data(mesh, p, cfg.seed, BoundaryPartition.uniform(mesh, "D"), cfg.data_degree)
    wcfg = WeightedLiftConfig(mesh, weight_values(mesh, cfg.weight))
    f = data.f
    if cfg.compatible and wcfg.pure_neumann:
        if not hasattr(f, "coeffs"):
            raise ConfigError("the compatibility shift needs piecewise polynomial f")
        f = make_compatible(mesh, f, wcfg.psi, data.xi)
    res = lift_weighted(wcfg, f, data.xi, p, mesh, oracle_tol=cfg.oracle_tol)
    ok = res.feasible(cfg.check_tol)
    rec = _lift_record(res, timings if timings is not None else {})
    rec["weight"] = cfg.weight
    rec["zero_faces"] = int(len(wcfg.zero_faces))
    return rec, res, ok


def run_sweep(cfg, mesh, partition, problem, timings):
    rows, ok = [], True
    for p in cfg.p_list:
        t = {}
        if cfg.quantity == "efficiency":
            sub = ExperimentConfig(**{**asdict(cfg), "kind": "estimate", "p": p, "pprime": p, "levels": 1})
            rec, _, good = run_estimate(sub, mesh, partition, problem)
            r = rec["rows"][0]
            rows.append({"p": p, "ratio": r["i_eff"], "eta": r["eta"], "error": r["error"],
                         "oracle_margin": r["oracle_margin"], "checks_pass": good})
        else:
            fn = run_lift if cfg.quantity == "lift" else run_lift_weighted
            rec, res, good = fn(cfg, mesh, partition, problem, p, t)
            st = rec.get("stability", {})
            rows.append({"p": p, "ratio": st.get("ratio"), "normalized_ratio": st.get("normalized_ratio"),
                         "objective": rec["objective"], "oracle_margin": st.get("oracle_margin"),
                         "checks_pass": good})
        timings[f"p={p}"] = t
        ok &= bool(good)
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    out = {"quantity": cfg.quantity, "rows": rows, "all_checks_pass": ok}
    if ratios:
        out.update(max_ratio=max(ratios), min_ratio=min(ratios), spread=max(ratios) / min(ratios))
    return out, rows, ok


# -- output ------------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, rows) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})


def run(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Run one experiment and write its report files. Returns (exit code, report)."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh, partition = build_problem_mesh(cfg)
    problem = get_problem(cfg.problem)
    partition = _partition_for(cfg, problem, mesh, partition)
    if cfg.kind == "p-sweep" and cfg.data_degree is None and problem.name == "random-poly":
        # same data for every p so that only the degree changes
        cfg.data_degree = min(cfg.p_list) - 1
    timings: dict = {}
    t0 = time.perf_counter()
    recorded = {k: v for k, v in asdict(cfg).items() if k != "out"}
    report = {"config": recorded, "mesh": {"n_elements": mesh.n_elements, "n_vertices": mesh.n_vertices,
                                              "h_max": float(mesh.h.max())}}
    rows, res, element_rows = [], None, []
    if cfg.kind == "solve":
        body, rows, ok = run_solve(cfg, mesh, partition, problem)
    elif cfg.kind == "estimate":
        body, rows, ok = run_estimate(cfg, mesh, partition, problem, element_rows)
    elif cfg.kind == "convergence":
        body, rows, ok = run_convergence(cfg, mesh, partition, problem)
    elif cfg.kind == "lift":
        body, res, ok = run_lift(cfg, mesh, partition, problem, timings=timings)
    elif cfg.kind == "lift-weighted":
        body, res, ok = run_lift_weighted(cfg, mesh, partition, problem, timings=timings)
    else:
        body, rows, ok = run_sweep(cfg, mesh, partition, problem, timings)
    timings["total"] = time.perf_counter() - t0
    report["result"] = body
    report["status"] = "ok" if ok else "check failed"
    write_json(out / "report.json", report)
    write_json(out / "timings.json", timings)
    if rows:
        write_csv(out / "table.csv", rows)
    if element_rows:
        write_csv(out / "elements.csv", element_rows)
    if res is not None:
        dump_coefficients(out / "flux.csv", res.sigma)
    return (EXIT_OK if ok else EXIT_CHECK), report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="equiflux", description="Equilibrated fluxes and degree-robust liftings.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="JSON config file; command line options override it")
    ap.add_argument("--p", type=int)
    ap.add_argument("--pprime", type=int)
    g = ap.add_mutually_exclusive_group()
    g.add_argument("--mesh", help="mesh file prefix (.node/.ele/.bnd)")
    g.add_argument("--square", type=int, help="structured unit-square mesh with N x N cells")
    ap.add_argument("--problem")
    ap.add_argument("--markers", help="D, N or e.g. left=D,default=N")
    ap.add_argument("--levels", type=int)
    ap.add_argument("--p-list", dest="p_list", help="comma separated degrees for p-sweep")
    ap.add_argument("--quantity", choices=("efficiency", "lift", "lift-weighted"))
    ap.add_argument("--weight")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    cfg.kind = args.kind
    for name in ("p", "pprime", "mesh", "square", "problem", "markers", "levels", "quantity", "weight", "out", "seed"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    if args.square is not None:
        cfg.mesh = None
    if args.p_list:
        try:
            cfg.p_list = [int(s) for s in args.p_list.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --p-list {args.p_list!r}") from exc
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        code, report = run(cfg)
    except (ConfigError, MeshError, TypeError) as exc:
        print(f"equiflux: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IncompatibleDataError as exc:
        print(f"equiflux: incompatible data: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"equiflux: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_jsonable({"status": report["status"], "out": str(cfg.out)}), sort_keys=True))
    if code != EXIT_OK:
        print("equiflux: a guaranteed check failed, see report.json", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
