"""Scenario-driven command line: solve, check, simulate, compare, tails.

Usage::

    levyinv <solve|check|simulate|compare|tails|scenarios> --config PATH --out DIR [--seed N] [--quiet]

``--config`` takes a JSON file or the name of a built-in scenario.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import levy, operator, sde, vfie
from .expr import ExprError, ScalarFunction, parse

log = logging.getLogger("levyinv")

BUILTINS = ("ou", "cp_exponential_lebesgue", "jump_flip", "superlinear", "stable_drift")
SUBCOMMANDS = ("solve", "check", "simulate", "compare", "tails", "scenarios")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


# ------------------------------------------------------------------ config

def schema() -> dict:
    return json.loads(resources.files("levyinv").joinpath("schema.json").read_text())


def builtin_path(name: str):
    return resources.files("levyinv").joinpath("scenarios", f"{name}.json")


def _expr_fields(cfg: dict):
    """(path, text, variables) for every expression-valued field."""
    out = []

    def measure(m, path):
        if m.get("density") is not None:
            out.append((path + ".density", m["density"], ("y",)))
        cf = m.get("closed_forms", {})
        if "tail" in cf:
            out.append((path + ".closed_forms.tail", cf["tail"], ("z",)))
        if "m2" in cf:
            out.append((path + ".closed_forms.m2", cf["m2"], ("eps",)))

    t = cfg["triplet"]
    out += [("triplet.a", t["a"], ("x",)), ("triplet.b", t["b"], ("x",))]
    k = t["kernel"]
    if k["type"] == "constant":
        measure(k["measure"], "triplet.kernel.measure")
    elif k["type"] == "pushforward":
        measure(k["base"], "triplet.kernel.base")
        out.append(("triplet.kernel.phi", k["phi"], ("x",)))
    else:
        out.append(("triplet.kernel.density", k["density"], ("x", "y")))
    cand = cfg.get("candidate", {})
    if "density" in cand:
        out.append(("candidate.density", cand["density"], ("x",)))
    v = cfg.get("vfie", {})
    if "phi_gamma" in v:
        out.append(("vfie.phi_gamma", v["phi_gamma"], ("x",)))
    s = cfg.get("sde")
    if s:
        out += [(f"sde.phi[{i}]", p, ("x",)) for i, p in enumerate(s["phi"])]
        j = s["driver"].get("jumps")
        if j and j["type"] == "compound_poisson":
            measure(j["law"], "sde.driver.jumps.law")
    e = cfg.get("expected", {})
    for key in ("tail_proportionality", "identity"):
        for f in ("phi1", "phi2"):
            if f in e.get(key, {}):
                out.append((f"expected.{key}.{f}", e[key][f], ("x",)))
    if "fractional" in e:
        out.append(("expected.fractional.phi_gamma", e["fractional"]["phi_gamma"], ("x",)))
    return out


def validate(cfg: dict) -> dict:
    """Schema validation plus parsing of every expression; returns cfg unchanged."""
    errors = sorted(jsonschema.Draft202012Validator(schema()).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise ConfigError(".".join(str(p) for p in e.path), e.message)
    for path, text, variables in _expr_fields(cfg):
        try:
            parse(text, variables)
        except ExprError as exc:
            raise ConfigError(path, str(exc)) from exc
    needs = {"solve": "vfie", "simulate": "sde", "check": "check"}
    for block in needs.values():
        if block in cfg and not cfg[block]:
            raise ConfigError(block, "block is empty")
    if "vfie" in cfg and cfg["vfie"].get("method") == "fractional":
        for key in ("alpha", "phi_gamma"):
            if key not in cfg["vfie"]:
                raise ConfigError(f"vfie.{key}", "required by the fractional method")
    if "sde" in cfg:
        s = cfg["sde"]
        n = len(s["driver"]["gamma"])
        if len(s["phi"]) != n:
            raise ConfigError("sde.phi", f"{len(s['phi'])} entries for a driver with {n} coordinates")
        sig = s["driver"]["sigma"]
        if len(sig) != n or any(len(r) != n for r in sig):
            raise ConfigError("sde.driver.sigma", f"must be {n}x{n}")
    return cfg


def load_config(spec: str) -> dict:
    p = Path(spec)
    if p.exists():
        text = p.read_text()
    elif spec in BUILTINS:
        text = builtin_path(spec).read_text()
    else:
        raise ConfigError("", f"no config file or built-in scenario named {spec!r}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    return validate(cfg)


# ---------------------------------------------------------------- builders

def _interval(v):
    if v is None:
        return (-np.inf, np.inf)
    lo, hi = v
    return (-np.inf if lo is None else float(lo), np.inf if hi is None else float(hi))


def _closed(text, var):
    f = ScalarFunction.from_expression(text, var)
    return lambda u: f(u)


def build_measure(m: dict, name="") -> levy.LevyMeasureSpec:
    cf = m.get("closed_forms", {})
    density = m.get("density")
    return levy.LevyMeasureSpec(
        atoms=[tuple(a) for a in m.get("atoms", [])],
        density=ScalarFunction.from_expression(density, "y") if density else None,
        activity_class=m.get("activity_class", "levy"),
        support=_interval(m.get("support")),
        breakpoints=m.get("breakpoints", ()),
        tail=_closed(cf["tail"], "z") if "tail" in cf else None,
        m2=_closed(cf["m2"], "eps") if "m2" in cf else None,
        name=name,
    )


def build_kernel(k: dict) -> levy.LevyKernel:
    if k["type"] == "constant":
        return levy.ConstantKernel(build_measure(k["measure"]))
    if k["type"] == "pushforward":
        return levy.PushforwardKernel(build_measure(k["base"]), k["phi"])
    return levy.GeneralKernel(k["density"], k.get("activity_class", "levy"),
                              _interval(k.get("support")), k.get("breakpoints", ()))


def build_triplet(cfg: dict) -> operator.CharTriplet:
    t = cfg["triplet"]
    return operator.CharTriplet(t["a"], t["b"], build_kernel(t["kernel"]), name=cfg["name"],
                                kinks=tuple(t.get("kinks", ())))


def build_decomposition(cfg: dict, triplet=None, kind=None) -> levy.Decomposition:
    triplet = triplet or build_triplet(cfg)
    return levy.default_decomposition(kind or cfg.get("decomposition", "standard"), triplet.kernel)


def build_candidate(cfg: dict, solution=None) -> operator.Measure1D:
    c = cfg.get("candidate")
    if c is None:
        raise ConfigError("candidate", "no invariant candidate configured")
    if c.get("source") == "solution":
        if solution is None:
            solution = run_solve(cfg)
        return operator.Measure1D.from_grid(solution.x, solution.eta)
    return operator.Measure1D(c.get("density"), _interval(c.get("domain")), atoms=c.get("atoms", ()),
                              kinks=c.get("kinks", ()))


def build_sde(cfg: dict) -> sde.SdeSpec:
    s = cfg["sde"]
    d = s["driver"]
    j = d.get("jumps")
    jumps = None
    if j and j["type"] == "compound_poisson":
        jumps = sde.CompoundPoisson(j["rate"], build_measure(j["law"]), j.get("coordinate", 0))
    elif j:
        jumps = sde.StableJumps(j["alpha"], j.get("scale", 1.0), j.get("coordinate", 0))
    drv = sde.DriverSpec(d["gamma"], d["sigma"], jumps)
    return sde.SdeSpec(s["phi"], drv, s.get("x0", 0.0), s.get("scheme", "euler_exact_jumps"), s.get("eps", 1e-3))


# -------------------------------------------------------------- operations

def run_solve(cfg: dict, decomposition=None) -> vfie.VfieSolution:
    v = cfg.get("vfie")
    if not v:
        raise ConfigError("vfie", "block required for solve")
    if v.get("method", "vfie") == "fractional":
        s = vfie.assemble_fractional(v["alpha"], v["phi_gamma"], v["R"], v["N"])
        return vfie.solve_fractional(s, v.get("c", 0.0), v.get("normalize", True), v.get("nonneg", True))
    t = build_triplet(cfg)
    d = build_decomposition(cfg, t, decomposition)
    s = vfie.assemble(t, d, v["R"], v["N"])
    pins = (v.get("pin_c1"), v.get("pin_c2"))
    if decomposition is not None and decomposition != cfg.get("decomposition", "standard"):
        # c1 and c2 depend on the decomposition; pinned values belong to the configured one
        pins = (None, None)
    return vfie.solve(s, v.get("normalize", True), *pins, v.get("nonneg", True))


def bump_family(cfg: dict):
    c = cfg.get("check")
    if not c:
        raise ConfigError("check", "block required")
    return operator.standard_bumps(tuple(c["window"]), c.get("n_centers", 17), tuple(c.get("widths", (0.5, 1, 2))))


def run_check(cfg: dict, solution=None):
    t = build_triplet(cfg)
    eta = build_candidate(cfg, solution)
    fs = bump_family(cfg)
    tol = cfg["check"].get("tolerance", 1e-8)
    return fs, operator.invariance_residual(t, eta, fs, tol=tol)


def run_simulate(cfg: dict, seed=None) -> sde.EmpiricalDistribution:
    s = cfg.get("sde")
    if not s:
        raise ConfigError("sde", "block required for simulate")
    spec = build_sde(cfg)
    spec.lipschitz_probe()
    bins = s.get("bins", [-5, 5, 100])
    return sde.simulate(spec, s["T"], s["dt"], s["paths"], s["seed"] if seed is None else seed, bins=bins)


def tails_table(cfg: dict):
    tcfg = cfg.get("tails", {})
    x = float(tcfg.get("x", 0.0))
    m = build_kernel(cfg["triplet"]["kernel"]).at(x)
    if "z" in tcfg:
        z = np.asarray(tcfg["z"], dtype=float)
    else:
        g = np.geomspace(1e-3, 10.0, 25)
        z = np.concatenate([-g[::-1], g])
    return z, levy.tail(m, z), levy.integrated_tail(m, z)


# --------------------------------------------------------------------- csv

def fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows, meta=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if meta:
            w.writerow(["key", "value"])
            for k, v in meta:
                w.writerow([k, fmt(v)])
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def write_solution(path: Path, sol: vfie.VfieSolution):
    meta = [("c1", sol.c1), ("c2", sol.c2), ("residual_norm", sol.residual_norm), ("mass_leak", sol.mass_leak)]
    write_csv(path, ["x", "eta"], zip(sol.x, sol.eta), meta)


def read_solution(path: Path) -> vfie.VfieSolution:
    meta, xs, etas = {}, [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        mode = None
        for row in r:
            if row == ["key", "value"]:
                mode = "meta"
                continue
            if row == ["x", "eta"]:
                mode = "data"
                continue
            if mode == "meta":
                meta[row[0]] = float(row[1])
            elif mode == "data":
                xs.append(float(row[0]))
                etas.append(float(row[1]))
    x = np.array(xs)
    h = float(x[1] - x[0]) if x.size > 1 else 1.0
    return vfie.VfieSolution(x, np.array(etas), meta.get("c1", 0.0), meta.get("c2", 0.0),
                             meta.get("residual_norm", 0.0), meta.get("mass_leak", 0.0), h, {})


def write_histogram(out: Path, e: sde.EmpiricalDistribution):
    write_csv(out / "histogram.csv", ["bin_lo", "bin_hi", "count"],
              ((lo, hi, str(int(c))) for lo, hi, c in zip(e.edges[:-1], e.edges[1:], e.counts)))
    report = {"n_samples": e.n_samples, "paths": e.paths, "aborted": e.aborted, "seed": e.seed,
              "burn_in": e.burn_in, "underflow": e.underflow, "overflow": e.overflow,
              "mean": e.mean(), "var": e.var()}
    (out / "simulate_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_histogram(out: Path) -> sde.EmpiricalDistribution:
    rep = json.loads((out / "simulate_report.json").read_text())
    lo, hi, cnt = [], [], []
    with open(out / "histogram.csv", newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            lo.append(float(row[0]))
            hi.append(float(row[1]))
            cnt.append(int(row[2]))
    edges = np.array(lo + [hi[-1]])
    return sde.EmpiricalDistribution(edges, np.array(cnt), rep["underflow"], rep["overflow"], rep["n_samples"],
                                     rep["burn_in"], rep["seed"], rep["paths"], rep["aborted"], np.zeros((0, 3)))


# ---------------------------------------------------------------- asserts

class Assertions:
    def __init__(self, quiet=False):
        self.results = []
        self.quiet = quiet

    def check(self, name, value, limit):
        ok = bool(np.isfinite(value) and value <= limit)
        self.results.append((name, ok))
        if not self.quiet:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.6g} <= {limit:.6g}")
        return ok

    @property
    def ok(self):
        return all(ok for _, ok in self.results)


def _solve_assertions(cfg, sol, A: Assertions):
    e = cfg.get("expected", {})
    g = e.get("gaussian_variance")
    if g:
        var, mean = g["variance"], g.get("mean", 0.0)
        ref = np.exp(-(sol.x - mean) ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)
        A.check("gaussian_linf", float(np.max(np.abs(sol.eta - ref))), g["linf_max"])
        if "c1_max" in g:
            A.check("abs_c1", abs(sol.c1), g["c1_max"])
    tp = e.get("tail_proportionality")
    if tp:
        prod = sol.eta * ScalarFunction.from_expression(tp["phi1"])(sol.x) ** 2
        for side, sel in (("right", sol.x > tp["M"]), ("left", sol.x < -tp["M"])):
            p = prod[sel]
            var = float((p.max() - p.min()) / abs(np.mean(p))) if p.size else np.inf
            A.check(f"tail_variation_{side}", var, tp["max_variation"])
    idn = e.get("identity")
    if idn:
        rel = vfie.superlinear_identity_residual(sol, idn["phi1"], idn["phi2"])[0]
        A.check("identity_relative_rms", rel, idn["max"])
    fr = e.get("fractional")
    if fr:
        rms = vfie.fractional_check(sol, fr["alpha"], fr["phi_gamma"], fr.get("c", 0.0))
        med = float(np.median(np.abs(ScalarFunction.from_expression(fr["phi_gamma"])(sol.x) * sol.eta)))
        A.check("fractional_relative_rms", rms / med, fr["max"])


# ---------------------------------------------------------------------- run

def run(subcommand: str, config: str | None, out_dir: str | None, seed=None, quiet=False) -> int:
    if subcommand == "scenarios":
        for name in BUILTINS:
            desc = json.loads(builtin_path(name).read_text()).get("description", "")
            print(f"{name}\t{desc}")
        return 0
    if config is None:
        raise ConfigError("", "--config is required")
    cfg = load_config(config)
    out = Path(out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    A = Assertions(quiet)
    e = cfg.get("expected", {})

    if subcommand == "solve":
        sol = run_solve(cfg)
        write_solution(out / "solution.csv", sol)
        if not quiet:
            print(f"c1={sol.c1:.6g} c2={sol.c2:.6g} residual_norm={sol.residual_norm:.3g} "
                  f"mass_leak={sol.mass_leak:.3g}")
        _solve_assertions(cfg, sol, A)
    elif subcommand == "check":
        sol = None
        if cfg.get("candidate", {}).get("source") == "solution" and (out / "solution.csv").exists():
            sol = read_solution(out / "solution.csv")
        fs, res = run_check(cfg, sol)
        write_csv(out / "residuals.csv", ["center", "width", "residual"],
                  ((f.center, f.width, r) for f, r in zip(fs, res)))
        if "residual_max" in e:
            A.check("max_abs_residual", float(np.max(np.abs(res))), e["residual_max"])
    elif subcommand == "simulate":
        emp = run_simulate(cfg, seed)
        write_histogram(out, emp)
        if not quiet:
            print(f"samples={emp.n_samples} aborted={emp.aborted} mean={emp.mean():.6g} var={emp.var():.6g}")
    elif subcommand == "compare":
        if (out / "solution.csv").exists():
            sol = read_solution(out / "solution.csv")
        else:
            sol = run_solve(cfg)
            write_solution(out / "solution.csv", sol)
        if (out / "histogram.csv").exists() and (out / "simulate_report.json").exists() and seed is None:
            emp = read_histogram(out)
        else:
            emp = run_simulate(cfg, seed)
            write_histogram(out, emp)
        m = sde.compare(emp, sol)
        write_csv(out / "metrics.csv", ["l1", "ks"], [(m["l1"], m["ks"])])
        print(f"l1={m['l1']:.6g} ks={m['ks']:.6g}")
        if "l1_max" in e:
            A.check("l1", m["l1"], e["l1_max"])
        if "ks_max" in e:
            A.check("ks", m["ks"], e["ks_max"])
    elif subcommand == "tails":
        z, T, IT = tails_table(cfg)
        write_csv(out / "tails.csv", ["z", "tail", "integrated_tail"], zip(z, T, IT))
    else:
        raise ConfigError("", f"unknown subcommand {subcommand!r}")
    return 0 if A.ok else 1


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="levyinv", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="scenario JSON file or built-in scenario name")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the simulation seed")
    p.add_argument("--quiet", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args.subcommand, args.config, args.out, args.seed, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"error ({type(exc).__module__}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
