"""Command-line front end: ``wsawlab <subcommand> [--config FILE] [--key value ...]``.

Every run writes ``<subcommand>.csv``, ``<subcommand>.json`` and
``manifest.json`` into the output directory. Exit codes: 0 all assertions
pass, 2 statistical check outside tolerance, 3 exact identity violated,
4 configuration or capability error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import COMMON, REQUIRED, SCHEMAS, THREADS_ENV, RunConfig, parse_config
from .errors import CapabilityError, ConfigError, IdentityViolation, WsawError

EXIT_OK, EXIT_STAT, EXIT_EXACT, EXIT_CONFIG = 0, 2, 3, 4

COLUMNS = {
    "simulate": "path,T,jumps,I,C,grad_sq,U,U_gradient,residual",
    "laplace": "x0..x{d-1},G,std_error,n_eff",
    "scan-nu": "nu,status,growth,z_score",
    "phase-scan": "beta,gamma,slope,residual,gamma_eq_beta,min_n_eff",
    "msd": "T,msd,std_error,n_eff",
    "fold-check": "fine,coarse,functional,asserted,violations,max_excess",
    "green": "x0..x{d-1},G  (n = 0: d,G00)",
    "susy-verify": ("free: a,b,G_susy,G_oracle,abs_diff | z0-gauge: z0,m2,a,b,G,deviation | "
                    "prop31: b,G_susy,G_mc,mc_std_error,z_score | chi-hat: z0,m2,chi_hat,chi_N,residual"),
    "norm-check": ("identity: samples,max_abs_error | product: check,violations,max_excess | "
                   "lemma43: branch,h0,C_emp,C_emp_refined,grid_stable,e_bound_violations,e_bound_checked | "
                   "k0-scaling: gamma0,norm_T0,ratio (k0-regulators.csv: gamma0,G0,G0_tilde,W0)"),
}

COLUMN_NOTES = """column meanings:
  G, G_susy       two-point function estimate; G_oracle is (-Lap + nu)^{-1}
  std_error       Monte Carlo standard error; n_eff is the effective sample size
  I, C, grad_sq   self-intersection, contact and gradient local-time functionals
  U, U_gradient   energy in direct and gradient form; residual = |U - U_gradient|
  growth, z_score growth rate minus nu, in absolute units and in standard errors
  slope           fitted d log<|X_T|^2> / d log T; msd is <|X_T|^2>
  violations      count of failed inequalities beyond 1e-12 slack
  C_emp           smallest constant of the U bound on the field grid
  ratio           ||K_0||_{T_0} / |gamma0|
"""


@dataclass
class Outcome:
    """What a subcommand produced: tables, a JSON summary and an exit code."""

    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    summary: dict = field(default_factory=dict)
    code: int = EXIT_OK


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def csv_text(header: list, rows: list, delimiter: str = ",") -> str:
    lines = [delimiter.join(header)]
    lines += [delimiter.join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def _spec(d: int, n: int):
    from .lattice import TorusSpec

    return None if n == 0 else TorusSpec(d, n)


def run_simulate(cfg: RunConfig) -> Outcome:
    from .energy import CouplingSet, energy_report
    from .walk import RngStream, local_times, sample_path

    c = CouplingSet(cfg["beta"], cfg["gamma"])
    spec = _spec(cfg["d"], cfg["n"])
    gen = RngStream(cfg.seed, 0).generator(0)
    rows, worst = [], 0.0
    for p in range(cfg["samples"]):
        path = sample_path(cfg["T"], gen, d=cfg["d"], spec=spec)
        r = energy_report(local_times(path), c, spec)
        res = abs(r.U - r.U_gradient)
        worst = max(worst, res / (1 + abs(r.U)))
        rows.append([p, cfg["T"], path.n_jumps, r.I_T, r.C_T, r.grad_sq, r.U, r.U_gradient, res])
    ok = worst <= 1e-10
    return Outcome({"simulate.csv": (COLUMNS["simulate"].split(","), rows)},
                   {"paths": cfg["samples"], "max_relative_residual": worst, "tolerance": 1e-10, "passed": ok},
                   EXIT_OK if ok else EXIT_EXACT)


def run_laplace(cfg: RunConfig) -> Outcome:
    from .energy import CouplingSet
    from .observables import LaplaceConfig, susceptibility_mc, two_point_mc

    c = CouplingSet(cfg["beta"], cfg["gamma"], cfg["nu"])
    spec = _spec(cfg["d"], cfg["n"])
    lc = LaplaceConfig(cfg["nu"], cfg["samples"], proposal_rate=cfg["proposal_rate"] or None,
                       seed=cfg.seed, threads=cfg.threads)
    G = two_point_mc(c, lc, spec, d=cfg["d"])
    chi = susceptibility_mc(c, lc, spec, d=cfg["d"])
    header = [f"x{i}" for i in range(cfg["d"])] + ["G", "std_error", "n_eff"]
    rows = [list(x) + [e.value, e.std_error, e.n_effective] for x, e in sorted(G.items())]
    return Outcome({"laplace.csv": (header, rows)},
                   {"chi": chi.value, "chi_std_error": chi.std_error, "n_eff": chi.n_effective,
                    "sites": len(rows)})


def run_scan_nu(cfg: RunConfig) -> Outcome:
    from .observables import ScanConfig, nu_c_scan

    grid = np.linspace(cfg["nu_min"], cfg["nu_max"], cfg["nu_points"])
    sc = ScanConfig(cfg["samples"], cfg["T_a"], cfg["T_b"], cfg["z"], cfg.seed, threads=cfg.threads)
    r = nu_c_scan(cfg["beta"], cfg["gamma"], cfg["d"], grid, sc)
    rows = [[x["nu"], x["status"], x["growth"], x["z_score"]] for x in r.rows()]
    return Outcome({"scan-nu.csv": (COLUMNS["scan-nu"].split(","), rows)},
                   {"rate": r.rate.value, "rate_std_error": r.rate.std_error, "bracket": list(r.bracket),
                    "outcome": r.outcome},
                   EXIT_OK if r.outcome == "ok" else EXIT_STAT)


def run_phase_scan(cfg: RunConfig) -> Outcome:
    from .observables import MSDConfig, phase_scan

    mc = MSDConfig(tuple(cfg["T_grid"]), cfg["samples"], (cfg["fit_min"], cfg["fit_max"]), cfg.seed,
                   threads=cfg.threads, method=cfg["method"])
    r = phase_scan(cfg["betas"], cfg["gammas"], cfg["d"], mc)
    cols = COLUMNS["phase-scan"].split(",")
    keys = ("beta", "gamma", "slope", "residual", "gamma_eq_beta", "min_n_eff")
    rows = [[x[k] for k in keys] for x in r.rows()]
    return Outcome({"phase-scan.csv": (cols, rows)}, {"grid_points": len(rows)})


def run_msd(cfg: RunConfig) -> Outcome:
    from .energy import CouplingSet
    from .observables import fit_loglog_slope, msd_curve

    pts = msd_curve(CouplingSet(cfg["beta"], cfg["gamma"]), cfg["T_grid"], cfg["samples"], cfg["d"],
                    cfg.seed, threads=cfg.threads, method=cfg["method"])
    fit = fit_loglog_slope([p.T for p in pts], [p.value for p in pts], (cfg["fit_min"], cfg["fit_max"]))
    rows = [[p.T, p.value, p.std_error, p.n_effective] for p in pts]
    return Outcome({"msd.csv": (COLUMNS["msd"].split(","), rows)},
                   {"slope": fit.slope, "intercept": fit.intercept, "fit_residual": fit.residual,
                    "fit_points": fit.points})


# gradients of the folded local time (grad_k) are reported but not asserted
def _fold_asserted(k: str) -> bool:
    return k in ("I", "C") or k.startswith("foldgrad")


def run_fold_check(cfg: RunConfig) -> Outcome:
    from .finite_volume import folding_check_batch
    from .walk import RngStream, sample_batch

    batch = sample_batch(cfg["T"], RngStream(cfg.seed, 0).generator(0), cfg["d"], size=cfg["samples"])
    r = folding_check_batch(batch, cfg["L"], cfg["N_max"])
    rows, bad, diag = [], 0, 0
    for (fine, coarse, k), v in sorted(r.violations.items(), key=lambda t: (_side(t[0][0]), -t[0][1], t[0][2])):
        asserted = _fold_asserted(k)
        rows.append(["Z" if fine is None else fine, coarse, k, asserted, v, r.max_excess[(fine, coarse, k)]])
        if asserted:
            bad += v
        else:
            diag += v
    return Outcome({"fold-check.csv": (COLUMNS["fold-check"].split(","), rows)},
                   {"paths": cfg["samples"], "violations": bad, "diagnostic_violations": diag,
                    "passed": bad == 0},
                   EXIT_OK if bad == 0 else EXIT_EXACT)


def _side(n) -> float:
    return -math.inf if n is None else -n


def run_green(cfg: RunConfig) -> Outcome:
    from .lattice import TorusSpec, green_at_origin_Zd, green_column

    d, n = cfg["d"], cfg["n"]
    if n == 0:
        g = green_at_origin_Zd(d)
        return Outcome({"green.csv": (["d", "G00"], [[d, g]])}, {"G00": g})
    spec = TorusSpec(d, n)
    col = green_column(spec, cfg["m2"])
    rows = [list(x) + [float(col[x])] for x in spec.sites()]
    header = [f"x{i}" for i in range(d)] + ["G"]
    return Outcome({"green.csv": (header, rows)}, {"G00": float(col[(0,) * d]), "row_sum": float(col.sum()),
                                                   "inverse_m2": 1.0 / cfg["m2"]})


def run_susy_verify(cfg: RunConfig) -> Outcome:
    from .lattice import TorusSpec, green_function
    from .susy_model import chi_identity_check, two_point_susy_matrix

    spec = TorusSpec(cfg["d"], cfg["n"])
    case, order = cfg["case"], cfg["quad_order"]
    beta, gamma, nu = cfg["beta"], cfg["gamma"], cfg["nu"]
    splits = [(z, m) for z in cfg["z0s"] for m in cfg["m2s"]]
    if case == "free":
        G = two_point_susy_matrix(0.0, 0.0, nu, spec, order=order)
        O = green_function(spec, nu)
        rows = [[a, b, G[a, b].real, O[a, b], abs(G[a, b] - O[a, b])]
                for a in range(spec.volume) for b in range(spec.volume)]
        res = max(r[-1] for r in rows)
        return _verdict("susy-verify.csv", COLUMNS["susy-verify"].split(" | ")[0], rows, res, 1e-8, case)
    if case == "z0-gauge":
        ref = None
        rows = []
        for z0, m2 in splits:
            G = two_point_susy_matrix(beta, gamma, nu, spec, z0=z0, m2=m2, order=order)
            ref = G if ref is None else ref
            for a in range(spec.volume):
                for b in range(spec.volume):
                    rows.append([z0, m2, a, b, G[a, b].real, abs(G[a, b] - ref[a, b])])
        res = max(r[-1] for r in rows)
        return _verdict("susy-verify.csv", COLUMNS["susy-verify"].split(" | ")[1], rows, res, 1e-6, case)
    if case == "chi-hat":
        r = chi_identity_check(beta, gamma, nu, spec, splits=tuple(splits), order=order)
        rows = [[x.z0, x.m2, x.chi_hat, x.chi_N, x.residual] for x in r.rows]
        return _verdict("susy-verify.csv", COLUMNS["susy-verify"].split(" | ")[3], rows, r.max_residual, 1e-4, case)
    # prop31: the walk simulator is the oracle
    from .energy import CouplingSet
    from .observables import LaplaceConfig, two_point_mc

    G = two_point_susy_matrix(beta, gamma, nu, spec, order=order)
    mc = two_point_mc(CouplingSet(beta, gamma, nu), LaplaceConfig(nu, cfg["samples"], seed=cfg.seed,
                                                                  threads=cfg.threads), spec)
    rows = []
    for b, x in enumerate(spec.sites()):
        e = mc[x]
        z = (G[0, b].real - e.value) / e.std_error if e.std_error > 0 else math.inf
        rows.append([b, G[0, b].real, e.value, e.std_error, z])
    worst = max(abs(r[-1]) for r in rows)
    out = _verdict("susy-verify.csv", COLUMNS["susy-verify"].split(" | ")[2], rows, worst, 3.0, case)
    if out.code:
        out.code = EXIT_STAT
    return out


def _verdict(name: str, cols: str, rows: list, residual: float, tol: float, case: str) -> Outcome:
    header = cols.split(": ", 1)[1].split(",")
    ok = residual <= tol
    return Outcome({name: (header, rows)}, {"case": case, "residual": residual, "tolerance": tol, "passed": ok},
                   EXIT_OK if ok else EXIT_EXACT)


def run_norm_check(cfg: RunConfig) -> Outcome:
    from .norms import (LocalCouplings, NormParams, k0_norm_and_regulators, property_suite, tau_norm_identity,
                        u_monomial_bound_check)

    suite = cfg["suite"]
    params = NormParams(h0=cfg["h0"])
    if suite == "identity":
        r = tau_norm_identity(cfg["samples"], cfg.seed)
        ok = r.max_abs_error <= 1e-12
        return Outcome({"norm-check.csv": (["samples", "max_abs_error"], [[r.samples, r.max_abs_error]])},
                       {"suite": suite, "max_abs_error": r.max_abs_error, "tolerance": 1e-12, "passed": ok},
                       EXIT_OK if ok else EXIT_EXACT)
    if suite == "product":
        r = property_suite(cfg["samples"], cfg.seed)
        rows = [["product", r.product_violations, r.max_product_excess],
                ["exponential", r.exp_violations, r.max_exp_excess],
                ["polynomial", r.polynomial_violations, r.max_polynomial_excess]]
        return Outcome({"norm-check.csv": (["check", "violations", "max_excess"], rows)},
                       {"suite": suite, "samples": r.samples, "passed": r.passed},
                       EXIT_OK if r.passed else EXIT_EXACT)
    if suite == "lemma43":
        rows, ok = [], True
        for branch in ("+", "-"):
            r = u_monomial_bound_check(params, branch=branch, radial=cfg["radial"])
            ok &= r.e_bound_violations == 0
            rows.append([branch, r.h0, r.C_emp, r.C_emp_refined, r.grid_stable, r.e_bound_violations,
                         r.e_bound_checked])
        stable = all(r[4] for r in rows)
        header = COLUMNS["norm-check"].split(" | ")[2].split(": ", 1)[1].split(",")
        return Outcome({"norm-check.csv": (header, rows)},
                       {"suite": suite, "grid_stable": stable, "passed": ok and stable},
                       EXIT_EXACT if not ok else (EXIT_OK if stable else EXIT_STAT))
    c = LocalCouplings(cfg["g0"], 0.0, cfg["nu0"], cfg["z0"])
    r = k0_norm_and_regulators(c, params=params, regulators=cfg["regulators"], radial=min(cfg["radial"], 6))
    tables = {"norm-check.csv": (["gamma0", "norm_T0", "ratio"], [[x.gamma0, x.norm_T0, x.ratio] for x in r.rows])}
    if r.regulators:
        tables["k0-regulators.csv"] = (["gamma0", "G0", "G0_tilde", "W0"],
                                       [[x.gamma0, x.G0_norm, x.G0_tilde_norm, x.W0_norm] for x in r.regulators])
    ok = r.max_spread() <= 0.05
    return Outcome(tables, {"suite": suite, "spread": r.spread, "limit": r.limit, "tolerance": 0.05,
                            "smoothness": r.smoothness, "passed": ok},
                   EXIT_OK if ok else EXIT_STAT)


RUNNERS = {
    "simulate": run_simulate,
    "laplace": run_laplace,
    "scan-nu": run_scan_nu,
    "phase-scan": run_phase_scan,
    "msd": run_msd,
    "fold-check": run_fold_check,
    "green": run_green,
    "susy-verify": run_susy_verify,
    "norm-check": run_norm_check,
}


# ---------------------------------------------------------------------------
# orchestration


def run(cfg: RunConfig) -> tuple:
    """Execute ``cfg`` and write its artifacts; returns ``(exit_code, manifest)``."""
    t0 = time.perf_counter()
    out = RUNNERS[cfg.subcommand](cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    hashes = {}
    for name, (header, rows) in out.tables.items():
        data = csv_text(header, rows, cfg.delimiter).encode()
        hashes[name] = _sha256(data)
        with open(os.path.join(cfg.out_dir, name), "wb") as fh:
            fh.write(data)
    summary = dict(out.summary, subcommand=cfg.subcommand, exit_code=out.code)
    data = (json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n").encode()
    name = f"{cfg.subcommand}.json"
    hashes[name] = _sha256(data)
    with open(os.path.join(cfg.out_dir, name), "wb") as fh:
        fh.write(data)
    manifest = {
        "version": __version__,
        "config": _jsonable(cfg.resolved()),
        "defaults_used": list(cfg.defaults_used),
        "wall_clock_s": time.perf_counter() - t0,
        "outputs": hashes,
        "exit_code": out.code,
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out.code, manifest


def config_from_manifest(path: str, out_dir: str | None = None) -> RunConfig:
    with open(path) as fh:
        m = json.load(fh)
    conf = dict(m["config"])
    sub = conf.pop("subcommand")
    if out_dir is not None:
        conf["out"] = out_dir
    over = {k: " ".join(map(repr, v)) if isinstance(v, list) else str(v) for k, v in conf.items()}
    return parse_config(sub, "", over)


def _add_params(p: argparse.ArgumentParser, params) -> None:
    for q in params:
        flag = "--" + q.name.replace("_", "-")
        extra = f" {{{','.join(q.choices)}}}" if q.choices else ""
        default = "required" if q.default is REQUIRED else f"default {q.default!r}"
        p.add_argument(flag, dest=q.name, default=None, metavar=q.kind.upper(),
                       help=f"{q.help}{extra} ({default})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wsawlab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"thread count defaults to ${THREADS_ENV}; outputs never depend on it.")
    ap.add_argument("--version", action="version", version=f"wsawlab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name, params in SCHEMAS.items():
        sp = sub.add_parser(name, formatter_class=argparse.RawDescriptionHelpFormatter,
                            help=f"CSV columns: {COLUMNS[name]}",
                            epilog=f"CSV columns: {COLUMNS[name]}\n\n{COLUMN_NOTES}")
        sp.add_argument("--config", metavar="FILE", help="key = value file; flags override it")
        _add_params(sp, params + COMMON)
    rp = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    rp.add_argument("manifest")
    rp.add_argument("--out", default=None, help="output directory for the re-run")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "replay":
            with open(args.manifest) as fh:
                expected = json.load(fh)["outputs"]
            cfg = config_from_manifest(args.manifest, args.out)
            code, manifest = run(cfg)
            same = manifest["outputs"] == expected
            print(json.dumps({"reproduced": same, "exit_code": code}))
            return code if same else EXIT_EXACT
        text = ""
        if args.config:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as e:
                raise ConfigError(f"cannot read config file {args.config!r}: {e.strerror}") from None
        names = [q.name for q in SCHEMAS[args.subcommand] + COMMON]
        cfg = parse_config(args.subcommand, text, {k: getattr(args, k) for k in names})
        code, manifest = run(cfg)
    except (ConfigError, CapabilityError) as e:
        print(f"wsawlab: error [{type(e).__module__}.{type(e).__name__}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentityViolation as e:
        print(f"wsawlab: error [{type(e).__module__}.{type(e).__name__}]: {e}", file=sys.stderr)
        return EXIT_EXACT
    except WsawError as e:
        print(f"wsawlab: error [{type(e).__module__}.{type(e).__name__}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    status = {EXIT_OK: "ok", EXIT_STAT: "statistical check outside tolerance", EXIT_EXACT: "exact identity violated"}
    print(f"{args.subcommand}: {status[code]}; outputs in {cfg.out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
