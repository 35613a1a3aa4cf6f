"""Command line entry point: verification suites, expansion runs and Monte Carlo experiments.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import suites
from .expansion.polymers import TooManyCovers
from .expansion.regions import Thresholds
from .lattice import GeometryError
from .model import ConfigError, DomainError, config_hash, couplings_from_config, geometry_from_config, load_config, merge_config
from .operators import IdentityReport

SCHEMA = "abelian-higgs-manifest/1"
log = logging.getLogger("abelian_higgs")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    checks: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add(self, name, lhs, rhs, tolerance, passed):
        self.checks.append({"name": name, "lhs": _num(lhs), "rhs": _num(rhs), "tolerance": _num(tolerance),
                            "pass": bool(passed)})

    def add_reports(self, reports, group=None):
        for r in reports:
            self.add(f"{group}: {r.identity}" if group else r.identity, r.lhs, r.rhs, r.tolerance, r.passed)

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks)

    def to_dict(self):
        return {"schema": SCHEMA, "subcommand": self.subcommand, "config_hash": config_hash(self.config),
                "seed": self.seed, "config": self.config, "checks": self.checks, "passed": self.passed,
                "outputs": self.outputs, "extra": self.extra, "wall_time": self.wall_time}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _num(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_csv(path, header, rows, stamp):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={stamp['config_hash']} seed={stamp['seed']}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)


def _parse_range(text):
    """'2..8' -> [2, ..., 8]; '2,4,6' -> [2, 4, 6]."""
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse range {text!r}") from exc


# -- subcommands ---------------------------------------------------------------------
def cmd_verify_dec(args, cfg, man: RunManifest):
    g = geometry_from_config(cfg)
    man.add_reports(suites.dec_suite(g, seed=man.seed, tol=args.tol), "dec")


def cmd_verify_operators(args, cfg, man: RunManifest):
    geometry_from_config(cfg)
    r_cuts = _parse_range(args.r_cut) if args.r_cut else list(range(2, 9))
    groups, extra = suites.operator_suite(tol=args.tol, r_cuts=r_cuts, loc_L=args.loc_L)
    for name, reps in groups.items():
        man.add_reports(reps, name)
    man.extra["groups"] = list(groups)
    man.extra["decay_fit"] = extra["decay_fit"]
    man.extra["kernel_rate"] = extra["kernel_profile"]["rate"]
    if args.csv_dir:
        path = os.path.join(args.csv_dir, "decay_table.csv")
        _write_csv(path, ["r_cut", "delta_sup", "fit"], [(r["r_cut"], r["delta_sup"], r["fit"]) for r in extra["decay_table"]],
                   man.to_dict())
        man.outputs["decay_table"] = path


def cmd_equivalence(args, cfg, man: RunManifest):
    from .montecarlo.equivalence import equivalence_check
    eq = cfg.get("equivalence", {})
    g = geometry_from_config({"lattice": {"d": 2, "L": eq.get("L", 2)}})
    c = couplings_from_config({"couplings": eq.get("couplings", {"e0": 0.5, "mu": 2.0, "m_A": 2.0})})
    n = args.samples or int(eq.get("samples", 200_000))
    vr = args.vortex_range if args.vortex_range is not None else int(eq.get("vortex_range", 3))
    target = args.max_rel_err if args.max_rel_err is not None else float(eq.get("max_rel_err", 0.02))
    res = equivalence_check(g, c, n_samples=n, vortex_range=vr, J=args.J, seed=man.seed)
    man.extra["result"] = res.to_dict()
    man.add("Z^NC / ((2 pi/e0)^-(|sites|-1) Z^C) = 1 within 3 sigma", res.ratio, 1.0, 3 * res.ratio_err,
            abs(res.ratio_pull) <= 3)
    man.add("relative statistical error of the ratio", res.rel_err, target, target, res.rel_err <= target)
    if args.J is not None:
        man.add(f"source expectation agrees within 3 sigma (J={args.J})", res.obs_noncompact, res.obs_compact,
                3 * math.hypot(res.obs_noncompact_err, res.obs_compact_err), abs(res.obs_pull) <= 3)
    if res.rel_err > target:
        man.extra["advice"] = (f"statistical error {res.rel_err:.3g} exceeds {target}; increase --samples "
                               f"(error falls like 1/sqrt(samples), try {int(n * (res.rel_err / target) ** 2 * 1.2)})")
        log.warning(man.extra["advice"])


def cmd_expansion(args, cfg, man: RunManifest):
    c = couplings_from_config(cfg)
    ex = cfg.get("expansion", {})
    L = args.region_L or int(ex.get("L", 4))
    fams = [args.vertex] if args.vertex else None
    if args.vertex and args.vertex not in suites.coef.FAMILIES:
        raise UsageError(f"unknown vertex family {args.vertex!r}; choose from {', '.join(suites.coef.FAMILIES)}")
    nmax = args.nmax or int(ex.get("nmax", 4))
    try:
        rows, systems = suites.expansion_suite(c, fams, nmax, L, man.seed, args.tol,
                                               max_region_cells=int(ex.get("max_region_cells", 2500)))
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc
    man.add_reports(rows, "expansion")
    if args.decay:
        drows, fits = suites.coefficient_decay_group(c, families=fams, seed=man.seed)
        man.add_reports(drows, "decay")
        man.extra["decay_fits"] = {f: fit.to_dict() for f, fit in fits.items()}
    man.extra["entries"] = {f: s.n_entries() for f, s in systems.items()}
    if args.csv_dir:
        for fam, system in systems.items():
            path = os.path.join(args.csv_dir, f"coefficients_{fam}.csv")
            out = []
            for (n, m), (xi, eta, a) in sorted(system.sectors.items()):
                for i in range(len(a)):
                    out.append((n, m, " ".join(map(str, xi[i])), " ".join(map(str, eta[i])), float(a[i])))
            _write_csv(path, ["n", "m", "xi", "eta", "value"], out, man.to_dict())
            man.outputs[f"coefficients_{fam}"] = path


def cmd_massgap(args, cfg, man: RunManifest):
    from .montecarlo import experiments as ex
    mc = cfg.get("mc", {})
    if args.gaussian_validate:
        res = ex.gaussian_validation(L=args.L or int(mc.get("gaussian_L", 16)),
                                     sweeps=args.sweeps or int(mc.get("gaussian_sweeps", 100_000)), seed=man.seed)
        for r in res["rows"]:
            man.add(f"gaussian two-point t={r['t']} within 3 sigma", r["mc"], r["exact"], 3 * r["err"], r["within"])
        man.add("fitted mass within 10% of the exact kernel decay", res["fit"].m, res["kernel_rate"],
                0.1 * res["kernel_rate"], res["mass_rel_diff"] <= 0.1)
        man.extra["fit"] = res["fit"].to_dict()
        man.extra["acceptance"] = res["acceptance"]
        if args.csv_dir:
            path = os.path.join(args.csv_dir, "gaussian_validation.csv")
            _write_csv(path, ["t", "mc", "err", "exact"], [(r["t"], r["mc"], r["err"], r["exact"]) for r in res["rows"]],
                       man.to_dict())
            man.outputs["gaussian_validation"] = path
        return
    c = couplings_from_config(cfg)
    res = ex.massgap_experiment(c, L=args.L or int(mc.get("L", 32)), frame=int(mc.get("frame", 4)),
                                sweeps=args.sweeps or int(mc.get("sweeps", 1_000_000)),
                                thermalization=int(mc.get("thermalization", 10_000)), stride=int(mc.get("stride", 20)),
                                seed=man.seed, chains=int(mc.get("chains", 1)))
    fit = res["fit"]
    man.add("fitted mass positive at >= 5 sigma", fit.significance, 5.0, 0.0, res["mass_positive_5sigma"])
    man.add("single-exponential fit chi2/dof < 2", fit.chi2_dof, 2.0, 0.0, res["chi2_ok"])
    man.add("large-field frequency decreasing in threshold", 0.0, 0.0, 0.0, res["large_field_decreasing"])
    man.extra.update({"fit": fit.to_dict(), "band": res["band"], "in_band": res["in_band"], "wilson": res["wilson"],
                      "wilson_monotone": res["wilson_monotone"], "large_field": res["large_field"],
                      "acceptance": res["acceptance"], "action_drift": res["action_drift"]})
    if args.csv_dir:
        stamp = man.to_dict()
        corr = res["correlator"]
        p = os.path.join(args.csv_dir, "correlator.csv")
        _write_csv(p, ["t", "value", "err"], corr.rows(), stamp)
        man.outputs["correlator"] = p
        p = os.path.join(args.csv_dir, "wilson.csv")
        _write_csv(p, ["t", "value", "err"], [(r["t"], r["value"], r["err"]) for r in res["wilson"]], stamp)
        man.outputs["wilson"] = p
        p = os.path.join(args.csv_dir, "large_field.csv")
        _write_csv(p, ["threshold", "fraction", "err"], res["large_field"], stamp)
        man.outputs["large_field"] = p
        p = os.path.join(args.csv_dir, "massfit.json")
        _write_json(p, {"config_hash": stamp["config_hash"], "seed": man.seed, "fit": fit.to_dict()})
        man.outputs["massfit"] = p


COMMANDS = {
    "verify-dec": cmd_verify_dec,
    "verify-operators": cmd_verify_operators,
    "equivalence": cmd_equivalence,
    "expansion": cmd_expansion,
    "massgap": cmd_massgap,
}


def build_parser():
    p = argparse.ArgumentParser(prog="abelian-higgs", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--json", help="write the run manifest here")
    common.add_argument("--csv-dir", help="directory for CSV tables")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--tol", type=float, help="override every tolerance")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("verify-dec", parents=[common], help="discrete exterior calculus identities")
    s = sub.add_parser("verify-operators", parents=[common], help="covariance, square root, determinants, random walk")
    s.add_argument("--r-cut", help="localization radii, e.g. 2..8")
    s.add_argument("--loc-L", type=int, default=16, help="lattice side for the localization sweep")
    s = sub.add_parser("equivalence", parents=[common], help="compact against non-compact partition functions")
    s.add_argument("--samples", type=int)
    s.add_argument("--vortex-range", type=int)
    s.add_argument("--J", type=float, help="source strength on the plaquette")
    s.add_argument("--max-rel-err", type=float)
    s = sub.add_parser("expansion", parents=[common], help="coefficient extraction and polymer identities")
    s.add_argument("--vertex", help="single vertex family")
    s.add_argument("--nmax", type=int, help="maximal order of the series")
    s.add_argument("--region-L", type=int, help="side of the square region")
    s.add_argument("--decay", action="store_true", help="also fit coefficient decay against tree length on 10x10")
    s = sub.add_parser("massgap", parents=[common], help="Monte Carlo mass-gap experiment")
    s.add_argument("--gaussian-validate", action="store_true", help="sampler against the exact Gaussian kernel")
    s.add_argument("--sweeps", type=int)
    s.add_argument("--L", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config) if args.config else merge_config(None)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if not 0 <= seed < 2 ** 64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        if args.csv_dir:
            os.makedirs(args.csv_dir, exist_ok=True)
        man = RunManifest(args.command, cfg, seed)
        c = couplings_from_config(cfg)
        th = Thresholds.from_coupling(c.lam, int(cfg.get("lattice", {}).get("d", 2)))
        man.extra["derived"] = {**c.derived(), "lam": c.lam, "p_lam": th.p_lam, "p0_lam": th.p0_lam, "r": th.r}
        COMMANDS[args.command](args, cfg, man)
    except (ConfigError, DomainError, GeometryError, UsageError, TooManyCovers) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    man.wall_time = time.perf_counter() - t0
    data = man.to_dict()
    if args.json:
        _write_json(args.json, data)
    for c in man.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
    print(f"{sum(c['pass'] for c in man.checks)}/{len(man.checks)} checks passed  config={data['config_hash']} seed={seed}")
    return 0 if man.passed else 1


if __name__ == "__main__":
    sys.exit(main())
