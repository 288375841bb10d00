"""Command line: ``disp2d COMMAND --config PATH [--out DIR] [--seed N] ...``.

Every run writes ``manifest.json`` into the output directory, also on failure.
Exit status: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import lowenergy, oscint, propagator
from .config import REQUIRED, RunConfig, load_config
from .discretize import build_grid
from .errors import ConfigError, DomainError, NumericalError, ZeroPotentialError
from .io import write_csv, write_json
from .potential import PotentialSpec, build_potential, evaluate

log = logging.getLogger("disp2d")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = tuple(REQUIRED)

EVOLUTION_DATA_KEYS = ("bump_width", "f_center", "g_center")


# --------------------------------------------------------------------------
# building blocks from config sections

def make_grid(cfg: RunConfig):
    sec = dict(cfg.section("grid", required=True))
    scheme = sec.pop("scheme", "polar")
    return build_grid(scheme, **sec)


def make_potential(cfg: RunConfig, grid=None):
    spec = PotentialSpec.from_dict(cfg.section("potential", required=True))
    grid = make_grid(cfg) if grid is None else grid
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pot = build_potential(spec, grid)
    beta = pot.beta_fit
    if math.isfinite(beta) and beta < 3:
        log.warning("fitted decay exponent %.3g < 3: the low-energy expansion may not apply", beta)
    return pot


def make_evolution(cfg: RunConfig):
    sec = dict(cfg.section("evolution", required=True))
    data = {k: sec.pop(k) for k in EVOLUTION_DATA_KEYS if k in sec}
    ev = propagator.EvolutionConfig.from_dict(sec)
    width = float(data.get("bump_width", 1.5))
    if not width > 0:
        raise ConfigError("must be > 0", "evolution.bump_width")
    f = propagator.bump(data.get("f_center", (0.0, 0.0)), width)
    g = propagator.bump(data.get("g_center", data.get("f_center", (0.0, 0.0))), width)
    return ev, f, g


def _ladder(sec, lo_key, hi_key, lo, hi):
    lo = float(sec.get(lo_key, lo))
    hi = float(sec.get(hi_key, hi))
    if not 0 < lo < hi:
        raise ConfigError(f"need 0 < {lo_key} < {hi_key}", f"lowenergy.{lo_key}")
    return lowenergy.lambda_ladder(lo, hi, int(sec.get("per_decade", lowenergy.LADDER_PER_DECADE)))


# --------------------------------------------------------------------------
# commands; each returns (list of written paths, summary dict)

def cmd_classify(cfg: RunConfig, out):
    pot = make_potential(cfg)
    le = cfg.section("lowenergy")
    rep = lowenergy.regularity_test(pot, le.get("tau"))
    summary = rep.to_dict()
    summary["l1_norm"] = pot.l1_norm
    summary["kato_norm"] = pot.kato_norm
    summary["config_hash"] = cfg.hash
    files = []
    scan_sec = le.get("scan")
    if scan_sec:
        c_lo, c_hi = float(scan_sec.get("c_min", 1.0)), float(scan_sec.get("c_max", 10.0))
        n = int(scan_sec.get("n", 19))
        if not (c_lo < c_hi and n >= 2):
            raise ConfigError("need c_min < c_max and n >= 2", "lowenergy.scan")
        scan = lowenergy.coupling_scan(pot, np.linspace(c_lo, c_hi, n))
        files.append(write_csv(out / "coupling_scan.csv",
                               ["c", "sigma_min", "regular", "n_negative"],
                               [tuple(r) for r in scan.rows], cfg.hash))
        summary["scan"] = {"crossings": scan.crossings, "brackets": scan.brackets,
                           "monotone": scan.monotone, "flips": scan.flips(), "tau": scan.tau}
    files.append(write_json(out / "regularity.json", summary))
    return files, summary


def cmd_expand(cfg: RunConfig, out):
    pot = make_potential(cfg)
    le = cfg.section("lowenergy")
    exp = lowenergy.low_energy_expansion(pot, tau=le.get("tau"))
    ladder = _ladder(le, "lambda_lo", "lambda_hi", 1e-5, 1e-2)
    rows = []
    for lam in ladder:
        err = lowenergy.m_inverse_expansion_error(exp, lam)
        ve0v = lowenergy.weighted_hs_norm(lowenergy.ve0v_operator(1, lam, pot))
        rows.append((float(lam), err.hs, err.hs_scaled, err.d_hs_scaled, ve0v, err.cond))
    files = [write_csv(out / "e_scaling.csv",
                       ["lam", "E_hs", "E_hs_over_sqrt_lam", "sqrt_lam_dE_hs", "vE0v_hs", "cond"],
                       rows, cfg.hash)]
    lam = np.array([r[0] for r in rows])
    summary = exp.to_dict()
    summary.update({
        "config_hash": cfg.hash,
        "l1_norm": pot.l1_norm,
        "E_exponent": float(np.polyfit(np.log(lam), np.log([r[1] for r in rows]), 1)[0]),
        "vE0v_exponent": float(np.polyfit(np.log(lam), np.log([r[4] for r in rows]), 1)[0]),
        "dE_scaled_ratio": float(max(r[3] for r in rows) / min(r[3] for r in rows)),
    })
    fit = lowenergy.fit_h_coefficients(pot, _ladder(le, "fit_lo", "fit_hi", 1e-6, 1e-3))
    summary["h_fit"] = fit._asdict()
    summary["a_expected"] = -pot.l1_norm / (2 * math.pi)
    summary["im_z_expected"] = pot.l1_norm / 4
    files.append(write_json(out / "expansion.json", summary))
    return files, summary


def _evolution_rows(rep, values=None):
    rows = []
    for k, r in enumerate(rep.rows):
        v = values[k] if values is not None else complex("nan")
        rows.append((r.t, v.real, v.imag, r.value, rep.method_tag, r.flagged))
    return rows


def _fit_or_none(rep, **kw):
    try:
        rep.fit(**kw)
        return rep.summary()
    except NumericalError as exc:
        return {"exponent": None, "ci": None, "method": rep.method_tag, "error": str(exc)}


def cmd_evolve(cfg: RunConfig, out):
    pot = make_potential(cfg)
    ev, f, g = make_evolution(cfg)
    rep = propagator.spectral_evolution(f(pot.grid.nodes), g(pot.grid.nodes), ev, pot)
    files = [write_csv(out / "evolution.csv", ["t", "re", "im", "value", "method", "flagged"],
                       _evolution_rows(rep, rep.extra["values"]), cfg.hash)]
    summary = _fit_or_none(rep)
    summary["tail_change"] = rep.extra.get("tail_change")
    summary["config_hash"] = cfg.hash
    files.append(write_json(out / "evolution.json", summary))
    return files, summary


def cmd_decay(cfg: RunConfig, out):
    pot = make_potential(cfg)
    ev, f, g = make_evolution(cfg)
    reports = []
    summary = {"config_hash": cfg.hash}
    if pot.is_zero:
        reports.append(propagator.free_decay(f(pot.grid.nodes), ev.t_list, pot.grid))
    else:
        spec_rep = propagator.spectral_evolution(f(pot.grid.nodes), g(pot.grid.nodes), ev, pot)
        reports.append(spec_rep)
        summary["tail_change"] = spec_rep.extra.get("tail_change")
        lat = dict(cfg.section("lattice"))
        if lat.get("enabled", True):
            lat.pop("enabled", None)
            pspec = pot.spec
            reports.append(propagator.lattice_oracle(
                f, ev.t_list, lambda p: evaluate(pspec, p),
                h=float(lat.get("h", 1.0)), L=float(lat.get("L", 100.0)),
                g=g, cap=int(lat.get("cap", 6000))))
    rows = []
    for rep in reports:
        rows += [(r.t, r.value, rep.method_tag, r.flagged) for r in rep.rows]
        summary[rep.method_tag] = _fit_or_none(rep)
    files = [write_csv(out / "decay.csv", ["t", "value", "method", "flagged"], rows, cfg.hash)]
    first = summary[reports[0].method_tag]
    summary.update({"exponent": first["exponent"], "ci": first["ci"], "method": first["method"]})
    if len(reports) == 2 and first["exponent"] is not None \
            and summary["lattice"]["exponent"] is not None:
        summary["exponent_difference"] = abs(first["exponent"] - summary["lattice"]["exponent"])
    files.append(write_json(out / "decay.json", summary))
    return files, summary


def cmd_born(cfg: RunConfig, out):
    pot = make_potential(cfg)
    ev, _, _ = make_evolution(cfg)
    sec = cfg.section("born")
    lam = float(sec.get("lam", 2.0 * ev.lambda1))
    n_max = int(sec.get("N_max", ev.born_terms))
    sign = int(sec.get("sign", 1))
    if not lam > 0:
        raise ConfigError("must be > 0", "born.lam")
    errs, rho = propagator.born_truncation_errors(sign, lam, n_max, pot)
    rows = [(n, float(e), float(errs[n] / errs[n - 1]) if n else math.nan, rho, lam)
            for n, e in enumerate(errs)]
    files = [write_csv(out / "born.csv", ["N", "error", "ratio", "contraction", "lam"],
                       rows, cfg.hash)]
    summary = {"config_hash": cfg.hash, "lam": lam, "contraction": rho,
               "ratios": [r[2] for r in rows[1:]]}
    files.append(write_json(out / "born.json", summary))
    return files, summary


def cmd_lemma2(cfg: RunConfig, out):
    sec = cfg.section("lemma2", required=True)
    families = sec.get("families", list(oscint.AMPLITUDE_FAMILIES))
    t_values = [float(t) for t in sec.get("t_values", [1, 10, 100, 1000, 10000])]
    x_max = float(sec.get("x_max", 6.0))
    n_pts = int(sec.get("n_points", 1201))
    refine = int(sec.get("refine", 4))
    if n_pts < 11 or refine < 1 or not x_max > 0:
        raise ConfigError("need n_points >= 11, refine >= 1, x_max > 0", "lemma2")
    rows, C = [], {}
    for n in sorted({n_pts, (n_pts - 1) * refine + 1}):
        x = np.linspace(-x_max, x_max, n)
        worst = 0.0
        for fam in families:
            a, da = oscint.amplitude_family(fam, x)
            for t in t_values:
                chk = oscint.lemma2_check(x, a, da, t)
                rows.append((fam, n, t, chk.delta, chk.lhs, chk.rhs, chk.ratio))
                worst = max(worst, chk.ratio)
        C[n] = worst
    files = [write_csv(out / "lemma2.csv", ["family", "n_points", "t", "delta", "lhs", "rhs", "ratio"],
                       rows, cfg.hash)]
    vals = list(C.values())
    summary = {"config_hash": cfg.hash, "C_by_grid": C,
               "C": max(vals), "drift": max(vals) / min(vals) if min(vals) > 0 else math.inf}
    files.append(write_json(out / "lemma2.json", summary))
    return files, summary


def chain_sample(rng, n, t_values, L_values, m_max, d_min, d_max):
    """Random (instance, t, L) triples: m uniform in 1..m_max, d log-uniform, J a random subset."""
    out = []
    for _ in range(n):
        m = int(rng.integers(1, m_max + 1))
        d = np.exp(rng.uniform(math.log(d_min), math.log(d_max), m))
        J = [j for j in range(1, m + 1) if rng.random() < 0.5]
        t = float(t_values[int(rng.integers(len(t_values)))])
        L = float(L_values[int(rng.integers(len(L_values)))])
        out.append((oscint.BornPhaseInstance(tuple(float(x) for x in d), frozenset(J)), t, L))
    return out


def cmd_born_chain(cfg: RunConfig, out):
    sec = cfg.section("born_chain", required=True)
    t_values = [float(t) for t in sec.get("t_values", [1, 4, 16])]
    L_values = [float(x) for x in sec.get("L_values", [1, 4, 16, 64])]
    n = int(sec.get("n_samples", 50))
    m_max = int(sec.get("m_max", 3))
    d_min, d_max = float(sec.get("d_min", 0.05)), float(sec.get("d_max", 50.0))
    sign = int(sec.get("sign", -1))
    if not (0 < d_min < d_max) or m_max < 1 or n < 1:
        raise ConfigError("need 0 < d_min < d_max, m_max >= 1, n_samples >= 1", "born_chain")
    if any(x < 1 for x in L_values) or any(t == 0 for t in t_values):
        raise ConfigError("need L >= 1 and t != 0", "born_chain")
    rng = np.random.default_rng(cfg.seed)
    rows, ratios = [], []
    samples = chain_sample(rng, n, t_values, L_values, m_max, d_min, d_max)
    for k, (inst, t, L) in enumerate(samples):
        cv = oscint.born_chain_integral(inst, t, L=L, sign=sign)
        w = inst.log_weight()
        ratios.append((t, cv.t_abs_value / w))
        rows.append((k, inst.m, " ".join(map(str, sorted(inst.J))),
                     " ".join(repr(x) for x in inst.d), t, L,
                     cv.value.real, cv.value.imag, cv.t_abs_value, w, cv.t_abs_value / w))
    files = [write_csv(out / "born_chain.csv",
                       ["index", "m", "J", "d", "t", "L", "re", "im", "t_abs_value",
                        "log_weight", "ratio"], rows, cfg.hash)]
    by_t = {t: max(r for tt, r in ratios if tt == t) for t in sorted({tt for tt, _ in ratios})}
    n_stat = sum(1 for inst, t, L in samples if 1.0 < inst.lambda0(t) < 2.0 * L)
    summary = {"config_hash": cfg.hash, "C": max(r for _, r in ratios), "C_by_t": by_t,
               "n_samples": n, "n_stationary_inside": n_stat}
    files.append(write_json(out / "born_chain.json", summary))
    return files, summary


HANDLERS = {
    "classify": cmd_classify,
    "expand": cmd_expand,
    "evolve": cmd_evolve,
    "decay": cmd_decay,
    "born": cmd_born,
    "lemma2": cmd_lemma2,
    "born-chain": cmd_born_chain,
}


# --------------------------------------------------------------------------
# entry point

def build_parser():
    p = argparse.ArgumentParser(prog="disp2d", description="2D Schroedinger dispersive-estimate toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True,
                   help="JSON config path or bundled name (gaussian-well, deep-well-scan, "
                        "two-well-zero-mass, free)")
    p.add_argument("--out", help="output directory (default: config output_dir or ./out)")
    p.add_argument("--seed", type=int, help="seed for randomized sweeps")
    p.add_argument("--threads", type=int, help="BLAS thread limit")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DISP2D_THREADS")
    return int(env) if env else None


def run(command, cfg: RunConfig, out=None):
    """Run one command; returns (written files, summary).  Exceptions propagate."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}", "command")
    cfg.require(command)
    out = Path(cfg.output_dir if out is None else out)
    return HANDLERS[command](cfg, out)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    manifest = {"command": args.command, "version": __version__, "config_hash": None,
                "outputs": [], "status": "error", "exit_code": EXIT_INVALID}
    out_dir = Path(args.out) if args.out else None
    code = EXIT_INVALID
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        out_dir = Path(cfg.output_dir)
        manifest["config_hash"] = cfg.hash
        manifest["config_source"] = cfg.source
        log.info("config %s (hash %s)", cfg.source, cfg.hash)
        threads = _threads(args)
        if threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                files, summary = run(args.command, cfg, out_dir)
        else:
            files, summary = run(args.command, cfg, out_dir)
        manifest["outputs"] = [str(Path(f).name) for f in files]
        manifest["status"] = "ok"
        code = EXIT_OK
        log.info("wrote %s", ", ".join(manifest["outputs"]))
    except (ConfigError, DomainError, ZeroPotentialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        manifest["error"] = str(exc)
        code = EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        manifest["error"] = str(exc)
        code = EXIT_NUMERICAL
    manifest["exit_code"] = code
    manifest["wall_time"] = time.perf_counter() - start
    out_dir = out_dir or Path("out")
    try:
        write_json(out_dir / "manifest.json", manifest)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
