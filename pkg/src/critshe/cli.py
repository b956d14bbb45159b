"""Command-line driver: one subcommand per run, results plus a replayable manifest.

Exit status: 0 success, 1 hard failure, 2 usage or invalid configuration,
3 an estimator flagged itself unreliable, 4 a checked property failed.
On any nonzero status a one-line JSON object with the error class is
written to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import bessel_process as bp
from . import feynman_kac as fk
from . import fourier_variance as fv
from . import lattice
from . import regimes
from . import simplex_phi as sp
from .errors import DomainError, Error, UnreliableEstimateError
from .params import Estimate, ModelParams, QuadratureSpec
from .report import CSV_SCHEMA, RegimeReport

MANIFEST_SCHEMA = "critshe-manifest/1"
OUTPUT_ENV = "CRITSHE_OUTPUT_DIR"
DEFAULT_OUTPUT = "critshe-out"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_UNRELIABLE, EXIT_VERDICT = 0, 1, 2, 3, 4
SUBCOMMANDS = ("sigma", "chaos-var", "phi", "fk-moments", "scaling-check", "clt-table",
               "extinction", "lattice", "constants")
# keys that steer where output goes, not what is computed
_NOT_ECHOED = {"config", "output_dir", "replay"}


class UsageError(Error):
    error_class = "usage"


# -- argument types -------------------------------------------------------------

def count(s) -> int:
    """Positive integer, also accepting forms like 1e6."""
    v = float(s)
    if v != int(v) or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}")
    return int(v)


def count_or_zero(s) -> int:
    """Like ``count`` but 0 is allowed, meaning the step is skipped."""
    return 0 if float(s) == 0 else count(s)


def seed64(s) -> int:
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def floats(s) -> list[float]:
    if isinstance(s, list):
        return s
    try:
        return [float(x) for x in str(s).replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def flag(s) -> bool:
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


# -- parser ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, d=3, kappa=0.4):
    g = p.add_argument_group("run")
    g.add_argument("--config", help="flat key=value file; flags override it")
    g.add_argument("--seed", type=seed64, default=0)
    g.add_argument("--parallelism", type=count, default=1)
    g.add_argument("--output-dir", help=f"default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT}")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    m = p.add_argument_group("model")
    m.add_argument("--d", type=int, default=d)
    m.add_argument("--kappa", type=float, default=kappa)
    m.add_argument("--t", type=float, default=1.0)
    m.add_argument("--R", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="critshe", description=__doc__.splitlines()[0])
    ap.add_argument("--replay", metavar="MANIFEST", help="re-run a manifest and compare outputs")
    ap.add_argument("--replay-output-dir", help="where replayed outputs go (default MANIFEST_DIR/replay)")
    ap.add_argument("--replay-parallelism", type=count, help="override parallelism when replaying")
    sub = ap.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("sigma", help="limiting variance, Fourier quadrature vs real-space MC")
    _common(p, kappa=1.0)
    p.add_argument("--n-pairs", type=count, default=10 ** 7)

    p = sub.add_parser("chaos-var", help="variance of the n-th chaos of u_t(B_R)")
    _common(p)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--method", choices=("fourier", "fk", "both"), default="both")
    p.add_argument("--samples", type=count, default=2 * 10 ** 6, help="Fourier MC samples")
    p.add_argument("--pairs", type=count, default=10 ** 5, help="Feynman-Kac pairs")
    p.add_argument("--paths-per-pair", type=count, default=1)

    p = sub.add_parser("phi", help="simplex exponential integral and its bounds")
    _common(p)
    p.add_argument("--rates", type=floats, required=False, default=[1.0, 2.0, 3.0])
    p.add_argument("--mc-samples", type=count_or_zero, default=0, help="0 skips the Monte Carlo oracle")

    p = sub.add_parser("fk-moments", help="moments of the additive functional beta_t(x)")
    _common(p)
    p.add_argument("--x", type=floats, default=[1.0, 0.0, 0.0])
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--paths", type=count, default=10 ** 5)

    p = sub.add_parser("scaling-check", help="diffusive scaling identities")
    _common(p)
    p.add_argument("--eps", type=floats, default=[0.25])
    p.add_argument("--fourier-samples", type=count, default=10 ** 6)
    p.add_argument("--fk-pairs", type=count, default=10 ** 5)
    p.add_argument("--ks-paths", type=count, default=10 ** 5)
    p.add_argument("--no-mc", type=flag, nargs="?", const=True, default=False)

    p = sub.add_parser("clt-table", help="first and second chaos against R")
    _common(p)
    p.add_argument("--R-list", type=floats, default=[1, 2, 4, 8, 16, 32, 64])
    p.add_argument("--fourier-samples", type=count, default=3 * 10 ** 6)
    p.add_argument("--min-ess", type=float, default=1e6)

    p = sub.add_parser("extinction", help="growth of E exp(kappa^2 beta) in t/|x|^2")
    _common(p)
    p.add_argument("--tau-list", type=floats, default=[1e2, 3e2, 1e3, 3e3, 1e4])
    p.add_argument("--fit-from", type=float, default=1e2)
    p.add_argument("--paths", type=count, default=10 ** 5)

    p = sub.add_parser("lattice", help="lattice ensemble for one regime")
    _common(p)
    p.add_argument("--regime", choices=lattice.REGIME_TAGS, default="clt")
    p.add_argument("--replicas", type=count, default=200)
    p.add_argument("--N", type=count, default=128)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--scheme", choices=("ito", "exponential"), default="exponential")
    p.add_argument("--ball-R", type=float, default=None, help="ball radius in lattice units")
    p.add_argument("--times", type=floats, default=None)
    p.add_argument("--dump", type=flag, nargs="?", const=True, default=False,
                   help="also write the raw per-replica averages")

    p = sub.add_parser("constants", help="exponent choices and envelope constants")
    _common(p)
    p.add_argument("--n-list", type=floats, default=[2, 3, 4])
    return ap


def _subparser(ap: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for a in ap._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices[name]
    raise KeyError(name)


def read_config(path) -> dict:
    """Flat key=value file; blank lines and '#' comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def parse_config(argv) -> argparse.Namespace:
    """Defaults, then the config file, then explicit flags."""
    ap = build_parser()
    ns = ap.parse_args(argv)
    if ns.replay or ns.subcommand is None or not getattr(ns, "config", None):
        return ns
    sp_ = _subparser(ap, ns.subcommand)
    file_vals = read_config(ns.config)
    known = {a.dest for a in sp_._actions}
    unknown = set(file_vals) - known
    if unknown:
        raise UsageError(f"unknown config keys for {ns.subcommand}: {sorted(unknown)}")
    conv = {}
    for a in sp_._actions:
        if a.dest in file_vals:
            v = file_vals[a.dest]
            try:
                conv[a.dest] = a.type(v) if a.type else v
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"config key {a.dest}: {e}")
            if a.choices is not None and conv[a.dest] not in a.choices:
                raise UsageError(f"config key {a.dest}: {v!r} not in {list(a.choices)}")
    sp_.set_defaults(**conv)
    return ap.parse_args(argv)


def config_echo(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(ns).items())
            if k not in _NOT_ECHOED and not k.startswith("replay")}


# -- subcommands -------------------------------------------------------------------

def _params(c) -> ModelParams:
    return ModelParams(c["d"], c["kappa"], c["t"], c["R"])


def _check_model(c):
    if c["d"] < 3:
        raise DomainError("dimension must be an integer >= 3")
    if not (0 < c["kappa"] < (c["d"] - 2) / 2):
        raise DomainError(f"kappa={c['kappa']} violates the model constraint "
                          f"0 < kappa < (d-2)/2 = {(c['d'] - 2) / 2}")


def run_sigma(c):
    if c["d"] < 3:
        raise DomainError("dimension must be an integer >= 3")
    if c["n_pairs"] < 1000:
        raise UsageError("n_pairs must be at least 1000")
    four, mc = fv.sigma_squared(c["d"], c["kappa"], n_pairs=c["n_pairs"], seed=c["seed"],
                                parallelism=c["parallelism"])
    rep = RegimeReport("none", meta={"d": c["d"], "kappa": c["kappa"]})
    rep.add("sigma2_fourier", four, method="fourier-quad")
    rep.add("sigma2_real_space", mc)
    tol = max(0.005 * four, 3 * mc.stderr)
    diff = abs(mc.value - four)
    rep.verdict("agree_max_0.5pct_3sigma", diff <= tol, tol - diff,
                f"|diff| {diff:.4g}, tolerance {tol:.4g}")
    return rep, [mc]


def run_chaos_var(c):
    p = _params(c)
    n = c["n"]
    rep = RegimeReport("none", meta={"n": n, "d": p.d, "kappa": p.kappa, "t": p.t, "R": p.R})
    ests, got = [], {}
    if c["method"] in ("fourier", "both"):
        if n == 1:
            got["fourier"] = fv.first_chaos_variance_exact(p)
            rep.add("var_fourier", got["fourier"], method="fourier-quad")
        else:
            e = fv.nth_chaos_fourier_mc(fv.ChaosVarianceSpec(n, p, QuadratureSpec(), c["samples"]),
                                        c["seed"], c["parallelism"], raise_on_unreliable=False)
            got["fourier"] = e
            ests.append(e)
            rep.add("var_fourier", e)
    if c["method"] in ("fk", "both"):
        e = fk.chaos_variance_fk(n, p, c["paths_per_pair"], c["pairs"], c["seed"],
                                 parallelism=c["parallelism"])
        got["fk"] = e
        ests.append(e)
        rep.add("var_fk", e)
    if len(got) == 2:
        f = got["fourier"]
        z = got["fk"].z_score(f)
        rep.verdict("agree_3sigma", abs(z) <= 3, 3 - abs(z), f"z = {z:.3g}")
    return rep, ests


def run_phi(c):
    rates = c["rates"]
    rep = RegimeReport("none", meta={"rates": rates})
    val = sp.phi(rates)
    rep.add("phi", val)
    inv_fact = 1.0 / math.factorial(len(rates))
    rep.add("inverse_factorial", inv_fact)
    ok = 0 < val <= inv_fact
    worst = inv_fact - val
    for k in range(1, len(rates)):
        if all(a > 0 for a in rates[:k]):
            b = sp.phi_chain_bound(rates, k)
            rep.add("chain_bound", b, k, "k")
            ok &= val <= b * (1 + 1e-12)
            worst = min(worst, b - val)
    rep.verdict("bounds_hold", ok, worst)
    ests = []
    if c["mc_samples"]:
        e = sp.phi_mc_oracle(rates, c["mc_samples"], c["seed"], c["parallelism"])
        rep.add("phi_mc", e)
        z = e.z_score(val)
        rep.verdict("mc_agrees_3sigma", abs(z) <= 3, 3 - abs(z), f"z = {z:.3g}")
        ests.append(e)
    return rep, ests


def run_fk_moments(c):
    x = np.asarray(c["x"], dtype=float)
    d = x.size
    if d < 3:
        raise DomainError("x must have dimension >= 3")
    r = float(np.linalg.norm(x))
    rep = RegimeReport("none", meta={"x": list(c["x"]), "t": c["t"], "kappa": c["kappa"]})
    moms = fk.beta_moments(x, c["t"], c["n_max"], c["paths"], c["seed"],
                           parallelism=c["parallelism"])
    for n, e in enumerate(moms, 1):
        rep.add("beta_moment", e, n, "n")
        rep.add("beta_moment_exact", bp.beta_moment_exact(n, r, c["t"], d), n, "n")
    ests = list(moms)
    if 0 < c["kappa"] < (d - 2) / 2:
        e = fk.exp_moment(x, c["t"], c["kappa"], c["paths"], c["seed"],
                          parallelism=c["parallelism"])
        rep.add("exp_moment", e)
        rep.add("exp_moment_exact", bp.exp_moment_exact(c["kappa"] ** 2, r, c["t"], d))
        ests.append(e)
    return rep, ests


def _budgets(c, **extra):
    return regimes.Budgets.from_mapping({"seed": c["seed"], "parallelism": c["parallelism"],
                                         **extra})


def run_scaling_check(c):
    _check_model(c)
    b = _budgets(c, fourier_samples=c["fourier_samples"], fk_pairs=c["fk_pairs"],
                 ks_paths=c["ks_paths"])
    return regimes.scaling_check(_params(c), c["eps"], b, include_mc=not c["no_mc"]), []


def run_clt_table(c):
    _check_model(c)
    b = _budgets(c, fourier_samples=c["fourier_samples"], min_ess=c["min_ess"])
    return regimes.clt_convergence_table(c["R_list"], _params(c), b), []


def run_extinction(c):
    _check_model(c)
    b = _budgets(c, exp_paths=c["paths"])
    rep = regimes.extinction_profile(c["tau_list"], c["kappa"], c["d"], b, R=c["R"],
                                     fit_from=c["fit_from"])
    return rep, []


def run_lattice(c, outdir=None):
    if c["d"] != 3:
        raise DomainError("the lattice simulation is three-dimensional only")
    cfg = lattice.LatticeConfig(c["N"], c["h"], c["dt"], c["kappa"], c["scheme"])
    proto = None
    if c["ball_R"] is not None or c["times"] is not None:
        base = lattice.RegimeProtocol.default(c["regime"], cfg)
        proto = lattice.RegimeProtocol(c["ball_R"] if c["ball_R"] is not None else base.R,
                                       tuple(c["times"]) if c["times"] is not None else base.times)
    dump = Path(outdir) / "lattice_raw.csv" if (c["dump"] and outdir is not None) else None
    rep = lattice.regime_ensemble(c["regime"], c["replicas"], cfg, c["seed"], proto,
                                  c["parallelism"], dump)
    return rep, []


def run_constants(c):
    if c["d"] < 3:
        raise DomainError("dimension must be an integer >= 3")
    pc = fv.proof_constants(c["d"], c["kappa"])
    rep = RegimeReport("none", meta={"d": c["d"], "kappa": c["kappa"]})
    for k in ("m0", "gamma0", "gamma_J", "k_J", "k_K", "geometric_ratio"):
        rep.add(k, float(getattr(pc, k)))
    rep.add("summable", float(pc.summable))
    resid = abs(2 * pc.m0 + 2 - pc.gamma0 - (c["d"] - 2) / 2)
    rep.verdict("exponent_recipe", resid < 1e-12, -resid, "2 m0 + 2 - gamma0 = (d-2)/2")
    if pc.summable and 0 < c["kappa"]:
        for n in c["n_list"]:
            rep.add("chaos_envelope", fv.chaos_envelope(int(n), c["d"], c["kappa"]), n, "n")
    return rep, []


HANDLERS = {"sigma": run_sigma, "chaos-var": run_chaos_var, "phi": run_phi,
            "fk-moments": run_fk_moments, "scaling-check": run_scaling_check,
            "clt-table": run_clt_table, "extinction": run_extinction,
            "lattice": run_lattice, "constants": run_constants}


# -- orchestration -----------------------------------------------------------------

def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "mpmath"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    try:
        out["critshe"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["critshe"] = None
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _status(rep: RegimeReport, ests) -> int:
    if any(not e.reliable for e in ests):
        return EXIT_UNRELIABLE
    if rep.regime == "extinction" and "estimates_reliable" in rep.verdicts \
            and not rep.verdicts["estimates_reliable"].passed:
        return EXIT_UNRELIABLE
    if not rep.passed:
        return EXIT_VERDICT
    return EXIT_OK


def execute(config: dict, outdir: Path) -> tuple[int, dict]:
    """Run one subcommand from a resolved config; write results and the manifest."""
    outdir.mkdir(parents=True, exist_ok=True)
    name = config["subcommand"]
    t0 = time.perf_counter()
    if name == "lattice":
        rep, ests = run_lattice(config, outdir)
    else:
        rep, ests = HANDLERS[name](config)
    wall = time.perf_counter() - t0
    files = []
    csv_path = outdir / "results.csv"
    rep.write_csv(csv_path)
    files.append(csv_path)
    if config["format"] == "json":
        jpath = outdir / "results.json"
        rep.write_json(jpath)
        files.append(jpath)
    if (outdir / "lattice_raw.csv").exists() and name == "lattice" and config.get("dump"):
        files.append(outdir / "lattice_raw.csv")
    status = _status(rep, ests)
    manifest = {"schema": MANIFEST_SCHEMA, "results_schema": CSV_SCHEMA, "subcommand": name,
                "seed": config["seed"], "config": config, "versions": versions(),
                "wall_time_s": wall, "exit_status": status,
                "outputs": {f.name: _sha256(f) for f in files}}
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(rep.summary())
    print(f"wrote {', '.join(f.name for f in files)} and manifest.json to {outdir}")
    return status, manifest


def replay(manifest_path, outdir=None, parallelism=None) -> tuple[int, dict]:
    """Re-run a manifest's config and compare every output hash."""
    mpath = Path(manifest_path)
    man = json.loads(mpath.read_text())
    if man.get("schema") != MANIFEST_SCHEMA:
        raise UsageError(f"{mpath} is not a {MANIFEST_SCHEMA} manifest")
    config = dict(man["config"])
    if parallelism is not None:
        config["parallelism"] = parallelism
    out = Path(outdir) if outdir else mpath.parent / "replay"
    if out.resolve() == mpath.parent.resolve():
        raise UsageError("replay output directory must differ from the manifest's")
    status, new = execute(config, out)
    mismatched = sorted(k for k, h in man["outputs"].items() if new["outputs"].get(k) != h)
    if man.get("versions") != new["versions"]:
        print("note: library versions differ from the manifest", file=sys.stderr)
    if mismatched:
        print(f"replay MISMATCH in {mismatched}")
        return EXIT_FAIL, new
    print("replay: all outputs identical")
    return status, new


def _fail(err_class: str, message: str, status: int) -> int:
    print(json.dumps({"error_class": err_class, "message": message, "exit_status": status}),
          file=sys.stderr)
    return status


def main(argv=None) -> int:
    try:
        ns = parse_config(argv)
    except SystemExit as e:  # argparse has already printed usage or help
        if e.code in (0, None):
            return EXIT_OK
        return _fail("usage", "invalid arguments", EXIT_USAGE)
    except (UsageError, OSError) as e:
        return _fail("usage", str(e), EXIT_USAGE)
    try:
        if ns.replay:
            status, _ = replay(ns.replay, ns.replay_output_dir, ns.replay_parallelism)
        elif ns.subcommand is None:
            return _fail("usage", "a subcommand or --replay is required", EXIT_USAGE)
        else:
            outdir = Path(ns.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
            status, _ = execute(config_echo(ns), outdir)
    except (UsageError, DomainError) as e:
        return _fail(e.error_class, str(e), EXIT_USAGE)
    except UnreliableEstimateError as e:
        return _fail(e.error_class, str(e), EXIT_UNRELIABLE)
    except Error as e:
        return _fail(e.error_class, str(e), EXIT_FAIL)
    except Exception as e:  # noqa: BLE001 - report any crash in the machine-readable form
        return _fail("internal", f"{type(e).__name__}: {e}", EXIT_FAIL)
    if status == EXIT_UNRELIABLE:
        return _fail("unreliable", "an estimator flagged its result unreliable", status)
    if status == EXIT_VERDICT:
        return _fail("verdict", "a checked property failed; see the results", status)
    return status


if __name__ == "__main__":
    sys.exit(main())
