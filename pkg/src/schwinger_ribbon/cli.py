"""Command-line entry point: ``schwinger <command> [flags]``.

Every command prints a JSON report on stdout (``selftest`` prints a table).  With an output directory
(``--output-dir`` or the ``SCHWINGER_OUTPUT_DIR`` environment variable) or an
explicit ``--json`` path the report is also written to disk, together with a
CSV file for commands that produce series.  Exit codes: 0 success, 1 failed
self-test, 2 invalid input, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, ValidationError

logger = logging.getLogger("schwinger_ribbon")

OUTPUT_ENV = "SCHWINGER_OUTPUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NOCONV = 0, 1, 2, 3

# flags shared by every command; never rejected when they appear in a config file
_COMMON = {"config", "output_dir", "json", "csv", "format", "threads", "verbose"}


@dataclass
class RunConfig:
    """Resolved settings of one invocation (defaults < config file < flags)."""

    command: str
    values: dict
    output_dir: str = None
    json_path: str = None
    csv_path: str = None
    format: str = "json"
    threads: int = None
    verbose: int = 0

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace):
        vals = {k: v for k, v in vars(ns).items() if k not in _COMMON and k != "command"}
        outdir = ns.output_dir if ns.output_dir is not None else os.environ.get(OUTPUT_ENV)
        return cls(ns.command, vals, outdir, ns.json, ns.csv, ns.format, ns.threads, ns.verbose or 0)

    def paths(self):
        j, c = self.json_path, self.csv_path
        if self.output_dir:
            d = Path(self.output_dir)
            j = j or str(d / f"{self.command}.json")
            c = c or str(d / f"{self.command}.csv")
        elif j and not c:
            c = str(Path(j).with_suffix(".csv"))
        return j, c


# serialization ------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# commands -------------------------------------------------------------------------------

def _lattice(v):
    from .lattice import LatticeParams

    return LatticeParams.from_dimensionless(v["L"], v["am"], v["aq"], v["theta"], W=v["W"])


def cmd_basis(v):
    from .lattice import enumerate_basis

    lat = _lattice(v)
    basis = enumerate_basis(lat)
    shown = basis.occupations[: v["max_list"]]
    return {"dimension": len(basis),
            "states": ["".join(map(str, row)) for row in shown],
            "fields": basis.fields[: v["max_list"]].tolist(),
            "truncated_listing": len(basis) > v["max_list"]}, None


def cmd_ground(v):
    from .lattice import build_hamiltonian, enumerate_basis, ground_state, measure

    lat = _lattice(v)
    basis = enumerate_basis(lat)
    H = build_hamiltonian(lat, basis)
    k = min(v["k"], len(basis))
    if k > 1:
        E, V = ground_state(H, tol=v["tol"], k=k)
    else:
        e, psi = ground_state(H, tol=v["tol"])
        E, V = [e], psi[:, None]
    prof = measure(V[:, 0], basis, "field_profile")
    rows = [(b, float(f)) for b, f in enumerate(prof)]
    return ({"dimension": len(basis), "energies": list(map(float, E)), "field_profile": prof},
            (["bond", "field_expectation"], rows))


def cmd_measure(v):
    from .lattice import build_hamiltonian, enumerate_basis, ground_state, measure

    lat = _lattice(v)
    basis = enumerate_basis(lat)
    E, psi = ground_state(build_hamiltonian(lat, basis), tol=v["tol"])
    val = measure(psi, basis, v["observable"])
    out = {"dimension": len(basis), "energies": [E], "observable": v["observable"], "value": val}
    if v["observable"] == "field_profile":
        out["field_profile"] = val
        return out, (["bond", "field_expectation"], [(b, float(f)) for b, f in enumerate(val)])
    if np.ndim(val):
        return out, (["site", v["observable"]], [(j, float(x)) for j, x in enumerate(val)])
    return out, None


def cmd_encode(v):
    from .interface import RibbonGeometry, encode_path, spin_configuration
    from .lattice import GaugeConfig

    occ = v["occupations"]
    if occ is None or not set(occ) <= {"0", "1"}:
        raise ValidationError("--occupations must be a 0/1 string")
    cfg = GaugeConfig.from_occupations([int(c) for c in occ], v["W"])
    path = encode_path(cfg)
    W = v["W"] if v["W"] is not None else max([0] + [abs(f) for f in cfg.fields])
    spins = spin_configuration(path, RibbonGeometry(cfg.L, W))
    return {"occupations": occ, "fields": cfg.fields, "moves": path.moves, "heights": path.heights,
            "W": W, "spins": spins.values.tolist()}, None


def cmd_verify_ising(v):
    from .interface import verify_equivalence

    rep = verify_equivalence(_lattice(v), form=v["form"], gauge=v["gauge"])
    return rep.as_dict(), None


def cmd_rydberg_design(v):
    from .rydberg import design_array

    out = design_array(_lattice(v), V=v["V"], Delta=v["Delta"], Omega_max=v["Omega_max"],
                       Vprime=v["Vprime"], rabi_compensation=v["rabi_compensation"])
    rows = [(a["x"], a["y"], a["species"], a["detuning"], a["rabi"], a["vacuum"]) for a in out["atoms"]]
    return out, (["x", "y", "species", "detuning", "rabi", "vacuum"], rows)


def cmd_rydberg_verify(v):
    from .lattice import LatticeParams
    from .rydberg import verify_rydberg

    lat = LatticeParams.from_dimensionless(v["cols"], v["am"], v["aq"], v["theta"], W=v["rows"])
    rep = verify_rydberg(lat, L=v["cols"], W=v["rows"], Omega_over_Delta=v["Omega_over_Delta"],
                         rabi_compensation=v["rabi_compensation"])
    d = rep.as_dict()
    d.update(energies_full=rep.energies_full, energies_dictionary=rep.energies_dictionary,
             energies_sw2=rep.energies_sw2)
    return d, None


def cmd_bounds(v):
    from . import fluctuations as fl

    L, am, aT = v["L"], v["am"], v["aT"]
    if v["mode"] == "ground":
        aT = 0.0
    elif not aT > 0:
        raise ValidationError("--aT must be positive in thermal mode")
    P = fl.DiracParams(L, 1.0, am, aT)
    C = fl.correlation_matrix(P)
    es = fl.entanglement_spectrum(C)
    fcs = fl.fcs_distribution(es)
    Wmax = min(v["W_max"] if v["W_max"] is not None else L // 2, L // 2)
    rows, summary = [], {"mode": v["mode"], "L": L, "am": am, "aT": aT,
                         "mean_offset": fcs.mean - L / 2, "variance": fcs.variance}
    if v["mode"] == "ground":
        for W in range(Wmax + 1):
            g = fl.ground_bound(es, W)
            rows.append((W, g["empirical_tail"], g["lambda_bound"], g["envelope_bound"]))
        summary.update(rate=es.rate, lam=es.lam, envelope_lambda=es.envelope,
                       rate_reference=fl.exact_es_rate(am),
                       xi_over_a=fl.correlation_length(C),
                       xi_reference=1 / np.arcsinh(am) if am > 0 else None)
        summary["violations_lambda_bound"] = [r[0] for r in rows if r[1] > r[2]]
        summary["violations_envelope_bound"] = [r[0] for r in rows if r[1] > r[3]]
        header = ["W", "empirical", "bound", "envelope_bound"]
    else:
        s2 = fl.sigma2_T(am, 1.0, aT)
        for W in range(Wmax + 1):
            rows.append((W, fcs.tail_at(W), fl.chernoff_tail(es.p, W), fl.legendre_tail(P, W)))
        summary.update(sigma2=s2, variance_ratio=fcs.variance / (L * s2),
                       W_cutoff=fl.finite_T_cutoff(P, epsilon=v["epsilon"]), epsilon=v["epsilon"])
        summary["violations_chernoff"] = [r[0] for r in rows if r[1] > r[2]]
        header = ["W", "empirical", "bound", "legendre_estimate"]
    return summary, (header, rows)


def cmd_resources(v):
    from .fluctuations import resource_estimate

    consts = {k: v[k] for k in ("c1", "c2", "c3", "c4") if v[k] is not None}
    est = resource_estimate(v["epsilon"], v["mode"], consts or None, T_xi=v["T_xi"])
    return est.as_dict(), None


def cmd_quench(v):
    from .dynamics import EvolutionSpec, QuenchScenario, run_quench

    lat = _lattice(v)
    occ = tuple(int(c) for c in v["occupations"]) if v["occupations"] else None
    sc = QuenchScenario(v["kind"], d=v["d"], occupations=occ, threshold=v["threshold"])
    spec = EvolutionSpec(v["t_final"], v["dt"], krylov_dim=v["krylov_dim"], tol=v["tol"])
    rec = run_quench(sc, lat, spec)
    meta = dict(rec.metadata)
    meta["mid_bond"] = rec.mid_bond
    if v["kind"] == "string":
        meta["string_breaking"] = rec.string_breaking()
        meta["mid_field"] = rec.mid_field
    meta["field_energy"] = rec.field_energy
    header = ["t"] + [f"bond_{b}" for b in range(rec.field_profile.shape[1])]
    rows = [[float(t)] + list(map(float, f)) for t, f in zip(rec.times, rec.field_profile)]
    return meta, (header, rows)


def cmd_selftest(v):
    from .selftest import run_selftest

    results = run_selftest(quick=not v["full"])
    return {"results": results, "all_passed": all(r["passed"] for r in results)}, None


# parser ---------------------------------------------------------------------------------

def _lattice_flags(p, W_default=1):
    p.add_argument("--L", type=int, help="half the number of sites (required)")
    p.add_argument("--W", type=int, default=W_default, help="electric-field cutoff")
    p.add_argument("--am", type=float, default=0.0, help="mass in lattice units")
    p.add_argument("--aq", type=float, default=0.0, help="charge in lattice units")
    p.add_argument("--theta", type=float, default=0.0, help="topological angle")


COMMANDS = {}


def _add(sub, name, func, required=(), help=None):
    p = sub.add_parser(name, help=help)
    p.add_argument("--config", help="JSON file with flag values (flags override it)")
    p.add_argument("--output-dir", help=f"directory for output files (default ${OUTPUT_ENV})")
    p.add_argument("--json", help="path of the JSON report")
    p.add_argument("--csv", help="path of the CSV series")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP thread limit (default: all cores)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    COMMANDS[name] = (func, required, p)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="schwinger", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"schwinger-ribbon {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = _add(sub, "basis", cmd_basis, ("L",), "enumerate the truncated gauge sector")
    _lattice_flags(p)
    p.add_argument("--max-list", type=int, default=64, help="maximum number of states listed")

    p = _add(sub, "ground", cmd_ground, ("L",), "lowest eigenpairs and field profile")
    _lattice_flags(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-10)

    p = _add(sub, "measure", cmd_measure, ("L",), "ground-state observable")
    _lattice_flags(p)
    p.add_argument("--observable", default="field_profile",
                   choices=("field_profile", "charge_density", "field_squared_total", "occupation"))
    p.add_argument("--tol", type=float, default=1e-10)

    p = _add(sub, "encode", cmd_encode, ("occupations",), "interface path of an occupation string")
    p.add_argument("--occupations", help="0/1 string such as 1010")
    p.add_argument("--W", type=int, default=None)

    p = _add(sub, "verify-ising", cmd_verify_ising, ("L",), "Ising dictionary equivalence")
    _lattice_flags(p)
    p.add_argument("--form", choices=("general", "table"), default="general")
    p.add_argument("--gauge", action="store_true", help="compare in the real phase gauge")

    p = _add(sub, "rydberg-design", cmd_rydberg_design, (), "array layout and drive settings")
    _lattice_flags(p)
    p.set_defaults(L=2)
    p.add_argument("--V", type=float, default=1.0)
    p.add_argument("--Vprime", type=float, default=None, help="default 125/64 V")
    p.add_argument("--Delta", type=float, default=1.0)
    p.add_argument("--Omega-max", type=float, default=0.05)
    p.add_argument("--rabi-compensation", action="store_true")

    p = _add(sub, "rydberg-verify", cmd_rydberg_verify, (), "patch diagonalization against the 1D model")
    p.add_argument("--cols", type=int, default=2, help="lattice L of the patch")
    p.add_argument("--rows", type=int, default=1, help="cutoff W of the patch")
    p.add_argument("--Omega-over-Delta", type=float, default=0.02)
    p.add_argument("--am", type=float, default=0.5)
    p.add_argument("--aq", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--rabi-compensation", action="store_true")

    p = _add(sub, "bounds", cmd_bounds, ("L",), "field-fluctuation tails against bounds")
    p.add_argument("--L", type=int)
    p.add_argument("--am", type=float, default=0.5)
    p.add_argument("--aT", type=float, default=0.0)
    p.add_argument("--mode", choices=("ground", "thermal"), default="ground")
    p.add_argument("--W-max", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=1e-3, help="target tail for the thermal cutoff")

    p = _add(sub, "resources", cmd_resources, ("epsilon",), "array size for a target accuracy")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mode", choices=("T0", "finiteT"), default="T0")
    p.add_argument("--T-xi", type=float, default=1.0, help="temperature times correlation length")
    for c in ("c1", "c2", "c3", "c4"):
        p.add_argument(f"--{c}", type=float, default=None)

    p = _add(sub, "quench", cmd_quench, ("L", "t_final", "dt"), "real-time quench")
    _lattice_flags(p, W_default=2)
    p.add_argument("--kind", choices=("string", "free_check", "custom"), default="string")
    p.add_argument("--d", type=int, default=5, help="odd pair separation")
    p.add_argument("--occupations", default=None, help="initial 0/1 string (custom)")
    p.add_argument("--t-final", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--krylov-dim", type=int, default=30)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--threshold", type=float, default=0.2)

    p = _add(sub, "selftest", cmd_selftest, (), "constant and oracle self-test")
    p.add_argument("--full", action="store_true", help="include the slower checks")
    return parser


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    ns = parser.parse_args(argv)
    func, required, sub = COMMANDS[ns.command]
    if known.config:
        cfg = _load_config(known.config)
        allowed = {a.dest for a in sub._actions} - {"help"}
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        # config values become the defaults, so explicit flags still win
        sub.set_defaults(**cfg)
        ns = parser.parse_args(argv)
    for r in required:
        if getattr(ns, r, None) is None:
            raise ValidationError(f"missing required flag --{r.replace('_', '-')}")
    return ns, func


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns, func = parse(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse usage errors and --help/--version
        return int(exc.code or 0) if isinstance(exc.code, int) else EXIT_INVALID
    cfg = RunConfig.from_namespace(ns)
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            report, series = func(cfg.values)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    doc = {"command": cfg.command, "version": __version__, "params": cfg.values, "result": report}
    text = dumps_json(doc)
    jpath, cpath = cfg.paths()
    csv_text = None
    if series is not None:
        header, rows = series
        echo = "# " + json.dumps(_plain({"command": cfg.command, "version": __version__,
                                         "params": cfg.values}), sort_keys=True) + "\n"
        csv_text = echo + dumps_csv(header, rows)
    if jpath:
        atomic_write(jpath, text)
    if cpath and csv_text is not None:
        atomic_write(cpath, csv_text)
    if cfg.command == "selftest":
        from .selftest import format_table

        sys.stdout.write(format_table(report["results"]))
    elif cfg.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(text)
    if cfg.command == "selftest" and not report["all_passed"]:
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
