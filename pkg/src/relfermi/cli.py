"""Batch command-line interface.

Every command reads an optional flat ``key = value`` config file, applies
flag overrides, runs one experiment and writes a new run directory
``<out>/<command>-NNNN`` holding the resolved config, a JSON result document
and any tables or checkpoints. Existing run directories are never touched.

Exit codes: 0 success, 1 usage or config error, 2 non-convergence,
3 invariant violation (a ``diagnostic.json`` is written next to the result).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass, fields

import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from .errors import (
    DivergingObjective,
    InsufficientRecords,
    InvariantViolation,
    MaxItersExceeded,
    NotConverged,
    RelFermiError,
)
from .minimizer import DEALIAS_BAND
from .state import save_orbitals

SCHEMA_VERSION = 1
OUTPUT_ENV = "RELFERMI_OUTPUT_DIR"
DEFAULT_OUTPUT = "relfermi-runs"
SWEEP_COLUMNS = ("a", "D_minus_a", "E", "E_plus_2m", "eps", "mu1", "mu2", "converged")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_INVARIANT = 0, 1, 2, 3


class ConfigError(Exception):
    """Bad command line or config file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@dataclass
class RunConfig:
    n: int = 32
    L: float = 32.0
    m: float = 1.0
    N: int = 2
    a: float = float("nan")
    ratio: float = float("nan")
    ratios: str = "0.90,0.94,0.97,0.985,0.995"
    D2: float = float("nan")
    seed: int = 0
    seeds: str = ""
    noise: float = 0.3
    width_cells: float = 4.0
    band: float = DEALIAS_BAND
    dc: str = "cell"
    grad_tol: float = 1e-6
    max_iters: int = 3000
    refine: bool = False
    box_tol: float = 1e-4
    workers: int = 1
    steps: int = 4
    source: str = "quotient"
    target: str = "eps_law"
    csv: str = ""
    uncertainty: float = 0.0
    out: str = ""

    def validate(self):
        if not 1 <= self.N <= 3:
            raise ConfigError("N must be 1..3")
        if self.n < 8 or self.n % 2:
            raise ConfigError("n must be an even integer >= 8")
        if not self.L > 0 or self.m < 0:
            raise ConfigError("L must be positive and m nonnegative")
        if self.dc not in ("zero", "cell"):
            raise ConfigError("dc must be 'zero' or 'cell'")
        if not 0 < self.band <= 1:
            raise ConfigError("band must lie in (0, 1]")
        if self.source not in ("quotient", "energy"):
            raise ConfigError("source must be 'quotient' or 'energy'")
        if self.target not in ("eps_law", "energy_law"):
            raise ConfigError("target must be 'eps_law' or 'energy_law'")
        if self.steps < 1 or self.workers < 1:
            raise ConfigError("steps and workers must be >= 1")

    def seed_list(self):
        if self.seeds:
            return tuple(int(s) for s in self.seeds.split(","))
        return (self.seed,)

    def ratio_list(self):
        return [float(r) for r in self.ratios.split(",") if r.strip()]

    def experiment(self):
        return ex.ExperimentConfig(
            n=self.n, L=self.L, m=self.m, band=self.band, dc=self.dc, seeds=self.seed_list(),
            noise=self.noise, width_cells=self.width_cells, grad_tol=self.grad_tol,
            max_iters=self.max_iters, refine=self.refine, box_tol=self.box_tol,
            workers=self.workers,
        )

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, text):
    kind = _TYPES[key]
    text = text.strip()
    if kind == "bool":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(key, val)
            except ValueError as err:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {err}") from None
    return values


def write_config(path, cfg):
    with open(path, "w") as fh:
        for key, val in cfg.as_dict().items():
            fh.write(f"{key} = {_fmt(val)}\n")


def _fmt(val):
    if isinstance(val, float):
        return repr(val)
    return str(val).lower() if isinstance(val, bool) else str(val)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.floating):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def output_root(cfg):
    return cfg.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT


def new_run_dir(root, command):
    """Create ``root/command-NNNN`` with the next free index."""
    os.makedirs(root, exist_ok=True)
    idx = 1
    while True:
        path = os.path.join(root, f"{command}-{idx:04d}")
        try:
            os.mkdir(path)
            return path
        except FileExistsError:
            idx += 1


def result_document(kind, cfg, outputs, started, elapsed):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "inputs": _jsonable(cfg.as_dict()),
        "outputs": _jsonable(outputs),
        "environment": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "relfermi": __version__,
        },
        "timing": {"started": started, "elapsed_s": elapsed},
    }


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _num(x):
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def write_sweep_csv(path, records, D, m, N):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            row = r.row(D, m, N)
            w.writerow([_num(row[c]) if c != "converged" else str(row[c]).lower() for c in SWEEP_COLUMNS])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(SWEEP_COLUMNS) - set(rows[0]):
        raise ConfigError(f"{path}: missing columns {sorted(set(SWEEP_COLUMNS) - set(rows[0]))}")
    return rows


# ---------------------------------------------------------------- commands


def _D2(cfg, xcfg, outputs):
    if math.isfinite(cfg.D2):
        return cfg.D2
    est = ex.estimate_D(2, xcfg)
    outputs["D2_estimate"] = est.summary()
    return est.value


def _coupling(cfg, D):
    if math.isfinite(cfg.a):
        return cfg.a
    if math.isfinite(cfg.ratio):
        return cfg.ratio * D
    raise ConfigError("set either a or ratio")


def cmd_constant(cfg, run):
    est = ex.estimate_D(cfg.N, cfg.experiment())
    save_orbitals(os.path.join(run, "optimizer.fvf"), est.optimizer)
    out = est.summary()
    print(f"D_hat({cfg.N}) = {est.value:.12g}  spread = {est.spread:.3e}  grid-doubling delta = {est.delta:.3e}")
    return out, est.all_converged


def cmd_minimize(cfg, run):
    xcfg = cfg.experiment()
    outputs = {}
    D = _D2(cfg, xcfg, outputs) if not math.isfinite(cfg.a) else cfg.D2
    a = _coupling(cfg, D)
    rep = ex.ground_state(cfg.N, a, cfg.m, xcfg, D_estimate=D if math.isfinite(D) else None)
    save_orbitals(os.path.join(run, "minimizer.fvf"), rep.final_set)
    outputs.update(rep.summary())
    outputs["checks"] = ex.energy_checks(rep, cfg.N, cfg.m)
    outputs.pop("box_trials", None)
    print(f"E_a({cfg.N}) = {rep.objective:.12g} at a = {a:.9g}, box L = {rep.extra['box']:.6g}, mu = {rep.mu}")
    return outputs, rep.converged


def cmd_sweep(cfg, run):
    xcfg = cfg.experiment()
    outputs = {}
    D = _D2(cfg, xcfg, outputs)
    records = ex.sweep_a(cfg.ratio_list(), cfg.m, xcfg, D2=D, N=cfg.N)
    write_sweep_csv(os.path.join(run, "sweep.csv"), records, D, cfg.m, cfg.N)
    outputs["D2"] = D
    outputs["records"] = [dict(vars(r), eps_cells=r.eps_cells) for r in records]
    for r in records:
        print(f"ratio {r.ratio:.4f}  E = {r.E:.12g}  eps = {r.eps:.6g}  mu = ({r.mu1:.6g}, {r.mu2:.6g})")
    return outputs, all(r.converged for r in records)


def cmd_binding(cfg, run):
    xcfg = cfg.experiment()
    outputs = {}
    D = _D2(cfg, xcfg, outputs)
    a = _coupling(cfg, D)
    res = ex.binding_check(a, cfg.m, xcfg, D_estimate=D)
    outputs.update(res.summary())
    print(f"E2 = {res.E2:.12g}  2 E1 = {2 * res.E1:.12g}  margin = {res.margin:.3e}  strict = {res.strict}")
    return outputs, all(r.converged for r in res.reports)


def cmd_collapse(cfg, run):
    xcfg = cfg.experiment()
    est = ex.estimate_D(cfg.N, xcfg)
    ratio = cfg.ratio if math.isfinite(cfg.ratio) else 1.1
    a = cfg.a if math.isfinite(cfg.a) else ratio * est.value
    tab = ex.collapse_probe(a, est.optimizer, cfg.steps, cfg.m, est.value)
    out = {"D_estimate": est.summary(), **tab.summary()}
    for t, e in zip(tab.t, tab.energy):
        print(f"t = {t:g}  E = {e:.12g}")
    print(f"slope {tab.slope:.9g} vs expected {tab.expected_slope:.9g}")
    return out, est.all_converged


def cmd_dstar(cfg, run):
    xcfg = cfg.experiment()
    d2 = ex.estimate_D(2, xcfg)
    est = ex.estimate_dstar(xcfg, d2)
    save_orbitals(os.path.join(run, "optimizer.fvf"), est.optimizer)
    print(f"d_star_hat = {est.value:.12g}  dc share = {est.dc_bias / est.value:.3e}")
    return {"D2_estimate": d2.summary(), **est.summary()}, d2.all_converged


def cmd_tail(cfg, run):
    xcfg = cfg.experiment()
    if cfg.source == "quotient":
        est = ex.estimate_D(cfg.N, xcfg)
        fit = ex.tail_fit(est.optimizer)
        out, ok = {"D_estimate": est.summary()}, est.all_converged
    else:
        outputs = {}
        D = _D2(cfg, xcfg, outputs)
        a = _coupling(cfg, D)
        rep = ex.ground_state(cfg.N, a, cfg.m, xcfg, D_estimate=D)
        fit = ex.tail_fit(rep.final_set, massive=True, mu=rep.mu, m=cfg.m)
        out, ok = {**outputs, "E": rep.objective, "mu": rep.mu}, rep.converged
    out.update(fit.summary())
    print(f"{fit.kind} exponents {fit.exponents}  r^2 {fit.r_squared}")
    return out, ok


def cmd_fit(cfg, run):
    if not cfg.csv:
        raise ConfigError("fit needs csv = <sweep.csv>")
    rows = read_sweep_csv(cfg.csv)
    a = np.array([float(r["a"]) for r in rows])
    D_all = a + np.array([float(r["D_minus_a"]) for r in rows])
    D = float(D_all[0]) if len(rows) else float("nan")
    col = "eps" if cfg.target == "eps_law" else "E_plus_2m"
    y = np.array([float(r[col]) for r in rows])
    keep = (D - a) >= 3.0 * cfg.uncertainty
    fit = ex.fit_arrays(a[keep], y[keep], cfg.target, D, cfg.m)
    print(
        f"{cfg.target}: exponent {fit.exponent:.6g}  prefactor {fit.prefactor:.6g}  "
        f"r^2 {fit.r_squared:.6g}  d_implied {fit.d_implied:.6g}"
    )
    return {"D2": D, **fit.summary()}, True


COMMANDS = {
    "constant": cmd_constant,
    "minimize": cmd_minimize,
    "sweep": cmd_sweep,
    "binding": cmd_binding,
    "collapse": cmd_collapse,
    "dstar": cmd_dstar,
    "tail": cmd_tail,
    "fit": cmd_fit,
}


def build_parser():
    p = _Parser(prog="relfermi", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, default=None, type=lambda s, k=f.name: _coerce(k, s))
        else:
            p.add_argument(flag, dest=f.name, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    values = read_config(args.config) if args.config else {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name)
        if raw is None:
            continue
        try:
            values[f.name] = raw if isinstance(raw, bool) else _coerce(f.name, str(raw))
        except ValueError as err:
            raise ConfigError(f"--{f.name.replace('_', '-')}: {err}") from None
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except ConfigError as err:
        print(f"relfermi: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    run = new_run_dir(output_root(cfg), args.command)
    write_config(os.path.join(run, "config.txt"), cfg)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        outputs, converged = COMMANDS[args.command](cfg, run)
        if not converged:
            code = EXIT_NOT_CONVERGED
    except ConfigError as err:
        print(f"relfermi: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InsufficientRecords, NotConverged, MaxItersExceeded) as err:
        print(f"relfermi: {type(err).__name__}: {err}", file=sys.stderr)
        outputs, code = {"error": type(err).__name__, "message": str(err)}, EXIT_NOT_CONVERGED
    except (InvariantViolation, DivergingObjective, RelFermiError) as err:
        print(f"relfermi: invariant violation: {err}", file=sys.stderr)
        write_json(
            os.path.join(run, "diagnostic.json"),
            {"error": type(err).__name__, "message": str(err), "traceback": traceback.format_exc()},
        )
        outputs, code = {"error": type(err).__name__, "message": str(err)}, EXIT_INVARIANT
    doc = result_document(args.command, cfg, outputs, started, time.perf_counter() - t0)
    doc["exit_code"] = code
    write_json(os.path.join(run, "result.json"), doc)
    print(f"results in {run}")
    return code


if __name__ == "__main__":
    sys.exit(main())
