"""Command-line front end: ``demixer <mode> --config FILE [--set key=value ...]``.

Configuration files are flat ``key = value`` lines; ``#`` starts a comment.
Every mode writes CSV data, a JSON summary and, for optimizer runs, one
checkpoint per grid point under ``<out>/checkpoints``.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
import json
import logging
import math
import os
import sys

import numpy as np

from . import bethe
from .cmps import load_state, save_state
from .errors import ConfigError, DemixerError, NoTransitionInRange
from .luttinger import VelocityPoint, locate_transition, velocities, weak_coupling_estimate
from .observables import FieldParams, correlation_curve, correlation_length, log_grid, \
    write_correlation_csv
from .optimize import OptimizerConfig, WarmStart, minimize

log = logging.getLogger("demixer")

SCHEMA_VERSION = 1
MODES = ("single", "pair", "sweep", "correlations", "velocities", "bethe")
EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    items = [t for t in text.replace(",", " ").split() if t]
    return [float(t) for t in items]


# key -> (parser, default)
KEYS = {
    "c": (float, 1.5),
    "rho": (float, 0.5),
    "g_over_c": (_floats, None),
    "g_min": (float, None),
    "g_max": (float, None),
    "g_step": (float, None),
    "gammas": (_floats, [0.52, 1.5, 2.38, 3.0]),
    "D": (int, 5),
    "P": (int, 1),
    "grad_tol": (float, 1e-6),
    "max_iters": (int, 5000),
    "restarts": (int, 5),
    "seed": (int, 0),
    "init_scale": (float, 0.5),
    "mu_tol": (float, 1e-3),
    "fd_step": (float, 1e-5),
    "penalty": (float, 10.0),
    "max_outer": (int, 40),
    "memory": (int, 30),
    "inner_iters": (int, 500),
    "continuation": (_bool, True),
    "seed_demixed": (_bool, True),
    "velocities": (_bool, False),
    "h": (float, None),
    "richardson": (_bool, True),
    "x_min": (float, 1e-2),
    "x_max": (float, 1e4),
    "n_x": (int, 200),
    "workers": (int, 1),
}
OPTIMIZER_KEYS = [f.name for f in fields(OptimizerConfig)]


@dataclass(frozen=True)
class RunConfig:
    mode: str
    values: dict
    grid: tuple
    out: str
    workers: int

    @property
    def params(self):
        v = self.values
        return FieldParams(v["c"], 0.0, v["rho"])

    @property
    def optimizer(self):
        return OptimizerConfig(**{k: self.values[k] for k in OPTIMIZER_KEYS})

    def field(self, g_over_c):
        v = self.values
        return FieldParams(v["c"], g_over_c * v["c"], v["rho"])

    def resolved(self):
        out = dict(self.values)
        out["grid"] = list(self.grid)
        return out


def parse_config_text(text, source="<config>"):
    """``{key: (value, line)}`` from flat ``key = value`` text."""
    found = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}", lineno)
        if key in found:
            raise ConfigError(f"{source}: duplicate key {key!r}", lineno)
        try:
            found[key] = (KEYS[key][0](value), lineno)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}", lineno) from None
    return found


def _grid(v):
    if v["g_over_c"] is not None:
        if any(v[k] is not None for k in ("g_min", "g_max", "g_step")):
            raise ValueError("give either g_over_c or g_min/g_max/g_step, not both")
        return [float(g) for g in v["g_over_c"]]
    lo, hi, step = v["g_min"], v["g_max"], v["g_step"]
    if lo is None and hi is None and step is None:
        return []
    if lo is None or hi is None:
        raise ValueError("g_min and g_max must both be set")
    if lo == hi:
        return [lo]
    if step is None or step <= 0:
        raise ValueError("g_step must be positive")
    n = math.floor((hi - lo) / step + 1e-9)
    return [round(lo + k * step, 12) for k in range(n + 1)]


def build_config(mode, text, overrides=(), out=None, workers=None, source="<config>"):
    """Validated :class:`RunConfig`; raises :class:`ConfigError`."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    found = parse_config_text(text, source)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (t.strip() for t in item.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"--set: unknown key {key!r}")
        try:
            found[key] = (KEYS[key][0](value), None)
        except ValueError as exc:
            raise ConfigError(f"--set: bad value for {key!r}: {exc}") from None
    values = {k: d for k, (_, d) in KEYS.items()}
    values.update({k: v for k, (v, _) in found.items()})
    if workers is not None:
        values["workers"] = workers

    def where(*keys):
        lines = [found[k][1] for k in keys if k in found and found[k][1] is not None]
        return min(lines) if lines else None

    checks = [
        (("c",), values["c"] > 0, "c must be positive"),
        (("rho",), values["rho"] > 0, "rho must be positive"),
        (("D",), values["D"] >= 1, "D must be >= 1"),
        (("P",), values["P"] >= 1, "P must be >= 1"),
        (("workers",), values["workers"] >= 1, "workers must be >= 1"),
        (("n_x",), values["n_x"] >= 2, "n_x must be >= 2"),
        (("x_min", "x_max"), 0 < values["x_min"] < values["x_max"], "need 0 < x_min < x_max"),
        (("gammas",), all(gm > 0 for gm in values["gammas"]), "gammas must be positive"),
    ]
    for keys, ok, msg in checks:
        if not ok:
            raise ConfigError(msg, where(*keys))
    try:
        OptimizerConfig(**{k: values[k] for k in OPTIMIZER_KEYS})
    except ValueError as exc:
        raise ConfigError(str(exc), where(*OPTIMIZER_KEYS)) from None

    grid_keys = ("g_over_c", "g_min", "g_max", "g_step")
    if mode == "bethe":
        grid = tuple(values["gammas"])
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("gammas must be non-empty and increasing", where("gammas"))
    elif mode == "single":
        grid = (0.0,)
    else:
        try:
            grid = tuple(_grid(values))
        except ValueError as exc:
            raise ConfigError(str(exc), where(*grid_keys)) from None
        if not grid:
            raise ConfigError("the g/c grid is empty", where(*grid_keys))
        if any(g < 0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("the g/c grid must be increasing and non-negative", where(*grid_keys))
    return RunConfig(mode, values, grid, out or "results", values["workers"])


# -- formatting ---------------------------------------------------------------------------

def fmt(x):
    """Shortest round-trip text for CSV cells."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row.get(k)) for k in header) + "\n")


SWEEP_COLUMNS = ["g_over_c", "e0", "rho1", "rho2", "C11_0", "C22_0", "C12_0", "vplus_sq",
                 "vminus_sq", "grad_norm", "converged", "iterations", "seed_used"]
VELOCITY_COLUMNS = ["g_over_c", "vplus_sq", "vminus_sq", "vminus_sq_weak", "C12_0", "gamma",
                    "D", "P", "h"]
SINGLE_COLUMNS = ["c", "rho", "gamma", "D", "e0", "e0_bethe", "rel_error", "rho_measured",
                  "grad_norm", "converged", "iterations", "seed_used"]


def _record(g_over_c, res, vel=None):
    f = res.observables.fluct
    return {"g_over_c": g_over_c, "e0": res.e0_target, "rho1": res.rho[0], "rho2": res.rho[1],
            "C11_0": f[0, 0], "C22_0": f[1, 1], "C12_0": f[0, 1],
            "vplus_sq": None if vel is None else vel.v_plus_sq,
            "vminus_sq": None if vel is None else vel.v_minus_sq,
            "grad_norm": res.grad_norm, "converged": res.converged,
            "iterations": res.iterations, "seed_used": res.seed_used}


# -- per-point tasks ---------------------------------------------------------------------

def _checkpoint_path(cfg, index):
    return os.path.join(cfg.out, "checkpoints", f"{cfg.mode}_{index:04d}.json")


def _save_checkpoint(cfg, index, g_over_c, res, record):
    save_state(_checkpoint_path(cfg, index), res.params, g_over_c=g_over_c,
               theta=[float(t) for t in res.theta], mu=[float(m) for m in res.mu],
               record={k: (bool(v) if isinstance(v, (bool, np.bool_)) else v)
                       for k, v in record.items()})


def _load_checkpoint(cfg, index, g_over_c):
    path = _checkpoint_path(cfg, index)
    if not os.path.exists(path):
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
        load_state(path)
    except (OSError, ValueError, KeyError, DemixerError):
        return None
    if rec.get("g_over_c") != g_over_c or not rec["record"].get("converged"):
        return None
    return rec


def _ground_state(cfg, g_over_c, init):
    v = cfg.values
    p = cfg.field(g_over_c)
    seed = v["seed_demixed"] and p.g > 2 * p.c
    return minimize(p, cfg.optimizer, "pair", v["D"], v["P"], init=init, seed_demixed=seed)


def _pair_task(args):
    cfg, index, g_over_c, init = args
    res = _ground_state(cfg, g_over_c, init)
    vel = None
    if cfg.values["velocities"]:
        vel, _ = velocities(cfg.field(g_over_c), cfg=cfg.optimizer, h=cfg.values["h"],
                            D=cfg.values["D"], P=cfg.values["P"],
                            richardson=cfg.values["richardson"], init=res, strict=False)
    record = _record(g_over_c, res, vel)
    _save_checkpoint(cfg, index, g_over_c, res, record)
    return record, res.warm_start()


def _correlation_task(args):
    cfg, index, g_over_c, init = args
    v = cfg.values
    res = _ground_state(cfg, g_over_c, init)
    record = _record(g_over_c, res)
    xs = log_grid(v["x_max"], v["n_x"], v["x_min"])
    curve = correlation_curve(res.state, xs)
    record["correlation_length"] = correlation_length(res.state)
    write_correlation_csv(os.path.join(cfg.out, f"correlations_{index:04d}.csv"), curve)
    _save_checkpoint(cfg, index, g_over_c, res, record)
    return record, res.warm_start()


def _velocity_task(args):
    cfg, index, g_over_c, init = args
    v = cfg.values
    p = cfg.field(g_over_c)
    vel, stencils = velocities(p, cfg=cfg.optimizer, h=v["h"], D=v["D"], P=v["P"],
                               richardson=v["richardson"], init=init, strict=False)
    center = stencils[0].results[(0, 0)]
    ratio, _ = weak_coupling_estimate(v["c"], v["rho"], p.g)
    record = {"g_over_c": g_over_c, "vplus_sq": vel.v_plus_sq, "vminus_sq": vel.v_minus_sq,
              "vminus_sq_weak": ratio * bethe.sound_velocity(v["c"], v["rho"]) ** 2,
              "C12_0": vel.c12_0, "gamma": vel.gamma, "D": v["D"], "P": v["P"], "h": vel.h,
              "converged": vel.converged}
    _save_checkpoint(cfg, index, g_over_c, center, record)
    return record, center.warm_start()


TASKS = {"pair": _pair_task, "sweep": _pair_task, "correlations": _correlation_task,
         "velocities": _velocity_task}


def _run_grid(cfg, resume):
    """Records in grid order; continuation chains run sequentially."""
    task = TASKS[cfg.mode]
    chained = cfg.mode in ("sweep", "velocities") and cfg.values["continuation"]
    records = [None] * len(cfg.grid)
    warm = [None] * len(cfg.grid)
    todo = []
    for k, g in enumerate(cfg.grid):
        rec = _load_checkpoint(cfg, k, g) if resume else None
        if rec is not None:
            records[k] = rec["record"]
            warm[k] = WarmStart(np.array(rec["theta"]), np.array(rec["mu"]))
            log.info("g/c=%s restored from checkpoint", g)
        else:
            todo.append(k)
    if chained:
        for k in todo:
            init = warm[k - 1] if k > 0 else None
            log.info("g/c=%s", cfg.grid[k])
            records[k], warm[k] = task((cfg, k, cfg.grid[k], init))
    elif cfg.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            jobs = [(cfg, k, cfg.grid[k], None) for k in todo]
            for k, (rec, ws) in zip(todo, pool.map(task, jobs)):
                records[k], warm[k] = rec, ws
    else:
        for k in todo:
            log.info("g/c=%s", cfg.grid[k])
            records[k], warm[k] = task((cfg, k, cfg.grid[k], None))
    return records


def _transition(cfg, records):
    rho = cfg.values["rho"]
    trace = [(r["g_over_c"], r["C12_0"]) for r in records if r.get("C12_0") is not None]
    points = []
    if all(r.get("vminus_sq") is not None for r in records):
        points = [VelocityPoint(r["g_over_c"], r["vplus_sq"], r["vminus_sq"],
                                cfg.values["c"] / rho) for r in records]
    try:
        return locate_transition(points, trace, rho=rho, gamma=cfg.values["c"] / rho).to_dict()
    except NoTransitionInRange:
        return None


def run(cfg: RunConfig, resume=False):
    """Execute one mode; returns the exit status."""
    os.makedirs(os.path.join(cfg.out, "checkpoints"), exist_ok=True)
    v = cfg.values
    summary = {"schema_version": SCHEMA_VERSION, "mode": cfg.mode, "config": cfg.resolved()}
    status = EXIT_OK

    if cfg.mode == "bethe":
        path = os.path.join(cfg.out, "bethe.csv")
        bethe.write_table(path, cfg.grid)
        summary.update(files=["bethe.csv"], points=len(cfg.grid))
    elif cfg.mode == "single":
        p = cfg.params
        res = minimize(p, cfg.optimizer, "single", v["D"])
        ref = bethe.reference_energy(p.c, p.target_rho)
        row = {"c": p.c, "rho": p.target_rho, "gamma": p.c / p.target_rho, "D": v["D"],
               "e0": res.e0_target, "e0_bethe": ref, "rel_error": (res.e0_target - ref) / ref,
               "rho_measured": res.rho[0], "grad_norm": res.grad_norm,
               "converged": res.converged, "iterations": res.iterations,
               "seed_used": res.seed_used}
        write_csv(os.path.join(cfg.out, "single.csv"), SINGLE_COLUMNS, [row])
        save_state(_checkpoint_path(cfg, 0), res.params, theta=[float(t) for t in res.theta],
                   mu=[float(m) for m in res.mu])
        summary.update(files=["single.csv"], points=1, converged=int(res.converged))
        status = EXIT_OK if res.converged else EXIT_PARTIAL
    else:
        records = _run_grid(cfg, resume)
        name = {"pair": "pair.csv", "sweep": "sweep.csv", "correlations": "correlations.csv",
                "velocities": "velocities.csv"}[cfg.mode]
        if cfg.mode == "velocities":
            write_csv(os.path.join(cfg.out, name), VELOCITY_COLUMNS, records)
        elif cfg.mode == "correlations":
            write_csv(os.path.join(cfg.out, name), SWEEP_COLUMNS + ["correlation_length"], records)
        else:
            write_csv(os.path.join(cfg.out, name), SWEEP_COLUMNS, records)
        n_conv = sum(bool(r["converged"]) for r in records)
        files = [name]
        if cfg.mode == "correlations":
            files += [f"correlations_{k:04d}.csv" for k in range(len(records))]
        summary.update(files=files, points=len(records), converged=n_conv)
        if cfg.mode in ("sweep", "velocities"):
            summary["transition"] = _transition(cfg, records)
        status = EXIT_OK if n_conv == len(records) else EXIT_PARTIAL
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return status


def main(argv=None):
    ap = argparse.ArgumentParser(prog="demixer", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="flat key = value file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    ap.add_argument("--out", default=None, help="output directory (default: results)")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--resume", action="store_true", help="skip points with converged checkpoints")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"demixer: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = build_config(args.mode, text, args.set, args.out, args.workers, args.config)
    except ConfigError as exc:
        print(f"demixer: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg, resume=args.resume)
    except DemixerError as exc:
        print(f"demixer: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
