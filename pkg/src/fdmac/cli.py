"""Command-line sweeps: analytical model, simulation, FD gain and cross-validation.

Every command writes a CSV with a fixed column set plus a ``.config.json``
sidecar holding the resolved configuration, seeds and code version. With
``--figures DIR`` matplotlib figures of the sweep are rendered as well.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from . import fd_model as fdm
from . import hd_model as hdm
from . import simcore, topology as topo
from .timing import PhyParams, derive_timing

COLUMNS = ("mode,engine,topology,n,n_c,n_h,W,seed,slots,throughput_client,throughput_ap,"
           "throughput_system,gain,gain_estimate,alpha,beta,p,alpha_ap,beta_ap,p_ap,residual,"
           "ci_halfwidth").split(",")
WORKERS_ENV = "FDMAC_WORKERS"
EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VALIDATION = 0, 1, 2, 3

PHY_KEYS = {f.name for f in fields(PhyParams)}


@dataclass
class RunConfig:
    mode: str = "fd"
    engine: str = "model"
    topology: str = "ring"
    n: list = field(default_factory=lambda: [20])
    n_h: list = field(default_factory=lambda: [0, 4, 8, 12])
    W: list = field(default_factory=lambda: [128, 256, 512, 1024, 2048])
    range_m: float = 150.0
    placement: str = "uniform_area"
    topologies: int = 10
    slots: int = 10**6
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    ci_target: float = 0.01
    slot_budget: int = 0
    tol: float = 1e-10
    max_iters: int = 10_000
    tau_c_variant: str = "printed"
    attempt_basis: str = "per_slot"
    rel_tol: float = 0.07
    se_tol: float = 0.02
    phy: dict = field(default_factory=dict)
    out: str = ""
    figures: str = ""
    trace: str = ""

    def validate(self, command):
        for name in ("n", "W", "seeds"):
            if not getattr(self, name):
                raise UsageError(f"grid '{name}' is empty")
        if self.topology == "ring" and not self.n_h:
            raise UsageError("grid 'n_h' is empty")
        if self.mode not in ("fd", "hd"):
            raise UsageError("mode must be fd or hd")
        if self.engine not in ("model", "sim", "both"):
            raise UsageError("engine must be model, sim or both")
        if self.topology not in ("ring", "random"):
            raise UsageError("topology must be ring or random")
        if self.engine in ("sim", "both") and (self.slots <= 0 or not self.seeds):
            raise UsageError("simulation needs slots > 0 and at least one seed")
        if self.tau_c_variant not in fdm.TAU_C_VARIANTS:
            raise UsageError(f"tau_c_variant must be one of {fdm.TAU_C_VARIANTS}")
        if self.attempt_basis not in fdm.ATTEMPT_BASES:
            raise UsageError(f"attempt_basis must be one of {fdm.ATTEMPT_BASES}")
        unknown = set(self.phy) - PHY_KEYS
        if unknown:
            raise UsageError(f"unknown phy keys: {sorted(unknown)}")
        if self.out:
            parent = Path(self.out).resolve().parent
            if not parent.is_dir():
                raise UsageError(f"output directory {parent} does not exist")

    def timing(self):
        return derive_timing(PhyParams(**self.phy))

    def model_kw(self):
        return {"attempt_basis": self.attempt_basis}


class UsageError(Exception):
    pass


def _grid(cfg):
    pts = []
    for n in cfg.n:
        if cfg.topology == "ring":
            pts += [(n, nh, W) for nh in cfg.n_h for W in cfg.W]
        else:
            pts += [(n, None, W) for W in cfg.W]
    return pts


def _empty_row(**kw):
    row = dict.fromkeys(COLUMNS, "")
    row.update(kw)
    return row


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return v


def make_topology(cfg, n, n_h, index=0):
    if cfg.topology == "ring":
        return topo.circulant_ring(n, n_h, cfg.range_m)
    return topo.random_disk(n, cfg.range_m, seed=index, placement=cfg.placement)


# model rows

def _model_fd(cfg, n, n_h, W):
    t = cfg.timing()
    opts = fdm.SolverOptions(tol=cfg.tol, max_iters=cfg.max_iters)
    if cfg.topology == "ring":
        sc = fdm.FdScenario(n, n - 1 - n_h, n_h, W, t, cfg.tau_c_variant, cfg.attempt_basis)
        s = fdm.solve_fixed_point(sc, opts)
        return _empty_row(
            mode="fd", engine="model", topology="ring", n=n, n_c=sc.n_c, n_h=n_h, W=W,
            throughput_client=s.throughput_client, throughput_ap=s.throughput_ap,
            throughput_system=s.throughput_system, gain_estimate=fdm.gain_estimate(s, n),
            alpha=s.alpha, beta=s.beta, p=s.p, alpha_ap=s.alpha_ap, beta_ap=s.beta_ap, p_ap=s.p_ap,
            residual=s.residual)
    vals, nh, fails = [], [], []
    for k in range(cfg.topologies):
        tp = make_topology(cfg, n, None, k)
        est = fdm.random_topology_estimate(tp, W, t, opts, tau_c_variant=cfg.tau_c_variant,
                                           **cfg.model_kw())
        vals.append(est.throughput_system)
        nh.append(tp.n_h.mean())
        fails += [f"topology {k} client {i}: {msg}" for i, msg in est.failures]
    return _empty_row(mode="fd", engine="model", topology="random", n=n,
                      n_c=n - 1 - float(np.mean(nh)), n_h=float(np.mean(nh)), W=W,
                      throughput_system=float(np.mean(vals)), seed=f"topologies=0..{cfg.topologies - 1}",
                      _warnings=fails)


def _model_hd(cfg, n, n_h, W):
    t = cfg.timing()
    opts = fdm.SolverOptions(tol=cfg.tol, max_iters=cfg.max_iters)
    if cfg.topology == "ring":
        s = hdm.solve_hd(hdm.HdScenario(n, n - 1 - n_h, n_h, W, t, cfg.attempt_basis), opts)
        return _empty_row(
            mode="hd", engine="model", topology="ring", n=n, n_c=n - 1 - n_h, n_h=n_h, W=W,
            throughput_client=s.throughput_client, throughput_ap=s.throughput_ap,
            throughput_system=s.throughput_system, alpha=s.alpha, beta=0.0, p=s.p,
            alpha_ap=s.alpha_ap, beta_ap=0.0, p_ap=s.p_ap, residual=s.residual)
    vals, nh, fails = [], [], []
    for k in range(cfg.topologies):
        tp = make_topology(cfg, n, None, k)
        est = hdm.random_topology_estimate_hd(tp, W, t, opts, **cfg.model_kw())
        vals.append(est.throughput_system)
        nh.append(tp.n_h.mean())
        fails += [f"topology {k} client {i}: {msg}" for i, msg in est.failures]
    return _empty_row(mode="hd", engine="model", topology="random", n=n,
                      n_c=n - 1 - float(np.mean(nh)), n_h=float(np.mean(nh)), W=W,
                      throughput_system=float(np.mean(vals)), seed=f"topologies=0..{cfg.topologies - 1}",
                      _warnings=fails)


def model_point(args):
    cfg, mode, (n, n_h, W) = args
    try:
        return (_model_fd if mode == "fd" else _model_hd)(cfg, n, n_h, W), None
    except (fdm.ModelError, ValueError) as exc:
        row = _empty_row(mode=mode, engine="model", topology=cfg.topology, n=n,
                         n_h="" if n_h is None else n_h, W=W)
        return row, f"{mode} n={n} n_h={n_h} W={W}: {exc}"


# simulation rows

def _sim_once(cfg, mode, n, n_h, W, seed, slots):
    tp = make_topology(cfg, n, n_h, seed)
    run = simcore.run_fd if mode == "fd" else simcore.run_hd_rtscts
    trace = None
    if cfg.trace:
        trace = f"{cfg.trace}.{mode}.n{n}.nh{n_h}.W{W}.s{seed}.csv"
    r = run(tp, W, cfg.timing(), slots, seed, trace_path=trace)
    return tp, r


def _sim_row(mode, tp, r, cfg):
    return _empty_row(
        mode=mode, engine="sim", topology=cfg.topology, n=tp.n,
        n_c=float(tp.n_c.mean()) if cfg.topology == "random" else int(tp.n_c[0]),
        n_h=float(tp.n_h.mean()) if cfg.topology == "random" else int(tp.n_h[0]),
        W=r.W, seed=r.seed, slots=r.total_slots, throughput_client=r.throughput_client,
        throughput_ap=r.throughput_ap, throughput_system=r.throughput_system,
        alpha=r.alpha_client, beta=r.beta_client, p=r.p_client, alpha_ap=r.alpha_ap,
        beta_ap=r.beta_ap, p_ap=r.p_ap)


def ci_halfwidth(values, level=0.95):
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return math.inf
    return float(stats.t.ppf(0.5 + level / 2, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v)))


def aggregate(rows, mode, stop):
    keys = ("throughput_client", "throughput_ap", "throughput_system", "alpha", "beta", "p",
            "alpha_ap", "beta_ap", "p_ap")
    agg = dict(rows[0])
    agg.update(seed=f"aggregate({stop})", slots=sum(r["slots"] for r in rows))
    for k in keys:
        agg[k] = float(np.mean([r[k] for r in rows]))
    agg["ci_halfwidth"] = ci_halfwidth([r["throughput_system"] for r in rows])
    agg["mode"] = mode
    agg["_runs"] = len(rows)  # not a CSV column
    return agg


def sim_point(args):
    """Seeds for one grid point, extended until the CI target or the slot budget is hit."""
    cfg, mode, (n, n_h, W) = args
    seeds = list(cfg.seeds)
    budget = max(cfg.slot_budget, cfg.slots * len(seeds))
    rows, reports, used = [], [], 0
    next_seed = max(seeds) + 1
    stop = "budget"
    while True:
        for s in seeds:
            tp, r = _sim_once(cfg, mode, n, n_h, W, s, cfg.slots)
            rows.append(_sim_row(mode, tp, r, cfg))
            reports.append(r)
            used += cfg.slots
        thr = [r["throughput_system"] for r in rows]
        hw = ci_halfwidth(thr)
        if len(thr) >= 2 and hw <= cfg.ci_target * abs(np.mean(thr)):
            stop = "ci"
            break
        if used + cfg.slots > budget:
            break
        seeds = [next_seed]
        next_seed += 1
    return rows + [aggregate(rows, mode, stop)], reports


# commands

def _pool():
    workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return ProcessPoolExecutor(workers) if workers > 1 else None


def _map(fn, items):
    pool = _pool()
    if pool is None:
        return [fn(x) for x in items]
    with pool:
        return list(pool.map(fn, items))


def cmd_model(cfg):
    pts = _grid(cfg)
    if not pts:
        raise UsageError("empty grid")
    res = _map(model_point, [(cfg, cfg.mode, p) for p in pts])
    return [r for r, _ in res], [e for _, e in res if e]


def cmd_simulate(cfg):
    pts = _grid(cfg)
    res = _map(sim_point, [(cfg, cfg.mode, p) for p in pts])
    return [row for rows, _ in res for row in rows], []


def gain_rows(fd, hd):
    fd, hd = dict(fd), dict(hd)
    try:
        g = fd["throughput_system"] / hd["throughput_system"]
    except (TypeError, ZeroDivisionError):
        g = ""
    fd["gain"] = hd["gain"] = g
    return fd, hd


def cmd_gain(cfg):
    pts = _grid(cfg)
    rows, errors = [], []
    if cfg.engine in ("model", "both"):
        fd = _map(model_point, [(cfg, "fd", p) for p in pts])
        hd = _map(model_point, [(cfg, "hd", p) for p in pts])
        for (a, ea), (b, eb) in zip(fd, hd):
            errors += [e for e in (ea, eb) if e]
            rows += gain_rows(a, b)
    if cfg.engine in ("sim", "both"):
        fd = _map(sim_point, [(cfg, "fd", p) for p in pts])
        hd = _map(sim_point, [(cfg, "hd", p) for p in pts])
        for (a, _), (b, _) in zip(fd, hd):
            for ra, rb in zip(a, b):
                rows += gain_rows(ra, rb)
    return rows, errors


@dataclass
class Check:
    name: str
    ok: bool
    detail: str


def validation_checks(model_rows, sim_rows, reports, cfg):
    """Compare engines point by point and test the simulator invariants."""
    checks, table = [], []
    agg = {(r["n"], r["n_h"], r["W"]): r for r in sim_rows if str(r["seed"]).startswith("aggregate")}
    for m in model_rows:
        key = (m["n"], m["n_h"], m["W"])
        s = agg.get(key)
        if s is None or m["throughput_system"] == "":
            checks.append(Check(f"point {key}", False, "model or simulation missing"))
            continue
        mean = s["throughput_system"]
        rel = m["throughput_system"] / mean - 1
        se = s["ci_halfwidth"] / stats.t.ppf(0.975, max(1, s["_runs"] - 1)) / mean
        table.append((key, m["throughput_system"], mean, rel, se))
        checks.append(Check(f"model vs sim {key}", abs(rel) <= cfg.rel_tol,
                            f"model={m['throughput_system']:.4f} sim={mean:.4f} rel={rel:+.3%}"))
        checks.append(Check(f"sim SE/mean {key}", se <= cfg.se_tol, f"{se:.3%}"))
    for r in reports:
        checks.append(Check(f"slot conservation n={r.n} W={r.W} seed={r.seed}", r.slot_conservation(), ""))
        m = r.mean_hidden_collision / r.tau_V
        if r.hidden_pair_collision_span[1]:
            checks.append(Check(f"hidden collision span n={r.n} W={r.W} seed={r.seed}",
                                1.4 <= m <= 1.6, f"{m:.3f} tau_V"))
    for label, rows in (("model", model_rows), ("sim", list(agg.values()))):
        by = {}
        for r in rows:
            if r["throughput_system"] != "":
                by.setdefault((r["n"], r["n_h"]), []).append((r["W"], r["throughput_system"]))
        for (n, nh), pts in sorted(by.items()):
            if len(pts) >= 3 and nh:
                best = max(pts, key=lambda x: x[1])[0]
                checks.append(Check(f"{label} peak n={n} n_h={nh}", best == 512, f"argmax W={best}"))
    return checks, table


def cmd_validate(cfg):
    pts = _grid(cfg)
    model = _map(model_point, [(cfg, cfg.mode, p) for p in pts])
    sims = _map(sim_point, [(cfg, cfg.mode, p) for p in pts])
    model_rows = [r for r, _ in model]
    sim_rows, reports = [], []
    for rows, reps in sims:
        sim_rows += rows
        reports += reps
    checks, table = validation_checks(model_rows, sim_rows, reports, cfg)
    return model_rows + sim_rows, [e for _, e in model if e], checks, table


# plumbing

def code_version():
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+{sha}" if sha else __version__


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in COLUMNS})


def write_sidecar(cfg, command, path, extra=None):
    echo = {"command": command, "version": code_version(), "config": asdict(cfg),
            "timing": cfg.timing().as_dict(), "workers": os.environ.get(WORKERS_ENV, "1")}
    echo.update(extra or {})
    Path(path).write_text(json.dumps(echo, indent=2, default=str) + "\n")


def _list(conv):
    def parse(text):
        try:
            return [conv(v) for v in str(text).split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="fdmac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of RunConfig keys; flags override it")
    common.add_argument("--mode", choices=["fd", "hd"])
    common.add_argument("--engine", choices=["model", "sim", "both"])
    common.add_argument("--topology", choices=["ring", "random"])
    common.add_argument("--n", type=_list(int), help="comma-separated client counts")
    common.add_argument("--n-h", dest="n_h", type=_list(int), help="hidden terminals per client (ring)")
    common.add_argument("--W", type=_list(int), help="contention windows")
    common.add_argument("--range-m", dest="range_m", type=float)
    common.add_argument("--placement", choices=list(topo.PLACEMENTS))
    common.add_argument("--topologies", type=int, help="random topologies averaged by the model")
    common.add_argument("--slots", type=int)
    common.add_argument("--seeds", type=_list(int))
    common.add_argument("--ci-target", dest="ci_target", type=float)
    common.add_argument("--slot-budget", dest="slot_budget", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iters", dest="max_iters", type=int)
    common.add_argument("--tau-c-variant", dest="tau_c_variant", choices=list(fdm.TAU_C_VARIANTS))
    common.add_argument("--attempt-basis", dest="attempt_basis", choices=list(fdm.ATTEMPT_BASES))
    common.add_argument("--rel-tol", dest="rel_tol", type=float)
    common.add_argument("--out", help="CSV path; the sidecar goes to <out>.config.json")
    common.add_argument("--figures", help="directory for matplotlib figures")
    common.add_argument("--trace", help="prefix for per-slot event traces (simulation only)")
    common.add_argument("--phy", action="append", default=[], metavar="KEY=VALUE",
                        help="override a PHY parameter, e.g. payload_bytes=1500")
    for name, desc in (("model", "analytical throughput sweep"), ("simulate", "simulation sweep"),
                       ("gain", "FD over HD throughput"), ("validate", "model against simulation")):
        sub.add_parser(name, parents=[common], help=desc)
    t = sub.add_parser("topology", help="dump a topology")
    t.add_argument("kind", choices=["ring", "random"])
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--n-h", dest="n_h", type=int, default=0)
    t.add_argument("--range-m", dest="range_m", type=float, default=150.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--placement", choices=list(topo.PLACEMENTS), default="uniform_area")
    t.add_argument("--out")
    return p


def resolve_config(ns, command):
    base = {}
    if ns.config:
        try:
            base = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise UsageError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    bad = set(base) - known
    if bad:
        raise UsageError(f"unknown config keys: {sorted(bad)}")
    if command == "validate":
        base = {"engine": "both", "W": [256, 512, 1024], "slots": 10**7, **base}
    cfg = RunConfig(**base)
    for k in known - {"phy"}:
        v = getattr(ns, k, None)
        if v is not None:
            setattr(cfg, k, v)
    for item in ns.phy:
        key, _, val = item.partition("=")
        if not val:
            raise UsageError(f"--phy expects KEY=VALUE, got {item!r}")
        cfg.phy[key] = float(val) if "." in val or "e" in val else int(val)
    for k in ("n", "n_h", "W", "seeds"):
        v = getattr(cfg, k)
        setattr(cfg, k, [v] if isinstance(v, int) else list(v))
    if not cfg.out:
        cfg.out = f"{command}.csv"
    cfg.validate(command)
    try:
        cfg.timing()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _topology_cmd(ns):
    try:
        if ns.kind == "ring":
            tp = topo.circulant_ring(ns.n, ns.n_h, ns.range_m)
        else:
            tp = topo.random_disk(ns.n, ns.range_m, ns.seed, ns.placement)
    except topo.TopologyError as exc:
        print(f"fdmac: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = tp.dumps()
    if ns.out:
        Path(ns.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None):
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help and argparse usage errors
        return exc.code
    if ns.command == "topology":
        return _topology_cmd(ns)
    try:
        cfg = resolve_config(ns, ns.command)
    except UsageError as exc:
        print(f"fdmac: {exc}", file=sys.stderr)
        return EXIT_USAGE
    extra, code = {}, EXIT_OK
    if ns.command == "model":
        rows, errors = cmd_model(cfg)
    elif ns.command == "simulate":
        rows, errors = cmd_simulate(cfg)
    elif ns.command == "gain":
        rows, errors = cmd_gain(cfg)
    else:
        rows, errors, checks, table = cmd_validate(cfg)
        print(f"{'point (n, n_h, W)':<22}{'model':>9}{'sim':>9}{'rel':>9}{'SE/mean':>9}")
        for key, m, s, rel, se in table:
            print(f"{str(key):<22}{m:>9.4f}{s:>9.4f}{rel:>+9.2%}{se:>9.2%}")
        failed = [c for c in checks if not c.ok]
        for c in checks:
            print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}  {c.detail}")
        extra["checks"] = [asdict(c) for c in checks]
        if failed:
            code = EXIT_VALIDATION
    warnings = [w for r in rows for w in r.get("_warnings", [])]
    write_csv(rows, cfg.out)
    write_sidecar(cfg, ns.command, cfg.out + ".config.json",
                  {"errors": errors, "warnings": warnings, **extra})
    for w in warnings:
        print(f"fdmac: warning: excluded from average: {w}", file=sys.stderr)
    if cfg.figures:
        from .figures import render
        for f in render(rows, cfg.figures, Path(cfg.out).stem, ns.command):
            print(f"figure: {f}", file=sys.stderr)
    for e in errors:
        print(f"fdmac: solver failure: {e}", file=sys.stderr)
    if errors and code == EXIT_OK:
        code = EXIT_SOLVER
    return code


if __name__ == "__main__":
    sys.exit(main())
