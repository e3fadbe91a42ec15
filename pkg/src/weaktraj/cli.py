"""Command-line entry point: ``weaktraj <command> --scenario NAME | --config FILE``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy

from . import __version__, flow, observables, weak_measure
from .config import SCENARIOS, ScenarioConfig, load_config, scenario
from .errors import ConfigError, ValidationError, WeakTrajError
from .wavepacket import axis_wavefunction, propagate_by_kernel

COMMANDS = ("simulate", "bohm", "ensemble", "weak-traj", "weak-momentum", "recurrence",
            "propagator-check", "identity-check")

WEAK_COLUMNS = ["wma_id", "t_k", "R0x", "R0y", "Re_wx", "Im_wx", "Re_wy", "Im_wy",
                "norm_overlap", "branch", "vanishing_flag", "crossing_flag", "window_overlap"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


class Writer:
    """Collects output tables and writes them with a manifest."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def table(self, name, header, rows):
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)

    def manifest(self, command, cfg: ScenarioConfig, args, extra=None):
        data = {
            "command": command,
            "config": cfg.data,
            "effective_tolerances": cfg.scaled_tolerances(args.tolerance_scale),
            "seed": cfg["seed"],
            "threads": args.threads,
            "tolerance_scale": args.tolerance_scale,
            "outputs": self.files,
            "versions": {"weaktraj": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
        }
        if extra:
            data["results"] = extra
        with open(os.path.join(self.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _pmap(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _linspace(rng):
    return np.linspace(rng[0], rng[1], rng[2])


def _time_grid(cfg):
    tm = cfg["time"]
    return np.linspace(tm["t0"], tm["t1"], tm["n"])


# commands


def cmd_simulate(cfg, args, out):
    state = cfg.superposition(scale=args.tolerance_scale)
    ts = _time_grid(cfg)
    rows = []
    for b in state.branches:
        st = b.traj.state_at(ts)
        for i, t in enumerate(ts):
            rows.append([b.label, t, *st.q[i], *st.p[i], *st.alpha[i], *st.alpha_dot[i], *st.phi[i]])
    out.table("trajectories.csv",
              ["branch", "t", "qx", "qy", "px", "py", "alpha_x", "alpha_y", "alpha_dot_x",
               "alpha_dot_y", "phi_x", "phi_y"], rows)
    from .wavepacket import norm

    out.table("norm.csv", ["t", "norm"], [[t, norm(state, t)] for t in ts])
    return {"branches": len(state)}


def _bohm_controls(cfg, args, state):
    tol = cfg.scaled_tolerances(args.tolerance_scale)
    alpha_min = min(min(b.traj.alpha_ref) for b in state.branches)
    return {"rtol": tol["bohm_rtol"], "atol": tol["bohm_atol"], "floor": tol["density_floor"],
            "max_displacement": tol["max_disp_factor"] * alpha_min}


BOHM_CHUNK = 16


def cmd_bohm(cfg, args, out):
    state = cfg.superposition(scale=args.tolerance_scale)
    tm = cfg["time"]
    t_eval = np.linspace(tm["t0"], tm["t1"], cfg["bohm"]["n_samples"])
    pts = np.asarray(cfg["bohm"]["initial_points"], float)
    ctl = _bohm_controls(cfg, args, state)
    # fixed chunking keeps the step sequence independent of the thread count
    chunks = [pts[i:i + BOHM_CHUNK] for i in range(0, len(pts), BOHM_CHUNK)]
    trajs = [tr for part in _pmap(
        lambda c: flow.integrate_bohmian_batch(state, c, tm["t0"], tm["t1"], t_eval,
                                               state_id=cfg["name"], **ctl), chunks, args.threads)
             for tr in part]
    rows = []
    for k, tr in enumerate(trajs):
        for i in range(len(tr.t)):
            rows.append([k, tr.t[i], *tr.r[i], *tr.v[i]])
    out.table("bohm.csv", ["traj_id", "t", "x", "y", "vx", "vy"], rows)
    summary = []
    for k, tr in enumerate(trajs):
        others = [flow.coincidence_distance(tr, o) for j, o in enumerate(trajs) if j != k]
        summary.append([k, *tr.x0, tr.termination, tr.t[-1], min(others) if others else np.inf])
    out.table("bohm_summary.csv", ["traj_id", "x0", "y0", "termination", "t_end",
                                   "min_distance_to_others"], summary)
    return {"trajectories": len(trajs)}


def cmd_ensemble(cfg, args, out):
    ens = cfg["ensemble"]
    state = cfg.superposition(t1=max(cfg["time"]["t1"], ens["t1"]), scale=args.tolerance_scale)
    ctl = _bohm_controls(cfg, args, state)
    res = flow.equivariance_check(state, ens["N"], ens["t0"], ens["t1"], cfg["seed"],
                                  bins=ens["bins"], n_widths=ens["n_widths"],
                                  threads=args.threads, keep_ensemble=True, **ctl)
    rows = [[i, *tr.x0, *(tr.r[-1] if tr.completed else (np.nan, np.nan)), tr.termination]
            for i, tr in enumerate(res.ensemble.trajectories)]
    out.table("ensemble.csv", ["particle_id", "x0", "y0", "x1", "y1", "termination"], rows)
    out.table("equivariance.csv", ["N", "t0", "t1", "bins", "l1_distance", "noise_baseline",
                                   "failures"],
              [[ens["N"], ens["t0"], ens["t1"], ens["bins"], res.score, res.baseline,
                sum(res.failures.values())]])
    return {"l1_distance": res.score, "noise_baseline": res.baseline}


def build_postselection(cfg, pre):
    post = cfg["postselection"]
    kind = post["kind"]
    if kind == "branch_matched":
        return weak_measure.BranchMatched(post["J"])
    if kind == "gaussian":
        return weak_measure.GaussianPacket(tuple(post["r_f"]), tuple(post["p_f"]), post["t_f"],
                                           post["delta_f"])
    p_f = post["p_f"]
    if p_f == "guiding":
        p_f = [tuple(b.traj.momentum(post["t_f"])) for b in pre.branches]
    return weak_measure.MultiBranch(tuple(post["c"]), tuple(tuple(p) for p in p_f),
                                    tuple(post["r_f"]), post["t_f"], post["delta_f"])


def wma_times(cfg):
    times = cfg["wma_grid"]["times"]
    if isinstance(times, dict):
        return np.linspace(times["start"], times["stop"], times["n"])
    return np.asarray(times, float)


def cmd_weak_traj(cfg, args, out):
    post = cfg["postselection"]
    t_end = max(cfg["time"]["t1"], post.get("t_f", 0.0) or 0.0)
    pre = cfg.superposition(t1=t_end, scale=args.tolerance_scale)
    postsel = build_postselection(cfg, pre)
    g = cfg["wma_grid"]
    times = wma_times(cfg)
    wmas_by_t = [weak_measure.wma_lattice(_linspace(g["x"]), _linspace(g["y"]), [t], g["width"],
                                          start_id=k * g["x"][2] * g["y"][2])
                 for k, t in enumerate(times)]
    thr = cfg["tolerances"]["compat_threshold"]
    chi = weak_measure.postselected_state(pre, postsel, float(np.min(times)))
    parts = _pmap(lambda ws: weak_measure.run_wma_grid(pre, chi, ws, thr), wmas_by_t, args.threads)
    records = [r for p in parts for r in p]
    rows = []
    for r in records:
        rows.append([r.wma_id, r.t_k, *r.R0, r.value[0].real, r.value[0].imag, r.value[1].real,
                     r.value[1].imag, abs(r.normalization), r.branch, r.vanishing, r.crossing,
                     abs(r.window_overlap)])
    out.table("weak_values.csv", WEAK_COLUMNS, rows)
    trajs = weak_measure.assemble_weak_trajectories(records, pre, thr, on_unassigned="collect")
    trows = []
    for wt in trajs:
        for t, p, i in zip(wt.t, wt.points, wt.wma_ids):
            trows.append([wt.branch, t, *p, i])
    out.table("weak_trajectories.csv", ["branch", "t_k", "x", "y", "wma_id"], trows)
    return {"records": len(records), "non_vanishing": sum(not r.vanishing for r in records),
            "trajectories": [str(w.branch) for w in trajs]}


def cmd_weak_momentum(cfg, args, out):
    wmo = cfg["weak_momentum"]
    state = cfg.superposition(scale=args.tolerance_scale)
    t = wmo["t"]
    rows, trows = [], []
    for k, p in enumerate(wmo["points"]):
        d = weak_measure.weak_momentum_value(state, p, t)
        v = flow.velocity_field(state, p, t)
        rows.append([k, t, *p, d[0].real, d[0].imag, d[1].real, d[1].imag, *(state.params.mass * v)])
        for eps in wmo["eps"]:
            tp = weak_measure.weak_momentum_two_point(state, p, t, eps)
            trows.append([k, eps, tp[0].real, tp[0].imag, tp[1].real, tp[1].imag,
                          float(np.max(np.abs(tp - d)))])
    out.table("weak_momentum.csv", ["point_id", "t", "x", "y", "Re_px", "Im_px", "Re_py", "Im_py",
                                    "m_vx", "m_vy"], rows)
    out.table("two_point.csv", ["point_id", "eps", "Re_px", "Im_px", "Re_py", "Im_py",
                                "abs_error"], trows)
    return {"points": len(rows)}


def cmd_recurrence(cfg, args, out):
    rec = cfg["recurrence"]
    tm = cfg["time"]
    state = cfg.superposition(scale=args.tolerance_scale)
    ts = np.linspace(tm["t0"], tm["t1"], rec["n"])
    chunks = np.array_split(ts, max(1, args.threads))
    parts = _pmap(lambda c: observables.recurrence_spectrum(
        state, c, rec["center"], rec["radius"], prominence=0.0).P if len(c) else np.array([]),
        chunks, args.threads)
    P = np.concatenate(parts)
    spectrum = observables.recurrence_spectrum_from_series(ts, P, rec["center"], rec["radius"],
                                                       rec["prominence"])
    out.table("recurrence.csv", ["t", "P"], zip(ts, P))
    out.table("peaks.csv", ["t_rec", "height"], spectrum.peaks)
    crossings = observables.classical_crossings(state, rec["center"], (tm["t0"], tm["t1"]),
                                                rec["radius"])
    out.table("crossings.csv", ["t", "branch"], crossings)
    dt = ts[1] - ts[0]
    lonely, missing = observables.match_peaks(spectrum.peak_times, [c[0] for c in crossings], 2 * dt)
    return {"peaks": len(spectrum.peaks), "crossings": len(crossings),
            "unmatched_peaks": lonely, "unmatched_crossings": missing}


def cmd_propagator_check(cfg, args, out):
    pc = cfg["propagator_check"]
    state = cfg.superposition(t1=max(cfg["time"]["t1"], pc["t1"]), scale=args.tolerance_scale)
    branch = state.branch(pc["branch"])
    x = _linspace(pc["x"])
    x0 = _linspace(pc["x0"])
    kern = propagate_by_kernel(branch, pc["axis"], x, pc["t1"], pc["t0"], x0,
                               eps_caustic=cfg["tolerances"]["eps_caustic"])
    exact = axis_wavefunction(branch, pc["axis"], x, pc["t1"])
    err = np.abs(kern - exact)
    out.table("propagator_check.csv", ["x", "Re_kernel", "Im_kernel", "Re_exact", "Im_exact",
                                       "abs_error"],
              [[xi, k.real, k.imag, e.real, e.imag, d] for xi, k, e, d in zip(x, kern, exact, err)])
    out.table("propagator_summary.csv", ["axis", "t0", "t1", "max_error"],
              [[pc["axis"], pc["t0"], pc["t1"], float(err.max())]])
    return {"max_error": float(err.max())}


def cmd_identity_check(cfg, args, out):
    ic = cfg["identity_check"]
    t_end = max(cfg["time"]["t1"], ic["t"], ic["t_post"])
    state = cfg.superposition(t1=t_end, scale=args.tolerance_scale)
    rows = []
    res = {}
    for obs in ("position", "momentum"):
        r = weak_measure.expectation_identity_check(state, obs, ic["t"], ic["t_post"], ic["n"])
        for j, ax in enumerate("xy"):
            rows.append([obs, ax, ic["t"], ic["t_post"], r.direct[j], r.weak[j],
                         abs(r.direct[j] - r.weak[j])])
        res[obs] = r.residual
    out.table("identity_check.csv", ["observable", "component", "t", "t_post", "direct", "weak",
                                     "residual"], rows)
    return res


HANDLERS = {
    "simulate": cmd_simulate,
    "bohm": cmd_bohm,
    "ensemble": cmd_ensemble,
    "weak-traj": cmd_weak_traj,
    "weak-momentum": cmd_weak_momentum,
    "recurrence": cmd_recurrence,
    "propagator-check": cmd_propagator_check,
    "identity-check": cmd_identity_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="weaktraj", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="JSON scenario file")
        src.add_argument("--scenario", choices=sorted(SCENARIOS),
                         help="shipped scenario (default static_reference)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--tolerance-scale", type=float, default=1.0,
                       help="multiplies the integrator tolerances")
    dump = sub.add_parser("show-config", help="print a fully resolved scenario")
    src = dump.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--scenario", choices=sorted(SCENARIOS))
    return parser


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else scenario(args.scenario or "static_reference")
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ValidationError(["--seed: must be an unsigned 64-bit integer"])
        cfg.data["seed"] = args.seed
    return cfg


def _error_record(exc, command):
    rec = {"error": type(exc).__name__, "message": str(exc), "command": command}
    for attr in ("line", "key", "violations"):
        if hasattr(exc, attr):
            rec[attr] = getattr(exc, attr)
    return rec


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "show-config":
            print(cfg.to_json())
            return 0
        if args.threads < 1:
            raise ValidationError(["--threads: must be >= 1"])
        if not args.tolerance_scale > 0:
            raise ValidationError(["--tolerance-scale: must be > 0"])
        out = Writer(args.out)
        results = HANDLERS[args.command](cfg, args, out)
        out.manifest(args.command, cfg, args, results)
    except (WeakTrajError, OSError, ValueError) as exc:
        rec = _error_record(exc, args.command)
        print(json.dumps(rec, sort_keys=True, default=_json_default), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    print(json.dumps({"command": args.command, "out": args.out, **(results or {})},
                     sort_keys=True, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
