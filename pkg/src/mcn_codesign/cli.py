"""Command line front end: analyze, codesign, schedule-search, simulate.

Exit codes: 0 success, 2 infeasible, 3 schedule budget overflow, 4 config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from functools import partial
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from . import network as nw
from .config import (
    ConfigError,
    build_problem,
    config_hash,
    graph,
    has_observability,
    read_config,
    schedule_choice,
    single_schedule,
)
from .network import Scheduling
from .optimize import (
    CodesignError,
    CodesignProblem,
    CodesignSolution,
    brute_force_codesign,
    codesign,
    design_loop,
    evaluate_design,
)
from .scheduler import (
    BudgetExceeded,
    describe,
    enumerate_schedules,
    find_plateau,
    is_non_increasing,
    parse_sweep,
    rate_sweep,
    schedule_search,
)
from .synthesis import step_response

EXIT_OK, EXIT_INFEASIBLE, EXIT_BUDGET, EXIT_CONFIG = 0, 2, 3, 4


class ReplayError(ValueError):
    pass


# ---------------------------------------------------------------------------
# serialization helpers


def _num(x: Any) -> Any:
    """JSON-safe number: non-finite floats become strings."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return x


def jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in obj]
    return _num(obj)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)  # RFC 4180: CRLF line ends, minimal quoting
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _edge_weights(weights: Mapping | None) -> dict[str, float] | None:
    if weights is None:
        return None
    return {nw.edge_label(e): float(w) for e, w in sorted(weights.items(), key=lambda kv: nw.edge_key(kv[0]))}


def _parse_edge_weights(d: Mapping[str, float] | None):
    if d is None:
        return None
    return {tuple(k.split("->")): float(v) for k, v in d.items()}


def svg_plot(k: np.ndarray, series: Mapping[str, np.ndarray], title: str = "") -> str:
    """Minimal static line plot; no external assets."""
    W, H, pad = 640, 360, 48
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    k = np.asarray(k, dtype=float)
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    lo, hi = float(ys.min()), float(ys.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    x0, x1 = float(k.min()), float(k.max())
    if x1 == x0:
        x1 = x0 + 1.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def py(v):
        return H - pad - (v - lo) / (hi - lo) * (H - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>']
    if lo < 0 < hi:
        out.append(f'<line x1="{pad}" y1="{py(0):.2f}" x2="{W - pad}" y2="{py(0):.2f}" stroke="#999" '
                   'stroke-dasharray="4 3"/>')
    for v, anchor in ((lo, H - pad), (hi, pad)):
        out.append(f'<text x="{pad - 4}" y="{anchor + 4}" font-size="11" text-anchor="end">{v:.4g}</text>')
    for v in (x0, x1):
        out.append(f'<text x="{px(v):.2f}" y="{H - pad + 16}" font-size="11" text-anchor="middle">{v:.0f}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 8}" font-size="12" text-anchor="middle">k</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="20" font-size="13" text-anchor="middle">{title}</text>')
    for i, (name, v) in enumerate(series.items()):
        c = colors[i % len(colors)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(k, np.asarray(v, dtype=float)))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - pad - 4}" y="{pad + 14 * i}" font-size="12" fill="{c}" '
                   f'text-anchor="end">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# report pieces


def network_report(profile: nw.DelayProfile, sched: Scheduling) -> dict:
    G = nw.network_tf(profile, sched.frame_duration)
    return {
        "tf_num": [float(v) for v in G.num.descending()],
        "tf_den": [float(v) for v in G.den.descending()],
        "delays": list(profile.delays),
        "gamma": {str(d): profile.gamma[d] for d in profile.delays} if profile.gamma is not None else None,
        "period": sched.period,
        "frame_duration_s": sched.frame_duration,
        "total_delay_s": sched.frame_duration,
        "schedule": describe(sched),
        "paths": {str(d): [list(p) for p in profile.paths_by_delay[d]] for d in profile.delays},
    }


def _rates(rep: nw.RateReport | None) -> dict | None:
    if rep is None:
        return None
    key = (lambda k: nw.edge_label(k)) if rep.model == 1 else str
    return {key(k): {"alpha": rep.alphas[k], "bits": rep.bits[k], "rate_hz": rep.rates[k]} for k in rep.rates}


def metrics_report(ev) -> dict:
    m = ev.metrics
    return {
        "l2": m.l2, "l2_sq": m.l2_sq, "overshoot_y": m.overshoot_y, "overshoot_u": m.overshoot_u,
        "response_time": m.response_time, "nu": m.nu, "settled_at": m.settled_at,
        "deadbeat_residual": ev.deadbeat_residual, "constraints": ev.constraints,
        "rates_controllability": _rates(ev.rates_R), "rates_observability": _rates(ev.rates_O),
        "max_rate_hz": max(list(ev.rates_R.rates.values()) + (list(ev.rates_O.rates.values()) if ev.rates_O else [])),
    }


def _certificate(sol: CodesignSolution) -> dict | None:
    if sol.stage1 is not None and sol.stage1.status != "optimal":
        return sol.stage1.certificate
    return None


def solution_record(cfg_hash: str, sol: CodesignSolution) -> dict | None:
    if sol.recovery is None or sol.evaluation is None:
        return None
    return {
        "config_hash": cfg_hash,
        "c": list(sol.evaluation.controller.c),
        "d": list(sol.evaluation.controller.d),
        "weights_controllability": _edge_weights(sol.recovery.weights_R),
        "weights_observability": _edge_weights(sol.recovery.weights_O),
    }


def _base_report(cmd: str, cfg: dict, args) -> dict:
    return {"command": cmd, "version": __version__, "config": cfg, "config_hash": config_hash(cfg),
            "seed": args.seed}


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if getattr(args, "model", None) is not None:
        cfg["model"] = args.model
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(cfg: dict, args, out: Path) -> int:
    report = _base_report("analyze", cfg, args)
    nets = {}
    for kind in ("controllability", "observability"):
        if kind == "observability" and not has_observability(cfg):
            continue
        sched = single_schedule(cfg, kind)
        g = graph(cfg, kind)
        if g.weights is None:
            raise ConfigError(f"/networks/{kind}/weights", "analyze needs explicit or preset weights")
        prof = nw.delay_profile(g, sched, g.weights)
        entry = network_report(prof, sched)
        sep = nw.check_delay_separation(g, sched)
        entry["delay_separation"] = {"ok": sep.ok, "node": sep.node,
                                     "edges": [nw.edge_label(e) for e in sep.edges] if sep.edges else None}
        q = cfg["quantization"]
        quant = nw.QuantizationSpec(q["delta_u"], q["u_max"]) if kind == "controllability" else \
            nw.QuantizationSpec(q["delta_y"], q["y_max"])
        for model in (1, 2):
            try:
                alphas = nw.totals(nw.alpha_links(g, sched, g.weights) if model == 1 else
                                   nw.alpha_nodes(g, sched, g.weights))
                if model == 2:
                    alphas = {v: a for v, a in alphas.items() if v != g.source}
                entry[f"rates_model{model}"] = _rates(nw.rates(alphas, quant, sched.slot_duration, model))
            except nw.RateModelError as exc:
                entry[f"rates_model{model}"] = {"error": str(exc)}
        nets[kind] = entry
    report["networks"] = nets
    report["status"] = "ok"
    _write_json(out / "report.json", report)
    for kind, e in nets.items():
        print(f"{kind}: G(z) num={e['tf_num']} den={e['tf_den']} delays={e['delays']} "
              f"total delay {e['total_delay_s'] * 1e3:.6g} ms")
    return EXIT_OK


def _emit_trace(out: Path, p: CodesignProblem, rec: dict, horizon: int | None, title: str) -> tuple[Path, int]:
    dl = design_loop(p, rec["d"], rec["c"], _parse_edge_weights(rec["weights_controllability"]),
                     _parse_edge_weights(rec.get("weights_observability")))
    h = horizon if horizon is not None else dl.loop.l + 10
    if h < dl.loop.l:
        raise ReplayError(f"horizon {h} is shorter than the response time l = {dl.loop.l}")
    tr = step_response(dl.loop, p.amplitude, h, p.reference_lead)
    rows = [(int(k), float(r), float(u), float(y), float(e)) for k, r, u, y, e in zip(tr.k, tr.r, tr.u, tr.y, tr.e)]
    path = out / "trace.csv"
    write_csv(path, ["k", "r", "u", "y", "e"], rows)
    (out / "plot.svg").write_text(svg_plot(tr.k, {"y": tr.y, "e": tr.e}, title))
    return path, dl.loop.l


def cmd_codesign(cfg: dict, args, out: Path) -> int:
    p = build_problem(cfg, single_schedule(cfg, "controllability"), single_schedule(cfg, "observability"))
    sol = codesign(p)
    report = _base_report("codesign", cfg, args)
    report.update(status=sol.status, message=sol.message, diagnostics=sol.diagnostics)
    if sol.convexity is not None:
        cv = sol.convexity
        report["convexity"] = {"convexifiable": cv.convexifiable, "path": cv.path, "naive": cv.naive,
                               "reasons": list(cv.reasons), "stage2_guaranteed": cv.stage2_guaranteed}
    if sol.stage1 is not None and sol.stage1.status == "optimal":
        report["stage1_value"] = sol.stage1.value
    cert = _certificate(sol)
    if cert:
        report["certificate"] = cert
        report["infeasible_stage"] = "stage1"
    elif sol.status == "stage2_infeasible":
        report["infeasible_stage"] = "stage2"
    rec = solution_record(report["config_hash"], sol)
    if rec is not None:
        # recompute everything from the emitted coefficients and weights
        ev = evaluate_design(p, rec["d"], rec["c"], _parse_edge_weights(rec["weights_controllability"]),
                             _parse_edge_weights(rec["weights_observability"]))
        report["solution"] = rec | {"gamma_controllability": ev.gamma_R, "gamma_observability": ev.gamma_O}
        report["metrics"] = metrics_report(ev)
        dl = design_loop(p, rec["d"], rec["c"], _parse_edge_weights(rec["weights_controllability"]),
                         _parse_edge_weights(rec["weights_observability"]))
        report["networks"] = {"controllability": network_report(dl.profile_R, p.R.sched)}
        if dl.profile_O is not None:
            report["networks"]["observability"] = network_report(dl.profile_O, p.O.sched)
        _write_json(out / "solution.json", rec)
        _emit_trace(out, p, rec, cfg.get("horizon"), f"step response ({sol.status})")
    if args.oracle:
        try:
            g = brute_force_codesign(p)
            report["oracle"] = {"l2": math.sqrt(g.value) if math.isfinite(g.value) else math.inf,
                                "evaluated": g.evaluated, "feasible": g.feasible, "mode": g.mode}
        except CodesignError as exc:
            report["oracle"] = {"error": str(exc)}
    _write_json(out / "report.json", report)
    if sol.feasible:
        m = report["metrics"]
        print(f"{sol.status}: L2 = {m['l2']:.6g}, O_y = {m['overshoot_y']:.6g}, O_u = {m['overshoot_u']:.6g}, "
              f"l = {m['response_time']}, max rate = {m['max_rate_hz']:.6g} Hz")
        return EXIT_OK
    print(f"{sol.status}: {sol.message}", file=sys.stderr)
    return EXIT_INFEASIBLE


def _candidates(cfg: dict, kind: str, pi_max: int | None):
    if kind == "observability" and not has_observability(cfg):
        return [None], ["-"]
    choice = schedule_choice(cfg, kind)
    if choice.mode != "search":
        return list(choice.schedules), list(choice.ids)
    budget = choice.budget or 10**6
    scheds = enumerate_schedules(graph(cfg, kind), choice.interference, pi_max or choice.pi_max,
                                 cfg["slot_duration"], budget)
    return scheds, [f"{kind[0]}{i}" for i in range(len(scheds))]


def _pair_builder(cfg: dict, sR: Scheduling, sO: Scheduling | None) -> CodesignProblem:
    return build_problem(cfg, sR, sO)


def cmd_schedule_search(cfg: dict, args, out: Path) -> int:
    cand_R, ids_R = _candidates(cfg, "controllability", args.pi_max)
    cand_O, ids_O = _candidates(cfg, "observability", args.pi_max)
    report = _base_report("schedule-search", cfg, args)
    if not cand_R or not cand_O:
        report.update(status="infeasible", message="no admissible schedule")
        _write_json(out / "report.json", report)
        print("no admissible schedule", file=sys.stderr)
        return EXIT_INFEASIBLE
    res = schedule_search(None, cand_R, cand_O, workers=args.workers, oracle=args.oracle,
                          builder=partial(_pair_builder, cfg))
    nO = len(cand_O)
    pair_id = [f"{ids_R[i // nO]}" + (f"/{ids_O[i % nO]}" if nO > 1 else "")
               for i in range(len(res.evaluated))]
    optimal = set(res.optimal_set)
    rows, ranking = [], []
    for rank, i in enumerate(res.ordering, 1):
        ev = res.evaluated[i]
        ok = ev.solution is not None and ev.solution.evaluation is not None and ev.solution.feasible
        m = ev.solution.evaluation.metrics if ok else None
        mx = metrics_report(ev.solution.evaluation)["max_rate_hz"] if ok else math.inf
        delays = " ".join(map(str, ev.delays_R)) + (" | " + " ".join(map(str, ev.delays_O)) if ev.delays_O else "")
        row = [rank, pair_id[i], ev.period, delays, float(ev.l2), ev.status,
               float(m.overshoot_y) if ok else math.inf, float(m.overshoot_u) if ok else math.inf,
               m.response_time if ok else "", float(mx), "*" if i in optimal else ""]
        if args.oracle:
            row.append(float(ev.oracle_l2) if ev.oracle_l2 is not None else "")
        rows.append(row)
        ranking.append({"rank": rank, "id": pair_id[i], "period": ev.period, "delays_R": ev.delays_R,
                        "delays_O": ev.delays_O, "l2": ev.l2, "status": ev.status, "optimal": i in optimal,
                        "schedule_R": describe(ev.sched_R),
                        "schedule_O": describe(ev.sched_O) if ev.sched_O is not None else None,
                        "oracle_l2": ev.oracle_l2})
    header = ["rank", "schedule_id", "period", "delays", "l2", "status", "overshoot_y", "overshoot_u",
              "response_time", "max_rate_hz", "optimal"] + (["oracle_l2"] if args.oracle else [])
    write_csv(out / "ranking.csv", header, rows)
    report.update(status="ok" if optimal else "infeasible", ranking=ranking,
                  optimal_set=[pair_id[i] for i in res.ordering if i in optimal])
    sweep_spec = args.rate_sweep or cfg.get("sweep")
    if sweep_spec:
        bounds = parse_sweep(sweep_spec)
        targets = res.ordering if len(res.evaluated) <= 16 else [i for i in res.ordering if i in optimal]
        srows, summary = [], {}
        for i in targets:
            ev = res.evaluated[i]
            pts = rate_sweep(_pair_builder(cfg, ev.sched_R, ev.sched_O), bounds)
            vals = [pt.l2 for pt in pts]
            start = find_plateau(vals)
            summary[pair_id[i]] = {"non_increasing": is_non_increasing(vals),
                                   "plateau_from_hz": pts[start].bound if start is not None else None}
            srows += [[pair_id[i], pt.bound, pt.l2, pt.status, pt.lower_bound] for pt in pts]
        write_csv(out / "sweep.csv", ["schedule_id", "rate_bound_hz", "l2", "status", "stage1_bound"], srows)
        report["sweep"] = summary
    _write_json(out / "report.json", report)
    for r in rows[:20]:
        print(f"{r[0]:>4} {r[1]:<12} Pi={r[2]} D=[{r[3]}] L2={fmt(r[4])} {r[5]} {r[10]}")
    if "sweep" in report:
        for k, v in report["sweep"].items():
            print(f"sweep {k}: non-increasing={v['non_increasing']} plateau from {v['plateau_from_hz']} Hz")
    return EXIT_OK if optimal else EXIT_INFEASIBLE


def cmd_simulate(cfg: dict, args, out: Path) -> int:
    if not args.solution:
        raise ConfigError("", "simulate needs --solution")
    try:
        rec = json.loads(Path(args.solution).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("", f"cannot read solution file: {exc}") from None
    h = config_hash(cfg)
    if rec.get("config_hash") != h:
        raise ReplayError(f"solution was produced for config {rec.get('config_hash')}, this config hashes to {h}")
    p = build_problem(cfg, single_schedule(cfg, "controllability"), single_schedule(cfg, "observability"))
    horizon = args.horizon if args.horizon is not None else cfg.get("horizon")
    path, l = _emit_trace(out, p, rec, horizon, "replayed step response")
    print(f"wrote {path} (response time l = {l})")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "codesign": cmd_codesign, "schedule-search": cmd_schedule_search,
            "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcn-codesign", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="problem config (JSON) or an emitted report.json")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--model", type=int, choices=(1, 2), help="override the computational model")
        sp.add_argument("--pi-max", type=int, help="override the maximum period of a schedule search")
        sp.add_argument("--rate-sweep", metavar="LO:HI:STEP", help="rate-bound sweep in Hz")
        sp.add_argument("--seed", type=int, default=0, help="reserved; no numeric effect")
        sp.add_argument("--oracle", action="store_true", help="cross-check with the brute-force grid")
        sp.add_argument("--workers", type=int, default=1, help="processes for schedule evaluation")
        sp.add_argument("--solution", help="solution.json to replay (simulate)")
        sp.add_argument("--horizon", type=int, help="samples to simulate (simulate)")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(read_config(args.config), args)
        if args.rate_sweep:
            parse_sweep(args.rate_sweep)
        if args.pi_max is not None and args.pi_max < 1:
            raise ConfigError("", "--pi-max must be at least 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error at {exc.pointer}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReplayError, CodesignError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget overflow: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
