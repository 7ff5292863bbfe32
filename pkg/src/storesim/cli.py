"""Command-line entry point: ``storesim <command> [flags]``.

Commands write machine-readable results to files (JSON summaries, CSV
curves) and print a short human summary; ``--stdout-json`` prints the JSON
document instead. Every document embeds the tool version, the resolved
configuration, its hash and the seed, and ``--config <file>`` re-runs from
either a bare configuration or a previous output document.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics, data, dp, sim
from .distributions import LaplaceModel
from .exceptions import (
    ConditionViolated, InvalidRegime, InvalidThresholds, StoresimError, UnsupportedModel,
)
from .model import SystemParams
from .policies import POLICIES, make_policy

NON_CONFIG = {"command", "config", "out", "csv", "stdout_json", "threads", "slots_csv", "value_csv", "policy_csv"}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _float_or_inf(text: str) -> float:
    t = str(text).strip().lower()
    if t in ("inf", "+inf", "infinity", "unbounded"):
        return math.inf
    return float(t)


def parse_values(text: str) -> list[float]:
    """``a:b:step`` (inclusive of ``b`` when on the lattice) or a comma list."""
    text = str(text)
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"bad range {text!r}; use start:stop:step")
        a, b, st = parts
        k = int(math.floor((b - a) / st + 1e-9))
        return [a + i * st for i in range(k + 1)]
    return [_float_or_inf(p) for p in text.split(",") if p.strip()]


def _range(text):
    if text is None:
        return None
    a, b = str(text).split(":")
    return int(a), int(b)


# ---------------------------------------------------------------- arguments


def _system_args(p, smax_default="100"):
    g = p.add_argument_group("system")
    g.add_argument("--gmax", default="160", help="generator capacity in MW or 'inf'")
    g.add_argument("--smax", default=smax_default, help="storage capacity in MW or 'inf'")
    g.add_argument("--alpha", type=float, default=None, help="round-trip efficiency; sets eta_c = eta_d = sqrt(alpha)")
    g.add_argument("--eta-c", type=float, default=None)
    g.add_argument("--eta-d", type=float, default=None)
    g.add_argument("--cmax", default=None, help="rated charge power (default: unconstrained)")
    g.add_argument("--dmax", default=None, help="rated discharge power (default: unconstrained)")
    g.add_argument("--slot-hours", type=float, default=1.0)


def _model_args(p):
    g = p.add_argument_group("net generation model")
    g.add_argument("--laplace-scale", type=float, default=13.99, help="Laplace scale 1/lambda in MW")
    g.add_argument("--laplace-mu", type=float, default=0.0)


def _output_args(p, csv_out=False):
    g = p.add_argument_group("output")
    g.add_argument("--out", default=None, help="JSON summary path")
    if csv_out:
        g.add_argument("--csv", default=None, help="CSV curve path")
    g.add_argument("--stdout-json", action="store_true", help="print the JSON document to stdout")
    g.add_argument("--config", default=None, help="re-run from a config or previous output JSON")
    g.add_argument("--threads", type=int, default=None, help="worker threads (env STORESIM_THREADS)")


def _policy_args(p):
    p.add_argument("--policy", default="min-gen", choices=sorted(POLICIES))
    p.add_argument("--sc", type=float, default=None, help="charging threshold (two-threshold)")
    p.add_argument("--sd", type=float, default=None, help="discharging threshold (two-threshold)")
    p.add_argument("--relative", action="store_true", help="thresholds are fractions of s_max")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="storesim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"storesim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a policy over a sampled or file trace")
    _system_args(p)
    _model_args(p)
    _policy_args(p)
    p.add_argument("--trace", default=None, help="CSV trace (timestamp,value_mw) instead of sampling")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--s1", default="0", help="initial stored power in MW, 'empty' or 'full'")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--slots-csv", default=None, help="write one row per slot")
    _output_args(p)

    p = sub.add_parser("analyze", help="closed-form Laplace results")
    _system_args(p)
    _model_args(p)
    _output_args(p)

    p = sub.add_parser("fit", help="fit the lagged predictor and a Laplace error model")
    p.add_argument("--input", required=True, help="CSV time series")
    p.add_argument("--load", default=None, help="optional load CSV; the fit uses input minus load")
    p.add_argument("--lags", type=int, default=6)
    p.add_argument("--train-range", default=None, help="start:stop sample indices")
    p.add_argument("--eval-range", default=None, help="start:stop sample indices")
    p.add_argument("--location", choices=("zero", "median"), default="zero")
    p.add_argument("--resample-minutes", type=float, default=None)
    p.add_argument("--on-singular", choices=("raise", "intercept"), default="raise")
    p.add_argument("--seed", type=int, default=0, help="recorded for provenance only")
    _output_args(p)

    p = sub.add_parser("sweep", help="costs versus storage capacity")
    _system_args(p)
    _model_args(p)
    _policy_args(p)
    p.add_argument("--axis", choices=("smax",), default="smax")
    p.add_argument("--values", default="0:100:5")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--s1", default="empty")
    p.add_argument("--burn-in", type=int, default=0)
    _output_args(p, csv_out=True)

    p = sub.add_parser("pareto", help="generation versus LOLP over two-threshold pairs")
    _system_args(p)
    _model_args(p)
    p.add_argument("--grid", type=int, default=11, help="number of threshold fractions per axis")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--s1", default="full")
    p.add_argument("--burn-in", type=int, default=10_000)
    _output_args(p, csv_out=True)

    p = sub.add_parser("plan", help="minimal storage per generator capacity for given targets")
    _model_args(p)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--jg-target", type=float, default=3.6)
    p.add_argument("--jl-target", type=float, default=2e-6)
    p.add_argument("--gmax-values", default="140:180:5")
    p.add_argument("--smax-hi", type=float, default=200.0)
    p.add_argument("--smax-step", type=float, default=1.0)
    p.add_argument("--fractions", default="0:1:0.1", help="threshold fractions of s_max")
    p.add_argument("--n", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--burn-in", type=int, default=10_000)
    _output_args(p, csv_out=True)

    p = sub.add_parser("dp", help="average-cost value iteration")
    _system_args(p)
    _model_args(p)
    p.add_argument("--rho1", type=float, default=1.0)
    p.add_argument("--rho2", type=float, default=0.0)
    p.add_argument("--n-s", type=int, default=401)
    p.add_argument("--n-d", type=int, default=1001)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0, help="recorded for provenance only")
    p.add_argument("--value-csv", default=None, help="write (s, v(s))")
    p.add_argument("--policy-csv", default=None, help="write the per-cell decision table")
    _output_args(p)
    return parser


# ---------------------------------------------------------------- config plumbing


def _params(cfg) -> SystemParams:
    if cfg.get("alpha") is not None:
        if cfg.get("eta_c") is not None or cfg.get("eta_d") is not None:
            raise ConfigError("give either --alpha or --eta-c/--eta-d")
        eta_c = eta_d = math.sqrt(cfg["alpha"])
    else:
        eta_c = cfg.get("eta_c") or 1.0
        eta_d = cfg.get("eta_d") or 1.0
    kw = dict(g_max=_float_or_inf(cfg["gmax"]), s_max=_float_or_inf(cfg["smax"]),
              eta_c=eta_c, eta_d=eta_d, slot_hours=cfg.get("slot_hours", 1.0))
    if cfg.get("cmax") is not None or cfg.get("dmax") is not None:
        if cfg.get("cmax") is not None:
            kw["c_max"] = _float_or_inf(cfg["cmax"])
        if cfg.get("dmax") is not None:
            kw["d_max"] = _float_or_inf(cfg["dmax"])
        kw["constrained"] = True
    return SystemParams(**kw)


def _policy(cfg):
    name = cfg["policy"]
    if name == "two-threshold":
        if cfg.get("sc") is None or cfg.get("sd") is None:
            raise ConfigError("two-threshold needs --sc and --sd")
        return make_policy(name, sc=cfg["sc"], sd=cfg["sd"], relative=bool(cfg.get("relative")))
    return make_policy(name)


def _laplace(cfg) -> LaplaceModel:
    return LaplaceModel(mu=cfg.get("laplace_mu", 0.0), b=cfg["laplace_scale"])


def _s1(text):
    t = str(text).strip().lower()
    return t if t in ("empty", "full") else float(t)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def config_hash(cfg: dict) -> str:
    text = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _document(cfg, result):
    return _jsonable({
        "tool": "storesim", "version": __version__, "command": cfg["command"],
        "config": cfg, "config_hash": config_hash(cfg), "seed": cfg.get("seed"), "result": result,
    })


def _provenance(cfg):
    return f"# storesim {__version__} command={cfg['command']} config_hash={config_hash(cfg)} seed={cfg.get('seed')}"


def _write_csv(path, cfg, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_provenance(cfg) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in row])


def _emit(args, cfg, result, human):
    doc = _document(cfg, result)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.stdout_json:
        print(text)
    else:
        for line in human:
            print(line)


# ---------------------------------------------------------------- commands


def cmd_simulate(args, cfg):
    params = _params(cfg)
    policy = _policy(cfg)
    model = _laplace(cfg)
    if cfg.get("trace"):
        ts = data.load_timeseries(cfg["trace"])
        trace = sim.Trace(ts.values, {"kind": "file", "path": cfg["trace"]})
    else:
        trace = sim.sample_iid(model, cfg["n"] + cfg["burn_in"], cfg["seed"])
    rec = sim.simulate_slots(params, policy, trace, _s1(cfg["s1"]))
    report = sim.summarize(params, rec, model, cfg["burn_in"])
    result = report.to_dict()
    result["energy_generation_mwh_per_slot"] = report.j_g * params.slot_hours
    if model.mu == 0.0 and policy.label == "min-gen" and params.is_unconstrained_rates():
        result["j_g_closed_form"] = analytics.jg_closed_form(params, model)
    if args.slots_csv:
        _write_csv(args.slots_csv, cfg, ["slot", "s", "delta", "g", "c", "d", "lost_load", "curtailed"],
                   ((i, rec.s[i], trace.deltas[i], rec.g[i], rec.c[i], rec.d[i], int(rec.lost[i]), rec.curtailed[i])
                    for i in range(len(trace))))
    _emit(args, cfg, result, [
        f"policy {policy.label}: j_g={report.j_g!r} MW, j_l_smoothed={report.j_l_smoothed!r}, "
        f"j_l_event={report.j_l_event!r} over {report.n} slots",
    ])
    return 0


def cmd_analyze(args, cfg):
    params = _params(cfg)
    model = _laplace(cfg)
    out = {"alpha": params.alpha(), "sigma": model.std()}
    if model.mu != 0.0:
        out["j_g_asymptotic"] = analytics.jg_asymptotic(model, params.alpha())
    else:
        out["j_g"] = analytics.jg_closed_form(params, model)
        out["dj_g_dsmax"] = analytics.jg_derivative_smax(params, model)
        out["lolp_min_generation"] = analytics.lolp_under_min_generation(params, model)
        out["j_g_asymptotic"] = analytics.jg_asymptotic(model, params.alpha())
        atoms = analytics.storage_atoms(params, model)
        out["storage_atom_empty"], out["storage_atom_full"] = atoms
        out["generation_atom_zero"] = float(analytics.stationary_generation_cdf(params, model, 0.0))
        try:
            rb = analytics.lolp_rate_bounds(params, model)
            out["rate_bounds"] = {"gamma_min": rb.gamma_min, "gamma_max": rb.gamma_max}
        except ConditionViolated:
            out["rate_bounds"] = "condition violated"
    out["lolp_asymptotic_conditions"] = analytics.check_lolp_asymp_conditions(model, params)
    _emit(args, cfg, out, [f"{k}: {v!r}" for k, v in out.items()])
    return 0


def cmd_fit(args, cfg):
    schema = {}
    if cfg.get("resample_minutes"):
        schema["resample_step"] = timedelta(minutes=cfg["resample_minutes"])
    series = data.load_timeseries(cfg["input"], schema)
    if cfg.get("load"):
        series = data.net_generation(series, data.load_timeseries(cfg["load"], schema))
    model = data.fit_predictor(series, cfg["lags"], _range(cfg.get("train_range")), cfg["on_singular"])
    resid = data.residuals(model, series, _range(cfg.get("eval_range")))
    lap = data.fit_laplace(resid, cfg["location"])
    result = {
        "predictor": model.to_dict(),
        "laplace": lap.to_dict(),
        "residual_mean": float(resid.values.mean()),
        "residual_mean_abs": float(np.abs(resid.values).mean()),
        "residual_std": float(resid.values.std()),
        "ks_distance": data.ks_distance(resid.values, lap),
    }
    _emit(args, cfg, result, [
        f"coefficients={list(model.coefficients)!r} intercept={model.intercept!r}",
        f"laplace b={lap.b!r} ks={result['ks_distance']!r}",
    ])
    return 0


def _report_header():
    return ["j_g", "j_l_event", "j_l_smoothed", "n", "curtailed_avg", "final_s"]


def cmd_sweep(args, cfg):
    params = _params(cfg)
    policy = _policy(cfg)
    model = _laplace(cfg)
    values = parse_values(cfg["values"])
    res = sim.sweep_capacity(params, policy, model, values, cfg["n"], cfg["seed"], _s1(cfg["s1"]),
                             cfg["burn_in"], args.threads)
    if args.csv:
        _write_csv(args.csv, cfg, ["s_max"] + _report_header(),
                   ([x] + [r.to_dict()[k] for k in _report_header()] for x, r in zip(res.axis, res.reports)))
    _emit(args, cfg, {"points": list(res.rows())},
          [f"s_max={float(x)!r}: j_g={r.j_g!r} j_l_smoothed={r.j_l_smoothed!r}" for x, r in zip(res.axis, res.reports)])
    return 0


def cmd_pareto(args, cfg):
    params = _params(cfg)
    model = _laplace(cfg)
    res = sim.pareto_two_threshold(params, model, cfg["grid"], cfg["n"], cfg["seed"], _s1(cfg["s1"]),
                                   cfg["burn_in"], args.threads)
    rows = list(res.rows())
    header = ["s_c", "s_d", "frontier"] + _report_header()
    if args.csv:
        _write_csv(args.csv, cfg, header, ([r[k] for k in header] for r in rows))
    front = [r for r in rows if r["frontier"]]
    _emit(args, cfg, {"points": rows},
          [f"{len(rows)} threshold pairs, {len(front)} on the frontier"]
          + [f"  s_c={r['s_c']!r} s_d={r['s_d']!r}: j_g={r['j_g']!r} j_l={r['j_l_smoothed']!r}" for r in front])
    return 0


def cmd_plan(args, cfg):
    model = _laplace(cfg)
    search = sim.PlanSearch(alpha=cfg["alpha"], n=cfg["n"], seed=cfg["seed"], smax_hi=cfg["smax_hi"],
                            smax_step=cfg["smax_step"], fractions=tuple(parse_values(cfg["fractions"])),
                            burn_in=cfg["burn_in"], threads=args.threads)
    res = sim.plan_curve(model, cfg["jg_target"], cfg["jl_target"], parse_values(cfg["gmax_values"]), search)
    rows = list(res.rows())
    header = ["g_max", "s_max", "s_c", "s_d", "j_g", "j_l_smoothed", "note"]
    if args.csv:
        _write_csv(args.csv, cfg, header, ([r.get(k) for k in header] for r in rows))
    _emit(args, cfg, {"points": rows},
          [f"g_max={r['g_max']!r}: s_max={r['s_max']!r} {r['note']}" for r in rows])
    return 0


def cmd_dp(args, cfg):
    params = _params(cfg)
    model = _laplace(cfg)
    grid = dp.Grid.build(params, model, cfg["n_s"], cfg["n_d"])
    sol = dp.value_iteration(params, model, dp.CostWeights(cfg["rho1"], cfg["rho2"]), grid,
                             cfg["tol"], cfg["max_iter"])
    pair, is_tt, dev = dp.extract_thresholds(sol)
    result = {
        "eta": sol.eta, "iterations": sol.iterations, "span_residual": sol.span_residual,
        "thresholds": {"s_c": pair.s_c, "s_d": pair.s_d}, "is_two_threshold": is_tt,
        "max_deviation": dev, "grid_step": grid.step, "monotone": sol.monotone,
    }
    if cfg["rho2"] == 0 and model.mu == 0.0:
        result["eta_closed_form"] = analytics.jg_closed_form(params, model)
    if args.value_csv:
        _write_csv(args.value_csv, cfg, ["s", "v"], zip(grid.s_values, sol.v))
    if args.policy_csv:
        pol = sol.policy
        _write_csv(args.policy_csv, cfg, ["s", "delta", "prob", "g", "c", "d", "next_s"],
                   ((grid.s_values[i], grid.d_values[j], grid.d_probs[j], pol.g[i, j], pol.c[i, j],
                     pol.d[i, j], pol.next_s[i, j]) for i in range(grid.n_s) for j in range(grid.n_d)))
    _emit(args, cfg, result, [
        f"eta={sol.eta!r} after {sol.iterations} sweeps; thresholds=({pair.s_c!r}, {pair.s_d!r}) "
        f"two-threshold={is_tt} (max deviation {dev!r} MW)",
    ])
    return 0


COMMANDS = {
    "simulate": cmd_simulate, "analyze": cmd_analyze, "fit": cmd_fit, "sweep": cmd_sweep,
    "pareto": cmd_pareto, "plan": cmd_plan, "dp": cmd_dp,
}

CONFIG_ERRORS = (ConfigError, ValueError, InvalidRegime, InvalidThresholds, UnsupportedModel, KeyError)


def _resolve(parser, argv):
    args = parser.parse_args(argv)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
        cfg = doc.get("config", doc)
        if cfg.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {cfg.get('command')!r}, not {args.command!r}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known - {"command"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        sub.set_defaults(**{k: v for k, v in cfg.items() if k != "command"})
        args = parser.parse_args(argv)
    cfg = {k: v for k, v in vars(args).items() if k not in NON_CONFIG}
    cfg["command"] = args.command
    return args, cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, cfg = _resolve(parser, argv)
    except CONFIG_ERRORS as exc:
        print(f"storesim: config error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, cfg)
    except CONFIG_ERRORS as exc:
        print(f"storesim: config error: {exc}", file=sys.stderr)
        return 1
    except (StoresimError, OSError) as exc:
        print(f"storesim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
