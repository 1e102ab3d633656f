"""Batch front-end: simulate / infer / rates / protocol.

Configuration is a single JSON document; command-line flags override config
keys.  Every command is deterministic under a fixed seed and config, and all
outputs are written in a canonical form (sorted-key JSON, '.'-decimal CSV
with '\\n' line endings) so reruns can be diffed byte for byte.

Usage examples:

  unzipseq simulate --config run.json --seed 7 --R 1000 --out results
  unzipseq infer --config run.json --stats results/stats.json --oracle
  unzipseq rates --config run.json --out results
  unzipseq protocol --config ladder.json --seed 3 --R-per-level 2000

Exit codes: 0 success, 2 configuration error (message names the offending
field), 1 runtime failure (e.g. a step-cap abort).
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from .energy import (
    BASES,
    Base,
    Environment,
    EnergyTable,
    ModelParams,
    environment_from_json,
    free_energy_profile,
)
from .inference import (
    Prior,
    build_edge_potentials,
    empirical_rate_from_logs,
    error_report,
    log_prob_any_error,
    rate_residuals,
    site_posterior,
)
from .protocols import (
    LevelLadder,
    ProtocolAbort,
    build_protocol,
    estimate_energy,
    rc_energy,
    run_protocol,
    validate_ladder,
    window_schedule,
)
from .rates import decision_margins, rate_report, rc_site
from .walker import (
    AggregateStats,
    SeedSpec,
    StepCapExceeded,
    accumulate_checkpoints,
    simulate_discrete_walk,
    simulate_continuous_walk,
    simulate_ensemble,
    trace_csv_rows,
)

__all__ = ["main", "cli_entry"]


class ConfigError(ValueError):
    pass


_COMMON_KEYS = {"command", "environment", "mode", "seed", "out", "format", "step_cap"}
_KEYS = {
    "simulate": _COMMON_KEYS | {"R", "trace", "window"},
    "infer": _COMMON_KEYS | {"R", "R_grid", "stats", "b1", "site", "h_max", "oracle", "prior"},
    "rates": _COMMON_KEYS | {"R"},
    "protocol": _COMMON_KEYS
    | {"energies", "ladder", "scheme", "site", "k", "max_level", "R_per_level"},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unzipseq", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "infer", "rates", "protocol"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--format", type=str, default=None, choices=("csv", "json"))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", type=str, default=None, choices=("discrete", "continuous"))
        p.add_argument("--R", type=int, default=None, dest="R")
        p.add_argument("--R-grid", type=str, default=None, dest="R_grid", help="a:b:step")
        p.add_argument("--env", type=str, default=None, help="environment JSON file")
        p.add_argument("--step-cap", type=int, default=None, dest="step_cap")
        if name == "simulate":
            p.add_argument("--trace", action="store_true", default=None)
            p.add_argument("--window", type=str, default=None, help="y:A:C force window")
        if name == "infer":
            p.add_argument("--stats", type=str, default=None, help="stats JSON from simulate")
            p.add_argument("--b1", type=str, default=None, help="A|T|C|G|auto|none")
            p.add_argument("--site", type=int, default=None)
            p.add_argument("--h-max", type=int, default=None, dest="h_max")
            p.add_argument("--oracle", action="store_true", default=None)
        if name == "protocol":
            p.add_argument("--scheme", type=str, default=None,
                           choices=("uniform-pair", "focus-at-x", "absorbing-tail"))
            p.add_argument("--site", type=int, default=None)
            p.add_argument("--k", type=int, default=None)
            p.add_argument("--max-level", type=int, default=None, dest="max_level")
            p.add_argument("--R-per-level", type=int, default=None, dest="R_per_level")
    return parser


def _load_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"config: cannot read {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON in {args.config}: {e}") from e
        if not isinstance(cfg, dict):
            raise ConfigError("config: top-level document must be an object")
    cfg["command"] = args.command
    if getattr(args, "env", None):
        cfg["environment"] = args.env
    for key in (
        "out", "format", "seed", "mode", "R", "R_grid", "step_cap", "trace", "window",
        "stats", "b1", "site", "h_max", "oracle", "scheme", "k", "max_level", "R_per_level",
    ):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    allowed = _KEYS[args.command]
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) for {args.command}: {sorted(unknown)}")
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"{key}: required for command {cfg['command']!r}")
    return cfg[key]


def _environment(cfg: dict) -> Environment:
    doc = _require(cfg, "environment")
    if isinstance(doc, str):
        try:
            doc = json.loads(Path(doc).read_text())
        except OSError as e:
            raise ConfigError(f"environment: cannot read file: {e}") from e
    try:
        return environment_from_json(doc)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"environment: {e}") from e


def _mode(cfg: dict) -> str:
    return cfg.get("mode", "discrete")


def _seed(cfg: dict) -> SeedSpec:
    return SeedSpec(int(_require(cfg, "seed")))


def _outdir(cfg: dict) -> Path:
    out = Path(cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _step_cap_kwargs(cfg: dict) -> dict:
    return {"step_cap": int(cfg["step_cap"])} if "step_cap" in cfg else {}


def _jsonable(obj):
    """Repackage for canonical JSON: NaN/inf become null."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":")) + "\n"


def _write_json(path: Path, obj) -> None:
    path.write_text(canonical_json(obj))


def _csv_cell(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_csv_cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _parse_grid(spec: str) -> list[int]:
    try:
        a, b, step = (int(v) for v in str(spec).split(":"))
    except ValueError:
        raise ConfigError(f"R_grid: expected 'start:stop:step', got {spec!r}") from None
    if a < 1 or step < 1 or b < a:
        raise ConfigError(f"R_grid: bad range {spec!r}")
    return list(range(a, b + 1, step))


# --------------------------------------------------------------------------
# simulate


def _apply_window(env: Environment, spec: str) -> Environment:
    try:
        y, A, C = str(spec).split(":")
        y, A, C = int(y), int(A), float(C)
    except ValueError:
        raise ConfigError(f"window: expected 'y:A:C', got {spec!r}") from None
    try:
        field = window_schedule(y, A, C, env.M, baseline=env.force)
    except ValueError as e:
        raise ConfigError(f"window: {e}") from None
    return Environment(env.seq, env.table, field, env.params)


def cmd_simulate(cfg: dict) -> int:
    env = _environment(cfg)
    if "window" in cfg:
        env = _apply_window(env, cfg["window"])
    mode = _mode(cfg)
    R = int(_require(cfg, "R"))
    seed = _seed(cfg)
    out = _outdir(cfg)
    agg = simulate_ensemble(env, R, mode, seed, **_step_cap_kwargs(cfg))
    _write_json(out / "stats.json", agg.to_json_dict())
    if cfg.get("format") == "csv":
        _write_csv(out / "stats.csv", ("site", "L_plus", "L_minus", "S", "R"), agg.csv_rows())
    if cfg.get("trace"):
        walk_fn = simulate_discrete_walk if mode == "discrete" else simulate_continuous_walk
        walk = walk_fn(env, seed, 0, trace=True, **_step_cap_kwargs(cfg))
        _write_csv(out / "trace.csv", ("step", "site", "time"), trace_csv_rows(walk))
    return 0


# --------------------------------------------------------------------------
# infer


def _parse_b1(cfg: dict, env: Environment) -> Base | None:
    raw = str(cfg.get("b1", "auto")).lower()
    if raw == "none":
        return None
    if raw == "auto":
        return env.seq.base(1)
    try:
        return Base.from_letter(raw)
    except ValueError as e:
        raise ConfigError(f"b1: {e}") from None


def _prior(cfg: dict, M: int) -> Prior:
    if "prior" not in cfg:
        return Prior.uniform(M)
    doc = cfg["prior"]
    if not (isinstance(doc, dict) and "weights" in doc):
        raise ConfigError("prior: expected {'weights': [wA, wT, wC, wG]}")
    try:
        return Prior.iid(doc["weights"], M)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"prior: {e}") from None


def _oracle_enumeration(pot, b1, h_max: int) -> dict:
    """Plain 4^(M-1) enumeration of the posterior; slow reference for small M."""
    M = pot.M
    if M > 8:
        raise ConfigError(f"oracle: exhaustive enumeration limited to M <= 8, got M = {M}")
    starts = [b1] if b1 is not None else list(BASES)
    seqs = []
    costs = []
    for first in starts:
        for rest in itertools.product(BASES, repeat=M - 1):
            tup = (first, *rest)
            seqs.append(tup)
            costs.append(sum(float(pot.phi[x, tup[x - 1], tup[x]]) for x in range(1, M)))
    costs = np.array(costs)
    shift = float(costs.min())
    # enumeration runs in base order, so the first within-tolerance optimum
    # is the same tie-broken representative the decoder reports
    best = int(np.flatnonzero(costs <= shift + 1e-9)[0])
    weights = np.exp(-(costs - shift))
    Z = float(weights.sum())
    log_z = float(-shift + math.log(Z))
    p_any = float(1.0 - weights[best] / Z)

    def n_blocks(tup):
        blocks = 0
        prev = False
        for i, b in enumerate(tup):
            mism = b != seqs[best][i]
            if mism and not prev:
                blocks += 1
            prev = mism
        return blocks

    p_h = []
    for h in range(1, h_max + 1):
        mass = float(sum(w for w, tup in zip(weights, seqs) if n_blocks(tup) >= h))
        p_h.append({"h": h, "p": mass / Z})
    return {
        "map_sequence": "".join(b.name for b in seqs[best]),
        "cost": float(costs[best]),
        "log_partition": log_z,
        "p_any_error": p_any,
        "p_h_errors": p_h,
    }


def cmd_infer(cfg: dict) -> int:
    env = _environment(cfg)
    mode = _mode(cfg)
    prior = _prior(cfg, env.M)
    b1 = _parse_b1(cfg, env)
    h_max = int(cfg.get("h_max", 3))
    out = _outdir(cfg)

    if "R_grid" in cfg:
        if "stats" in cfg:
            raise ConfigError("R_grid: cannot be combined with a stats file")
        return _infer_grid(cfg, env, mode, prior, b1, out)

    if "stats" in cfg:
        try:
            doc = json.loads(Path(cfg["stats"]).read_text())
        except OSError as e:
            raise ConfigError(f"stats: cannot read file: {e}") from e
        agg = AggregateStats.from_json_dict(doc)
        if agg.M != env.M:
            raise ConfigError(f"stats: M = {agg.M} does not match environment M = {env.M}")
        if agg.mode != mode:
            raise ConfigError(f"stats: recorded mode {agg.mode!r} does not match {mode!r}")
    else:
        R = int(_require(cfg, "R"))
        agg = simulate_ensemble(env, R, mode, _seed(cfg), **_step_cap_kwargs(cfg))

    report = error_report(agg, env, prior, mode, b1, h_max)
    doc = report.to_json_dict()
    doc["site_posteriors"] = [
        {
            "site": x,
            "probs": {b.name: p for b, p in site_posterior(agg, env, x, prior, mode).probs.items()},
        }
        for x in range(2, env.M)
    ]
    _write_json(out / "decode.json", doc)
    if cfg.get("format") == "csv":
        rows = [
            (d["site"],) + tuple(d["probs"][b.name] for b in BASES)
            for d in doc["site_posteriors"]
        ]
        _write_csv(out / "posteriors.csv", ("site", "p_A", "p_T", "p_C", "p_G"), rows)
    if cfg.get("oracle"):
        pot = build_edge_potentials(agg, env, prior, mode)
        oracle = _oracle_enumeration(pot, b1, h_max)
        diffs = {
            "map_sequence_equal": oracle["map_sequence"] == doc["map_sequence"],
            "cost": abs(oracle["cost"] - doc["cost"]),
            "log_partition": abs(oracle["log_partition"] - doc["log_partition"]),
            "p_any_error": abs(oracle["p_any_error"] - doc["p_any_error"]),
            "p_h_errors": [
                abs(o["p"] - m["p"])
                for o, m in zip(oracle["p_h_errors"], doc["p_h_errors"])
            ],
        }
        _write_json(out / "oracle.json", {"oracle": oracle, "diffs": diffs})
    return 0


def _infer_grid(cfg, env, mode, prior, b1, out: Path) -> int:
    grid = _parse_grid(cfg["R_grid"])
    seed = _seed(cfg)
    site = cfg.get("site")
    stats_seq = accumulate_checkpoints(env, mode, seed, grid, **_step_cap_kwargs(cfg))
    rows = []
    pts_any = []
    pts_site = []
    for R, agg in zip(grid, stats_seq):
        pot = build_edge_potentials(agg, env, prior, mode)
        lp_any = log_prob_any_error(pot, b1)
        row = [R, lp_any, math.exp(min(lp_any, 0.0))]
        pts_any.append((R, lp_any))
        if site is not None:
            sp = site_posterior(agg, env, int(site), prior, mode)
            lp_site = sp.log_error_probability()
            row += [lp_site, math.exp(min(lp_site, 0.0))]
            pts_site.append((R, lp_site))
        rows.append(tuple(row))
    header = ("R", "log_p_any_error", "p_any_error") + (
        ("log_p_site_error", "p_site_error") if site is not None else ()
    )
    _write_csv(out / "error_curve.csv", header, rows)
    fit = empirical_rate_from_logs(pts_any)
    field = env.force.per_site
    if mode == "continuous" or bool(np.all(field == field[0])):
        margins = decision_margins(env.table, env.beta, g1=float(field[0]), mode=mode)
        margin_bound = margins.minus
    else:
        margin_bound = None  # discrete margins need one constant stretch work
    doc = {
        "mode": mode,
        "slope_any_error": fit.slope,
        "slope_stderr": fit.slope_stderr,
        "intercept": fit.intercept,
        "margin_lower_bound": margin_bound,
    }
    if site is not None:
        fit_site = empirical_rate_from_logs(pts_site)
        rc = rc_site(env, int(site), mode)
        doc["site"] = int(site)
        doc["slope_site_error"] = fit_site.slope
        doc["slope_site_stderr"] = fit_site.slope_stderr
        doc["rc_site"] = rc
        # finite-R residual against the analytic rate; diagnostic only
        doc["site_residuals"] = [
            {"R": r, "residual": v} for r, v in rate_residuals(pts_site, rc)
        ]
    _write_json(out / "rate_fit.json", doc)
    return 0


# --------------------------------------------------------------------------
# rates


def cmd_rates(cfg: dict) -> int:
    env = _environment(cfg)
    R = int(cfg.get("R", 1))
    out = _outdir(cfg)
    report = rate_report(env, R)
    _write_json(out / "rates.json", report.to_json_dict())
    _write_csv(out / "rates.csv", report.CSV_HEADER, report.csv_rows())
    g = free_energy_profile(env)
    _write_csv(out / "profile.csv", ("x", "g"), [(x, float(g[x])) for x in range(env.M)])
    return 0


# --------------------------------------------------------------------------
# protocol


def _ladder(cfg: dict, energies: list[float]) -> LevelLadder:
    doc = cfg.get("ladder", "from-energies")
    if doc == "from-energies":
        ladder = LevelLadder.from_energies(energies)
    elif doc == "from-table":
        ladder = LevelLadder.from_table(EnergyTable.default())
    elif isinstance(doc, dict) and set(doc) == {"mu", "r"}:
        report = validate_ladder(doc["mu"], doc["r"])
        if not report.valid:
            raise ConfigError("ladder: " + "; ".join(report.violations))
        ladder = LevelLadder(tuple(doc["mu"]), tuple(doc["r"]))
    else:
        raise ConfigError("ladder: expected 'from-energies', 'from-table' or {'mu': [...], 'r': [...]}")
    report = ladder.validate()
    if not report.valid:
        raise ConfigError("ladder: " + "; ".join(report.violations))
    return ladder


def cmd_protocol(cfg: dict) -> int:
    if "energies" in cfg:
        energies = [float(e) for e in cfg["energies"]]
        params_env = _environment(cfg) if "environment" in cfg else None
    else:
        params_env = _environment(cfg)
        energies = params_env.edge_energies()
    params = params_env.params if params_env is not None else ModelParams()
    mode = _mode(cfg)
    scheme = cfg.get("scheme", "uniform-pair")
    R_per_level = int(_require(cfg, "R_per_level"))
    seed = _seed(cfg)
    out = _outdir(cfg)
    M = len(energies) + 1
    ladder = _ladder(cfg, energies)
    try:
        plan = build_protocol(
            scheme,
            ladder,
            M,
            R_per_level,
            site=cfg.get("site"),
            k=cfg.get("k"),
            max_level=cfg.get("max_level"),
        )
    except (ValueError, IndexError) as e:
        raise ConfigError(f"protocol: {e}") from None
    stats = run_protocol(energies, params, plan, seed, mode, **_step_cap_kwargs(cfg))
    _write_json(out / "levels.json", stats.to_json_dict())
    _write_csv(out / "levels.csv", ("level", "site", "L_plus", "L_minus", "R"), stats.csv_rows())

    # site-dependent schemes only calibrate the drift at the target site;
    # a scan that runs past the plan's deepest level is reported, not fatal
    sites = [plan.site] if plan.site is not None else list(range(2, M))
    est_rows = []
    est_docs = []
    for x in sites:
        try:
            est = estimate_energy(stats, x, ladder)
            note = ""
        except ValueError as e:
            est = None
            note = str(e)
        level = est.level if est is not None else None
        value = est.value if est is not None else None
        undecided = est.undecided if est is not None else True
        est_rows.append((x, level if level is not None else "",
                         value if value is not None else "", undecided, note))
        est_docs.append({"site": x, "level": level, "value": value,
                         "undecided": undecided, "note": note})
    _write_csv(out / "estimates.csv", ("site", "level", "mu", "undecided", "note"), est_rows)
    _write_json(out / "estimates.json", est_docs)

    bound_rows = []
    for x in range(2, M):
        bound = rc_energy(energies, x, ladder, params.beta, scheme,
                          k=cfg.get("k", 1) if scheme == "uniform-pair" else None)
        bound_rows.append((x, scheme, bound))
    _write_csv(out / "bounds.csv", ("site", "scheme", "rate_lower_bound"), bound_rows)
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "rates": cmd_rates,
    "protocol": cmd_protocol,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[cfg["command"]](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (StepCapExceeded, ProtocolAbort) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


def cli_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli_entry()
