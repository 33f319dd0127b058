"""Command-line harness: ``retroconf {tune,run-synthetic,run-csv,report}``.

Settings resolve as command-line flags, then a flat JSON config file
(``--config``), then built-in defaults. Exit codes: 0 success, 2 usage error,
3 numerical failure, 4 I/O failure. ``RETROCONF_THREADS`` caps the number of
worker processes used for replications.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from retroconf import __version__, alpha_control
from retroconf.conformal import FW_LEVELS, ONE_MINUS_ALPHA, OUT_OF_RANGE, STANDARD
from retroconf.datagen import SETTINGS, Stream, SyntheticConfig, generate, lag_embed, make_rng
from retroconf.errors import NumericalError, UsageError
from retroconf.evaluation import LOCAL_WINDOW, aggregate_replications
from retroconf.experiment import (
    DEFAULT_BANDWIDTH_MULTIPLIERS,
    DEFAULT_RIDGE_GRID,
    STRATEGIES,
    ExperimentConfig,
    run_experiment,
)
from retroconf.kernel import KINDS, RBF
from retroconf.online_krr import loo_cv_select, median_sq_distance
from retroconf import reporting

log = logging.getLogger("retroconf")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

# defaults shared by every subcommand that runs experiments
RUN_DEFAULTS = {
    "strategy": ["retro_adj"],
    "controller": ["dtaci"],
    "kernel": RBF,
    "ridge": None,
    "bandwidth_sq": None,
    "ridge_grid": list(DEFAULT_RIDGE_GRID),
    "bandwidth_grid": None,
    "window": 250,
    "t_init": 250,
    "alpha": 0.1,
    "alpha_1": None,
    "gamma": alpha_control.DEFAULT_GAMMA,
    "gammas": list(alpha_control.DEFAULT_GAMMA_GRID),
    "horizon": None,
    "lifetime_mult": alpha_control.DEFAULT_LIFETIME,
    "saocp_sampling": False,
    "fw_quantile_level": ONE_MINUS_ALPHA,
    "out_of_range": STANDARD,
    "refactor_every": None,
    "local_window": LOCAL_WINDOW,
    "out_dir": "retroconf_out",
    "plot": False,
}
DEFAULTS = {
    "tune": {"kernel": RBF, "ridge_grid": list(DEFAULT_RIDGE_GRID), "bandwidth_grid": None,
             "t_init": 250, "setting": "1", "seed": 1, "T": 1000, "noise_sd": None,
             "out": "retroconf_tuned.json"},
    "run-synthetic": {**RUN_DEFAULTS, "setting": "1", "seeds": [1], "T": 1000, "noise_sd": None},
    "run-csv": {**RUN_DEFAULTS, "seed": 0},
    "report": {"plot": False, "out_dir": None, "local_window": LOCAL_WINDOW},
}


# -- argument parsing --------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"1..50"``, ``"3"`` or ``"1,4,9"`` (ranges may be mixed with commas)."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..", 1)
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use e.g. 1..50 or 1,2,3") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _positive_float(text) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _window(text) -> float:
    if str(text).lower() in ("inf", "infinity"):
        return float("inf")
    return int(text)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("experiment")
    g.add_argument("--strategy", nargs="+", choices=STRATEGIES, default=S,
                   help="calibration strategies to run (default retro_adj)")
    g.add_argument("--controller", nargs="+", choices=alpha_control.CONTROLLERS, default=S,
                   help="alpha controllers to run (default dtaci)")
    g.add_argument("--alpha", type=float, default=S, help="target miscoverage (default 0.1)")
    g.add_argument("--alpha-1", type=float, default=S, help="starting level (default: alpha)")
    g.add_argument("--window", type=_window, default=S, help="window size w; the window holds w+1 points (default 250)")
    g.add_argument("--t-init", type=int, default=S, help="initial records used for fitting (default 250)")
    g.add_argument("--local-window", type=int, default=S, help="LocCov/LocWidth window (default 250)")
    g.add_argument("--gamma", type=_positive_float, default=S, help="ACI/SFOGD/SAOCP step size (default 0.005)")
    g.add_argument("--gammas", type=_positive_float, nargs="+", default=S, help="DtACI/AgACI step-size grid")
    g.add_argument("--horizon", type=int, default=S, help="DtACI horizon L (default: number of evaluated steps)")
    g.add_argument("--lifetime-mult", type=int, default=S, help="SAOCP lifetime multiplier g (default 8)")
    g.add_argument("--saocp-sampling", action="store_true", default=S,
                   help="SAOCP draws one expert per step instead of averaging")
    g.add_argument("--fw-quantile-level", choices=FW_LEVELS, default=S,
                   help="forward baseline quantile level (default one-minus-alpha)")
    g.add_argument("--out-of-range", choices=OUT_OF_RANGE, default=S,
                   help="interval for alpha outside [0,1] (default standard: alpha<0 gives the real line)")
    g.add_argument("--refactor-every", type=int, default=S, help="refactorize the inverse every N steps")
    _add_kernel_flags(p)
    o = p.add_argument_group("output")
    o.add_argument("--out-dir", default=S, help="output directory (default retroconf_out)")
    o.add_argument("--plot", action="store_true", default=S, help="write LocCov/LocWidth SVG plots")


def _add_kernel_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    k = p.add_argument_group("kernel")
    k.add_argument("--kernel", choices=KINDS, default=S, help="kernel (default rbf)")
    k.add_argument("--ridge", type=_positive_float, default=S, help="ridge lambda (default: tuned by LOO-CV)")
    k.add_argument("--bandwidth-sq", type=_positive_float, default=S,
                   help="RBF bandwidth sigma^2 (default: tuned by LOO-CV)")
    k.add_argument("--ridge-grid", type=_positive_float, nargs="+", default=S, help="LOO-CV ridge grid")
    k.add_argument("--bandwidth-grid", type=_positive_float, nargs="+", default=S,
                   help="LOO-CV bandwidth grid (default: median squared distance times 2^-3..2^3)")


def _add_csv_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    S = argparse.SUPPRESS
    c = p.add_argument_group("CSV input")
    c.add_argument("--input", required=required, default=S, help="CSV file with a header row")
    c.add_argument("--target", default=S, help="response column (feature-columns mode)")
    c.add_argument("--features", default=S,
                   help="comma-separated feature columns (default: every column except the target)")
    c.add_argument("--univariate", default=S, help="series column (lag-embedding mode)")
    c.add_argument("--lags", type=int, default=S, help="number of lags p in univariate mode")
    c.add_argument("--sort-train-asc", default=S,
                   help="sort rows by this column: ascending for the first t_init rows, descending after")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retroconf",
        description="Online conformal prediction with retrospective adjustment (sliding-window KRR).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    tune = sub.add_parser("tune", help="select ridge and bandwidth by leave-one-out CV on the initial segment")
    tune.add_argument("--config", default=S, help="flat JSON file of option values")
    _add_kernel_flags(tune)
    tune.add_argument("--t-init", type=int, default=S, help="initial records used (default 250)")
    tune.add_argument("--setting", choices=["1", "2", "linear", "bump"], default=S,
                      help="synthetic setting when no --input is given (default 1)")
    tune.add_argument("--seed", type=int, default=S, help="synthetic seed (default 1)")
    tune.add_argument("--T", type=int, default=S, help="synthetic stream length (default 1000)")
    tune.add_argument("--noise-sd", type=float, default=S, help="override the noise standard deviation")
    _add_csv_flags(tune, required=False)
    tune.add_argument("--out", default=S, help="where to persist the selection (default retroconf_tuned.json)")

    syn = sub.add_parser("run-synthetic", help="run the synthetic drift experiments")
    syn.add_argument("--config", default=S, help="flat JSON file of option values")
    syn.add_argument("--setting", choices=["1", "2", "linear", "bump"], default=S, help="1 linear, 2 bump (default 1)")
    syn.add_argument("--seeds", type=parse_seeds, default=S, help="seed list such as 1..50 (default 1)")
    syn.add_argument("--T", type=int, default=S, help="stream length (default 1000)")
    syn.add_argument("--noise-sd", type=float, default=S, help="override the noise standard deviation (default sqrt(0.5))")
    _add_experiment_flags(syn)

    rc = sub.add_parser("run-csv", help="run on a user-supplied CSV stream")
    rc.add_argument("--config", default=S, help="flat JSON file of option values")
    _add_csv_flags(rc)
    rc.add_argument("--seed", type=int, default=S, help="seed for the SAOCP sampling variant (default 0)")
    _add_experiment_flags(rc)

    rep = sub.add_parser("report", help="summarize finished runs (and optionally replot)")
    rep.add_argument("paths", nargs="+", help="summary.json files or run directories")
    rep.add_argument("--plot", action="store_true", default=S, help="write LocCov/LocWidth SVG plots")
    rep.add_argument("--out-dir", default=S, help="where to write plots (default: next to the first summary)")
    rep.add_argument("--local-window", type=int, default=S, help="window length shown on plot axes")
    return parser


def _coerce(action: argparse.Action, key: str, value):
    """Convert a config-file value with the same rules as the matching flag."""
    if value is None:
        return None
    try:
        if action.nargs in ("+", "*"):
            items = value if isinstance(value, list) else [value]
            items = [action.type(str(v)) if action.type else v for v in items]
            out = items
        elif isinstance(action, argparse._StoreTrueAction):
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            out = value
        else:
            out = action.type(str(value)) if action.type else str(value)
    except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config key {key!r}: {exc}") from None
    values = out if isinstance(out, list) else [out]
    if action.choices is not None and any(v not in action.choices for v in values):
        raise UsageError(f"config key {key!r}: {value!r} is not one of {sorted(action.choices)}")
    return out


def resolve_options(parser: argparse.ArgumentParser, args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults."""
    command = args.command
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help",)}
    opts = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            data = reporting.read_json(config_path)
        except OSError as exc:
            raise OSError(f"cannot read config file {config_path}: {exc.strerror or exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"{config_path}: config must be a flat JSON object")
        for raw_key, value in data.items():
            key = raw_key.replace("-", "_")
            if key in ("config", "command", "paths") or key not in actions:
                raise UsageError(f"{config_path}: unknown option {raw_key!r} for {command}")
            if isinstance(value, dict):
                raise UsageError(f"{config_path}: option {raw_key!r} must not be nested")
            coerced = _coerce(actions[key], raw_key, value)
            if coerced is not None:
                opts[key] = coerced
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose"):
            continue
        opts[key] = value
    return opts


# -- experiment assembly ------------------------------------------------------------


def experiment_config(opts: dict, strategy: str, controller: str, seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        strategy=strategy,
        controller=controller,
        kernel=opts["kernel"],
        ridge=opts["ridge"],
        bandwidth_sq=opts["bandwidth_sq"],
        ridge_grid=tuple(opts["ridge_grid"]),
        bandwidth_grid=tuple(opts["bandwidth_grid"]) if opts["bandwidth_grid"] else None,
        window=opts["window"],
        t_init=opts["t_init"],
        alpha=opts["alpha"],
        alpha_1=opts["alpha_1"],
        gamma=opts["gamma"],
        gammas=tuple(opts["gammas"]),
        horizon=opts["horizon"],
        lifetime_mult=opts["lifetime_mult"],
        saocp_sampling=bool(opts["saocp_sampling"]),
        fw_level=opts["fw_quantile_level"],
        out_of_range=opts["out_of_range"],
        refactor_every=opts["refactor_every"],
        local_window=opts["local_window"],
        seed=seed,
    )


def synthetic_config(opts: dict, seed: int) -> SyntheticConfig:
    return SyntheticConfig(
        setting=SETTINGS[int(opts["setting"])] if str(opts["setting"]).isdigit() else opts["setting"],
        T=opts["T"],
        t_init=opts["t_init"],
        seed=seed,
        noise_sd=opts["noise_sd"],
    )


def synthetic_stream(opts: dict, seed: int) -> Stream:
    return generate(synthetic_config(opts, seed), make_rng(seed))


def csv_stream(opts: dict) -> Stream:
    """Build the stream from ``--input`` in feature-columns or univariate mode."""
    path = opts.get("input")
    if path is None:
        raise UsageError("--input is required")
    target = opts.get("target")
    univariate = opts.get("univariate")
    if (target is None) == (univariate is None):
        raise UsageError("give exactly one of --target (feature-columns mode) or --univariate (lag mode)")
    sort_col = opts.get("sort_train_asc")
    if univariate is not None:
        lags = opts.get("lags")
        if lags is None:
            raise UsageError("--univariate needs --lags")
        if opts.get("features"):
            raise UsageError("--features applies to --target mode only")
        if sort_col is not None:
            raise UsageError("--sort-train-asc applies to --target mode only")
        _, cols = reporting.read_table(path, [univariate])
        return lag_embed(cols[univariate], lags)
    if opts.get("lags") is not None:
        raise UsageError("--lags applies to --univariate mode only")
    header, _ = reporting.read_table(path, [])
    if target not in header:
        raise UsageError(f"{path}: missing column(s): {target}")
    if opts.get("features"):
        features = [f.strip() for f in str(opts["features"]).split(",") if f.strip()]
    else:
        features = [c for c in header if c != target]
    if not features:
        raise UsageError("no feature columns selected")
    needed = features + [target] + ([sort_col] if sort_col and sort_col not in features + [target] else [])
    _, cols = reporting.read_table(path, needed)
    X = np.column_stack([cols[f] for f in features])
    y = cols[target]
    if sort_col is not None:
        order = np.argsort(cols[sort_col], kind="stable")
        t0 = opts["t_init"]
        head, tail = order[:t0], order[t0:]
        tail = tail[np.argsort(-cols[sort_col][tail], kind="stable")]
        order = np.concatenate([head, tail])
        X, y = X[order], y[order]
    log.info("loaded %d records with %d features from %s", y.size, X.shape[1], path)
    return Stream(X, y)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("RETROCONF_THREADS", "").strip()
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = int(cap)
        except ValueError:
            raise UsageError(f"RETROCONF_THREADS must be a positive integer, got {cap!r}") from None
        if limit < 1:
            raise UsageError(f"RETROCONF_THREADS must be a positive integer, got {cap!r}")
    return max(1, min(n_jobs, limit))


def _run_job(job):
    opts, strategy, controller, seed, source = job
    stream = synthetic_stream(opts, seed) if source == "synthetic" else csv_stream(opts)
    cfg = experiment_config(opts, strategy, controller, seed)
    result = run_experiment(cfg, stream)
    return result.rows, result.summary, result.ridge, result.kernel


def _map_jobs(jobs):
    workers = worker_count(len(jobs))
    if workers == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so output is merged in seed order
        return list(pool.map(_run_job, jobs))


def _seed_label(seed: int, width: int) -> str:
    return f"seed_{seed:0{width}d}"


def run_grid(opts: dict, seeds: list[int], source: str) -> dict:
    """Run every (strategy, controller, seed) job and write all outputs."""
    out_dir = Path(opts["out_dir"])
    combos = [(s, c) for s in opts["strategy"] for c in opts["controller"]]
    jobs = [(opts, s, c, seed, source) for s, c in combos for seed in seeds]
    if any(s == "fw_krr" for s, _ in combos):
        log.info("forward baseline quantile level: %s", opts["fw_quantile_level"])
    results = _map_jobs(jobs)
    width = max(3, len(str(max(seeds))))
    curves = {}
    summaries = {}
    for k, (strategy, controller) in enumerate(combos):
        chunk = results[k * len(seeds) : (k + 1) * len(seeds)]
        run_dir = out_dir / f"{strategy}_{controller}"
        per_seed = []
        for seed, (rows, summary, ridge, spec) in zip(seeds, chunk):
            name = f"{_seed_label(seed, width)}.csv"
            reporting.write_rows(run_dir / name, rows)
            per_seed.append({
                "seed": seed,
                **summary.scalars(),
                "ridge": ridge,
                "kernel": spec.kind,
                "bandwidth_sq": spec.bandwidth_sq if spec.kind == RBF else None,
                "rows_path": name,
            })
        agg = aggregate_replications([r[1] for r in chunk])
        curve_name = "loc_curves.csv"
        if "loc_t" in agg:
            reporting.write_curves(run_dir / curve_name, agg["loc_t"], agg["loc_coverage"], agg["loc_width"])
            curves[f"{strategy}+{controller}"] = (agg["loc_t"], agg["loc_coverage"], agg["loc_width"])
        payload = {
            "mean_coverage": agg["mean_coverage"]["mean"],
            "mean_width": agg["mean_width"]["mean"],
            "n_infinite_width": int(sum(p["n_infinite_width"] for p in per_seed)),
            "n_empty": int(sum(p["n_empty"] for p in per_seed)),
            "per_seed": per_seed,
            "loc_curves_path": curve_name if "loc_t" in agg else None,
            "iqr": {key: {"q25": agg[key]["q25"], "q75": agg[key]["q75"]} for key in ("mean_coverage", "mean_width")},
            "strategy": strategy,
            "controller": controller,
            "config": _config_record(opts, source),
        }
        reporting.write_json(run_dir / "summary.json", payload)
        summaries[(strategy, controller)] = payload
    if opts["plot"] and curves:
        reporting.plot_curves(out_dir, curves, opts["local_window"],
                              reporting.SHIFT_MARKER if source == "synthetic" else None)
    return summaries


def _config_record(opts: dict, source: str) -> dict:
    skip = {"out_dir", "plot", "strategy", "controller", "seeds"}
    record = {k: v for k, v in sorted(opts.items()) if k not in skip}
    record["source"] = source
    return record


def _print_table(summaries: dict) -> None:
    print(f"{'strategy':<10} {'controller':<10} {'coverage':>9} {'width':>9} {'n_inf':>6} {'n_empty':>7}")
    for (strategy, controller), p in summaries.items():
        print(f"{strategy:<10} {controller:<10} {_num(p['mean_coverage']):>9} {_num(p['mean_width']):>9} "
              f"{p['n_infinite_width']:>6} {p['n_empty']:>7}")


def _num(v) -> str:
    return f"{v:.4f}" if isinstance(v, (int, float)) else str(v)


# -- subcommands ----------------------------------------------------------------------


def cmd_tune(opts: dict) -> int:
    if opts.get("input") is not None:
        stream = csv_stream(opts)
    else:
        stream = synthetic_stream(opts, opts["seed"])
    t0 = opts["t_init"]
    if len(stream) < t0:
        raise UsageError(f"need at least t_init={t0} records, got {len(stream)}")
    X, y = stream.X[:t0], stream.y[:t0]
    kind = opts["kernel"]
    bws = opts["bandwidth_grid"]
    if kind == RBF and not bws:
        med = median_sq_distance(X)
        bws = [m * med for m in DEFAULT_BANDWIDTH_MULTIPLIERS]
    sel = loo_cv_select(X, y, kind, opts["ridge_grid"], bws if kind == RBF else None)
    chosen = {"kernel": kind, "ridge": sel.ridge, "bandwidth_sq": sel.bandwidth_sq}
    reporting.write_json(opts["out"], chosen)
    print(f"kernel={kind} ridge={sel.ridge:g} bandwidth_sq="
          f"{'n/a' if sel.bandwidth_sq is None else format(sel.bandwidth_sq, 'g')} loo_sse={sel.loo_sse:.6g}")
    print(f"selection written to {opts['out']}")
    return EXIT_OK


def cmd_run_synthetic(opts: dict) -> int:
    seeds = opts["seeds"]
    if isinstance(seeds, str):
        seeds = parse_seeds(seeds)
    summaries = run_grid(opts, list(seeds), "synthetic")
    _print_table(summaries)
    return EXIT_OK


def cmd_run_csv(opts: dict) -> int:
    csv_stream(opts)  # validate the input before spawning workers
    summaries = run_grid(opts, [opts["seed"]], "csv")
    _print_table(summaries)
    return EXIT_OK


def cmd_report(opts: dict) -> int:
    summaries = {}
    curves = {}
    first_dir = None
    files = []
    for raw in opts["paths"]:
        path = Path(raw)
        if path.is_dir() and not (path / "summary.json").exists():
            found = sorted(path.glob("*/summary.json"))
            if not found:
                raise FileNotFoundError(f"no summary.json under {path}")
            files.extend(found)
        else:
            files.append(path / "summary.json" if path.is_dir() else path)
    for path in files:
        payload = reporting.read_json(path)
        for key in ("mean_coverage", "mean_width", "n_infinite_width", "n_empty", "per_seed"):
            if key not in payload:
                raise UsageError(f"{path}: not a run summary (missing {key!r})")
        label = (payload.get("strategy", path.parent.name), payload.get("controller", ""))
        summaries[label] = payload
        first_dir = first_dir or path.parent
        if payload.get("loc_curves_path"):
            curves[f"{label[0]}+{label[1]}"] = reporting.read_curves(path.parent / payload["loc_curves_path"])
    _print_table(summaries)
    if opts["plot"]:
        if not curves:
            raise UsageError("no local curves available to plot")
        out = Path(opts["out_dir"]) if opts["out_dir"] else first_dir
        sources = {p.get("config", {}).get("source") for p in summaries.values()}
        marker = reporting.SHIFT_MARKER if sources == {"synthetic"} else None
        for path in reporting.plot_curves(out, curves, opts["local_window"], marker):
            print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"tune": cmd_tune, "run-synthetic": cmd_run_synthetic, "run-csv": cmd_run_csv, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        opts = resolve_options(parser, args)
        return COMMANDS[args.command](opts)
    except NumericalError as exc:
        print(f"retroconf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except UsageError as exc:
        print(f"retroconf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"retroconf: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
