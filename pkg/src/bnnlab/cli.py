"""Command-line entry point: ``bnnlab run | compare | figures | plot-data``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .dynamics import NumericalError
from .games import ConfigError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--game", help="rps | brps | brps_w | kuhn | leduc")
    p.add_argument("--params", help="RPS parameters a_rp,a_ps,a_sr")
    p.add_argument("--schedule", help="none | rps1..rps4 | kuhn_direct | kuhn_continuous")
    p.add_argument("--stage-length", type=int, dest="stage_length")
    p.add_argument("--algo", help="bnn | replicator | reg-rd | bnnac")
    p.add_argument("--sigma", type=float, help="Gaussian noise level (shorthand for --noise gauss:S)")
    p.add_argument("--noise", help="gauss:S or uniform:S")
    p.add_argument("--eta", help="power:c=1,t0=10 or const:0.05")
    p.add_argument("--iters", type=int)
    p.add_argument("--eval-interval", type=int, dest="eval_interval")
    p.add_argument("--seeds", help="0..29 or 0,3,7")
    p.add_argument("--init", help="random | uniform")
    p.add_argument("--lam", type=float)
    p.add_argument("--k-ref", type=int, dest="k_ref")
    p.add_argument("--k-actor", type=int, dest="k_actor")
    p.add_argument("--batch", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--policy-floor", type=float, dest="policy_floor")
    p.add_argument("--bias-table", action="store_true", default=None, dest="bias_table")
    p.add_argument("--threads", type=int, help="worker processes (default: BNNLAB_THREADS or CPU count)")


OVERRIDE_KEYS = ("game", "params", "schedule", "stage_length", "algo", "noise", "eta", "iters", "eval_interval",
                 "seeds", "init", "lam", "k_ref", "k_actor", "batch", "alpha", "beta", "policy_floor", "bias_table")


def _config_from_args(args) -> harness.ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
    if args.sigma is not None:
        if args.noise is not None:
            raise ConfigError("give either --sigma or --noise, not both")
        overrides["noise"] = f"gauss:{args.sigma}"
    if args.config:
        return harness.load_config(args.config, overrides)
    return harness.resolve_config(None, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnnlab", description="BNN learning-dynamics experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration over its seeds")
    _add_run_options(run)
    run.add_argument("--out", required=True)

    cmp_ = sub.add_parser("compare", help="compare algorithms on a shared configuration")
    _add_run_options(cmp_)
    cmp_.add_argument("--algos", default="bnn,reg-rd", help="comma list; reg-rd expands over the grid")
    cmp_.add_argument("--lams", default="0.05,0.1,0.2")
    cmp_.add_argument("--k-refs", default="100,500", dest="k_refs")
    cmp_.add_argument("--out")

    fig = sub.add_parser("figures", help="run a figure preset")
    fig.add_argument("--preset", default="appendix", choices=["appendix"])
    fig.add_argument("--out", required=True)
    fig.add_argument("--scale", type=float, default=1.0, help="multiply iteration budgets")
    fig.add_argument("--seeds", default="0..9")
    fig.add_argument("--threads", type=int)

    plot = sub.add_parser("plot-data", help="write gnuplot-ready mean/stderr columns")
    plot.add_argument("trace_dir")
    return parser


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def _dump_state(err: NumericalError, out: str | None) -> None:
    state = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in err.state.items()}
    text = json.dumps({"error": str(err), "state": state}, default=str, indent=2)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "numerical_error.json").write_text(text + "\n")
    print(text, file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            summary = harness.run_experiment(cfg, args.out, args.threads)
            print(f"{summary['label']}: final NashConv {summary['final_nash_conv_mean']:.6g} -> {args.out}")
        elif args.command == "compare":
            base = _config_from_args(args)
            configs = []
            for algo in (a.strip() for a in args.algos.split(",") if a.strip()):
                if algo == "reg-rd":
                    configs += harness.reg_rd_grid(base, _float_list(args.lams),
                                                   [int(k) for k in _float_list(args.k_refs)])
                else:
                    configs.append(replace(base, algo=algo))
            result = harness.compare(configs, args.out, args.threads)
            for row in result["rows"]:
                rec = ", ".join("-" if r is None else str(r) for r in row["recovery_time"])
                print(f"{row['label']}: final-stage NashConv {row['final_stage_mean_nash_conv']:.4g}; recovery [{rec}]")
        elif args.command == "figures":
            index = harness.run_figures(args.out, args.scale, args.seeds, args.threads)
            print(f"wrote {sum(len(v) for v in index.values())} runs in {len(index)} groups to {args.out}")
        elif args.command == "plot-data":
            written = harness.emit_plot_data(args.trace_dir)
            print(f"wrote {len(written)} data files")
    except ConfigError as err:
        print(f"bnnlab: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        _dump_state(err, getattr(args, "out", None))
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
