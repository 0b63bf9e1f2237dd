"""Experiment orchestration: config resolution, seed-parallel runs, CSV/JSON output."""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import efg, lyapunov
from .bnnac import BnnacConfig, run_bnnac_seeds
from .dynamics import NoiseModel
from .games import GAME_BUILDERS, ConfigError, MixedProfile, ParamSchedule, build_game, rps_case_schedule
from .runs import EfgEnvironment, NfgEnvironment, RunConfig, Trace, run_efg, run_nfg
from .specs import format_seeds, parse_noise, parse_seeds, parse_step_schedule

TRACE_SCHEMA = "bnnlab-trace v1"
MEAN_SCHEMA = "bnnlab-mean v1"
SUMMARY_SCHEMA = "bnnlab-summary v1"
CSV_FIELDS = ("t", "seed", "nash_conv", "gamma", "s_mass", "sigma", "eta_t", "floor_events",
              "min_external_reach", "stage_id")
MEAN_METRICS = ("nash_conv", "gamma", "s_mass", "min_external_reach")
EFG_GAMES = ("kuhn", "leduc")
ALGORITHMS = ("bnn", "replicator", "reg-rd", "bnnac")
SCHEDULES = ("none", "rps1", "rps2", "rps3", "rps4", "kuhn_direct", "kuhn_continuous")
KUHN_BETS = {"kuhn_direct": (1.0, 2.0, -2.0, 6.0), "kuhn_continuous": (1.0, 2.0, -2.0, 1.0)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every run setting with its default; ``to_dict`` gives the resolved form written to summaries."""

    game: str = "brps"
    params: str = ""
    schedule: str = "none"
    stage_length: int = 5000
    algo: str = "bnn"
    noise: str = "gauss:0"
    eta: str = "power:c=1,t0=10"
    iters: int = 10_000
    eval_interval: int = 0
    seeds: str = "0..9"
    init: str = "random"
    floor: float = 1e-9
    tail_fraction: float = 0.2
    lam: float = 0.1
    k_ref: int = 500
    k_actor: int = 10
    batch: int = 32
    alpha: float = 0.1
    beta: float = 0.1
    policy_floor: float = 1e-9
    recovery_factor: float = 1.5
    bias_table: bool = False
    bias_samples: int = 100_000

    def __post_init__(self):
        if self.game not in GAME_BUILDERS and self.game not in EFG_GAMES:
            raise ConfigError(f"unknown game {self.game!r}")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        if self.iters <= 0:
            raise ConfigError("iters must be positive")
        if self.eval_interval < 0:
            raise ConfigError("eval_interval must be >= 0 (0 picks the default)")
        if self.stage_length <= 0:
            raise ConfigError("stage_length must be positive")
        if self.is_efg:
            if self.schedule.startswith("rps"):
                raise ConfigError("RPS schedules apply to the rps family only")
            if self.schedule.startswith("kuhn") and self.game != "kuhn":
                raise ConfigError("bet-size schedules apply to kuhn only")
        else:
            if self.schedule.startswith("kuhn"):
                raise ConfigError("bet-size schedules apply to kuhn only")
            if self.algo == "bnnac":
                raise ConfigError("bnnac runs on extensive-form games (kuhn, leduc)")
        parse_noise(self.noise)
        parse_step_schedule(self.eta)
        parse_seeds(self.seeds)
        self.run_config()
        if self.algo == "bnnac":
            self.bnnac_config()

    @property
    def is_efg(self) -> bool:
        return self.game in EFG_GAMES

    @property
    def seed_list(self) -> tuple[int, ...]:
        return parse_seeds(self.seeds)

    @property
    def resolved_eval_interval(self) -> int:
        return self.eval_interval or (50 if self.is_efg else 10)

    def run_config(self) -> RunConfig:
        return RunConfig(
            algorithm="bnn" if self.algo == "bnnac" else self.algo,
            noise=parse_noise(self.noise),
            eta=parse_step_schedule(self.eta),
            iterations=self.iters,
            eval_interval=self.resolved_eval_interval,
            floor=self.floor,
            lam=self.lam,
            ref_interval=self.k_ref,
            tail_fraction=self.tail_fraction,
            init=self.init,
        )

    def bnnac_config(self) -> BnnacConfig:
        return BnnacConfig(
            k_actor=self.k_actor, batch=self.batch, alpha=self.alpha, beta=self.beta,
            eta=parse_step_schedule(self.eta), policy_floor=self.policy_floor, noise=parse_noise(self.noise),
            iterations=self.iters, eval_interval=self.resolved_eval_interval,
            init="random" if self.init == "random" else "uniform",
        )

    def param_schedule(self) -> ParamSchedule | None:
        if self.schedule == "none":
            return None
        if self.schedule.startswith("rps"):
            return rps_case_schedule(int(self.schedule[3:]))
        mode = "direct" if self.schedule == "kuhn_direct" else "continuous"
        return ParamSchedule(mode, tuple(((b,), self.stage_length) for b in KUHN_BETS[self.schedule]))

    def label(self) -> str:
        parts = [self.game]
        if self.schedule != "none":
            parts.append(self.schedule)
        parts.append(self.algo)
        if self.algo == "reg-rd":
            parts.append(f"lam{self.lam:g}_k{self.k_ref}")
        parts.append(f"sigma{parse_noise(self.noise).sigma:g}")
        return "_".join(parts)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eval_interval"] = self.resolved_eval_interval
        out["seeds"] = format_seeds(self.seed_list)
        out["noise"] = parse_noise(self.noise).spec()
        out["eta"] = parse_step_schedule(self.eta).spec()
        return out


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value: str):
    kind = FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"field {key!r}: cannot read {value!r} as {kind}") from None
    return value.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, tuple[object, int]]:
    """Flat ``key = value`` lines; ``#`` starts a comment.  Returns key -> (value, line number)."""
    out: dict[str, tuple[object, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {out[key][1]})")
        try:
            out[key] = (_coerce(key, value), lineno)
        except ConfigError as err:
            raise ConfigError(f"{source}:{lineno}: {err}") from None
    return out


def resolve_config(file_values: dict[str, tuple[object, int]] | None = None,
                   overrides: dict[str, object] | None = None, source: str = "<config>") -> ExperimentConfig:
    """Defaults, then file values, then command-line overrides.

    Validation errors name the file line of the offending key when one key
    alone triggers them; cross-field conflicts list every file key involved.
    """
    file_values = file_values or {}
    values = {k: v for k, (v, _) in file_values.items()}
    from_cli = set()
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v) if isinstance(v, str) else v
            from_cli.add(k)
    try:
        return ExperimentConfig(**values)
    except ConfigError as err:
        blamed = []
        for k, (v, ln) in file_values.items():
            if k in from_cli:
                continue
            try:
                ExperimentConfig(**{k: v})
            except ConfigError:
                blamed.append((ln, k))
        if blamed:
            ln, k = min(blamed)
            raise ConfigError(f"{source}:{ln}: field {k!r}: {err}") from None
        keys = sorted((ln, k) for k, (_, ln) in file_values.items() if k not in from_cli)
        hint = ", ".join(f"{k} (line {ln})" for ln, k in keys)
        raise ConfigError(f"{err}" + (f" [{source} keys: {hint}]" if hint else "")) from None


def load_config(path: str | Path, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return resolve_config(parse_config_text(text, str(path)), overrides, str(path))


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _build_environment(cfg: ExperimentConfig):
    schedule = cfg.param_schedule()
    if cfg.is_efg:
        if schedule is not None:
            return EfgEnvironment(bet_schedule=schedule)
        return EfgEnvironment(efg.build_tree(cfg.game))
    if schedule is not None:
        return NfgEnvironment(schedule=schedule, with_fourth_action=cfg.game == "brps_w")
    params = [float(p) for p in cfg.params.split(",")] if cfg.params else None
    return NfgEnvironment(build_game(cfg.game, params))


def _run_seeds(cfg: ExperimentConfig, seeds: tuple[int, ...]) -> Trace:
    env = _build_environment(cfg)
    if cfg.algo == "bnnac":
        return run_bnnac_seeds(env, cfg.bnnac_config(), seeds)
    if cfg.is_efg:
        return run_efg(env, cfg.run_config(), seeds)
    return run_nfg(env, cfg.run_config(), seeds)


def _run_chunk(cfg_dict: dict, seeds: tuple[int, ...]) -> Trace:
    return _run_seeds(ExperimentConfig(**cfg_dict), seeds)


def thread_limit() -> int:
    raw = os.environ.get("BNNLAB_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"BNNLAB_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("BNNLAB_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def merge_traces(parts: list[Trace]) -> Trace:
    """Concatenate seed blocks in the given order."""
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cols = {k: np.concatenate([p.columns[k] for p in parts], axis=1) for k in first.columns}
    return Trace(sum((p.seeds for p in parts), ()), first.t, cols,
                 np.concatenate([p.centroid for p in parts]), np.concatenate([p.final for p in parts]),
                 first.sigma, dict(first.meta))


def run_trace(cfg: ExperimentConfig, threads: int | None = None) -> Trace:
    """Run every seed; seeds are split into contiguous blocks across worker processes."""
    seeds = cfg.seed_list
    threads = min(threads or thread_limit(), len(seeds))
    if threads <= 1:
        return _run_seeds(cfg, seeds)
    blocks = [tuple(b) for b in np.array_split(np.array(seeds), threads) if len(b)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, [asdict(cfg)] * len(blocks), blocks))
    return merge_traces(parts)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def stage_report(trace: Trace, starts: list[int], factor: float = 1.5, floor_fraction: float = 0.1) -> dict:
    """Per-stage mean NashConv and recovery time after each stage change.

    The pre-transition floor is the seed-mean NashConv averaged over the last
    ``floor_fraction`` of the previous stage.  Recovery time is the first
    evaluation time inside the new stage with seed-mean NashConv below
    ``factor`` times that floor, measured from the transition; None when the
    stage ends first.
    """
    m = trace.seed_mean("nash_conv")
    t = trace.t
    ends = starts[1:] + [int(t[-1]) + 1]
    stage_means, recovery, floors = [], [], []
    for k, (lo, hi) in enumerate(zip(starts, ends)):
        inside = (t >= lo) & (t < hi)
        stage_means.append(float(m[inside].mean()) if inside.any() else None)
        if k == 0:
            continue
        prev_lo = starts[k - 1]
        window = (t >= lo - floor_fraction * (lo - prev_lo)) & (t < lo)
        floor = float(m[window].mean()) if window.any() else float("nan")
        floors.append(floor)
        hit = np.nonzero(inside & (m < factor * floor))[0]
        recovery.append(int(t[hit[0]] - lo) if hit.size else None)
    return {"stage_starts": list(starts), "stage_mean_nash_conv": stage_means,
            "pre_transition_floor": floors, "recovery_time": recovery, "recovery_factor": factor}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def summarize(cfg: ExperimentConfig, trace: Trace) -> dict:
    t = trace.t
    g = trace.seed_mean("gamma")
    pos = t > 0
    fit = lyapunov.fit_rate(t[pos], g[pos])
    tail = trace.tail_mask(cfg.tail_fraction)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "label": cfg.label(),
        "config": cfg.to_dict(),
        "seeds": list(trace.seeds),
        "rate_fit": {"window": fit.window, "slope": fit.slope, "intercept": fit.intercept,
                     "r_squared": fit.r_squared, "floor_estimate": fit.floor_estimate, "flags": list(fit.flags)},
        "tail": {
            "fraction": cfg.tail_fraction,
            "gamma_mean": float(g[tail].mean()),
            "gamma_stderr": float(trace.columns["gamma"][tail].mean(axis=0).std(ddof=1) / np.sqrt(len(trace.seeds)))
            if len(trace.seeds) > 1 else 0.0,
            "nash_conv_mean": float(trace.seed_mean("nash_conv")[tail].mean()),
        },
        "final_nash_conv_mean": float(trace.seed_mean("nash_conv")[-1]),
        "floor_events_total": int(trace.columns["floor_events"][-1].sum()),
        "min_external_reach": float(trace.columns["min_external_reach"].min()),
        "meta": trace.meta,
    }
    schedule = cfg.param_schedule()
    if schedule is not None:
        summary["stages"] = stage_report(trace, schedule.stage_starts(), cfg.recovery_factor)
    if not cfg.is_efg:
        env = _build_environment(cfg)
        game = env.game_at(cfg.iters)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cs = lyapunov.centroid_shift(trace.centroid, game, t[tail], g[tail]) if len(g[tail]) > 2 else None
        if cs is not None:
            summary["centroid"] = {"gamma_mean": cs.gamma, "per_seed": cs.per_seed, "stationary": cs.stationary}
        if cfg.resolved_eval_interval == 1:
            etas = trace.columns["eta_t"][:-1, 0]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dc = lyapunov.drift_check(trace.columns["gamma"], etas, trace.sigma, max(game.actions_p1, game.actions_p2))
            summary["drift"] = {"c3": dc.c3, "conforming_fraction": dc.conforming_fraction, "few_seeds": dc.few_seeds}
        if cfg.bias_table and trace.sigma > 0:
            n1 = game.actions_p1
            prof = MixedProfile(trace.final[0, :n1], trace.final[0, n1:])
            rng = np.random.default_rng(np.random.SeedSequence(trace.seeds[0]).spawn(4)[3])
            noise = NoiseModel.from_spec(parse_noise(cfg.noise), rng)
            table = {}
            for p in (1, 2):
                b = lyapunov.estimate_bias(game, prof, p, noise, cfg.bias_samples)
                table[f"player{p}"] = {"beta": b.beta, "beta_se": b.beta_se, "delta": b.delta,
                                       "delta_se": b.delta_se, "identity_residual": b.identity_residual}
            summary["bias_table"] = table
    return _clean(summary)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_seed_csv(path: Path, trace: Trace, index: int) -> None:
    seed = trace.seeds[index]
    cols = trace.columns
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TRACE_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for e, t in enumerate(trace.t):
            w.writerow([
                int(t), seed, _fmt(cols["nash_conv"][e, index]), _fmt(cols["gamma"][e, index]),
                _fmt(cols["s_mass"][e, index]), _fmt(trace.sigma), _fmt(cols["eta_t"][e, index]),
                int(cols["floor_events"][e, index]), _fmt(cols["min_external_reach"][e, index]),
                int(cols["stage_id"][e, index]),
            ])


def write_mean_csv(path: Path, trace: Trace) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {MEAN_SCHEMA} seeds={len(trace.seeds)}\n")
        w = csv.writer(fh, lineterminator="\n")
        header = ["t"] + [f"{m}_{s}" for m in MEAN_METRICS for s in ("mean", "stderr")] + ["stage_id"]
        w.writerow(header)
        means = {m: trace.seed_mean(m) for m in MEAN_METRICS}
        errs = {m: trace.seed_stderr(m) for m in MEAN_METRICS}
        for e, t in enumerate(trace.t):
            row = [int(t)]
            for m in MEAN_METRICS:
                row += [_fmt(means[m][e]), _fmt(errs[m][e])]
            row.append(int(trace.columns["stage_id"][e, 0]))
            w.writerow(row)


def write_outputs(out: Path, cfg: ExperimentConfig, trace: Trace) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    for i, seed in enumerate(trace.seeds):
        write_seed_csv(out / f"seed_{seed}.csv", trace, i)
    write_mean_csv(out / "mean.csv", trace)
    summary = summarize(cfg, trace)
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_experiment(cfg: ExperimentConfig, out: str | Path, threads: int | None = None) -> dict:
    trace = run_trace(cfg, threads)
    return write_outputs(Path(out), cfg, trace)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def reg_rd_grid(base: ExperimentConfig, lams=(0.05, 0.1, 0.2), k_refs=(100, 500)) -> list[ExperimentConfig]:
    return [replace(base, algo="reg-rd", lam=lam, k_ref=k) for lam in lams for k in k_refs]


def compare(configs: list[ExperimentConfig], out: str | Path | None = None, threads: int | None = None) -> dict:
    """Run each configuration on the shared game, seeds and budget; tabulate per-stage behaviour."""
    if len(configs) < 2:
        raise ConfigError("compare needs at least two algorithm configurations")
    shared = ("game", "params", "schedule", "stage_length", "iters", "seeds", "noise")
    ref = configs[0]
    for c in configs[1:]:
        diff = [k for k in shared if getattr(c, k) != getattr(ref, k)]
        if diff:
            raise ConfigError(f"compared runs must share {shared}; {c.label()} differs in {diff}")
    rows = []
    for c in configs:
        trace = run_trace(c, threads)
        if out is not None:
            write_outputs(Path(out) / c.label(), c, trace)
        schedule = c.param_schedule()
        starts = schedule.stage_starts() if schedule is not None else [0]
        report = stage_report(trace, starts, c.recovery_factor)
        rows.append({
            "label": c.label(), "algo": c.algo,
            "lam": c.lam if c.algo == "reg-rd" else None,
            "k_ref": c.k_ref if c.algo == "reg-rd" else None,
            **report,
            "final_stage_mean_nash_conv": report["stage_mean_nash_conv"][-1],
        })
    result = _clean({"schema": "bnnlab-compare v1", "shared": {k: getattr(ref, k) for k in shared}, "rows": rows})
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "compare.json", "w", newline="\n") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_compare_csv(out / "compare.csv", result)
    return result


def write_compare_csv(path: Path, result: dict) -> None:
    rows = result["rows"]
    n_stages = max(len(r["stage_mean_nash_conv"]) for r in rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "algo", "lam", "k_ref"]
                   + [f"stage{k}_mean_nash_conv" for k in range(n_stages)]
                   + [f"recovery_{k}" for k in range(1, n_stages)])
        for r in rows:
            w.writerow([r["label"], r["algo"], "" if r["lam"] is None else r["lam"],
                        "" if r["k_ref"] is None else r["k_ref"]]
                       + ["" if v is None else repr(v) for v in r["stage_mean_nash_conv"]]
                       + ["" if v is None else v for v in r["recovery_time"]])


# ---------------------------------------------------------------------------
# Figure presets
# ---------------------------------------------------------------------------

def appendix_preset(scale: float = 1.0, seeds: str = "0..9") -> dict[str, list[ExperimentConfig]]:
    """Seven experiment groups, one per appendix figure, at desk scale.

    ``scale`` multiplies every iteration budget (stage lengths of the RPS
    schedules are fixed by the schedule itself, so scaled RPS runs stop early).
    """
    def it(n):
        return max(10, int(round(n * scale)))

    groups: dict[str, list[ExperimentConfig]] = {}
    base = ExperimentConfig(seeds=seeds)

    fig1 = []
    for game in ("brps", "brps_w"):
        g = replace(base, game=game, iters=it(100_000))
        fig1 += [g, replace(g, algo="reg-rd")]
    groups["fig1_stationary_brps"] = fig1

    for name, noises in (("fig2_nonstationary_brps", ("gauss:0",)),
                         ("fig3_nonstationary_brps_noise", ("gauss:0.05", "gauss:0.1", "gauss:0.2"))):
        runs_ = []
        for case in (1, 2, 3, 4):
            length = rps_case_schedule(case).total_length
            for noise in noises:
                g = replace(base, schedule=f"rps{case}", iters=it(length), noise=noise)
                runs_ += [g] + reg_rd_grid(g)
        groups[name] = runs_

    leduc = replace(base, game="leduc", iters=it(2_000), seeds="0..2", init="uniform")
    groups["fig4_leduc"] = [replace(leduc, noise=n) for n in ("gauss:0", "gauss:0.1")] + \
        [replace(leduc, algo="reg-rd", noise=n) for n in ("gauss:0", "gauss:0.1")]

    kuhn = replace(base, game="kuhn", iters=it(50_000), init="uniform")
    groups["fig5_kuhn"] = [replace(kuhn, algo=a, noise=n) for a in ("bnnac", "reg-rd") for n in ("gauss:0", "gauss:0.1")]

    for name, sched in (("fig6_kuhn_continuous", "kuhn_continuous"), ("fig7_kuhn_direct", "kuhn_direct")):
        k = replace(kuhn, schedule=sched, stage_length=it(5_000), iters=it(20_000))
        groups[name] = [replace(k, algo=a, noise=n) for a in ("bnnac", "reg-rd") for n in ("gauss:0.05", "gauss:0.1")]
    return groups


def run_figures(out: str | Path, scale: float = 1.0, seeds: str = "0..9", threads: int | None = None) -> dict:
    out = Path(out)
    index = {}
    for name, cfgs in appendix_preset(scale, seeds).items():
        sub = out / name
        index[name] = []
        for c in cfgs:
            run_experiment(c, sub / c.label(), threads)
            index[name].append(c.label())
        emit_plot_data(sub)
    with open(out / "index.json", "w", newline="\n") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

PLOT_COLUMNS = ("t", "nash_conv_mean", "nash_conv_stderr", "nash_conv_lo", "nash_conv_hi",
                "gamma_mean", "gamma_stderr", "gamma_lo", "gamma_hi")


def _read_seed_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# bnnlab-trace"):
            raise ConfigError(f"{path}: not a trace file")
        reader = csv.DictReader(fh)
        rows = list(reader)
    return {k: np.array([float(r[k]) for r in rows]) for k in ("t", "nash_conv", "gamma")}


def emit_plot_data(trace_dir: str | Path) -> list[Path]:
    """Write ``plot/<label>.dat`` (t, mean, stderr, mean -/+ stderr) and a gnuplot stub for every run below the directory."""
    root = Path(trace_dir)
    run_dirs = sorted({p.parent for p in root.rglob("summary.json")})
    if not run_dirs:
        raise ConfigError(f"no traces under {root}")
    plot_dir = root / "plot"
    plot_dir.mkdir(exist_ok=True)
    written = []
    for run in run_dirs:
        summary = json.loads((run / "summary.json").read_text())
        seed_files = sorted(run.glob("seed_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
        if not seed_files:
            continue
        data = [_read_seed_csv(p) for p in seed_files]
        t = data[0]["t"]
        path = plot_dir / f"{summary['label']}.dat"
        cols = [t]
        for metric in ("nash_conv", "gamma"):
            stack = np.stack([d[metric] for d in data], axis=1)
            mean = stack.mean(axis=1)
            se = stack.std(axis=1, ddof=1) / np.sqrt(stack.shape[1]) if stack.shape[1] > 1 else np.zeros_like(mean)
            cols += [mean, se, mean - se, mean + se]
        with open(path, "w", newline="\n") as fh:
            fh.write("# " + " ".join(PLOT_COLUMNS) + f"  seeds={len(data)}\n")
            for row in zip(*cols):
                fh.write(" ".join(_fmt(v) if i else str(int(v)) for i, v in enumerate(row)) + "\n")
        written.append(path)
    script = plot_dir / "plot.gp"
    with open(script, "w", newline="\n") as fh:
        fh.write("set logscale y\nset xlabel 't'\nset ylabel 'NashConv'\nplot \\\n")
        fh.write(", \\\n".join(
            f"  '{p.name}' using 1:4:5 with filledcurves notitle, '{p.name}' using 1:2 with lines title '{p.stem}'"
            for p in written))
        fh.write("\n")
    return written
