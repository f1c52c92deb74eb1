"""Command-line pipeline: one run directory, one subcommand per stage.

Typical session on the bundled fixture::

    qdpo --config fixture --out run --seed 7 ingest
    qdpo --out run --seed 7 build
    qdpo --out run --seed 7 solve-vqe
    qdpo --out run --seed 7 isqr
    qdpo --out run --seed 7 baseline
    qdpo --out run --seed 7 frontier
    qdpo --out run --seed 7 report

Every stage reads what earlier stages left in ``--out`` and records the files
it wrote (with SHA-256 digests) in ``manifest.json``. Errors raised by the
library are printed as one JSON object on stderr and written to
``error.json``; the exit status is then 1.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    DEFAULT_RFR,
    efficient_frontier,
    normalized_strategy,
    scores_from_weights,
)
from .baselines import (
    MAX_EXHAUSTIVE,
    exhaustive_solve,
    pct_below_offset,
    random_baseline,
    simulated_annealing,
)
from .exceptions import QdpoError
from .isqr import IsqrConfig, isqr_run, write_trace
from .market import MarketTensors, load_prices, market_tensors
from .model import (
    QuadraticForm,
    bits_to_str,
    build_qubo,
    encode_weights,
    problem_from_config,
    qubo_to_ising,
)
from .simulator import SampleSet, build_ansatz
from .variational import DeConfig, vqe_solve, vqec_solve, write_run

STAGES = ("ingest", "build", "solve-vqe", "solve-vqec", "isqr", "baseline", "frontier", "report")
REPORT_FIELDS = ("row", "min_cost", "pct_below_offset", "bitstring", "ann_sharpe",
                 "ann_eff_return", "ann_volatility", "passes_marr")


class CliError(Exception):
    """Missing run artifact or unusable arguments."""


# ------------------------------------------------------------------ helpers

def stage_seed(master, stage):
    """Independent 32-bit seed for ``stage`` derived from the master seed."""
    ss = np.random.SeedSequence(master, spawn_key=(STAGES.index(stage),))
    return int(ss.generate_state(1)[0])


def resolve_threads(value):
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("QDPO_THREADS")
    return max(1, int(env)) if env else 1


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing {path}; run the stage that produces it first")
    return json.loads(path.read_text(encoding="utf-8"))


def fixture_config_path():
    return Path(resources.files("qdpo") / "data" / "fixture_config.json")


class Run:
    """Paths and shared state of one run directory."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name):
        return self.out / name

    def wrote(self, *paths):
        self.written.extend(Path(p) for p in paths)

    def config(self):
        return load_json(self.path("config.json"))

    def problem(self):
        tensors = MarketTensors.from_dict(load_json(self.path("market.json")))
        return problem_from_config(self.config(), tensors)

    def seed(self, stage):
        return stage_seed(self.args.seed, stage)

    def de_config(self, stage):
        a = self.args
        return DeConfig(population=a.population, max_generations=a.generations,
                        base_generations=min(20, a.generations), conv_tol=a.conv_tol,
                        seed=self.seed(stage), workers=resolve_threads(a.threads))

    def manifest(self, started):
        path = self.path("manifest.json")
        data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"runs": []}
        files = data.get("files", {})
        for p in self.written:
            files[str(p.relative_to(self.out))] = sha256(p)
        data["files"] = dict(sorted(files.items()))
        data["runs"].append({
            "subcommand": self.args.command,
            "config": str(self.args.config) if self.args.config else None,
            "seed": self.args.seed,
            "out": str(self.out),
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": sorted(str(p.relative_to(self.out)) for p in self.written),
            "version": __version__,
        })
        dump_json(data, path)


# ----------------------------------------------------------------- commands

def cmd_ingest(run):
    a = run.args
    if not a.config:
        raise CliError("ingest needs --config (a JSON file, or 'fixture')")
    cfg_path = fixture_config_path() if a.config == "fixture" else Path(a.config)
    cfg = load_json(cfg_path)
    prices_src = Path(cfg["prices"])
    if not prices_src.is_absolute():
        prices_src = cfg_path.parent / prices_src
    tickers = [x["ticker"] for x in cfg["assets"]]
    ps = load_prices(prices_src, tickers, align=cfg.get("align", "strict"))
    tz = market_tensors(ps, int(cfg["delta_t"]), int(cfg["dims"]["n_t"]),
                        float(cfg["epsilon"]), cfg.get("calendar", "calendar"))
    shutil.copyfile(prices_src, run.path("prices.csv"))
    dump_json({**cfg, "prices": "prices.csv"}, run.path("config.json"))
    dump_json(tz.to_dict(), run.path("market.json"))
    run.wrote(run.path("prices.csv"), run.path("config.json"), run.path("market.json"))


def cmd_build(run):
    problem = run.problem()
    q = build_qubo(problem)
    q.save(run.path("qubo.json"))
    qubo_to_ising(q).save(run.path("ising.json"))
    build_ansatz(problem.n_a, problem.n_r, problem.n_t, "vqe",
                 max_qubits=run.args.max_qubits).save(run.path("ansatz.json"))
    run.wrote(run.path("qubo.json"), run.path("ising.json"), run.path("ansatz.json"))


def cmd_solve_vqe(run):
    a = run.args
    problem = run.problem()
    spec = build_ansatz(problem.n_a, problem.n_r, problem.n_t, "vqe", max_qubits=a.max_qubits)
    samples, hist = vqe_solve(problem, spec, run.de_config("solve-vqe"), a.shots, a.noise_p)
    write_run(run.out, hist, hist.best_theta, samples)
    run.wrote(*(run.path(n) for n in ("history.csv", "theta.json", "samples.csv")))


def cmd_solve_vqec(run):
    a = run.args
    problem = run.problem()
    res = vqec_solve(problem, run.de_config("solve-vqec"), a.shots, a.noise_p,
                     normalize=not a.raw_chain, max_qubits=a.max_qubits)
    root = run.path("vqec")
    for t, (ss, hist) in enumerate(zip(res.samples, res.histories)):
        d = root / f"t{t}"
        write_run(d, hist, hist.best_theta, ss)
        run.wrote(d / "history.csv", d / "theta.json", d / "samples.csv")
    dump_json({
        "weights": res.strategy.weights.tolist(),
        "normalized": res.strategy.normalized,
        "bitstring": res.strategy.source_bits,
        "step_costs": [float(c) for c in res.step_costs],
    }, root / "strategy.json")
    run.wrote(root / "strategy.json")


def cmd_isqr(run):
    a = run.args
    problem = run.problem()
    samples = SampleSet.from_csv(a.samples or run.path("samples.csv"))
    q = QuadraticForm.load(a.qubo or run.path("qubo.json"))
    cfg = IsqrConfig(n_batches=a.batches, filling_threshold=a.theta_f, leak_slope=a.delta,
                     max_iterations=a.max_iterations, conv_tol=a.isqr_tol,
                     seed=run.seed("isqr"), flip_mode=a.flip_mode)
    corrected, trace = isqr_run(samples, q, cfg, problem)
    corrected.to_csv(run.path("corrected.csv"))
    write_trace(trace, run.path("trace.csv"))
    run.wrote(run.path("corrected.csv"), run.path("trace.csv"))


def cmd_baseline(run):
    a = run.args
    q = QuadraticForm.load(run.path("qubo.json"))
    seeds = np.random.SeedSequence(run.seed("baseline")).generate_state(2)
    dist = random_baseline(q, a.random_samples, seed=int(seeds[0]))
    dist.to_csv(run.path("random_distribution.csv"))
    sa_bits, sa_cost = simulated_annealing(q, a.sa_sweeps, seed=int(seeds[1]))
    out = {
        "offset": dist.offset,
        "random": {"n": int(len(dist.costs)), "min_cost": dist.min_cost,
                   "pct_below_offset": dist.pct_below_offset},
        "sa": {"bitstring": bits_to_str(sa_bits), "cost": sa_cost, "sweeps": a.sa_sweeps},
        "exhaustive": None,
    }
    if q.n_vars <= MAX_EXHAUSTIVE:
        ex_bits, ex_cost = exhaustive_solve(q)
        out["exhaustive"] = {"bitstring": bits_to_str(ex_bits), "cost": ex_cost}
    dump_json(out, run.path("baseline.json"))
    run.wrote(run.path("random_distribution.csv"), run.path("baseline.json"))


def cmd_frontier(run):
    problem = run.problem()
    tz = problem.tensors
    for t in range(problem.n_t):
        pts = efficient_frontier(tz.mu[t], tz.sigma[t], problem.m, problem.b, run.args.points)
        path = run.path(f"frontier_t{t}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["volatility", "return"])
            for vol, ret in pts:
                w.writerow([repr(vol), repr(ret)])
        run.wrote(path)


def _scores(bits, problem, rfr):
    strat = normalized_strategy(encode_weights(bits, problem), problem)
    rep = scores_from_weights(strat.weights, problem, rfr)
    return {"ann_sharpe": rep.ann_sharpe, "ann_eff_return": rep.ann_eff_return,
            "ann_volatility": rep.ann_volatility, "passes_marr": rep.passes_marr}


def _sample_row(name, samples, q, offset, problem, rfr):
    bits, cost = samples.best(q)
    return {"row": name, "min_cost": cost,
            "pct_below_offset": 100.0 * pct_below_offset(samples, q, offset),
            "bitstring": bits_to_str(bits), **_scores(bits, problem, rfr)}


def _single_row(name, bitstring, cost, offset, problem, rfr):
    bits = np.frombuffer(bitstring.encode(), dtype=np.uint8) - ord("0")
    return {"row": name, "min_cost": cost, "pct_below_offset": 100.0 * float(cost < offset),
            "bitstring": bitstring, **_scores(bits, problem, rfr)}


def cmd_report(run):
    rfr = run.args.rfr
    problem = run.problem()
    q = QuadraticForm.load(run.path("qubo.json"))
    base = load_json(run.path("baseline.json"))
    offset = base["offset"]
    rows = []
    for name, fname in (("raw", "samples.csv"), ("isqr", "corrected.csv")):
        if run.path(fname).exists():
            rows.append(_sample_row(name, SampleSet.from_csv(run.path(fname)), q, offset,
                                    problem, rfr))
    rnd = base["random"]
    rows.append({"row": "random", "min_cost": rnd["min_cost"],
                 "pct_below_offset": 100.0 * rnd["pct_below_offset"], "bitstring": None,
                 "ann_sharpe": None, "ann_eff_return": None, "ann_volatility": None,
                 "passes_marr": None})
    rows.append(_single_row("sa", base["sa"]["bitstring"], base["sa"]["cost"], offset,
                            problem, rfr))
    if base["exhaustive"] is not None:
        ex = base["exhaustive"]
        rows.append(_single_row("exhaustive", ex["bitstring"], ex["cost"], offset, problem, rfr))
    vqec = run.path("vqec") / "strategy.json"
    if vqec.exists():
        s = load_json(vqec)
        rep = scores_from_weights(np.asarray(s["weights"]), problem, rfr)
        rows.append({"row": "vqec", "min_cost": float(sum(s["step_costs"])),
                     "pct_below_offset": None, "bitstring": s["bitstring"],
                     "ann_sharpe": rep.ann_sharpe, "ann_eff_return": rep.ann_eff_return,
                     "ann_volatility": rep.ann_volatility, "passes_marr": rep.passes_marr})
    dump_json({"offset": offset, "rfr": rfr, "rows": rows}, run.path("report.json"))
    with open(run.path("report.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in REPORT_FIELDS])
    run.wrote(run.path("report.json"), run.path("report.csv"))


COMMANDS = {
    "ingest": cmd_ingest,
    "build": cmd_build,
    "solve-vqe": cmd_solve_vqe,
    "solve-vqec": cmd_solve_vqec,
    "isqr": cmd_isqr,
    "baseline": cmd_baseline,
    "frontier": cmd_frontier,
    "report": cmd_report,
}


# ------------------------------------------------------------------- parser

def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="run config JSON, or 'fixture'")
    p.add_argument("--out", default=d("run"), help="run directory (default: ./run)")
    p.add_argument("--seed", type=int, default=d(0), help="master seed")
    p.add_argument("--threads", type=int, default=d(None),
                   help="worker threads (fallback: $QDPO_THREADS, else 1)")


def _solver_flags(p):
    p.add_argument("--population", type=int, default=28)
    p.add_argument("--generations", type=int, default=25, help="hard cap on DE generations")
    p.add_argument("--conv-tol", type=float, default=0.025)
    p.add_argument("--shots", type=int, default=1_000_000)
    p.add_argument("--noise-p", type=float, default=0.0)
    p.add_argument("--max-qubits", type=int, default=24)


def build_parser():
    parser = argparse.ArgumentParser(prog="qdpo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("ingest", parents=[common], help="load prices, write market.json")
    p = sub.add_parser("build", parents=[common], help="write qubo.json, ising.json, ansatz.json")
    p.add_argument("--max-qubits", type=int, default=24)
    _solver_flags(sub.add_parser("solve-vqe", parents=[common], help="full-horizon VQE"))
    p = sub.add_parser("solve-vqec", parents=[common], help="time-chained VQEC")
    _solver_flags(p)
    p.add_argument("--raw-chain", action="store_true",
                   help="pass raw decoded weights between steps instead of normalized ones")

    p = sub.add_parser("isqr", parents=[common], help="configuration recovery on samples")
    p.add_argument("--samples", default=None, help="default: <out>/samples.csv")
    p.add_argument("--qubo", default=None, help="default: <out>/qubo.json")
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--theta-f", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--max-iterations", type=int, default=20)
    p.add_argument("--isqr-tol", type=float, default=0.025)
    p.add_argument("--flip-mode", choices=("targeted", "independent"), default="targeted")

    p = sub.add_parser("baseline", parents=[common], help="random, annealing and exhaustive")
    p.add_argument("--random-samples", type=int, default=1_000_000)
    p.add_argument("--sa-sweeps", type=int, default=10_000)

    p = sub.add_parser("frontier", parents=[common], help="efficient frontier per period")
    p.add_argument("--points", type=int, default=50)

    p = sub.add_parser("report", parents=[common], help="summary table as JSON and CSV")
    p.add_argument("--rfr", type=float, default=DEFAULT_RFR)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    started = datetime.now(timezone.utc).isoformat()
    run = None
    try:
        run = Run(args)
        COMMANDS[args.command](run)
        run.manifest(started)
    except (QdpoError, CliError, ValueError, KeyError, OSError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "subcommand": args.command}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        if run is not None:
            dump_json(payload, run.path("error.json"))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
