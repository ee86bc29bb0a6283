"""
Swarm pipeline command line: describe -> retrieve -> simulate -> report.

Usage:
  python src/cli.py describe data/scenarios/bundled/01_static_hard_gate.json
  python src/cli.py retrieve --query "1 human; 1 before the gate; no obstacles after the gate"
  python src/cli.py run data/scenarios/bundled/01_static_hard_gate.json
  python src/cli.py run SCENARIO --analyzer noisy --lighting inadequate --seed 3
  python src/cli.py run SCENARIO --analyzer remote --endpoint http://host:8000/analyze --image arena.png
  python src/cli.py eval --trials 1000 --lighting optimal
  python src/cli.py dbgen --scenarios data/scenarios --samples 200 --seed 1 --out db.json

Global flags (accepted before or after the command):
  --config FILE   YAML configuration (see config.example.yaml)
  --seed N        overrides sim.seed
  --json          print one JSON document instead of the human report
  -v, --verbose   debug logging on stderr

Precedence: command-line flag > config file > built-in default.

Exit codes: 0 success, 1 usage / IO / validation error, 2 safety violation
(collision or obstacle penetration).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from tqdm import tqdm

from config import BUNDLED_DIR, DB_PATH, OUTPUT_DIR, SCENARIO_DIR, AppConfig, load_config
from dbgen import ScoreWeights, SearchConfig, generate_database
from errors import PenetrationError, SwarmError
from perception import (
    LIGHTING_PRESETS,
    ZERO_NOISE,
    GroundTruthAnalyzer,
    NoisyAnalyzer,
    PerceptionNoise,
    RemoteAnalyzer,
    analyze_ground_truth,
    analyze_noisy,
    trial_seed,
)
from retrieval import load_database, nearest, retrieve, save_database
from scene import Lighting, Scenario, load_scenario, render_description, scenario_files
from svg_plot import write_svg
from swarm_sim import run, write_metrics_json, write_trajectory_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SAFETY = 2

LIGHTING_CHOICES = ("scenario", "optimal", "inadequate", "none")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunReport:
    scenario: str
    analyzer: str
    description: str
    exact: bool
    record_id: int
    distance: float
    kind: str
    profile: dict
    metrics: dict
    outputs: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "analyzer": self.analyzer,
            "description": self.description,
            "exact": self.exact,
            "record_id": self.record_id,
            "distance": self.distance,
            "kind": self.kind,
            "profile": self.profile,
            "metrics": self.metrics,
            "outputs": self.outputs,
        }


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        print("\n".join(lines))


def _noise_for(lighting: str, scenario: Scenario, seed: int) -> PerceptionNoise:
    if lighting == "none":
        base = ZERO_NOISE
    elif lighting == "scenario":
        base = LIGHTING_PRESETS[scenario.lighting]
    else:
        base = LIGHTING_PRESETS[Lighting(lighting)]
    return replace(base, seed=seed)


# ── Commands ───────────────────────────────────────────────────────────────────

def cmd_describe(args, cfg: AppConfig) -> int:
    scenario = load_scenario(args.scenario)
    desc = analyze_ground_truth(scenario)
    text = render_description(desc)
    payload = {"scenario": str(args.scenario), "description": text, "total": desc.total,
               "before": desc.before, "after": desc.after,
               "spacing": desc.spacing.value if desc.spacing else None}
    _emit(args, payload, [text])
    return EXIT_OK


def cmd_retrieve(args, cfg: AppConfig) -> int:
    db = load_database(args.db)
    record, dist = nearest(args.query, db)
    payload = {"query": args.query, "record_id": record.id, "distance": dist,
               "text": record.text, "kind": record.kind.value, "profile": record.profile.to_dict()}
    profile = ", ".join(f"{k}={v}" for k, v in record.profile.to_dict().items())
    _emit(args, payload, [
        f"Record:   {record.id} ({record.kind.value})",
        f"Distance: {dist:.6f}",
        f"Text:     {record.text}",
        f"Profile:  {profile}",
    ])
    return EXIT_OK


def _analyzer(args, cfg: AppConfig, scenario: Scenario):
    if args.analyzer == "ground-truth":
        return GroundTruthAnalyzer()
    if args.analyzer == "noisy":
        return NoisyAnalyzer(_noise_for(args.lighting, scenario, cfg.sim.seed))
    if not cfg.perception.endpoint:
        raise UsageError("--analyzer remote needs --endpoint or perception.endpoint in the config")
    if args.image is None:
        raise UsageError("--analyzer remote needs --image")
    return RemoteAnalyzer(cfg.perception.endpoint, args.image, timeout=cfg.perception.timeout)


def cmd_run(args, cfg: AppConfig) -> int:
    cfg = cfg.with_overrides(max_t=args.max_t, endpoint=args.endpoint)
    scenario_path = Path(args.scenario)
    scenario = load_scenario(scenario_path)
    db = load_database(args.db)
    analyzer = _analyzer(args, cfg, scenario)

    outcome = analyzer.analyze(scenario)
    text = render_description(outcome.description)
    record, dist = nearest(text, db)
    logger.info("Retrieved record %d (%s) at distance %.6f", record.id, record.kind.value, dist)

    result = run(scenario, record.profile, cfg.sim)
    out_dir = Path(args.out) if args.out else OUTPUT_DIR / scenario_path.stem
    outputs = {
        "trajectory": out_dir / "trajectory.csv",
        "metrics": out_dir / "metrics.json",
        "plot": out_dir / "plot.svg",
    }
    write_trajectory_csv(result.trajectories, outputs["trajectory"])
    write_metrics_json(result.metrics, outputs["metrics"])
    write_svg(scenario, result.trajectories, outputs["plot"])

    m = result.metrics
    report = RunReport(str(scenario_path), analyzer.name, text, outcome.exact, record.id, dist,
                       record.kind.value, record.profile.to_dict(), m.to_dict(),
                       {k: str(v) for k, v in outputs.items()})
    goal = f"goal reached at {m.goal_reach_time:.2f} s" if m.goal_reached else f"goal not reached in {m.duration:.2f} s"
    profile = ", ".join(f"{k}={v}" for k, v in report.profile.items())
    _emit(args, report.to_dict(), [
        f"Scenario:    {scenario_path}",
        f"Analyzer:    {analyzer.name} ({'exact' if outcome.exact else 'inexact'})",
        f"Description: {text}",
        f"Retrieved:   record {record.id} ({record.kind.value}), distance {dist:.6f}",
        f"Profile:     {profile}",
        f"Result:      {goal}, {m.collisions} collisions, "
        f"min clearance {m.min_obstacle_clearance:.3f} m, leader max speed {m.max_speed[0]:.3f} m/s",
        f"Deflection:  max {m.max_deflection:.3f} m, settle {m.settle_time:.2f} s",
        *(f"Wrote:       {p}" for p in report.outputs.values()),
    ])
    return EXIT_SAFETY if m.collisions else EXIT_OK


EVAL_FIELDS = ["scenario", "lighting", "trials", "detection_rate", "retrieval_rate",
               "success_rate", "mean_latency_ms", "completion_time"]


def cmd_eval(args, cfg: AppConfig) -> int:
    paths = scenario_files(args.scenarios)
    if not paths:
        raise UsageError(f"no scenario files under {args.scenarios}")
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    db = load_database(args.db)
    seed = cfg.sim.seed

    rows = []
    totals = {"exact": 0, "retrieved": 0, "success": 0, "latency": 0.0}
    bar = tqdm(total=len(paths) * args.trials, desc="Evaluating", unit="trial", disable=args.json)
    for idx, path in enumerate(paths):
        scenario = load_scenario(path)
        truth = retrieve(render_description(analyze_ground_truth(scenario)), db)
        exact = retrieved = success = 0
        latency = 0.0
        for trial in range(args.trials):
            noise = _noise_for(args.lighting, scenario, trial_seed(seed, idx, trial))
            started = time.perf_counter()
            outcome = analyze_noisy(scenario, noise)
            record = retrieve(render_description(outcome.description), db)
            latency += time.perf_counter() - started
            hit = record.id == truth.id
            exact += outcome.exact
            retrieved += hit
            success += outcome.exact and hit
            bar.update(1)
        completion = None
        if args.simulate:
            m = run(scenario, truth.profile, cfg.sim).metrics
            completion = m.goal_reach_time
        lighting = scenario.lighting.value if args.lighting == "scenario" else args.lighting
        rows.append({
            "scenario": path.stem, "lighting": lighting, "trials": args.trials,
            "detection_rate": exact / args.trials, "retrieval_rate": retrieved / args.trials,
            "success_rate": success / args.trials,
            "mean_latency_ms": 1000.0 * latency / args.trials, "completion_time": completion,
        })
        for key, value in (("exact", exact), ("retrieved", retrieved), ("success", success), ("latency", latency)):
            totals[key] += value
    bar.close()

    n = len(paths) * args.trials
    overall = {
        "scenario": "overall", "lighting": args.lighting, "trials": n,
        "detection_rate": totals["exact"] / n, "retrieval_rate": totals["retrieved"] / n,
        "success_rate": totals["success"] / n, "mean_latency_ms": 1000.0 * totals["latency"] / n,
        "completion_time": None,
    }

    csv_path = Path(args.csv) if args.csv else OUTPUT_DIR / "eval.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_FIELDS)
        writer.writeheader()
        writer.writerows(rows + [overall])

    lines = [f"{'Scenario':<30} {'Lighting':<11} {'Detect':>7} {'Retrieve':>9} {'Success':>8} {'ms':>8} {'Done (s)':>9}",
             "-" * 86]
    for row in rows + [overall]:
        done = "" if row["completion_time"] is None else f"{row['completion_time']:.2f}"
        lines.append(f"{row['scenario']:<30} {row['lighting']:<11} {row['detection_rate']:>7.3f} "
                     f"{row['retrieval_rate']:>9.3f} {row['success_rate']:>8.3f} "
                     f"{row['mean_latency_ms']:>8.3f} {done:>9}")
    lines.append(f"Wrote {csv_path}")
    _emit(args, {"rows": rows, "overall": overall, "csv": str(csv_path)}, lines)
    return EXIT_OK


def cmd_dbgen(args, cfg: AppConfig) -> int:
    root = Path(args.scenarios)
    paths = scenario_files(root)
    if not paths:
        raise UsageError(f"no scenario files under {root}")
    named = [(str(p.relative_to(root)), load_scenario(p)) for p in paths]
    search = SearchConfig(samples=args.samples, seed=cfg.sim.seed, weights=ScoreWeights(*args.weights),
                          workers=args.workers, sim=cfg.sim)
    print(f"Searching {len(named)} scenarios x {args.samples} samples (seed {search.seed})", file=sys.stderr)
    records = generate_database(named, search, progress=not args.json)
    save_database(records, args.out)
    payload = {"out": str(args.out), "records": len(records), "samples": args.samples, "seed": search.seed}
    _emit(args, payload, [f"Wrote {len(records)} records to {args.out}"])
    return EXIT_OK


# ── Argument parsing ───────────────────────────────────────────────────────────

def _common_flags(defaults: bool) -> argparse.ArgumentParser:
    """Global flags; subcommand copies use SUPPRESS so they only override when given."""
    parent = _Parser(add_help=False)
    default = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    parent.add_argument("--config", type=Path, default=default(None), help="YAML configuration file")
    parent.add_argument("--seed", type=int, default=default(None), help="random seed (overrides sim.seed)")
    parent.add_argument("--json", action="store_true", default=default(False), help="print JSON instead of text")
    parent.add_argument("-v", "--verbose", action="store_true", default=default(False), help="debug logging")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="Precedence: command-line flag > config file > built-in default.",
                     parents=[_common_flags(True)])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags(False)

    p = sub.add_parser("run", parents=[common], help="analyze, retrieve and simulate one scenario")
    p.add_argument("scenario", type=Path)
    p.add_argument("--db", type=Path, default=DB_PATH)
    p.add_argument("--analyzer", choices=("ground-truth", "noisy", "remote"), default="ground-truth")
    p.add_argument("--lighting", choices=LIGHTING_CHOICES, default="scenario",
                   help="noise preset for --analyzer noisy (default: the scenario's lighting)")
    p.add_argument("--endpoint", help="remote analyzer URL (overrides perception.endpoint)")
    p.add_argument("--image", type=Path, help="arena image sent to the remote analyzer")
    p.add_argument("--max-t", type=float, help="simulation horizon in seconds (overrides sim.max_t)")
    p.add_argument("--out", type=Path, help="output directory (default: output/<scenario>)")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="repeated noisy detection and retrieval")
    p.add_argument("--scenarios", type=Path, default=BUNDLED_DIR)
    p.add_argument("--db", type=Path, default=DB_PATH)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--lighting", choices=LIGHTING_CHOICES, default="scenario")
    p.add_argument("--simulate", action="store_true", help="also fly each scenario once with its noiseless profile")
    p.add_argument("--csv", type=Path, help="evaluation table (default: output/eval.csv)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("retrieve", parents=[common], help="nearest database record for a description")
    p.add_argument("--query", required=True)
    p.add_argument("--db", type=Path, default=DB_PATH)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("dbgen", parents=[common], help="build a database by random search in simulation")
    p.add_argument("--scenarios", type=Path, default=SCENARIO_DIR)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--weights", type=float, nargs=4, default=(1.0, 1.0, 1.0, 1.0),
                   metavar=("DEFLECTION", "OVERSHOOT", "CLEARANCE", "SETTLE"))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_dbgen)

    p = sub.add_parser("describe", parents=[common], help="ground-truth description of a scenario")
    p.add_argument("scenario", type=Path)
    p.set_defaults(handler=cmd_describe)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed)
        return args.handler(args, cfg)
    except PenetrationError as e:
        print(f"Safety violation: {e}", file=sys.stderr)
        return EXIT_SAFETY
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (SwarmError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
