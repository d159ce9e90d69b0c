"""Command-line surface: discover -> learn-oar -> build-dataset -> baselines
-> meta-opt -> run-benchmark -> report, with JSON/CSV artifacts on disk.

All randomness derives from one --seed via labeled stream splitting; every
artifact carries a schema_version and readers reject unknown majors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import optimizers  # noqa: F401  (registers the baseline algorithms)
from .benchmarks import QueueNetSystem, QueueNetConfig, WarehouseConfig, WarehouseSystem, default_config_path
from .core import best_so_far, project, write_trajectory_csv
from .ensemble import (
    MetaDataset,
    ReplicaSet,
    build_meta_dataset,
    load_meta_dataset,
    optimal_weights,
    save_meta_dataset,
    select_top_k,
    EnsembleSystem,
)
from .errors import ArtifactError, DiscoveryTruncated, SimschedError
from .meta import (
    MetaConfig,
    learn_schedule,
    llm_revision_operator,
    save_report,
    scripted_revision_operator,
)
from .metrics import (
    DEFAULT_LAMBDA,
    DEFAULT_MULTIPLIER,
    PointSystem,
    ReferenceBank,
    SeedPolicy,
    ensure_references,
    score_and_log,
)
from .optimizers import BASELINE_IDS
from .replica import (
    Dataset,
    ReplicaSystem,
    StructuralModel,
    TrainConfig,
    learn_oar,
    load_history_csv,
    save_history_csv,
)
from .rng import child_seed, stream
from .schedule import Schedule, execute_schedule, parse_schedule
from .skeleton import (
    discover_skeleton,
    load_catalog,
    load_skeleton,
    remote_advisor,
    save_skeleton,
    scripted_advisor,
)

log = logging.getLogger("simsched")

SCHEMA_VERSION = "1.0"


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _require_file(path: str, stage: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ArtifactError(f"missing {stage} artifact: {p} (run the {stage} stage first)")
    return p


def _check_schema(doc: dict, path) -> dict:
    version = str(doc.get("schema_version", ""))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ArtifactError(f"{path}: unsupported schema version {version!r}")
    return doc


def _load_json(path, stage: str) -> dict:
    with open(_require_file(path, stage)) as fh:
        return _check_schema(json.load(fh), path)


def _resolve_benchmark(name: str):
    if name in ("warehouse", "queuenet"):
        path = default_config_path(name)
    else:
        path = _require_file(name, "benchmark config")
    with open(path) as fh:
        doc = json.load(fh)
    if "n_products" in doc:
        return WarehouseSystem(WarehouseConfig.from_dict(doc))
    return QueueNetSystem(QueueNetConfig.from_dict(doc))


# ---------------------------------------------------------------------------
# discover
# ---------------------------------------------------------------------------


def cmd_discover(args) -> int:
    catalog = load_catalog(_require_file(args.catalog, "catalog"))
    if args.advisor.startswith("scripted:"):
        truth = load_skeleton(_require_file(args.advisor.split(":", 1)[1], "truth skeleton"))
        advisor = scripted_advisor(truth, args.noise, stream(args.seed, "discover"))
    elif args.advisor == "remote":
        import os

        endpoint = os.environ.get("ADVISOR_ENDPOINT", "")
        if not endpoint:
            return _fail("remote advisor needs ADVISOR_ENDPOINT set")
        advisor = remote_advisor(endpoint, args.model)
    else:
        return _fail(f"unknown advisor {args.advisor!r} (use scripted:<truth-file> or remote)")

    out = Path(args.out)
    if out.exists() and not args.force:
        return _fail(f"refusing to overwrite {out} (pass --force)")

    try:
        skel, history = discover_skeleton(catalog, advisor, args.max_turns)
    except DiscoveryTruncated as exc:
        save_skeleton(exc.skeleton, out)
        print(f"discovery truncated after {exc.history.turn_count} turns; partial skeleton written")
        return 2
    save_skeleton(skel, out)
    print(f"skeleton with {len(skel.edges)} edges written to {out}")
    return 0


# ---------------------------------------------------------------------------
# learn-oar
# ---------------------------------------------------------------------------


def _bounds_from_args(args, data: Dataset):
    if args.benchmark:
        system = _resolve_benchmark(args.benchmark)
        return system.bounds, system.integrality, system.description
    lo = data.X.min(axis=0)
    hi = data.X.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return (
        np.column_stack([lo - 0.05 * span, hi + 0.05 * span]),
        np.zeros(data.X.shape[1], dtype=bool),
        "",
    )


def cmd_learn_oar(args) -> int:
    skel = load_skeleton(_require_file(args.skeleton, "discover"))
    data = load_history_csv(_require_file(args.data, "historical data"), skel)
    cfg = TrainConfig(
        starts=args.starts,
        rounds=args.rounds,
        family=args.family,
        hidden=tuple(args.hidden),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    models: list[StructuralModel] = []
    for j in range(args.repeats):
        model = learn_oar(data, skel, cfg, seed=child_seed(args.seed, "repeat", j))
        models.append(model)
        model.save(out_dir / f"model_{j:02d}.json")
        print(f"repeat {j}: test MSE {model.mse_test:.6g}")

    rset = ReplicaSet([(m, m.mse_test) for m in models])
    top = select_top_k(rset, args.top_k)
    w_star = optimal_weights(top.mses, args.eps)
    bounds, integrality, description = _bounds_from_args(args, data)

    index_of = {id(m): j for j, (m, _) in enumerate(rset.members)}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "models": [f"model_{index_of[id(m)]:02d}.json" for m, _ in top.members],
        "mses": [float(mse) for _, mse in top.members],
        "all_models": [f"model_{j:02d}.json" for j in range(args.repeats)],
        "all_mses": [float(m.mse_test) for m in models],
        "top_k": args.top_k,
        "w_star": [float(w) for w in w_star],
        "bounds": bounds.tolist(),
        "integrality": integrality.tolist(),
        "description": description,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.repeats} models and manifest to {out_dir}")
    return 0


def _load_ensemble(manifest_path):
    manifest = _load_json(manifest_path, "learn-oar")
    base = Path(manifest_path).parent
    models = [StructuralModel.load(base / name) for name in manifest["models"]]
    bounds = np.array(manifest["bounds"], dtype=float)
    integrality = np.array(manifest["integrality"], dtype=bool)
    return manifest, models, bounds, integrality


def _point_systems(dataset: MetaDataset, models, bounds, integrality, description=""):
    systems = [ReplicaSystem(m, bounds, integrality) for m in models]
    return [
        PointSystem(
            point_id=i,
            system=EnsembleSystem(systems, p.w, bounds, integrality, description),
            omega=p.omega,
        )
        for i, p in enumerate(dataset.points)
    ]


# ---------------------------------------------------------------------------
# build-dataset
# ---------------------------------------------------------------------------


def cmd_build_dataset(args) -> int:
    manifest = _load_json(args.manifest, "learn-oar")
    params = {
        "L": args.ladder,
        "tau_min": args.tau_min,
        "rho": args.rho,
        "delta": args.delta,
        "alpha": args.alpha,
        "beta": args.beta,
        "eps": args.eps,
        "strata": args.strata,
        "ratios": tuple(args.ratios),
    }
    dataset = build_meta_dataset(
        manifest["mses"], M=args.points, params=params, rng=stream(args.seed, "dataset")
    )
    save_meta_dataset(dataset, args.out)
    sizes = {k: len(v) for k, v in dataset.splits.items()}
    print(f"meta-dataset with {len(dataset.points)} points written to {args.out} (splits {sizes})")
    return 0


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def cmd_baselines(args) -> int:
    manifest, models, bounds, integrality = _load_ensemble(args.manifest)
    dataset = MetaDataset.from_dict(_load_json(args.dataset, "build-dataset"))
    points = _point_systems(dataset, models, bounds, integrality, manifest.get("description", ""))

    seeds = SeedPolicy(child_seed(args.seed, "evaluation"))
    refs = ReferenceBank(algorithm=args.reference_algorithm)
    ensure_references(points, args.budget, refs, seeds, args.multiplier)

    table: dict[str, dict] = {}
    for algo in args.baselines:
        result = score_and_log(
            Schedule([(algo, args.budget)]), points, args.budget,
            DEFAULT_LAMBDA, refs, seeds, multiplier=args.multiplier, jobs=args.jobs,
        )
        table[algo] = {str(r["id"]): {"u": r["u"], "s": r["s"]} for r in result.per_point}
        print(f"baseline {algo}: weighted score {result.S:.4f}")

    doc = {
        "schema_version": SCHEMA_VERSION,
        "budget": args.budget,
        "multiplier": args.multiplier,
        "seed": args.seed,
        "baselines": list(args.baselines),
        "refs": refs.to_dict(),
        "table": table,
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    print(f"baseline table and reference optima written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# meta-opt
# ---------------------------------------------------------------------------


def _make_operator(spec: str, seed: int):
    if spec.startswith("scripted"):
        strategy = spec.split(":", 1)[1] if ":" in spec else "cycle"
        return scripted_revision_operator(strategy, stream(seed, "operator"))
    if spec == "llm":
        import os

        endpoint = os.environ.get("ADVISOR_ENDPOINT", "")
        if not endpoint:
            raise ArtifactError("llm operator needs ADVISOR_ENDPOINT set")
        return llm_revision_operator(endpoint, os.environ.get("ADVISOR_MODEL", "default"))
    raise ArtifactError(f"unknown operator {spec!r}")


def cmd_meta_opt(args) -> int:
    manifest, models, bounds, integrality = _load_ensemble(args.manifest)
    dataset = MetaDataset.from_dict(_load_json(args.dataset, "build-dataset"))
    baselines_doc = _load_json(args.baselines, "baselines")
    if baselines_doc["budget"] != args.budget:
        return _fail(
            f"baselines were collected at budget {baselines_doc['budget']}, got {args.budget}"
        )
    points = _point_systems(dataset, models, bounds, integrality, manifest.get("description", ""))
    refs = ReferenceBank.from_dict(baselines_doc["refs"])
    operator = _make_operator(args.operator, args.seed)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.jsonl"
    history_fh = open(history_path, "a")

    def sink(record: dict) -> None:
        history_fh.write(json.dumps(record, sort_keys=True) + "\n")

    config = MetaConfig(
        budget=args.budget,
        runs=args.runs,
        epochs=args.epochs,
        t_rev=args.revisions,
        eps_gap=args.eps_gap,
        baselines=tuple(baselines_doc["baselines"]),
        seed=child_seed(args.seed, "evaluation"),
        multiplier=baselines_doc["multiplier"],
        jobs=args.jobs,
    )
    try:
        pi_star, report = learn_schedule(
            dataset, points, config, operator, refs=refs,
            baseline_table=baselines_doc["table"], history_sink=sink,
        )
    finally:
        history_fh.close()
    save_report(report, out_dir / "report.json")
    print(f"learned schedule: {pi_star} (test score {report['S_test']:.4f})")
    print(f"report written to {out_dir / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# run-benchmark
# ---------------------------------------------------------------------------


def _method_filename(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_()" else "_" for c in label.replace("->", "_"))


def cmd_run_benchmark(args) -> int:
    system = _resolve_benchmark(args.config)

    if args.sample:
        rng = stream(args.seed, "sample")
        lo, hi = system.bounds[:, 0], system.bounds[:, 1]
        X = np.array(
            [project(lo + rng.random(system.dimension) * (hi - lo),
                     system.bounds, system.integrality)
             for _ in range(args.sample)]
        )
        ys = np.array(
            [system.evaluate(x, stream(args.seed, "sample-eval", i)) for i, x in enumerate(X)]
        )
        save_history_csv(Dataset(X, ys), args.out_data)
        print(f"{args.sample} samples written to {args.out_data}")
        return 0

    if not args.schedule:
        return _fail("pass --schedule (or --sample N with --out-data)")
    schedule = parse_schedule(args.schedule)
    if args.budget and schedule.total != args.budget:
        return _fail(f"schedule consumes {schedule.total} evaluations, expected {args.budget}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = args.name or _method_filename(str(schedule))

    finals = []
    for k in range(args.seeds):
        run_seed = child_seed(args.seed, "benchmark-run", k)
        traj, _ = execute_schedule(system, schedule, run_seed)
        write_trajectory_csv(traj, out_dir / f"{label}__seed{k}.csv")
        finals.append(best_so_far(traj)[-1])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "method": str(schedule),
        "label": label,
        "seeds": args.seeds,
        "final_best": [float(v) for v in finals],
        "mean": float(np.mean(finals)),
        "std": float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0,
    }
    with open(out_dir / f"{label}__summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"{label}: mean best {summary['mean']:.4f} +- {summary['std']:.4f} over {args.seeds} seeds")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _collect_runs(runs_dir: Path):
    methods: dict[str, list[Path]] = {}
    for path in sorted(runs_dir.glob("*__seed*.csv")):
        label = path.name.rsplit("__seed", 1)[0]
        methods.setdefault(label, []).append(path)
    return methods


def _read_best_column(path: Path) -> np.ndarray:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        col = header.index("best_so_far")
        return np.array([float(row[col]) for row in reader])


def cmd_report(args) -> int:
    runs_dir = Path(args.runs_dir)
    if not runs_dir.exists():
        return _fail(f"missing run-benchmark artifacts: {runs_dir} (run the run-benchmark stage first)")
    methods = _collect_runs(runs_dir)
    if not methods:
        return _fail(f"no trajectory CSVs found under {runs_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for label, paths in sorted(methods.items()):
        curves = [_read_best_column(p) for p in paths]
        T = min(len(c) for c in curves)
        stacked = np.vstack([c[:T] for c in curves])
        finals = stacked[:, -1]
        rows.append(
            (label, float(np.mean(finals)),
             float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0, len(paths))
        )
        with open(out_dir / f"curve_{label}.csv", "w") as fh:
            fh.write("step,mean_best,std_best\n")
            for t in range(T):
                col = stacked[:, t]
                sd = float(np.std(col, ddof=1)) if len(col) > 1 else 0.0
                fh.write(f"{t + 1},{format(float(np.mean(col)), '.9g')},{format(sd, '.9g')}\n")

    with open(out_dir / "summary.csv", "w") as fh:
        fh.write("method,mean,std,n_seeds\n")
        for label, mean, std, n in rows:
            fh.write(f"{label},{format(mean, '.9g')},{format(std, '.9g')},{n}\n")

    if args.meta_report:
        meta = _load_json(args.meta_report, "meta-opt")
        with open(out_dir / "meta_summary.json", "w") as fh:
            json.dump(
                {"schema_version": SCHEMA_VERSION, "pi_star": meta["pi_star"],
                 "S_test": meta["S_test"]},
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")
    print(f"summary for {len(rows)} methods written to {out_dir / 'summary.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simsched",
        description="Learn structural replicas of a stochastic system and use them "
        "to learn a phased simulation-optimization schedule.",
    )
    parser.add_argument("--seed", type=int, default=0, help="master seed for all stages")
    parser.add_argument("--jobs", type=int, default=1, help="max parallel workers")
    parser.add_argument("-v", "--verbose", action="store_true")

    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discover", parents=[common],
                       help="infer a causal skeleton from a variable catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--advisor", required=True, help="scripted:<truth-file> or remote")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--noise", type=float, default=0.0, help="scripted advisor noise rate")
    p.add_argument("--max-turns", type=int, default=None)
    p.add_argument("--model", default="default", help="remote advisor model name")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("learn-oar", parents=[common], help="learn replica models on the skeleton")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--repeats", type=int, default=5, help="independent constructions J")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--family", default="mlp", choices=["mlp", "linear"])
    p.add_argument("--hidden", type=int, nargs="+", default=[16])
    p.add_argument("--eps", type=float, default=1e-6, help="weight stabilizer")
    p.add_argument("--benchmark", default="", help="benchmark config supplying bounds")
    p.set_defaults(func=cmd_learn_oar)

    p = sub.add_parser("build-dataset", parents=[common], help="sample the weighted ensemble meta-dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--points", "-M", type=int, default=60)
    p.add_argument("--out", required=True)
    p.add_argument("--ladder", "-L", type=int, default=4)
    p.add_argument("--tau-min", type=float, default=5.0)
    p.add_argument("--rho", type=float, default=3.0)
    p.add_argument("--delta", type=float, default=0.02)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--strata", type=int, default=3)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.7, 0.15, 0.15])
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("baselines", parents=[common], help="score baselines and cache reference optima")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--multiplier", type=int, default=DEFAULT_MULTIPLIER)
    p.add_argument("--baselines", nargs="+", default=list(BASELINE_IDS))
    p.add_argument("--reference-algorithm", default="BO-EI")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("meta-opt", parents=[common], help="learn a schedule on the replica ensemble")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--baselines", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--operator", default="scripted", help="scripted[:strategy] or llm")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--revisions", type=int, default=5)
    p.add_argument("--eps-gap", type=float, default=0.05)
    p.set_defaults(func=cmd_meta_opt)

    p = sub.add_parser("run-benchmark", parents=[common], help="run a schedule on a benchmark, or sample data")
    p.add_argument("--config", required=True, help="warehouse, queuenet, or a config path")
    p.add_argument("--schedule", default="", help='e.g. "BO-EI(50)->GA(50)"')
    p.add_argument("--budget", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--name", default="", help="method label for output files")
    p.add_argument("--sample", type=int, default=0, help="generate N historical samples")
    p.add_argument("--out-data", default="history.csv")
    p.set_defaults(func=cmd_run_benchmark)

    p = sub.add_parser("report", parents=[common], help="summarize benchmark runs (mean/std and curves)")
    p.add_argument("--runs-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--meta-report", default="")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except SimschedError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"missing file: {exc.filename}")


if __name__ == "__main__":
    sys.exit(main())
