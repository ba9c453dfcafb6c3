"""Command-line pipeline: gen-world, collect, annotate, train, eval, report.

Every command writes ``manifest.json`` into its output directory with the
resolved configuration, its hash, the derived seeds, sha256 digests of all
inputs and outputs, and library versions. Paths inside manifests are relative
to the manifest, so two runs in different directories produce identical bytes.

Exit codes: 0 ok, 1 usage, 2 bad or missing data, 3 internal invariant broken.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, gnn
from .annotate import annotate_trajectory
from .behaviors import BehaviorConfig, BehaviorTrainingError, PolicySet, train_policy_set
from .evalsuite import (ConfigurationError, Outcome, RunFrame, RunRecord, Variant, compute_metrics, render_report,
                        run_navigation, run_svg, sample_tasks)
from .fixtures import FixtureKind, gen_fixture_world
from .gln import (CropCache, GlnConfig, LocalizationError, evaluation_examples, eval_localization_accuracy,
                  make_training_examples, train_gln)
from .oracle_nav import CollectionError, NavTask, Trajectory, collect_trajectory, read_trajectory, write_trajectory
from .topomap import BehaviorKind, Difficulty, MapParseError, PlanningError, TopoMap, read_map, validate_map, write_map
from .worldsim import QueryError, RobotState, WorldModel, read_world, write_world

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
MANIFEST = "manifest.json"
COMMANDS = ("gen-world", "collect", "annotate", "train-gln", "train-behaviors", "eval", "report", "demo")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class InvariantError(Exception):
    pass


DATA_ERRORS = (DataError, OSError, json.JSONDecodeError, MapParseError, gnn.CheckpointError, PlanningError,
               LocalizationError, BehaviorTrainingError, CollectionError, QueryError, KeyError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# seeds, hashing, manifests


def derive_seed(master: int, tag: str, *extra: int) -> int:
    """Stable 63-bit stream seed for (master seed, operation tag, indices)."""
    text = ":".join([str(int(master)), tag, *map(str, extra)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def rng_for(master: int, tag: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, tag, *extra))


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn
    return {"graphnav": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


_PATH_KEYS = {"out", "world", "data", "val", "runs", "gln", "behaviors", "config"}


def _portable_config(args: argparse.Namespace, base: Path) -> dict:
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if key in _PATH_KEYS and value is not None:
            if isinstance(value, list):
                value = [os.path.relpath(v, base) for v in value]
            else:
                value = os.path.relpath(value, base)
        cfg[key] = value
    return cfg


def _collect_files(paths: Sequence[Path], base: Path) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file() and q.name != MANIFEST) if p.is_dir() else [p]
        for q in files:
            out[os.path.relpath(q, base)] = file_digest(q)
    return dict(sorted(out.items()))


def write_manifest(args: argparse.Namespace, out_dir: Path, inputs: Sequence[Path], seeds: dict,
                   extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    config = _portable_config(args, out_dir)
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": args.command,
        "config": config,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seeds": seeds,
        "inputs": _collect_files(inputs, out_dir),
        "outputs": _collect_files([out_dir], out_dir),
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise DataError(f"{path}: missing manifest")
    return json.loads(path.read_text())


def _require(path: str | Path, kind: str = "file") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise DataError(f"{p}: no such {kind}")
    return p


def _out_dir(path: str | Path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# dataset helpers


def load_world_dir(world_dir: str | Path) -> tuple[WorldModel, TopoMap]:
    d = _require(world_dir, "dir")
    world = read_world(_require(d / "world.json"))
    topo = read_map(_require(d / "map.json"))
    return world, topo


def _world_of(data_dir: Path) -> Path:
    manifest = read_manifest(data_dir)
    if "world_dir" not in manifest:
        raise DataError(f"{data_dir}: manifest does not name a world")
    return (data_dir / manifest["world_dir"]).resolve()


def load_dataset(data_dir: str | Path) -> tuple[WorldModel, TopoMap, Path, list[Trajectory]]:
    d = _require(data_dir, "dir")
    world_dir = _world_of(d)
    world, topo = load_world_dir(world_dir)
    files = sorted(d.glob("traj_*.jsonl"))
    if not files:
        raise DataError(f"{d}: no trajectory files")
    trajs = []
    for f in files:
        try:
            trajs.append(read_trajectory(f, topo))
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    return world, topo, world_dir, trajs


def _collect_one(job):
    world, topo, task, seed, noise = job
    traj = collect_trajectory(world, topo, task, np.random.default_rng(seed), noise=noise)
    traj.seed = seed
    return traj


def _map_jobs(fn, jobs: list, workers: int) -> list:
    """Ordered map; results do not depend on the worker count."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _workers(args) -> int:
    if args.strict_repro:
        return 1  # serial execution fixes every reduction order
    return max(1, args.workers or os.cpu_count() or 1)


def collection_tasks(topo: TopoMap, n: int, rng: np.random.Generator) -> list[NavTask]:
    """``n`` random reachable (start, goal) pairs; pairs may repeat."""
    ids = topo.node_ids
    tasks = []
    while len(tasks) < n:
        a, b = (int(v) for v in rng.choice(ids, 2, replace=False))
        try:
            tasks.append(NavTask.between(topo, a, b))
        except PlanningError:
            continue
    return tasks


# ---------------------------------------------------------------------------
# commands


def cmd_gen_world(args) -> int:
    out = _out_dir(args.out)
    world, topo = gen_fixture_world(args.kind, args.seed)
    violations = validate_map(topo)
    if violations:
        raise InvariantError(f"generated map violates {len(violations)} constraint(s): {violations[0]}")
    write_world(world, out / "world.json")
    write_map(topo, out / "map.json")
    write_manifest(args, out, [], {"master": args.seed}, {"world_id": world.name, "map_id": topo.name})
    return EXIT_OK


def cmd_collect(args) -> int:
    world, topo = load_world_dir(args.world)
    out = _out_dir(args.out)
    tasks = collection_tasks(topo, args.n, rng_for(args.seed, "collect-tasks"))
    seeds = [derive_seed(args.seed, "collect", i) for i in range(args.n)]
    jobs = [(world, topo, t, s, not args.no_noise) for t, s in zip(tasks, seeds)]
    trajs = _map_jobs(_collect_one, jobs, _workers(args))
    for i, traj in enumerate(trajs):
        write_trajectory(traj, out / f"traj_{i:04d}.jsonl")
    outcomes = {o: sum(t.outcome == o for t in trajs) for o in ("success", "collision", "timeout")}
    write_manifest(args, out, [Path(args.world)], {"master": args.seed, "tasks": seeds},
                   {"world_dir": os.path.relpath(args.world, out), "outcomes": outcomes})
    _log(args, f"collected {len(trajs)} trajectories, {sum(len(t) for t in trajs)} frames, {outcomes}")
    return EXIT_OK


def cmd_annotate(args) -> int:
    world, topo, world_dir, trajs = load_dataset(args.data)
    out = _out_dir(args.out)
    summaries = []
    for i, traj in enumerate(trajs):
        labeled, summary = annotate_trajectory(traj, world, topo)
        for f in labeled.frames:
            lab = f.labels
            if lab.edge is not None and (lab.node is None or topo.edge(lab.edge).src != lab.node):
                raise InvariantError(f"trajectory {i}: edge label {lab.edge} disagrees with node {lab.node}")
        write_trajectory(labeled, out / f"traj_{i:04d}.jsonl")
        summaries.append(summary.to_dict())
    frames = sum(len(t) for t in trajs)
    unlabeled = sum(s["unlabeled_node_fraction"] * len(t) for s, t in zip(summaries, trajs)) / frames
    (out / "annotation.json").write_text(json.dumps({"unlabeled_node_fraction": unlabeled, "trajectories": summaries},
                                                    indent=1, sort_keys=True) + "\n")
    write_manifest(args, out, [Path(args.data)], {"master": args.seed},
                   {"world_dir": os.path.relpath(world_dir, out)})
    _log(args, f"annotated {len(trajs)} trajectories, node-labeled fraction {1 - unlabeled:.3f}")
    return EXIT_OK


def _check_finite(arrays, what: str):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvariantError(f"{what}: non-finite parameters after training")


def cmd_train_gln(args) -> int:
    out = _out_dir(args.out)
    crops = CropCache(args.crop_ahead, args.crop_behind)
    rng = rng_for(args.seed, "gln-augment")
    examples = []
    for d in args.data:
        _, topo, _, trajs = load_dataset(d)
        for traj in trajs:
            examples += make_training_examples(traj, topo, rng, args.samples_per_frame, args.own_source_prob,
                                               n_frames=args.frames, crops=crops)
    if not examples:
        raise DataError("no edge-labeled frames in the training data")
    validation = []
    for d in args.val or []:
        _, topo, _, trajs = load_dataset(d)
        for traj in trajs:
            validation += evaluation_examples(traj, topo, args.frames)
    config = GlnConfig(args.epochs, args.batch, args.lr, derive_seed(args.seed, "gln-train"), args.dim, args.dim,
                       (64, 64, 64), args.frames, args.schedule)
    log = (lambda ep, c: _log(args, f"epoch {ep} loss {c.train_loss[-1]:.4f}"
                                    + (f" val acc {c.val_accuracy[-1]:.3f}" if c.val_accuracy else "")))
    params, curve = train_gln(examples, config, validation or None, crops=crops, log=log)
    _check_finite(params.arrays(), "gln")
    params.config.update({"crop_ahead": args.crop_ahead, "crop_behind": args.crop_behind})
    gnn.save_checkpoint(params, out / "gln.json")
    result = {"examples": len(examples), "curve": curve.to_dict()}
    if validation:
        result["val_accuracy"] = eval_localization_accuracy(params, validation, crops)
    (out / "training.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    write_manifest(args, out, [Path(d) for d in args.data + (args.val or [])],
                   {"master": args.seed, "augment": derive_seed(args.seed, "gln-augment"), "train": config.seed})
    return EXIT_OK


def cmd_train_behaviors(args) -> int:
    out = _out_dir(args.out)
    trajs = []
    for d in args.data:
        trajs += load_dataset(d)[3]
    kinds = list(BehaviorKind) if args.behavior == "all" else [BehaviorKind(args.behavior)]
    config = BehaviorConfig(args.epochs, args.batch, args.lr, derive_seed(args.seed, "behaviors"), (64, 64, 64),
                            args.schedule)
    policies = train_policy_set(trajs, kinds, config, args.frames,
                                log=lambda k, ep, loss: _log(args, f"{k.value} epoch {ep} mse {loss:.5f}"))
    for net in policies.nets.values():
        _check_finite([a for _, a in net.named("")], "behaviors")
    policies.save(out / "policies.json")
    (out / "training.json").write_text(json.dumps({k.value: c for k, c in policies.curves.items()}, indent=1,
                                                  sort_keys=True) + "\n")
    write_manifest(args, out, [Path(d) for d in args.data], {"master": args.seed, "train": config.seed})
    return EXIT_OK


def _eval_one(job):
    world, topo, task, variant, controller, gln_params, crop, seed, task_id = job
    crops = CropCache(*crop)
    record = run_navigation(world, topo, task, variant, controller, gln_params, seed=seed, crops=crops)
    record.task_id = task_id
    return record


def write_run(record: RunRecord, path: Path) -> None:
    data = record.to_dict()
    frames = data.pop("frames")
    with path.open("w") as fh:
        for f in frames:
            fh.write(json.dumps(f) + "\n")
    data["frames"] = len(frames)
    path.with_suffix(".meta.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def read_run(path: Path, topo: TopoMap) -> RunRecord:
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    frames = []
    with path.open() as fh:
        for line in fh:
            if line.strip():
                f = json.loads(line)
                frames.append(RunFrame(f["t"], RobotState(f["x"], f["y"], f["theta"], f["t"]), f["behavior"],
                                       f["loc"], f["gt"], f["gt_behavior"], f["off_plan"]))
    return RunRecord(NavTask.from_dict(meta["task"], topo), Variant(meta["variant"]), frames, Outcome(meta["outcome"]),
                     meta["nodes_reached"], meta["seed"], meta["task_id"])


def _check_record(r: RunRecord):
    n = len(r.task.plan.node_seq)
    if not 0 <= r.nodes_reached <= n:
        raise InvariantError(f"run {r.task_id}: nodes_reached {r.nodes_reached} outside [0, {n}]")
    if r.outcome is Outcome.SUCCESS and r.nodes_reached != n:
        raise InvariantError(f"run {r.task_id}: success with plan completion {r.plan_completion:.2f}")


def cmd_eval(args) -> int:
    world, topo = load_world_dir(args.world)
    out = _out_dir(args.out)
    variant = Variant({"graphnav": "GraphNav", "graphnavpf": "GraphNavPF", "gtl": "GTL"}[args.variant])
    inputs = [Path(args.world)]
    gln_params, crop = None, (3, 2)
    if variant is not Variant.GTL:
        if not args.gln:
            raise UsageError(f"--gln is required for variant {args.variant}")
        gln_params = gnn.load_gnn(_require(args.gln))
        crop = (gln_params.config.get("crop_ahead", 3), gln_params.config.get("crop_behind", 2))
        inputs.append(Path(args.gln))
    if args.policies == "learned":
        if not args.behaviors:
            raise UsageError("--behaviors is required with --policies learned")
        controller = PolicySet.load(_require(args.behaviors))
        inputs.append(Path(args.behaviors))
    else:
        controller = "oracle"
    band = Difficulty(args.band) if args.band else None
    tasks = sample_tasks(topo, args.tasks, rng_for(args.seed, "eval-tasks"), band=band)
    seeds = [derive_seed(args.seed, "eval", i) for i in range(len(tasks))]
    jobs = [(world, topo, t, variant, controller, gln_params, crop, s, i) for i, (t, s) in enumerate(zip(tasks, seeds))]
    records = _map_jobs(_eval_one, jobs, _workers(args))
    records.sort(key=lambda r: r.task_id)
    for r in records:
        _check_record(r)
        write_run(r, out / f"run_{r.task_id:04d}.jsonl")
    counts = {o.value: sum(r.outcome is o for r in records) for o in Outcome}
    write_manifest(args, out, inputs, {"master": args.seed, "runs": seeds},
                   {"world_dir": os.path.relpath(args.world, out), "outcomes": counts})
    _log(args, f"{variant.value}: {counts}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args.out)
    groups = []
    for d in args.runs:
        d = _require(d, "dir")
        world, topo = load_world_dir(_world_of(d))
        files = sorted(d.glob("run_*.jsonl"))
        if not files:
            raise DataError(f"{d}: no run logs")
        groups.append((d, world, topo, [read_run(f, topo) for f in files]))
    records = [r for *_, rs in groups for r in rs]
    for r in records:
        _check_record(r)
    report = compute_metrics(records)
    render_report(report, records, out, label=args.label)
    for d, world, topo, rs in groups:
        plots = _out_dir(out / "runs" / d.name)
        for r in rs:
            (plots / f"run_{r.task_id:04d}.svg").write_text(run_svg(world, topo, r))
    write_manifest(args, out, [Path(d) for d in args.runs], {"master": args.seed})
    if not args.quiet:
        print((out / "report.txt").read_text(), end="")
    return EXIT_OK


DEMO_WORLDS = (("corridor", 0), ("loop", 0))


def cmd_demo(args) -> int:
    """Small end-to-end run of every stage, each with its own manifest."""
    out = _out_dir(args.out)
    common = ["--workers", str(args.workers or 0)]
    if args.strict_repro:
        common.append("--strict-repro")
    if args.quiet:
        common.append("--quiet")

    def run(*argv, seed=args.seed):
        code = main([*argv, "--seed", str(seed), *common])
        if code != EXIT_OK:
            raise _Abort(code)

    data = []
    for kind, seed in DEMO_WORLDS:
        w = out / f"world-{kind}-{seed}"
        run("gen-world", "--kind", kind, "--out", str(w), seed=seed)
        run("collect", "--world", str(w), "--n", str(args.trajectories), "--out", str(out / f"raw-{kind}-{seed}"))
        run("annotate", "--data", str(out / f"raw-{kind}-{seed}"), "--out", str(out / f"data-{kind}-{seed}"))
        data.append(str(out / f"data-{kind}-{seed}"))
    run("train-gln", "--data", *data, "--epochs", str(args.epochs), "--lr", "1e-3", "--out", str(out / "gln"))
    run("train-behaviors", "--data", *data, "--epochs", str(args.epochs), "--lr", "1e-3", "--out", str(out / "policies"))
    runs = []
    for kind, seed in DEMO_WORLDS:
        for variant in ("gtl", "graphnav", "graphnavpf"):
            d = out / f"eval-{variant}-{kind}-{seed}"
            run("eval", "--world", str(out / f"world-{kind}-{seed}"), "--variant", variant, "--policies", "learned",
                "--gln", str(out / "gln" / "gln.json"), "--behaviors", str(out / "policies" / "policies.json"),
                "--tasks", str(args.tasks), "--band", "I", "--out", str(d))
            runs.append(str(d))
    for variant in ("gtl", "graphnav", "graphnavpf"):
        run("report", "--runs", *[r for r in runs if f"eval-{variant}-" in r], "--label", variant,
            "--out", str(out / f"report-{variant}"))
    write_manifest(args, out, [], {"master": args.seed})
    return EXIT_OK


class _Abort(Exception):
    def __init__(self, code: int):
        self.code = code


# ---------------------------------------------------------------------------
# argument parsing


def _log(args, msg: str):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr, flush=True)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--config", help="JSON file of option defaults; flags override it")
    common.add_argument("--strict-repro", action="store_true", help="serial, fixed-order execution")
    common.add_argument("--workers", type=int, default=0, help="worker processes (0: all cores)")
    common.add_argument("--quiet", action="store_true")

    parser = _Parser(prog="graphnav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    p = subs["gen-world"] = sub.add_parser("gen-world", parents=[common], help="generate a fixture world and map")
    p.add_argument("--kind", required=True, choices=[k.value for k in FixtureKind])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_world)

    p = subs["collect"] = sub.add_parser("collect", parents=[common], help="record expert trajectories")
    p.add_argument("--world", required=True, help="directory written by gen-world")
    p.add_argument("--n", type=int, default=30, help="number of trajectories")
    p.add_argument("--no-noise", action="store_true", help="disable command noise injection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = subs["annotate"] = sub.add_parser("annotate", parents=[common], help="label a trajectory dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    def training(p, lr):
        p.add_argument("--data", required=True, nargs="+")
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--lr", type=float, default=lr)
        p.add_argument("--schedule", choices=["constant", "cosine"], default="constant")
        p.add_argument("--frames", type=int, default=5, help="scans per observation stack")
        p.add_argument("--out", required=True)

    p = subs["train-gln"] = sub.add_parser("train-gln", parents=[common], help="train the graph localization network")
    training(p, 1e-4)
    p.add_argument("--val", nargs="+", help="held-out annotated datasets")
    p.add_argument("--dim", type=int, default=32, help="embedding and global size D")
    p.add_argument("--crop-ahead", type=int, default=3)
    p.add_argument("--crop-behind", type=int, default=2)
    p.add_argument("--own-source-prob", type=float, default=0.5, help="augmentation mix")
    p.add_argument("--samples-per-frame", type=int, default=1)
    p.set_defaults(func=cmd_train_gln)

    p = subs["train-behaviors"] = sub.add_parser("train-behaviors", parents=[common], help="behavior cloning")
    training(p, 1e-4)
    p.add_argument("--behavior", default="all", choices=["all"] + [b.value for b in BehaviorKind])
    p.set_defaults(func=cmd_train_behaviors)

    p = subs["eval"] = sub.add_parser("eval", parents=[common], help="closed-loop navigation runs")
    p.add_argument("--world", required=True)
    p.add_argument("--tasks", type=int, default=20)
    p.add_argument("--band", choices=[d.value for d in Difficulty])
    p.add_argument("--variant", required=True, choices=["graphnav", "graphnavpf", "gtl"])
    p.add_argument("--policies", default="learned", choices=["learned", "oracle"])
    p.add_argument("--gln", help="gln.json from train-gln")
    p.add_argument("--behaviors", help="policies.json from train-behaviors")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = subs["report"] = sub.add_parser("report", parents=[common], help="metrics tables and run plots")
    p.add_argument("--runs", required=True, nargs="+")
    p.add_argument("--label", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = subs["demo"] = sub.add_parser("demo", parents=[common], help="small end-to-end pipeline")
    p.add_argument("--trajectories", type=int, default=12)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--tasks", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)
    return parser, subs


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(_require(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: {exc}") from exc
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(k.replace("-", "_") for k in cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)  # flags win over the file
    return args


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _Abort as exc:
        return exc.code
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigurationError,) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except Exception as exc:  # anything else means our own assumptions broke
        print(f"invariant violated: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
