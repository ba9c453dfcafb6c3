"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary,
then asserts. Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from _goldens import expected_edges, golden_cases, golden_map, golden_world, to_trajectory
from _instances import gradient_rel_error, random_edge_distribution, random_topomap, screened_instances
from _metrics_fixture import EXPECTED_REPORT, metric_records
from _oracles import bfs_oracle, gn_block_loops, hmm_forward, keep_set, transition_matrix
from conftest import ACCEPTANCE_LINES, TIMINGS, fixture_world
from graphnav import gnn
from graphnav.annotate import NodeMatcher, detect_behaviors, label_rooms, localize_edges, localize_nodes
from graphnav.cli import derive_seed, main
from graphnav.evalsuite import Outcome, compute_metrics, run_navigation, sample_tasks
from graphnav.gln import CropCache, eval_localization_accuracy
from graphnav.pfilter import LIKELIHOOD_FLOOR, Belief, NodeFilter, predict
from graphnav.topomap import Difficulty, NavPlan, PlanningError, crop_subgraph, difficulty, shortest_plan
from graphnav.worldsim import NOISE_DECAY, NOISE_GAIN, NOISE_VAR, NoiseState, VelocityCmd, inject_noise


def record(k: int, name: str, ok: bool, detail: str, seconds: float):
    line = f"[{'PASS' if ok else 'FAIL'}] {k:2d} {name}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def test_01_gradient_check():
    t0 = time.perf_counter()
    instances = screened_instances(100)
    errors = [gradient_rel_error(p, batch, raw, h=1e-5) for p, batch, raw in instances]
    dt = time.perf_counter() - t0
    sizes_ok = all(len(gi.node_kinds) <= 8 and gi.n_edges <= 12 for _, batch, _ in instances for gi, _ in batch)
    dims_ok = all(p.config["dim"] == 8 for p, _, _ in instances)
    worst = max(errors)
    ok = len(errors) >= 100 and sizes_ok and dims_ok and worst <= 1e-4 and dt < 120
    record(1, "finite-difference gradients", ok, f"{len(errors)} instances, worst relative error {worst:.2e}", dt)


def _block_case(rng):
    n, m, d = int(rng.integers(1, 9)), int(rng.integers(0, 13)), 8
    p = gnn.init_block(rng, d, d, d, d, d, d, (16,))
    G = gnn.GraphTensors(rng.normal(size=d), rng.normal(size=(n, d)), rng.normal(size=(m, d)),
                         rng.integers(0, n, m), rng.integers(0, n, m))
    return p, G


def test_02_gn_block_vs_loops():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(0, "acceptance-gn-block"))
    worst = 0.0
    for _ in range(1000):
        p, G = _block_case(rng)
        out = gnn.gn_block_forward(p, G)
        u, V, E = gn_block_loops(p.phi_e.layers, p.phi_v.layers, p.phi_u.layers, G.u[0], G.V, G.E,
                                 list(G.receivers), list(G.senders))
        for a, b in ((out.u[0], u), (out.V, V), (out.E, E)):
            if a.size:
                worst = max(worst, float(np.abs(a - b).max()))
    dt = time.perf_counter() - t0
    record(2, "GN block vs loop oracle", worst <= 1e-12 and dt < 60, f"1000 graphs, max abs diff {worst:.1e}", dt)


def _oracle_filter(topo, start, measurements):
    index = {v: i for i, v in enumerate(topo.node_ids)}
    T = transition_matrix(len(topo), [[index[w] for w in topo.successors(v)] for v in topo.node_ids])
    prior = np.zeros(len(topo))
    prior[index[start]] = 1.0
    emissions = []
    for z in measurements:
        e = np.zeros(len(topo))
        for k, q in z.items():
            e[index[topo.edge(k).src]] += q
        emissions.append(np.where(e > 0, e, LIKELIHOOD_FLOOR))
    return hmm_forward(prior, T, emissions)


def test_03_filter_vs_forward_algorithm():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(0, "acceptance-pfilter"))
    worst = 0.0
    for _ in range(50):
        topo = random_topomap(rng, 20)
        start = int(rng.choice(topo.node_ids))
        f = NodeFilter(topo, start)
        zs = [random_edge_distribution(rng, topo) for _ in range(3)]
        for z in zs:
            f.step(z)
        worst = max(worst, float(np.abs(f.belief.prob - _oracle_filter(topo, start, zs)).max()))
    # delta prior at a node with three successors
    topo = next(t for t in (random_topomap(rng, 20) for _ in range(1000))
                if any(len(t.successors(v)) == 3 for v in t.node_ids))
    a = next(v for v in topo.node_ids if len(topo.successors(v)) == 3)
    b = predict(Belief.delta(topo, a), topo)
    delta_ok = abs(b[a] - 0.8) < 1e-12 and all(abs(b[v] - 0.2 / 3) < 1e-12 for v in topo.successors(a))
    dt = time.perf_counter() - t0
    record(3, "node filter vs HMM forward", worst <= 1e-12 and delta_ok,
           f"50 cases, max abs diff {worst:.1e}, delta example {'ok' if delta_ok else 'wrong'}", dt)


def test_04_planner_and_crop_oracles():
    t0 = time.perf_counter()
    pairs = bad = 0
    maps = [fixture_world(kind, 0)[1] for kind in ("corridor", "loop", "tee")]
    for topo in maps:
        succ = {v: topo.successors(v) for v in topo.node_ids}
        for a in topo.node_ids:
            dist = bfs_oracle(succ, a)
            for b in topo.node_ids:
                if a == b:
                    continue
                pairs += 1
                if b not in dist:
                    try:
                        shortest_plan(topo, a, b)
                        bad += 1
                    except PlanningError:
                        pass
                    continue
                plan = shortest_plan(topo, a, b)
                walk = NavPlan.from_edges(topo, a, plan.edge_seq)
                bad += int(len(plan.edge_seq) != dist[b] or walk.node_seq[-1] != b or walk != plan)
    rng = np.random.default_rng(derive_seed(0, "acceptance-crop"))
    crops_bad = 0
    for i in range(200):
        topo = maps[i % 3]
        center = int(rng.choice(topo.node_ids))
        succ = {v: topo.successors(v) for v in topo.node_ids}
        pred = {v: topo.predecessors(v) for v in topo.node_ids}
        keep = keep_set(succ, pred, center, 3, 2)
        sub = crop_subgraph(topo, center)
        want_edges = tuple(e.id for e in topo.edges if e.src in keep and e.dst in keep)
        crops_bad += int(set(sub.node_ids) != keep or sub.edge_ids != want_edges)
    dt = time.perf_counter() - t0
    ok = bad == 0 and crops_bad == 0 and dt < 60
    record(4, "planner and crop oracles", ok,
           f"{pairs} pairs ({bad} mismatches), 200 crops ({crops_bad} mismatches)", dt)


def test_05_annotation_goldens():
    t0 = time.perf_counter()
    world, topo = golden_world(), golden_map()
    failed = []
    cases = golden_cases()
    for case in cases:
        traj = to_trajectory(case.poses, topo)
        rooms = label_rooms(traj, world)
        nodes = localize_nodes(traj, topo, rooms, case.start)
        edges, _ = localize_edges(nodes, topo)
        if (rooms != case.rooms() or detect_behaviors(traj, world, rooms) != case.behaviors()
                or nodes != case.nodes() or edges != expected_edges(nodes, topo)):
            failed.append(case.name)
    dt = time.perf_counter() - t0
    record(5, "annotation goldens", len(cases) == 10 and not failed,
           f"{len(cases) - len(failed)}/{len(cases)} match" + (f", failed: {failed}" if failed else ""), dt)


def test_06_metric_arithmetic():
    t0 = time.perf_counter()
    report_ok = compute_metrics(metric_records()).to_dict() == EXPECTED_REPORT
    r = metric_records()[0]
    pc_ok = len(r.task.plan.node_seq) == 12 and r.plan_completion == 0.5 and r.outcome is not Outcome.SUCCESS

    def band(n):
        return difficulty(NavPlan(tuple(range(n)), tuple(range(n - 1)), (r.task.plan.behavior_seq[0],) * (n - 1)))

    bands_ok = [band(n) for n in (10, 11, 20, 21)] == [Difficulty.I, Difficulty.II, Difficulty.II, Difficulty.III]
    dt = time.perf_counter() - t0
    record(6, "metric arithmetic", report_ok and pc_ok and bands_ok,
           f"3-record report {'exact' if report_ok else 'differs'}, PC 12/6 = {r.plan_completion}, "
           f"bands at 10/11/20/21 {'ok' if bands_ok else 'wrong'}", dt)


def test_07_localization_learning(seen_data, trained_gln):
    params, curve, train, held, train_seconds = trained_gln
    frames = len(train)
    acc = eval_localization_accuracy(params, held, CropCache())
    dt = TIMINGS.get("seen_data", 0.0) + train_seconds
    ok = frames >= 1500 and acc >= 0.85 and dt < 30 * 60
    record(7, "GLN held-out accuracy", ok,
           f"{frames} training frames, {len(held)} held-out frames, accuracy {acc:.4f} (need >= 0.85)", dt)


def _eval_tasks(seen_data, per_world=15):
    out = []
    for (kind, seed), (world, topo, _) in seen_data.items():
        rng = np.random.default_rng(derive_seed(0, f"eval-tasks-{kind}-{seed}"))
        for task in sample_tasks(topo, per_world, rng, band=Difficulty.I):
            out.append((world, topo, task))
    return out


def test_08_closed_loop_ordering(seen_data, trained_gln, trained_policies):
    t0 = time.perf_counter()
    gln_params = trained_gln[0]
    tasks = _eval_tasks(seen_data)
    wins = {"oracle": 0, "GTL": 0, "GraphNav": 0, "GraphNavPF": 0}
    matchers, crops = {}, {}
    for world, topo, task in tasks:
        mt = matchers.setdefault(topo.name, NodeMatcher(topo))
        cr = crops.setdefault(topo.name, CropCache())
        wins["oracle"] += run_navigation(world, topo, task, "GTL", "oracle", matcher=mt).outcome is Outcome.SUCCESS
        for variant in ("GTL", "GraphNav", "GraphNavPF"):
            r = run_navigation(world, topo, task, variant, trained_policies, gln_params=gln_params, matcher=mt,
                               crops=cr)
            wins[variant] += r.outcome is Outcome.SUCCESS
    n = len(tasks)
    rate = {k: 100.0 * v / n for k, v in wins.items()}
    dt = time.perf_counter() - t0
    ok = (n >= 50 and rate["oracle"] == 100.0 and rate["GTL"] >= 70.0
          and rate["GraphNavPF"] >= rate["GraphNav"] - 5.0 and dt < 20 * 60)
    record(8, "closed-loop ordering", ok,
           f"{n} difficulty-I tasks: GTL+oracle {rate['oracle']:.1f}%, GTL+learned {rate['GTL']:.1f}%, "
           f"GraphNav {rate['GraphNav']:.1f}%, GraphNavPF {rate['GraphNavPF']:.1f}%", dt)


def test_09_noise_variance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(0, "acceptance-noise"))
    z = NoiseState()
    zero = VelocityCmd(0.0, 0.0)
    n = 1_000_000
    zp = np.empty(n)
    for i in range(n):
        z, _ = inject_noise(z, zero, rng)
        zp[i] = z.z_p
    target = NOISE_GAIN ** 2 * NOISE_VAR[0] / (1 - NOISE_DECAY ** 2)
    var = float(np.var(zp))
    rel = abs(var - target) / target
    dt = time.perf_counter() - t0
    record(9, "persistent noise variance", rel <= 0.05,
           f"Var(z_p) = {var:.6f} vs {target:.6f} over {n} steps (rel. diff {rel:.3%})", dt)


def _tree_diff(a: Path, b: Path) -> list[str]:
    cmp = filecmp.dircmp(a, b)
    out = [str(Path(a, f)) for f in cmp.left_only + cmp.right_only + cmp.funny_files]
    out += [str(Path(a, f)) for f in cmp.common_files if not filecmp.cmp(Path(a, f), Path(b, f), shallow=False)]
    for d in cmp.common_dirs:
        out += _tree_diff(Path(a, d), Path(b, d))
    return out


@pytest.mark.slow
@pytest.mark.filterwarnings("ignore:behavior 's' has only")
def test_10_strict_repro_demo(tmp_path):
    t0 = time.perf_counter()
    codes = [main(["demo", "--strict-repro", "--quiet", "--seed", "0", "--out", str(tmp_path / name)])
             for name in ("a", "b")]
    diff = _tree_diff(tmp_path / "a", tmp_path / "b")
    n_files = sum(1 for p in (tmp_path / "a").rglob("*") if p.is_file())
    dt = time.perf_counter() - t0
    record(10, "strict-repro demo", codes == [0, 0] and not diff and n_files > 0,
           f"exit codes {codes}, {n_files} files, {len(diff)} differ", dt)
