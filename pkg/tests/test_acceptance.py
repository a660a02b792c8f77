"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION k: PASS|FAIL ...`` line (also
collected into the terminal summary by ``conftest.py``).  Thresholds are
the stated ones; nothing is loosened to make a criterion pass.
"""

import csv
import io
import itertools
import time

import numpy as np
import pytest

from oracles import crossing_pair, detour_seed, direct_fuel_optimum, eliminated_rows, interval_oracle
from parabolic_mrmp import conic
from parabolic_mrmp.bench import (
    adversarial_seed,
    make_rng,
    run_scaling,
    run_success_rate,
    swap_circle,
)
from parabolic_mrmp.model import (
    ObstacleSpec,
    ProblemInstance,
    RobotSpec,
    build_double_integrator,
    rollout,
    straight_line_seed,
    verify,
)
from parabolic_mrmp.relax import SIMPLIFIED, RelaxationConfig, build_relaxation, pack
from parabolic_mrmp.sequential import (
    CONVERGED,
    SequentialConfig,
    feasibility_preservation_check,
    solve_sequential,
    stopping_criterion,
)

pytestmark = pytest.mark.acceptance

BASE_SEED = 20240601
EXACT = 1e-12
ETA_SCHEDULE = (50.0, 100.0, 200.0, 400.0, 800.0)

# converged runs from criteria 3-8 as (label, final max_gap, verify feasible)
CONVERGED_RUNS = []


def report_line(record, k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    print("\n" + line)
    record(k, line)
    return ok


def _rows_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _log_run(label, report, instance):
    if report.termination == CONVERGED and report.final is not None:
        gap = report.iterations[-1].max_gap
        CONVERGED_RUNS.append((label, gap, verify(instance, report.final).feasible))


# -- criterion 1 -------------------------------------------------------------


def _feasible_joint_trajectory(rng, T=4, dt=0.1, robots=3, obstacles=2, radius=0.05, u_max=2.0):
    """Rollout of random bounded controls, rejected until every pair stays apart."""
    dyn = build_double_integrator(2, dt)
    while True:
        starts = rng.uniform(0.1, 0.9, size=(robots + obstacles, 2))
        specs, states, controls = [], {}, {}
        for i in range(robots):
            u = rng.uniform(-u_max / 2, u_max / 2, size=(T, 2))  # |u|_1 <= u_max
            v0 = rng.uniform(-0.5, 0.5, size=2)
            x0 = np.concatenate([starts[i], v0])
            proto = RobotSpec(i + 1, dyn, radius, u_max, x0, x0)
            xs = rollout(proto, u)
            specs.append(RobotSpec(i + 1, dyn, radius, u_max, x0, xs[-1].copy()))
            states[i + 1], controls[i + 1] = xs, u
        obs = [ObstacleSpec(robots + k + 1, radius,
                            np.tile(np.concatenate([starts[robots + k], [0.0, 0.0]]), (T + 1, 1)))
               for k in range(obstacles)]
        pos = np.stack([states[i + 1][:, :2] for i in range(robots)]
                       + [o.states[:, :2] for o in obs])
        dists = [np.linalg.norm(pos[a] - pos[b], axis=1).min()
                 for a, b in itertools.combinations(range(len(pos)), 2)]
        if min(dists) >= 2 * radius:
            return ProblemInstance(specs, obs, T=T, n=2, dt=dt), states, controls


def criterion1_csv(seed=BASE_SEED, samples=200):
    rng = make_rng(seed)
    rows, failures = [], 0
    for k in range(samples):
        inst, states, controls = _feasible_joint_trajectory(rng)
        prog, layout = build_relaxation(inst, straight_line_seed(inst),
                                        RelaxationConfig(variant=SIMPLIFIED,
                                                         exempt_endpoints=False))
        z = pack(layout, states, controls)
        res = conic.residuals(prog, z)
        ok = res["equality_residual"] <= EXACT and res["cone_residual"] <= EXACT
        failures += not ok
        rows.append([k, f"{res['equality_residual']:.3e}", f"{res['cone_residual']:.3e}",
                     str(ok).lower()])
    return _rows_csv(["sample", "equality_residual", "cone_residual", "ok"], rows), failures


def test_criterion_1_relaxation_soundness(acceptance_record):
    t = time.perf_counter()
    _, failures = criterion1_csv()
    elapsed = time.perf_counter() - t
    ok = failures == 0 and elapsed < 10.0
    report_line(acceptance_record, 1, ok,
                f"{failures} failures over 200 lifted feasible configurations in {elapsed:.1f}s")
    assert ok


# -- criterion 2 -------------------------------------------------------------


def criterion2_csv(seed=BASE_SEED, samples=1000):
    rng = make_rng(seed + 1)
    rows, disagreements = [], 0
    for k in range(samples):
        xi, xj = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        yii = xi @ xi + rng.uniform(-0.2, 0.4)
        yjj = xj @ xj + rng.uniform(-0.2, 0.4)
        r = rng.uniform(0.01, 0.3) + rng.uniform(0.01, 0.3)
        a = interval_oracle(xi, xj, yii, yjj, r)
        b = eliminated_rows(xi, xj, yii, yjj, r)
        disagreements += a != b
        rows.append([k, str(a).lower(), str(b).lower()])
    return _rows_csv(["sample", "interval_nonempty", "eliminated_rows_hold"], rows), disagreements


def test_criterion_2_elimination_equivalence(acceptance_record):
    t = time.perf_counter()
    text, disagreements = criterion2_csv()
    elapsed = time.perf_counter() - t
    both = sum(",true,true" in line for line in text.splitlines())
    ok = disagreements == 0 and elapsed < 5.0
    report_line(acceptance_record, 2, ok,
                f"{disagreements} disagreements over 1000 tuples ({both} feasible) in {elapsed:.2f}s")
    assert ok


# -- criterion 3 -------------------------------------------------------------


def test_criterion_3_unconstrained_optimum(acceptance_record):
    from oracles import robot

    inst = ProblemInstance([robot(1, [0.05, 0.05], [0.95, 0.95], dt=0.1)], [], T=30, n=2)
    t = time.perf_counter()
    value, _, _ = direct_fuel_optimum(inst)
    report = solve_sequential(inst)
    elapsed = time.perf_counter() - t
    _log_run("c3", report, inst)
    rel = abs(report.final.objective - value) / value
    ok = report.termination == CONVERGED and report.feasible and rel <= 1e-3 and elapsed < 30
    report_line(acceptance_record, 3, ok,
                f"{report.termination} in {report.num_iterations} iterations, objective "
                f"{report.final.objective:.6f} vs oracle {value:.6f} (rel {rel:.1e}), {elapsed:.1f}s")
    assert ok


# -- criterion 4 -------------------------------------------------------------

DETOUR_CASES = [(off, split) for off, split in zip(np.linspace(-0.12, 0.12, 10),
                                                    [12, 13, 14, 15, 16, 17, 18, 15, 14, 16])]


def test_criterion_4_feasibility_preservation(acceptance_record):
    outcomes = []
    for off, split in DETOUR_CASES:
        inst = crossing_pair(offset=float(off))
        seed = detour_seed(inst, split=split)
        passed, used = False, None
        for eta in ETA_SCHEDULE:
            ok, info = feasibility_preservation_check(inst, seed, SequentialConfig(eta=eta))
            _log_run(f"c4 off={off:.3f} eta={eta}", info["report"], inst)
            if ok:
                passed, used = True, eta
                break
        outcomes.append((passed, used))
    n_ok = sum(p for p, _ in outcomes)
    etas = ",".join("-" if e is None else f"{e:g}" for _, e in outcomes)
    ok = n_ok == len(DETOUR_CASES)
    report_line(acceptance_record, 4, ok, f"{n_ok}/10 instances preserved feasibility (eta used: {etas})")
    assert ok


# -- criterion 5 -------------------------------------------------------------


def test_criterion_5_stopping_rule(acceptance_record, monkeypatch):
    from oracles import robot

    boundary = [
        ((10000.0, 10001.0), True),
        ((10000.0, 9999.0), True),
        ((-10000.0, -10001.0), True),
        ((10000.0, 10001.000001), False),
        ((10000.0, 9998.999999), False),
        ((0.0, 0.0), True),
        ((2.0, 2.0), True),
    ]
    direct = all(stopping_criterion(p, c, SequentialConfig()) is want for (p, c), want in boundary)
    traces = [([5.0, 10000.0, 10001.0, 7.0], 3), ([10000.0, 10001.000001, 10001.000001], 3),
              ([1.0, 1.5, 2.0, 2.0, 9.0], 4), ([3.0, 3.0, 1.0], 2)]
    inst = ProblemInstance([robot(1, [0.1, 0.1], [0.9, 0.9], dt=0.5)], [], T=4, n=2)
    real = conic.solve
    driver_ok = True
    for trace, stop_at in traces:
        values = iter(trace)

        def fake(prog, backend=None, values=values):
            res = real(prog, backend)
            return conic.BackendResult(res.status, res.primal, next(values), res.solve_time)

        monkeypatch.setattr(conic, "solve", fake)
        report = solve_sequential(inst, config=SequentialConfig(max_iters=len(trace)))
        driver_ok &= report.termination == CONVERGED and report.num_iterations == stop_at
    monkeypatch.setattr(conic, "solve", real)
    ok = direct and driver_ok
    report_line(acceptance_record, 5, ok,
                f"boundary cases {'ok' if direct else 'wrong'}, injected traces "
                f"{'stop exactly at threshold' if driver_ok else 'mis-stopped'}")
    assert ok


# -- criterion 6 -------------------------------------------------------------


@pytest.fixture(scope="module")
def success_rate_run():
    t = time.perf_counter()
    result = run_success_rate(["parabolic", "scp"], [10, 20, 30], trials=20, num_robots=5,
                              base_rng_seed=BASE_SEED)
    return result, time.perf_counter() - t


def test_criterion_6_success_rate_shape(acceptance_record, success_rate_run):
    result, elapsed = success_rate_run
    for rec in result.records:
        if rec.status == CONVERGED:
            CONVERGED_RUNS.append((f"c6 seed={rec.rng_seed} {rec.method}", rec.max_gap,
                                   rec.feasible))
    rates = {(m, k): result.success_rate(m, k) for m in ("parabolic", "scp") for k in (10, 20, 30)}
    dominance = all(rates["parabolic", k] >= rates["scp", k] for k in (10, 20, 30))
    level = rates["parabolic", 30] >= 0.75
    ok = dominance and level and elapsed < 1800
    detail = ", ".join(f"{k} obs: parabolic {rates['parabolic', k]:.2f} scp {rates['scp', k]:.2f}"
                       for k in (10, 20, 30))
    report_line(acceptance_record, 6, ok,
                f"{detail}; dominance {'holds' if dominance else 'fails'}, "
                f"parabolic@30 >= 0.75 {'holds' if level else 'fails'}, {elapsed:.0f}s")
    assert ok


# -- criterion 7 -------------------------------------------------------------

SCALING_ITERS = 5  # per-subproblem time does not depend on how many subproblems run


@pytest.fixture(scope="module")
def scaling_run():
    return run_scaling(["parabolic", "parabolic-full", "sdp"], [2, 4, 8, 16], trials=3,
                       base_rng_seed=BASE_SEED, max_iters=SCALING_ITERS)


def test_criterion_7_scaling_order(acceptance_record, scaling_run):
    for rec in scaling_run.records:
        if rec.status == CONVERGED:
            CONVERGED_RUNS.append((f"c7 n={rec.robots} {rec.method}", rec.max_gap, rec.feasible))
    t = {(r["robots"], r["variant"]): r["mean_subproblem_time"] for r in scaling_run.scaling_rows()}
    counts = (2, 4, 8, 16)
    sdp_ok = all(t[n, "sdp"] >= t[n, "parabolic_simplified"] for n in counts)
    full_ok = all(t[n, "parabolic_simplified"] <= t[n, "parabolic_full"] for n in counts if n >= 8)
    ok = sdp_ok and full_ok
    detail = "; ".join(f"{n}: simp {t[n, 'parabolic_simplified'] * 1e3:.1f}ms "
                       f"full {t[n, 'parabolic_full'] * 1e3:.1f}ms sdp {t[n, 'sdp'] * 1e3:.1f}ms"
                       for n in counts)
    report_line(acceptance_record, 7, ok, detail)
    assert ok


# -- criterion 8 -------------------------------------------------------------


def test_criterion_8_bad_seed_recovery(acceptance_record):
    inst = swap_circle(k=4)
    seed = adversarial_seed(inst, (0.1, 0.1))
    attempts = []
    ok = False
    for eta in ETA_SCHEDULE:
        report = solve_sequential(inst, seed, SequentialConfig(eta=eta, max_iters=200))
        _log_run(f"c8 eta={eta}", report, inst)
        trace = [r.collision_violation for r in report.iterations]
        cleared = next((r.k for r in report.iterations if r.collision_violation <= 1e-4), None)
        attempts.append(f"eta {eta:g}: {report.termination} after {report.num_iterations}, "
                        f"feasible={report.feasible}, first clear iter {cleared}, "
                        f"final violation {trace[-1]:.1e}")
        if report.termination == CONVERGED and report.feasible and min(trace) <= 1e-4:
            ok = True
            break
    report_line(acceptance_record, 8, ok, " | ".join(attempts))
    assert ok


# -- criterion 9 -------------------------------------------------------------


def test_criterion_9_exactness_implies_feasibility(acceptance_record):
    exact = [(label, feas) for label, gap, feas in CONVERGED_RUNS if gap <= 1e-4]
    bad = [label for label, feas in exact if not feas]
    ok = bool(CONVERGED_RUNS) and not bad
    report_line(acceptance_record, 9, ok,
                f"{len(CONVERGED_RUNS)} converged runs, {len(exact)} with max_gap <= 1e-4, "
                f"{len(bad)} counterexamples" + (f" ({', '.join(bad[:5])})" if bad else ""))
    assert ok


# -- criterion 10 ------------------------------------------------------------


def test_criterion_10_determinism(acceptance_record, success_rate_run, scaling_run):
    same = {}
    same[1] = criterion1_csv()[0] == criterion1_csv()[0]
    same[2] = criterion2_csv()[0] == criterion2_csv()[0]
    again6 = run_success_rate(["parabolic", "scp"], [10, 20, 30], trials=20, num_robots=5,
                              base_rng_seed=BASE_SEED)
    first6 = success_rate_run[0]
    same[6] = (first6.to_csv(timing=False) == again6.to_csv(timing=False)
               and first6.records_csv(timing=False) == again6.records_csv(timing=False))
    again7 = run_scaling(["parabolic", "parabolic-full", "sdp"], [2, 4, 8, 16], trials=3,
                         base_rng_seed=BASE_SEED, max_iters=SCALING_ITERS)
    same[7] = (scaling_run.to_csv(timing=False) == again7.to_csv(timing=False)
               and scaling_run.records_csv(timing=False) == again7.records_csv(timing=False))
    ok = all(same.values())
    report_line(acceptance_record, 10, ok,
                ", ".join(f"criterion {k} CSV {'identical' if v else 'DIFFERS'}"
                          for k, v in same.items()))
    assert ok
