"""The acceptance gate: every stated criterion at its stated size, with
one printed pass/fail line per criterion.  All arithmetic is exact and
every equality is checked with zero tolerance.

Run with `pytest tests/test_acceptance.py -s` to see the summary lines.
"""

import random

from blocklab import Map, RhoTriple, delta_rho, scripted, triangular
from blocklab.forcing import GenericContext, leq_condition, meet_chain, seed_condition
from blocklab.suites import (
    block_seq_suite,
    calibration_suite,
    delta_suite,
    diagonal_suite,
    fiber_suite,
    forcing_suite,
    fusion_suite,
    lift_suite,
    rng_for,
)

from oracles import brute_fresh_points, random_rho_instance

SEED = 2026


def report(num: int, title: str, ok: bool, detail: str = "") -> None:
    verdict = "PASS" if ok else "FAIL"
    line = f"criterion {num:2d} [{verdict}] {title}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def test_criterion_1_block_order_laws():
    rep = block_seq_suite(SEED, instances=500, chains=200, depth=64)
    report(1, "500 block sequences keep the floor law; 200 chains compose",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_2_delta_matches_brute_force():
    # the library path against this test module's own double loop
    rng = random.Random(f"{SEED}:acceptance-delta")
    mismatches = 0
    for _ in range(200):
        rows, k_table, tables, cols = random_rho_instance(rng)
        rho = RhoTriple(rows=tuple(scripted(v) for v in rows), k_table=dict(k_table),
                        proj={key: Map.tabulated(tab) for key, tab in tables.items()})
        funcs = {key: (lambda u, t=tab: t[u]) for key, tab in tables.items()}
        for n in range(cols):
            got = delta_rho(rho, n)
            fresh, merged = brute_fresh_points(rows, k_table, funcs, n)
            if got.merged != tuple(merged) or any(
                    got.fresh[m] != tuple(pts) for m, pts in fresh.items()):
                mismatches += 1
                break
    report(2, "200 windowed instances agree with the independent double loop",
           mismatches == 0, f"{mismatches} disagreements" if mismatches else "")


def test_criterion_3_fiber_interleaving():
    rep = fiber_suite(SEED, instances=100)
    report(3, "100 random triples satisfy the fiber interleaving chain",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_4_calibration_and_mutations():
    rep = calibration_suite(SEED, instances=50, mutations=50)
    report(4, "50 calibrations verify all clauses; 50 mutations each fail one",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_5_fusion():
    rep = fusion_suite(SEED, instances=30)
    report(5, "30 fusions sit below their chains with exact images",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_6_lift():
    rep = lift_suite(SEED, instances=30)
    report(6, "30 lifted systems commute past the group boundaries and stay normal",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_7_diagonal():
    rep = diagonal_suite(SEED, instances=20)
    report(7, "20 towers produce certified refinements with exact block sizes",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_8_forcing_tasks():
    rep = forcing_suite(SEED, instances=100)
    report(8, "100 extension pairs re-check, order, and meet their task bounds",
           rep.ok, "" if rep.ok else str(rep.failures()[0]))


def test_criterion_9_meet_closed_form():
    ctx = GenericContext(labels=(), towers={})
    chain = [seed_condition(ctx, triangular()) for _ in range(4)]
    q, entry = meet_chain(chain, ctx, depth=3)
    ok = (q.c.block(0) == (0,) and q.c.block(1) == (3, 4, 5)
          and q.c.block(2) == tuple(range(28, 36))
          and entry.detail.startswith("indices [0, 2, 7"))
    ok = ok and all(leq_condition(q, c, ctx, 3).ok for c in chain)
    # constant label sets survive the meet at a fixed stage
    from blocklab.forcing import Thin, extend_condition
    from blocklab.suites import anticipating_context

    rng = rng_for(SEED, "acc-meet")
    tasks = [Thin(lambda n: 2 * n + 1, False)]
    lctx, q0 = anticipating_context(rng, tasks, n_labels=1)
    q1, _ = extend_condition(q0, tasks[0], lctx, 8)
    qm, _ = meet_chain([q0, q1], lctx, depth=8)
    ok = ok and qm.labels == q0.labels
    report(9, "the bare meet reproduces indices 0, 2, 7 and keeps constant labels", ok)


def test_criterion_10_determinism():
    pairs = [
        (lambda: block_seq_suite(SEED + 1, instances=60, chains=24, depth=32)),
        (lambda: delta_suite(SEED + 1, instances=25)),
        (lambda: fiber_suite(SEED + 1, instances=20)),
        (lambda: calibration_suite(SEED + 1, instances=8, mutations=8)),
        (lambda: fusion_suite(SEED + 1, instances=6)),
        (lambda: lift_suite(SEED + 1, instances=6)),
        (lambda: diagonal_suite(SEED + 1, instances=4)),
        (lambda: forcing_suite(SEED + 1, instances=15)),
    ]
    bad = []
    for make in pairs:
        first = make().to_json()
        second = make().to_json()
        if first != second:
            bad.append(make)
    report(10, "every suite rerun with its seed is byte-identical",
           not bad, f"{len(bad)} suites diverged" if bad else "")
