"""Deterministic randomized instance generators and suite runners.

Every generator takes a seeded Random and produces instances whose
hypotheses hold by construction, so the engines' certificates are
expected to pass; mutation helpers corrupt outputs in ways guaranteed to
violate at least one clause.  Suite runners aggregate per-instance
verdicts into a single report for the command line front end.
"""

from __future__ import annotations

import random
from typing import Callable, Optional

from .blocks import BlockSeq, blocks_from_stream, thin, triangular
from .calibration import Calibration, CalibrationInput, assemble_input, calibrate, verify_calibration
from .errors import DepthExceeded
from .maps import Map, ValueSeq
from .report import Report
from .streams import SetStream, arithmetic, block_image, naturals, periodic, s_of, scripted


def rng_for(seed: int, tag: str) -> random.Random:
    return random.Random(f"{seed}:{tag}")


# -- shared small generators ---------------------------------------------


def random_increasing_stream(rng: random.Random, start_max: int = 6) -> SetStream:
    start = rng.randrange(0, start_max)
    diffs = [rng.randrange(1, 4) for _ in range(rng.randrange(1, 5))]
    return periodic(start, diffs)


def random_block_seq(rng: random.Random) -> BlockSeq:
    kind = rng.randrange(3)
    if kind == 0:
        return triangular(offset=rng.randrange(0, 5))
    if kind == 1:
        return blocks_from_stream(random_increasing_stream(rng))
    return thin(triangular(offset=rng.randrange(0, 3)), random_increasing_stream(rng))


def random_thinning(rng: random.Random, base: BlockSeq) -> BlockSeq:
    return thin(base, random_increasing_stream(rng, start_max=4))


# -- calibration instances ------------------------------------------------


def projection_tower(rng: random.Random, levels: int) -> dict[tuple[int, int], Map]:
    """Exactly commuting projections: each step down is a block map over
    a triangular base with affine values, and longer hops are literal
    compositions of the steps."""
    step: dict[int, Map] = {}
    for n in range(1, levels):
        base = triangular(offset=rng.randrange(0, 7))
        step[n] = Map.block(base, ValueSeq.affine(rng.randrange(1, 4), rng.randrange(0, 6)))
    proj: dict[tuple[int, int], Map] = {}
    for n in range(levels):
        proj[(n, n)] = Map.identity()
        for m in range(n - 1, -1, -1):
            proj[(n, m)] = Map.compose(proj[(n - 1, m)], step[n]) if m < n - 1 else step[n]
    return proj


def random_schedule(rng: random.Random) -> Callable[[int], int]:
    a = rng.randrange(0, 3)
    b = rng.randrange(0, 7)
    return lambda n: a * n + b


def calibration_instance(rng: random.Random, max_levels: int = 5,
                         cert_depth: Optional[int] = None) -> tuple[CalibrationInput, Calibration]:
    """An admissible input together with its calibration.

    Column cuts may outgrow a too-shallow certification window, so the
    depth is raised deterministically until the induction completes.
    """
    levels = rng.randrange(1, max_levels + 1)
    depth = cert_depth if cert_depth is not None else rng.randrange(36, 64)
    proj = projection_tower(rng, levels)
    e_rows: list[SetStream] = [naturals() for _ in range(levels)]
    if rng.randrange(2):
        e_rows[levels - 1] = arithmetic(rng.randrange(0, 4), rng.randrange(1, 4))
    f = random_schedule(rng)
    drops: dict[int, list[int]] = {}
    for n in range(levels):
        if rng.randrange(3) == 0:
            drops[n] = sorted(rng.sample(range(5), rng.randrange(1, 3)))
    stride = rng.randrange(2, 4)
    offset = rng.randrange(1, 3)
    last = None
    for _ in range(5):
        inp = assemble_input(levels, proj, e_rows, f, depth, d_stride=stride,
                             d_offset=offset, d_drops=drops or None)
        try:
            return inp, calibrate(inp, precheck=False)
        except DepthExceeded as err:
            last = err
            depth = depth * 2
    raise DepthExceeded(f"calibration instance kept outgrowing its depth ({last})")


def mutate_calibration(rng: random.Random, cal: Calibration) -> tuple[Calibration, str]:
    """Corrupt one table entry in a way guaranteed to break a clause.

    Bumping a level-0 cut up breaks the head-anchor clause of its column;
    bumping any cut down past 1 breaks the tail-coverage clause, since
    the stored cut was the least containment threshold.
    """
    import copy

    mutated = Calibration(cal.levels, cal.n_max, dict(cal.k_table), list(cal.gprime),
                          list(cal.lrho), list(cal.records))
    down_candidates = [(m, n) for (m, n) in cal.k_table if cal.k_table[(m, n)] >= 2 and n <= cal.n_max]
    if down_candidates and rng.randrange(2):
        m, n = down_candidates[rng.randrange(len(down_candidates))]
        mutated.k_table[(m, n)] -= 1
        return mutated, f"K[{m},{n}] decremented"
    ns = [n for n in range(cal.n_max + 1)]
    n = ns[rng.randrange(len(ns))]
    mutated.k_table[(0, n)] += 1
    return mutated, f"K[0,{n}] incremented"


def residue_ladder(rng: random.Random, levels: int) -> dict[tuple[int, int], Map]:
    """Exactly commuting ladder projections with residue-separated level
    ranges: each step floor-divides the block part and restamps the level
    residue modulo 4, so plateaus stay narrow, the rows of a projected
    chain are pairwise disjoint, and positions line up across levels."""
    proj: dict[tuple[int, int], Map] = {}
    step: dict[int, Map] = {}
    for n in range(1, levels):
        stretch = rng.randrange(1, 3)
        residue = (n - 1) % 4

        def fn(v, s=stretch, r=residue):
            return 4 * ((v // 4) // s) + r

        step[n] = Map.formula(fn, name=f"step{n}/{stretch}")
    for n in range(levels):
        proj[(n, n)] = Map.identity()
        for m in range(n - 1, -1, -1):
            proj[(n, m)] = Map.compose(proj[(n - 1, m)], step[n]) if m < n - 1 else step[n]
    return proj


def random_tower(rng: random.Random, max_levels: int = 3):
    """Coherent ladder data for the diagonal engine.

    One master map serves both the carrier side and the chain side (the
    chain descends inside the carrier by thinning), so every commuting
    hypothesis holds outright; the master's values carry the top level's
    residue stamp so the projected rows stay aligned and disjoint.
    """
    from .constructions import TowerInput
    from .maps import NormalTriple

    levels = rng.randrange(1, max_levels + 1)
    base = triangular(offset=rng.randrange(0, 5))
    a = rng.randrange(1, 4)
    b = rng.randrange(0, 4)
    top_residue = (levels - 1) % 4
    psi = ValueSeq.affine(4 * a, 4 * b + top_residue)
    master = Map.block(base, psi, name="master")
    proj = residue_ladder(rng, levels)
    top_maps, top_triples = [], []
    for n in range(levels):
        if n == levels - 1:
            mp, vals = master, psi
        else:
            hop = proj[(levels - 1, n)]
            mp = Map.compose(hop, master, name=f"top{n}")
            vals = ValueSeq.mapped(psi, hop)
        top_maps.append(mp)
        top_triples.append(NormalTriple(mp, vals, base, range_window=4))
    carrier = thin(base, random_increasing_stream(rng, start_max=3)) if rng.randrange(2) else base
    chain = [carrier]
    for _ in range(rng.randrange(0, levels)):
        chain.append(random_thinning(rng, chain[-1]))
    f = rng.choice([lambda n: n, lambda n: 2 * n, lambda n: n + 3])
    return TowerInput(
        levels=levels, carrier=carrier, chain=chain, proj=proj,
        top_maps=list(top_maps), top_triples=list(top_triples),
        side_maps=list(top_maps), side_triples=list(top_triples),
        side_level=[0] * levels, f=f,
        d_stride=rng.randrange(2, 4), d_offset=rng.randrange(1, 3),
    )


def block_seq_suite(seed: int, instances: int = 500, chains: int = 200,
                    depth: int = 64) -> Report:
    """Floor, composition, and chain laws over random block sequences."""
    from .blocks import block_seq_check, le_at
    from .blocks import min_ge_index_holds

    rep = Report("suite-blockseq")
    rng = rng_for(seed, "blockseq")
    bad = 0
    for i in range(instances):
        c = random_block_seq(rng)
        if not block_seq_check(c, depth).ok or min_ge_index_holds(c, depth) is not None:
            bad += 1
    rep.add("r5:i201", f"{instances} sequences depth {depth}", bad == 0,
            f"{bad} floor violations" if bad else "")
    comp_bad = chain_bad = 0
    for i in range(chains):
        base = random_block_seq(rng)
        b = random_thinning(rng, base)
        a = random_thinning(rng, b)
        n = rng.randrange(0, 4)
        m = rng.randrange(0, 4)
        if le_at(a, b, n, 24).ok and le_at(b, base, m, 24).ok:
            if not le_at(a, base, max(m, n), 24).ok:
                comp_bad += 1
        else:
            comp_bad += 1
        links = [base]
        ms = []
        for _ in range(3):
            links.append(random_thinning(rng, links[-1]))
            ms.append(rng.randrange(0, 3))
        if not all(le_at(links[k], links[k - 1], ms[k - 1], 16).ok for k in range(1, 4)):
            chain_bad += 1
        elif not le_at(links[-1], links[0], max(ms), 16).ok:
            chain_bad += 1
    rep.add("r5:i204", f"{chains} chains", comp_bad == 0, f"{comp_bad} failures" if comp_bad else "")
    rep.add("r5:i203", f"{chains} chains", chain_bad == 0, f"{chain_bad} failures" if chain_bad else "")
    return rep


def delta_suite(seed: int, instances: int = 200) -> Report:
    """Windowed fresh-point extraction against a direct double loop."""
    from .rho import RhoTriple, delta_rho

    rep = Report("suite-delta")
    rng = rng_for(seed, "delta")
    mismatches = 0
    for i in range(instances):
        rows, k_table, tables, cols = _random_rho_raw(rng)
        rho = RhoTriple(rows=tuple(scripted(v) for v in rows), k_table=dict(k_table),
                        proj={key: Map.tabulated(tab) for key, tab in tables.items()})
        for n in range(cols):
            got = delta_rho(rho, n)
            want_fresh, want_merged = _brute_fresh(rows, k_table, tables, n)
            if got.merged != tuple(want_merged):
                mismatches += 1
                break
            if any(got.fresh[m] != tuple(want_fresh[m]) for m in want_fresh):
                mismatches += 1
                break
    rep.add("r1:delta", f"{instances} instances", mismatches == 0,
            f"{mismatches} disagreements" if mismatches else "")
    return rep


def _random_rho_raw(rng: random.Random, max_rows: int = 4, max_window: int = 20):
    rows_n = rng.randrange(1, max_rows + 1)
    cols = rows_n + rng.randrange(0, 3)
    rows = []
    for _ in range(rows_n):
        vals, cur = [], rng.randrange(0, 4)
        for _ in range(140):
            vals.append(cur)
            cur += rng.randrange(1, 3)
        rows.append(vals)
    k_table = {}
    for m in range(rows_n):
        cut = rng.randrange(0, 4)
        for n in range(m, cols + 1):
            k_table[(m, n)] = cut
            cut = min(cut + rng.randrange(0, max_window + 1), 120)
    top = 1 + max(max(v) for v in rows)
    tables = {}
    for n in range(rows_n):
        for m in range(n):
            tables[(n, m)] = [rng.randrange(0, top) for _ in range(top)]
    return rows, k_table, tables, cols


def _brute_fresh(rows, k_table, tables, n):
    m_max = min(n, len(rows) - 1)
    windows = {m: rows[m][k_table[(m, n)]:k_table[(m, n + 1)]] for m in range(m_max + 1)}
    fresh = {}
    for m in range(m_max + 1):
        keep = []
        for k in windows[m]:
            hit = False
            for mp in range(m + 1, m_max + 1):
                if any(tables[(mp, m)][u] == k for u in windows[mp]):
                    hit = True
                    break
            if not hit:
                keep.append(k)
        fresh[m] = keep
    merged = sorted({x for pts in fresh.values() for x in pts})
    return fresh, merged


def fiber_suite(seed: int, instances: int = 100, depth: int = 10) -> Report:
    """Interleaving of target fibers over random triples and targets."""
    from .maps import NormalTriple, fiber_blocks

    rep = Report("suite-fibers")
    rng = rng_for(seed, "fibers")
    bad = 0
    first = ""
    for i in range(instances):
        base = triangular(offset=rng.randrange(0, 4))
        a_coef = rng.randrange(1, 4)
        psi = ValueSeq.affine(a_coef, rng.randrange(0, 5))
        pi = Map.block(base, psi)
        t = NormalTriple(pi, psi, base, range_window=1)
        c = thin(base, random_increasing_stream(rng, start_max=3))
        n0 = rng.randrange(0, 3)
        idx = random_increasing_stream(rng, start_max=2)
        targets = []
        k = 0
        while len(targets) < depth:
            j = idx.nth(k) + n0
            targets.append(psi.at(c._rule.picker.nth(j) if hasattr(c._rule, "picker") else j))
            k += 1
        try:
            fb = fiber_blocks(t, scripted(targets), c, n0, depth)
        except Exception as err:  # noqa: BLE001 - suite records any breakage
            bad += 1
            first = first or f"i={i}: {err}"
            continue
        for n in range(depth - 1):
            if not (fb.max_of(n) < fb.min_beyond(n + 1) <= fb.max_of(n + 1)):
                bad += 1
                first = first or f"i={i}: interleaving at {n}"
                break
    rep.add("t14:chain", f"{instances} triples", bad == 0, first)
    return rep


def fusion_instance(rng: random.Random):
    from .constructions import FusionInput
    from .maps import NormalTriple
    from .streams import block_image

    base = triangular(offset=rng.randrange(0, 4))
    psi = ValueSeq.affine(rng.randrange(1, 3), rng.randrange(0, 4))
    pi = Map.block(base, psi, name="fusemap")
    t = NormalTriple(pi, psi, base, range_window=1)
    chain = [thin(base, random_increasing_stream(rng, start_max=2)) if rng.randrange(2) else base]
    for _ in range(rng.randrange(1, 4)):
        chain.append(random_thinning(rng, chain[-1]))
    # image of the deepest element from the engine's own threshold level
    probe = block_image(chain[-1], pi, 0)
    picks = []
    pos = 0
    for n in range(24):
        pos = max(pos + 1, 2 * (n + 1) + rng.randrange(0, 3))
        picks.append(probe.nth(pos))
    pseudo = scripted(picks, name="pseudo")
    return FusionInput(chain=chain, triple=t, pseudo=pseudo, check_depth=12)


def fusion_suite(seed: int, instances: int = 30, depth: int = 18) -> Report:
    from .constructions import fuse

    rep = Report("suite-fusion")
    rng = rng_for(seed, "fusion")
    for i in range(instances):
        inp = fusion_instance(rng)
        try:
            res = fuse(inp, depth)
            ok = res.report.ok
            why = "" if ok else str(res.report.failures()[0])
        except Exception as err:  # noqa: BLE001
            ok, why = False, str(err)
        rep.add("t36:instance", f"i={i}", ok, why)
    return rep


def lift_suite(seed: int, instances: int = 30, depth: int = 24) -> Report:
    from .constructions import lift_system

    rep = Report("suite-lift")
    rng = rng_for(seed, "lift")
    for i in range(instances):
        levels = rng.randrange(2, 5)
        proj = projection_tower(rng, levels)
        carrier = triangular(offset=rng.randrange(0, 4))
        ok, why = False, ""
        cert = 48
        for _ in range(4):
            try:
                res = lift_system(proj, levels, carrier, depth, cert_depth=cert)
                ok = res.report.ok
                why = "" if ok else str(res.report.failures()[0])
                break
            except DepthExceeded as err:
                # column cuts can outgrow the window; deepen and retry
                ok, why = False, str(err)
                cert *= 2
            except Exception as err:  # noqa: BLE001
                ok, why = False, str(err)
                break
        rep.add("t101:instance", f"i={i} levels={levels}", ok, why)
    return rep


def diagonal_suite(seed: int, instances: int = 20) -> Report:
    from .constructions import diagonal

    rep = Report("suite-diagonal")
    rng = rng_for(seed, "tower")
    for i in range(instances):
        tw = random_tower(rng, max_levels=3)
        try:
            res = diagonal(tw)
            ok = res.report.ok
            why = "" if ok else str(res.report.failures()[0])
        except Exception as err:  # noqa: BLE001
            ok, why = False, str(err)
        rep.add("t30:instance", f"i={i} levels={tw.levels}", ok, why)
    return rep


def labeled_seed(rng: random.Random, n_labels: int, budget: Optional[int] = None):
    """A condition over fresh labels with exactly commuting maps.

    The top label carries a block map with residue-stamped affine values;
    lower labels get literal compositions through the ladder, so the
    commuting clauses hold everywhere.
    """
    from .forcing import Condition, TripleWitness
    from .maps import NormalTriple

    labels = tuple(range(n_labels))
    proj = residue_ladder(rng, n_labels)
    c = triangular(offset=rng.randrange(0, 4))
    a = rng.randrange(1, 4)
    b = rng.randrange(0, 3)
    top = n_labels - 1
    psi_top = ValueSeq.affine(4 * a, 4 * b + (top % 4))
    maps = {top: Map.block(c, psi_top, name=f"q@{top}")}
    wits = {top: TripleWitness(psi_top, c, range_window=1)}
    for alpha in range(top - 1, -1, -1):
        hop = proj[(top, alpha)]
        maps[alpha] = Map.compose(hop, maps[top], name=f"q@{alpha}")
        wits[alpha] = TripleWitness(ValueSeq.mapped(psi_top, hop), c, range_window=4)
    pick = sorted(rng.sample(range(n_labels), rng.randrange(1, n_labels + 1)) + [top])
    chosen = tuple(sorted(set(pick)))
    q = Condition(c, top, chosen,
                  {al: maps[al] for al in chosen},
                  {al: wits[al] for al in chosen})
    return labels, proj, q


def anticipating_context(rng: random.Random, tasks, n_labels: int = 1, depth: int = 10):
    """A context whose towers already anticipate the given task chain.

    The tasks are first run against a decree-everything copy of the
    context; the resulting final images become the single tower set per
    label, so the honest run certifies every stage against the towers.
    """
    from .forcing import GenericContext, extend_condition

    labels, proj, q0 = labeled_seed(rng, n_labels)
    permissive = GenericContext(labels=labels, towers={a: () for a in labels},
                                proj=dict(proj), decree=lambda label, stream: True)
    from .forcing import _derive_certs
    from .streams import Budget

    bud = Budget(permissive.budget * 4, "anticipate")
    _derive_certs(permissive, q0, depth, bud, False, [])
    q = q0
    for i, task in enumerate(tasks):
        q, _ = extend_condition(q, task, permissive, depth, strict=False, index=i)
    from .errors import DepthExceeded, TableHorizon

    towers = {}
    need = s_of(8) + 2
    for a in labels:
        if a in q.labels:
            mp = q.maps[a]
        else:
            via = min(l for l in q.labels if l >= a)
            mp = Map.compose(proj[(via, a)], q.maps[via])
        img = block_image(q.c, mp, 0, permissive.budget)
        vals = []
        try:
            for i in range(need):
                vals.append(img.nth(i, bud))
        except (TableHorizon, DepthExceeded):
            pass
        towers[a] = (blocks_from_stream(scripted(vals, name=f"T{a}")),)
    ctx = GenericContext(labels=labels, towers=towers, proj=dict(proj))
    _derive_certs(ctx, q0, depth, bud, False, [])
    return ctx, q0


def random_forcing_pair(rng: random.Random, depth: int = 10):
    """A (condition, task) pair over a context that can certify it."""
    from .forcing import DecideSet, Kill, Rapidify, RestrictImage, Thin
    from .streams import arithmetic as _arith

    roll = rng.randrange(6)
    if roll == 0:
        task = Thin(lambda n, c=rng.randrange(1, 3): c * n + rng.randrange(2), False)
        # freeze the schedule: the closure must not re-roll per call
        mult = rng.randrange(1, 3)
        add = rng.randrange(0, 3)
        task = Thin(lambda n, m=mult, a=add: m * n + a + n, False)
    elif roll == 1:
        mult = rng.randrange(1, 3)
        task = Thin(lambda n, m=mult: (m + 1) * n + m, True)
    elif roll == 2:
        add = rng.randrange(0, 4)
        task = Rapidify(lambda n, a=add: 2 * n + a + 1)
    elif roll == 3:
        step = rng.randrange(2, 5)
        task = DecideSet(_arith(rng.randrange(0, 2), step))
    elif roll == 4:
        task = Kill(0, lambda s: set(list(s)[:1]) if s else set())
    else:
        task = RestrictImage(0, _arith(0, 1))
    n_labels = rng.randrange(1, 3)
    if rng.randrange(3) == 0:
        from .forcing import GenericContext, seed_condition

        ctx = GenericContext(labels=(), towers={})
        q0 = seed_condition(ctx, triangular(offset=rng.randrange(0, 3)))
        if isinstance(task, RestrictImage):
            task = Rapidify(lambda n: n + 2)
        if isinstance(task, Kill):
            task = Kill(None, task.phi)
        return ctx, q0, task
    if isinstance(task, (Kill, RestrictImage)):
        # the top label is always carried by the generated seed
        top = n_labels - 1
        task = Kill(top, task.phi) if isinstance(task, Kill) else RestrictImage(top, _arith(0, 1))
    ctx, q0 = anticipating_context(rng, [task], n_labels, depth)
    return ctx, q0, task


def forcing_suite(seed: int, instances: int = 100, depth: int = 9) -> Report:
    """Random (condition, task) pairs: extensions re-check and order."""
    from .forcing import (
        DecideSet,
        Kill,
        Rapidify,
        check_condition,
        extend_condition,
        leq_condition,
    )

    rep = Report("suite-forcing")
    rng = rng_for(seed, "forcing")
    for i in range(instances):
        ctx, q0, task = random_forcing_pair(rng, depth)
        name = type(task).__name__
        try:
            q1, entry = extend_condition(q0, task, ctx, depth, strict=False, index=i)
            checks = check_condition(q1, ctx, depth)
            order = leq_condition(q1, q0, ctx, depth)
            ok = checks.ok and order.ok and not entry.obligations
            why = "" if ok else (str((checks.failures() + order.failures() or [None])[0])
                                 if not (checks.ok and order.ok) else f"obligations {entry.obligations}")
            if ok and isinstance(task, DecideSet):
                bud = None
                exact = all(task.target.contains(x) for n in range(depth)
                            for x in q1.c.block(n)) or \
                    all(not task.target.contains(x) for n in range(depth)
                        for x in q1.c.block(n))
                ok, why = exact, "" if exact else "decided set not exact"
            if ok and isinstance(task, Rapidify):
                sup = [x for n in range(depth) for x in q1.c.block(n)]
                sched = task.schedule
                good = all(sup[n] >= sched(n) for n in range(len(sup)))
                ok, why = good, "" if good else "support below the schedule"
        except Exception as err:  # noqa: BLE001
            ok, why = False, f"{type(err).__name__}: {err}"
        rep.add("d14:extend", f"i={i} {name}", ok, why)
    return rep


def calibration_suite(seed: int, instances: int = 50, mutations: int = 50,
                      max_levels: int = 5, cert_depth: Optional[int] = None) -> Report:
    rep = Report("suite-calibration")
    rng = rng_for(seed, "calibration")
    cals = []
    for i in range(instances):
        inp, cal = calibration_instance(rng, max_levels, cert_depth)
        sub = verify_calibration(inp, cal)
        cals.append((inp, cal))
        rep.add("t7:instance", f"i={i} levels={inp.levels}", sub.ok,
                "" if sub.ok else str(sub.failures()[0]))
    for i in range(mutations):
        inp, cal = cals[rng.randrange(len(cals))]
        bad, what = mutate_calibration(rng, cal)
        sub = verify_calibration(inp, bad, include_hypotheses=False)
        rep.add("t7:mutation", f"i={i} {what}", not sub.ok,
                "a corrupted table must fail at least one clause" if sub.ok else
                f"caught by {sub.failures()[0].tag}")
    return rep
