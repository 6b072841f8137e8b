"""Executable construction engines: fusing a block sequence below a
descending chain, lifting a projection system onto the blocks of a
carrier sequence, and the diagonal construction that produces a common
refinement together with its connecting map.

All three engines are deterministic: wherever a proof allows an
arbitrary choice of a finite subset, the least elements are taken.
Every engine re-checks its hypotheses up front (PreconditionFailed names
the failing clause) and returns its conclusion together with a clause
report certifying the inspected prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .blocks import BlockSeq, block_seq_check, le_at, le_some, scripted_blocks, sset
from .calibration import (
    Calibration,
    CalibrationInput,
    assemble_input,
    calibrate,
    verify_calibration,
)
from .errors import DepthExceeded, PreconditionFailed
from .maps import Map, NormalTriple, ValueSeq, normal_check
from .report import Report
from .streams import (
    Budget,
    SetStream,
    _budget,
    block_image,
    default_budget,
    intersect,
    naturals,
    s_of,
    t_of,
)


def _chain_at(chain: Sequence[BlockSeq], k: int) -> BlockSeq:
    # chains are conceptually infinite; past the end they are constant
    return chain[min(k, len(chain) - 1)]


def _fiber_max(pi: Map, seq: BlockSeq, target: int, cursor: dict, key, bud: Budget) -> int:
    """Largest block index whose image is exactly the target singleton.

    Successive targets are increasing and fibers interleave, so a shared
    forward cursor per sequence makes a pass over all targets one sweep.
    Constancy on a block is probed at its ends, which the embedding
    preconditions of the calling engines justify.
    """
    state = cursor.setdefault(key, {"m": 0, "best": {}})
    m = state["m"]
    while True:
        bud.spend()
        lo = pi.apply(seq.first_of(m, bud), bud)
        hi = pi.apply(seq.last_of(m, bud), bud)
        if lo == hi:
            if lo > target:
                break
            state["best"][lo] = m
        m += 1
    if target not in state["best"]:
        raise PreconditionFailed("fiber", f"no block maps onto {target}")
    best = state["best"][target]
    state["m"] = best + 1
    return best


def _flat_run(psi: ValueSeq, total: int) -> int:
    longest, run, prev = 0, 0, None
    for l in range(total):
        v = psi.at(l)
        run = run + 1 if v == prev else 1
        prev = v
        longest = max(longest, run)
    return longest


# -- fusion ---------------------------------------------------------------


@dataclass(eq=False)
class FusionInput:
    """A descending chain with a normal triple above it and the rapidity
    data needed to fuse below the whole chain.

    pseudo is the stream to realize as the exact image of the fused
    sequence.  rapid_rows[k](n) must appear in the k-th image stream at a
    position of at least 2(n+1) (witness indices are re-checked when
    supplied, located by scan otherwise); pseudo must sit inside every
    rapidity row past its stated threshold and inside row 0 outright.
    """

    chain: Sequence[BlockSeq]
    triple: NormalTriple
    pseudo: SetStream
    rapid_rows: Optional[Sequence[SetStream]] = None
    pseudo_thresholds: Optional[Sequence[int]] = None
    rapid_witness: Optional[Sequence[Sequence[int]]] = None
    check_depth: int = 20
    budget: int = field(default_factory=default_budget)

    def __post_init__(self):
        if not self.chain:
            raise PreconditionFailed("t36:chain", "empty chain")
        if self.rapid_rows is None:
            self.rapid_rows = [self.pseudo] * len(self.chain)


@dataclass(eq=False)
class FusionResult:
    fused: BlockSeq
    levels: list[int]          # embedding thresholds computed per chain element
    le_thresholds: list[int]   # emitted levels certifying the fused order
    report: Report


def fuse(inp: FusionInput, depth: int, bud: Optional[Budget] = None) -> FusionResult:
    """Build one block sequence below every chain element whose image is
    exactly the requested stream on the whole materialized prefix.

    Runs the doubling induction: each round pins down where the target
    stream has settled inside the next rapidity row, then emits blocks
    chosen as least elements inside the fibers of the target values.
    """
    bud = _budget(bud, inp.budget * max(2, len(inp.chain)), "fuse")
    rep = Report("fusion")
    t = inp.triple
    scan = max(inp.check_depth, depth)

    n_levels = [le_some(inp.chain[0], t.c, scan, bud).l]
    if not le_at(inp.chain[0], t.c, n_levels[0], scan, bud).ok:
        raise PreconditionFailed("t36:base", "chain head does not sit below the triple base")
    for j in range(1, len(inp.chain)):
        v = le_some(inp.chain[j], inp.chain[j - 1], scan, bud)
        if not v.ok:
            raise PreconditionFailed("t36:chain", f"element {j} not below element {j - 1}: {v.reason}")
        n_levels.append(max(v.l, n_levels[-1]))

    images = [block_image(_chain_at(inp.chain, k), t.pi,
                          n_levels[min(k, len(n_levels) - 1)], inp.budget, name=f"img{k}")
              for k in range(len(inp.chain))]
    for k in range(len(inp.chain)):
        for n in range(inp.check_depth):
            want = inp.rapid_rows[k].nth(n, bud)
            if inp.rapid_witness is not None:
                m = inp.rapid_witness[k][n]
                if images[k].nth(m, bud) != want:
                    raise PreconditionFailed(
                        "t36:rapidity", f"row {k}: witness {m} does not point at element {n}")
            else:
                m = images[k].index_of(want, bud)
                if m is None:
                    raise PreconditionFailed(
                        "t36:rapidity", f"row {k}: element {n} missing from the image stream")
            if m < 2 * (n + 1):
                raise PreconditionFailed(
                    "t36:rapidity", f"row {k}: element {n} sits at {m} < {2 * (n + 1)}")
        thr = inp.pseudo_thresholds[k] if inp.pseudo_thresholds else 0
        for i in range(thr, inp.check_depth):
            if not inp.rapid_rows[k].contains(inp.pseudo.nth(i, bud), bud):
                raise PreconditionFailed(
                    "t36:pseudo", f"pseudo({i}) escapes rapidity row {k} past threshold {thr}")
    for i in range(inp.check_depth):
        if not inp.rapid_rows[0].contains(inp.pseudo.nth(i, bud), bud):
            raise PreconditionFailed("t36:sub", f"pseudo({i}) outside row 0")

    # the doubling induction
    g = [0]
    blocks: list[tuple[int, ...]] = []
    fiber_cursor: dict = {}
    while len(blocks) < depth:
        k = len(g) - 1
        row_next = inp.rapid_rows[min(k + 1, len(inp.rapid_rows) - 1)]
        last_bad = -1
        for i in range(depth):
            bud.spend()
            if not row_next.contains(inp.pseudo.nth(i, bud), bud):
                last_bad = i
        if last_bad == depth - 1:
            raise DepthExceeded(f"round {k}: the target never settles in the next row")
        x_k = max(g[-1] + 1, last_bad + 1)
        g.append(2 * x_k)
        d_k = _chain_at(inp.chain, k)
        for l in range(g[-2], min(g[-1], depth)):
            target = inp.pseudo.nth(l, bud)
            m = _fiber_max(t.pi, d_k, target, fiber_cursor, min(k, len(inp.chain) - 1), bud)
            blk = d_k.block(m, bud)
            if len(blk) < l + 1:
                raise PreconditionFailed("t36:size", f"fiber block {m} too small for {l + 1} points")
            blocks.append(blk[: l + 1])
    fused = scripted_blocks(blocks, inp.budget, name="fused")

    v = block_seq_check(fused, depth, bud)
    rep.add("t36:member", "fused", v.ok, "" if v.ok else f"{v.clause} at {v.fail_index}")
    le_thresholds = []
    for j in range(len(inp.chain)):
        lvl = min(g[j] if j < len(g) else depth, depth)
        ver = le_at(fused, inp.chain[j], lvl, depth, bud)
        le_thresholds.append(lvl)
        rep.add("t36:le", f"j={j} level={lvl}", ver.ok, "" if ver.ok else ver.reason)
    bad = None
    for l in range(depth):
        vals = sorted({t.pi.apply(x, bud) for x in fused.block(l, bud)})
        if vals != [inp.pseudo.nth(l, bud)]:
            bad = l
            break
    rep.add("t36:image", f"prefix<{depth}", bad is None,
            "" if bad is None else f"block {bad} image mismatch")
    return FusionResult(fused, n_levels, le_thresholds, rep)


# -- lifting --------------------------------------------------------------


@dataclass(eq=False)
class LiftResult:
    carrier: BlockSeq
    maps: list[Map]
    psis: list[ValueSeq]
    validity_blocks: int  # carrier blocks covered by calibrated records
    calibration: Calibration
    report: Report


def lift(inp: CalibrationInput, cal: Calibration, carrier: BlockSeq, depth: int,
         bud: Optional[Budget] = None) -> LiftResult:
    """Attach one map per level to the blocks of a carrier sequence.

    Block group n of the carrier takes, at level m, the projected anchor
    values of column n, and zero on groups before level m.  Certifies the
    calibration windows against the lifted value rows, the commuting of
    the lifted maps through the projection system past each group
    boundary, and normality of every lifted triple.
    """
    bud = _budget(bud, inp.budget * max(2, inp.levels), "lift")
    rep = Report("lift")
    for i in range(min(8, inp.cert_depth)):
        if inp.f(i) != i:
            raise PreconditionFailed("t101:schedule", "the lift needs the identity schedule")
        for n in range(inp.levels):
            if inp.e_rows[n].nth(i, bud) != i:
                raise PreconditionFailed("t101:frame", "the lift needs full E rows")
    L = inp.levels
    top = cal.n_max
    total = cal.lrho[top + 1]
    psis: list[ValueSeq] = []
    maps: list[Map] = []
    for m in range(L):
        vals: list[int] = []
        for n in range(top + 1):
            rec = cal.records[n]
            for j in range(rec.count):
                vals.append(0 if n < m else inp.proj[(n, m)].apply(rec.anchors[j], bud))
        psi = ValueSeq.scripted(vals, tail_increment=True, name=f"psi{m}")
        psis.append(psi)
        maps.append(Map.block(carrier, psi, name=f"lift{m}"))

    for m in range(L):
        lifted_vals = {psis[m].at(l, bud) for l in range(total)}
        bad = None
        for n in range(m, top + 1):
            for i in range(cal.k(m, n), cal.k(m, n + 1)):
                if inp.d_rows[m].nth(i, bud) not in lifted_vals:
                    bad = (n, i)
                    break
            if bad:
                break
        rep.add("t101:i104", f"m={m} from K[{m},{m}]={cal.k(m, m)}", bad is None,
                "" if bad is None else f"window point D{m}({bad[1]}) not a lifted value")
    for m in range(L):
        for l in range(m, L):
            start = cal.lrho[min(l, top + 1)]
            bad = None
            for blk_i in range(start, total):
                for k in carrier.block(blk_i, bud):
                    bud.spend()
                    if maps[m].apply(k, bud) != inp.proj[(l, m)].apply(maps[l].apply(k, bud), bud):
                        bad = k
                        break
                if bad is not None:
                    break
            rep.add("t101:i105", f"m={m} l={l} from block {start}", bad is None,
                    "" if bad is None else f"commuting fails at {bad}")
    for m in range(L):
        window = _flat_run(psis[m], total) + 1
        t = NormalTriple(maps[m], psis[m], carrier, range_window=window)
        v = normal_check(t, min(depth, max(total, 4)), bud)
        rep.add("t101:i106", f"m={m} window={window}", v.ok,
                "" if v.ok else f"{v.clause} at {v.at}")
    return LiftResult(carrier, maps, psis, total, cal, rep)


def lift_system(proj: dict[tuple[int, int], Map], levels: int, carrier: BlockSeq,
                depth: int, *, cert_depth: int = 48, d_stride: int = 2,
                d_offset: int = 1, d_drops=None,
                budget: Optional[int] = None) -> LiftResult:
    """Assemble the identity-schedule calibration over full rows and lift.

    This is the closed form of the lifting construction: rows are the
    whole naturals, the schedule is the identity, and the diagonal data
    is chosen as a coherent projection chain.
    """
    budget = budget if budget is not None else default_budget()
    e_rows = [naturals(budget) for _ in range(levels)]
    inp = assemble_input(levels, proj, e_rows, lambda n: n, cert_depth,
                         d_stride=d_stride, d_offset=d_offset, d_drops=d_drops,
                         budget=budget)
    cal = calibrate(inp)
    return lift(inp, cal, carrier, depth)


# -- the diagonal construction -------------------------------------------


@dataclass(eq=False)
class TowerInput:
    """Ladder data for the diagonal construction.

    The ladder levels stand for an increasing cofinal list of stages
    below an implicit top.  top_maps[n] carries the top into level n and
    must come with a normal triple whose base lies above the carrier;
    side_maps[n] carries the chain into level n, with a triple whose base
    lies above chain[side_level[n]].  proj is the ladder's own projection
    system.  commute_j[(m, n)] and commute_from[(m, n)] certify where the
    side maps commute through the ladder (defaults: everywhere).
    d_stride, d_offset and d_drops choose the diagonalization rows inside
    the assembled frames.
    """

    levels: int
    carrier: BlockSeq
    chain: Sequence[BlockSeq]
    proj: dict[tuple[int, int], Map]
    top_maps: Sequence[Map]
    top_triples: Sequence[NormalTriple]
    side_maps: Sequence[Map]
    side_triples: Sequence[NormalTriple]
    side_level: Sequence[int]
    f: Callable[[int], int]
    commute_j: Optional[dict[tuple[int, int], int]] = None
    commute_from: Optional[dict[tuple[int, int], int]] = None
    cert_depth: int = 14
    scan_depth: int = 40
    d_stride: int = 2
    d_offset: int = 1
    d_drops: Optional[dict] = None
    budget: int = field(default_factory=default_budget)

    def __post_init__(self):
        for n in range(self.levels):
            self.proj.setdefault((n, n), Map.identity())


@dataclass(eq=False)
class DiagonalResult:
    refined: BlockSeq                      # the common refinement of the chain
    trace: BlockSeq                        # its image pattern inside the carrier
    connecting: Map
    psi: ValueSeq
    chain_thresholds: list[int]
    side_thresholds: list[int]
    trace_witnesses: list[int]             # carrier block index hosting each trace block
    calibration: Calibration
    report: Report


def diagonal(inp: TowerInput, bud: Optional[Budget] = None) -> DiagonalResult:
    """Run the diagonal construction over a ladder of levels.

    Assembles the per-level frames from the carrier-side and chain-side
    images, calibrates them under the combined growth schedule, and cuts
    the refined pair out of the anchor fibers; the connecting map sends
    the m-th refined block onto the m-th element of the trace's support.

    The combined schedule is capped at the anticipated record span and
    the cap is doubled until it covers the records actually produced;
    every certified clause only quantifies within that span.
    """
    bud = _budget(bud, inp.budget * max(2, inp.levels) * 2, "diagonal")
    rep = Report("diagonal")
    N = inp.levels
    scan = inp.scan_depth
    chain = list(inp.chain)
    for j in range(1, len(chain)):
        v = le_some(chain[j], chain[j - 1], scan, bud)
        if not v.ok:
            raise PreconditionFailed("t30:i76", f"chain element {j} not below {j - 1}")

    kd = []
    for n in range(N):
        jn0 = inp.side_level[n]
        if jn0 >= len(chain):
            raise PreconditionFailed("t30:i79", f"side witness {jn0} beyond the chain")
        v = le_some(chain[jn0], inp.side_triples[n].c, scan, bud)
        if not v.ok:
            raise PreconditionFailed("t30:i79", f"chain[{jn0}] not below side base {n}")
        kd.append(v.l)
    cj = inp.commute_j or {}
    cfrom = inp.commute_from or {}
    ld = {}
    for n in range(N):
        for m in range(n + 1):
            jmn = cj.get((m, n), 0)
            start = cfrom.get((m, n), 0)
            src = _chain_at(chain, jmn)
            bad = None
            for blk in range(start, min(start + inp.cert_depth, scan)):
                for k in src.block(blk, bud):
                    bud.spend()
                    if inp.side_maps[m].apply(k, bud) != inp.proj[(n, m)].apply(
                            inp.side_maps[n].apply(k, bud), bud):
                        bad = k
                        break
                if bad is not None:
                    break
            if bad is not None:
                raise PreconditionFailed("t30:i78", f"side commuting m={m} n={n} fails at {bad}")
            ld[(m, n)] = (jmn, start)

    j_seq: list[int] = []
    qd: list[int] = []
    md: list[int] = []
    for n in range(N):
        cands = [inp.side_level[n]] + [j_seq[k] + 1 for k in range(n)] + \
                [ld[(m, n)][0] for m in range(n + 1)]
        j_n = max(cands)
        j_seq.append(j_n)
        dn = _chain_at(chain, j_n)
        q = le_some(dn, _chain_at(chain, inp.side_level[n]), scan, bud).l
        for k in range(n):
            q = max(q, le_some(dn, _chain_at(chain, j_seq[k]), scan, bud).l)
        for m in range(n + 1):
            q = max(q, le_some(dn, _chain_at(chain, ld[(m, n)][0]), scan, bud).l)
        qd.append(q)
        prev = md[-1] if md else 0
        md.append(max([kd[n], qd[n]] + [ld[(m, n)][1] for m in range(n + 1)] + [prev]))

    ke = []
    le = {}
    me: list[int] = []
    for n in range(N):
        v = le_some(inp.carrier, inp.top_triples[n].c, scan, bud)
        if not v.ok:
            raise PreconditionFailed("t30:i75", f"carrier not below top base {n}")
        ke.append(v.l)
        for m in range(n + 1):
            last_bad = -1
            for blk in range(scan):
                for k in inp.carrier.block(blk, bud):
                    bud.spend()
                    if inp.top_maps[m].apply(k, bud) != inp.proj[(n, m)].apply(
                            inp.top_maps[n].apply(k, bud), bud):
                        last_bad = blk
            if last_bad == scan - 1:
                raise PreconditionFailed("t30:i74", f"carrier commuting m={m} n={n} never settles")
            le[(m, n)] = last_bad + 1
        prev = me[-1] if me else 0
        me.append(max([ke[n]] + [le[(m, n)] for m in range(n + 1)] + [prev]))

    e_rows = []
    for n in range(N):
        top_img = block_image(inp.carrier, inp.top_maps[n], me[n], inp.budget,
                              name=f"topimg{n}")
        side_img = block_image(_chain_at(chain, j_seq[n]), inp.side_maps[n], md[n],
                               inp.budget, name=f"sideimg{n}")
        e_rows.append(intersect(top_img, side_img, inp.budget, name=f"E{n}"))

    t_cap = 8
    while True:
        sched = _capped_schedule(inp.f, t_cap)
        cal_inp = assemble_input(N, dict(inp.proj), e_rows, sched, inp.cert_depth,
                                 d_stride=inp.d_stride, d_offset=inp.d_offset,
                                 d_drops=inp.d_drops, spread="linear", budget=inp.budget)
        cal = calibrate(cal_inp)
        if cal.lrho[cal.n_max + 1] <= t_cap:
            break
        t_cap *= 2
        if t_cap > 512:
            raise DepthExceeded("record span keeps outgrowing the schedule cap")
    sub = verify_calibration(cal_inp, cal)
    rep.add("t30:t7", "embedded calibration", sub.ok,
            "" if sub.ok else str(sub.failures()[0]))

    e_blocks: list[tuple[int, ...]] = []
    d_blocks: list[tuple[int, ...]] = []
    zeta_list: list[int] = []
    cursors_e: dict = {}
    cursors_d: dict = {}
    for n in range(cal.n_max + 1):
        rec = cal.records[n]
        for j in range(rec.count):
            k = cal.lrho[n] + j
            z = rec.anchors[j]
            zeta = _fiber_max(inp.top_maps[n], inp.carrier, z, cursors_e, n, bud)
            zj = _fiber_max(inp.side_maps[n], _chain_at(chain, j_seq[n]), z, cursors_d, n, bud)
            if zeta < sched(k) or zj < sched(k):
                raise PreconditionFailed(
                    "t30:anchors", f"fiber index below the schedule at group {k}")
            blk = inp.carrier.block(zeta, bud)
            if len(blk) < k + 1:
                raise PreconditionFailed("t30:size", f"carrier block {zeta} too small")
            e_blocks.append(blk[: k + 1])
            zeta_list.append(zeta)
            src = _chain_at(chain, j_seq[n]).block(zj, bud)
            if len(src) < t_of(k):
                raise PreconditionFailed("t30:size", f"chain block {zj} smaller than {t_of(k)}")
            off = 0
            for l in range(s_of(k), s_of(k + 1)):
                d_blocks.append(src[off: off + l + 1])
                off += l + 1
    e_star = scripted_blocks(e_blocks, inp.budget, name="trace")
    d_star = scripted_blocks(d_blocks, inp.budget, name="refined")
    support_vals = [x for blk in e_blocks for x in blk]
    psi = ValueSeq.scripted(support_vals[: len(d_blocks)], tail_increment=True, name="psi*")
    pi = Map.block(d_star, psi, name="connect")

    v = block_seq_check(e_star, len(e_blocks), bud)
    rep.add("t30:t8", "trace separation", v.ok, "" if v.ok else f"{v.clause} at {v.fail_index}")
    v = block_seq_check(d_star, len(d_blocks), bud)
    rep.add("t30:t8", "refined separation", v.ok, "" if v.ok else f"{v.clause} at {v.fail_index}")
    ok_sizes = all(len(e_blocks[k]) == k + 1 for k in range(len(e_blocks))) and \
        all(len(d_blocks[l]) == l + 1 for l in range(len(d_blocks)))
    rep.add("t30:sizes", "least-elements choice", ok_sizes, "")
    bad = next((k for k in range(len(e_blocks)) if zeta_list[k] < inp.f(k)), None)
    rep.add("t30:i84", "trace blocks sit deep in the carrier", bad is None,
            "" if bad is None else f"block {bad} witness {zeta_list[bad]}")
    chain_thresholds = []
    for j in range(len(chain)):
        n_j = next((n for n in range(N) if j_seq[n] >= j), N - 1)
        lvl = min(s_of(cal.lrho[n_j]), len(d_blocks))
        ver = le_at(d_star, chain[j], lvl, len(d_blocks), bud)
        chain_thresholds.append(lvl)
        rep.add("t30:i80", f"j={j} level={lvl}", ver.ok, "" if ver.ok else ver.reason)
    bad = None
    for m in range(len(d_blocks)):
        got = sorted({pi.apply(x, bud) for x in d_blocks[m]})
        if got != [support_vals[m]]:
            bad = m
            break
    rep.add("t30:i80", "image equals the trace support", bad is None,
            "" if bad is None else f"block {bad}")
    side_thresholds = []
    for n in range(N):
        start = min(s_of(cal.lrho[n]), len(d_blocks))
        side_thresholds.append(start)
        bad = None
        for m in range(start, len(d_blocks)):
            for x in d_blocks[m]:
                bud.spend()
                if inp.side_maps[n].apply(x, bud) != inp.top_maps[n].apply(pi.apply(x, bud), bud):
                    bad = x
                    break
            if bad is not None:
                break
        rep.add("t30:i81", f"alpha={n} from block {start}", bad is None,
                "" if bad is None else f"fails at {bad}")
    for m in range(N):
        img = {inp.top_maps[m].apply(x, bud) for x in support_vals}
        bad = None
        for n in range(m, cal.n_max + 1):
            for i in range(cal.k(m, n), cal.k(m, n + 1)):
                if cal_inp.d_rows[m].nth(i, bud) not in img:
                    bad = (n, i)
                    break
            if bad:
                break
        rep.add("t30:i82", f"alpha={m} from K[{m},{m}]", bad is None,
                "" if bad is None else f"window point at {bad} uncovered")
    window = _flat_run(psi, len(d_blocks)) + 1
    tri = NormalTriple(pi, psi, d_star, range_window=window)
    v2 = normal_check(tri, len(d_blocks), bud)
    rep.add("t30:i83", f"window={window}", v2.ok, "" if v2.ok else f"{v2.clause} at {v2.at}")
    return DiagonalResult(d_star, e_star, pi, psi, chain_thresholds, side_thresholds,
                          zeta_list, cal, rep)


def _capped_schedule(f: Callable[[int], int], cap: int) -> Callable[[int], int]:
    def sched(k: int) -> int:
        kk = min(k, cap)
        return max(f(kk), t_of(kk), s_of(kk + 1))

    return sched
