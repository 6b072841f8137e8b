"""The interval calibration engine.

Given per-level streams, projection maps between levels, and a growth
schedule, the engine synchronizes interval cuts K[m, n] across levels by
a column induction: anchor the first cut where the level-0 row enters
its frame, then at each later column push every level's cut past the
fresh-point budget and re-anchor through the level-0 image of the frame
tail.  A separate verifier re-checks every clause of the output against
the definitions, one report line per clause with witnesses.

All minimality searches are bounded by the input's certification depth
and budget; an exhausted search raises DepthExceeded naming itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import DepthExceeded, PreconditionFailed, TableHorizon
from .maps import Map
from .report import Report
from .rho import RhoTriple, delta_rho
from .streams import (
    Budget,
    SetStream,
    _budget,
    default_budget,
    formula_stream,
    from_indices,
    image,
    intersect,
    scripted,
)


@dataclass(eq=False)
class CalibrationInput:
    """Per-level data for the calibration engine.

    proj[(n, m)] maps level n into level m (m <= n); identity entries may
    be omitted.  The frame rows F are computed: F_n is the part of C_n
    that the next level's C row projects onto, and the last level's frame
    is its C row itself.  cert_depth bounds every tail containment and
    search; rapid_depth (default cert_depth) bounds the thinning
    re-check, whose schedule f may grow fast.
    """

    levels: int
    proj: dict[tuple[int, int], Map]
    e_rows: Sequence[SetStream]
    c_rows: Sequence[SetStream]
    d_rows: Sequence[SetStream]
    f: Callable[[int], int]
    cert_depth: int
    rapid_depth: Optional[int] = None
    budget: int = field(default_factory=default_budget)

    def __post_init__(self):
        if self.levels < 1:
            raise PreconditionFailed("cal-levels", "need at least one level")
        for rows, tag in ((self.e_rows, "E"), (self.c_rows, "C"), (self.d_rows, "D")):
            if len(rows) != self.levels:
                raise PreconditionFailed("cal-rows", f"{tag} has {len(rows)} rows, need {self.levels}")
        for n in range(self.levels):
            self.proj.setdefault((n, n), Map.identity())
        if self.rapid_depth is None:
            self.rapid_depth = self.cert_depth
        self._frames: Optional[tuple[SetStream, ...]] = None

    def frame(self, n: int) -> SetStream:
        if self._frames is None:
            frames = []
            for i in range(self.levels - 1):
                img = image(self.c_rows[i + 1], self.proj[(i + 1, i)], self.budget,
                            name=f"proj{i + 1}->{i}(C)")
                frames.append(intersect(self.c_rows[i], img, self.budget, name=f"F{i}"))
            frames.append(self.c_rows[self.levels - 1])
            self._frames = tuple(frames)
        return self._frames[n]


def _known_member(stream: SetStream, value: int, bud: Budget) -> bool:
    """Membership within the stream's inspected knowledge: a query past a
    truncated table's horizon counts as not found."""
    try:
        return stream.contains(value, bud)
    except TableHorizon:
        return False


class MonotoneImageScanner:
    """Forward-only membership tester for the image of a stream under a
    map that is nondecreasing along it.  The cursor never moves left, so
    a pass of increasing query values costs one sweep of the source."""

    __slots__ = ("mapping", "source", "_i", "_val")

    def __init__(self, mapping: Map, source: SetStream, start: int = 0):
        self.mapping = mapping
        self.source = source
        self._i = start
        self._val: Optional[int] = None

    def covers(self, value: int, bud: Budget) -> bool:
        while True:
            if self._val is None:
                bud.spend()
                self._val = self.mapping.apply(self.source.nth(self._i, bud), bud)
            if self._val >= value:
                return self._val == value
            self._i += 1
            self._val = None


def tail_threshold(row: SetStream, member: Callable[[int, Budget], bool], cert_depth: int,
                   bud: Budget, what: str) -> int:
    """Least l such that every row element with index in [l, cert_depth)
    passes the membership test; fails if the final inspected index is
    still outside, since then no containment is certified."""
    last_bad = -1
    for i in range(cert_depth):
        bud.spend()
        if not member(row.nth(i, bud), bud):
            last_bad = i
    if last_bad == cert_depth - 1:
        raise DepthExceeded(f"no containment threshold within depth for {what}")
    return last_bad + 1


@dataclass(frozen=True)
class LevelRecord:
    """Ordered fresh points of one column with their anchors.

    fresh[j] is the j-th fresh point in the fiber order, owners[j] its
    unique row, anchors[j] the largest frame element projecting onto it,
    anchor_pos[j] that element's index in the frame row, and
    anchor_e_index[j] its index in the corresponding E row.
    """

    fresh: tuple[int, ...]
    owners: tuple[int, ...]
    anchors: tuple[int, ...]
    anchor_pos: tuple[int, ...]
    anchor_e_index: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.fresh)


@dataclass(eq=False)
class Calibration:
    levels: int
    n_max: int
    k_table: dict[tuple[int, int], int]
    gprime: list[int]  # g'(0..n_max+1)
    lrho: list[int]    # running fresh counts, entries 0..n_max+1
    records: list[LevelRecord]  # levels 0..n_max

    def k(self, m: int, n: int) -> int:
        return self.k_table[(m, n)]


def check_input(inp: CalibrationInput, bud: Optional[Budget] = None) -> Report:
    """Re-check the caller-asserted hypotheses on the inspected prefix."""
    bud = _budget(bud, inp.budget * inp.levels, "calibration input check")
    rep = Report("calibration-input")
    depth = inp.cert_depth
    for n in range(inp.levels):
        cpre = [inp.c_rows[n].nth(i, bud) for i in range(depth)]
        ok = all(inp.e_rows[n].contains(v, bud) for v in cpre)
        rep.add("t7:hyp-subset", f"n={n}", ok, "" if ok else "C row escapes its E row")
        bad = None
        for k in range(min(inp.rapid_depth, depth)):
            if cpre[k] < inp.e_rows[n].nth(inp.f(2 * k), bud):
                bad = k
                break
        rep.add("t7:hyp-rapid", f"n={n}", bad is None,
                "" if bad is None else f"C({bad}) below the schedule")
        for m in range(n + 1):
            for mp in range(m, n + 1):
                mism = None
                for v in cpre:
                    bud.spend()
                    lhs = inp.proj[(n, m)].apply(v, bud)
                    rhs = inp.proj[(mp, m)].apply(inp.proj[(n, mp)].apply(v, bud), bud)
                    if lhs != rhs:
                        mism = v
                        break
                rep.add("t7:i58", f"n={n} m={m} m'={mp}", mism is None,
                        "" if mism is None else f"commuting fails at {mism}")
        for m in range(n + 1):
            vals = [inp.proj[(n, m)].apply(v, bud) for v in cpre]
            ok = all(a <= b for a, b in zip(vals, vals[1:]))
            rep.add("t7:i59", f"n={n} m={m}", ok, "" if ok else "projection not monotone on C")
    return rep


def calibrate(inp: CalibrationInput, n_max: Optional[int] = None,
              precheck: bool = True) -> Calibration:
    """Run the column induction and fill the per-column records.

    Produces real columns 0..n_max plus one extension column n_max+1, so
    the final column's fresh points are defined; when the extension sits
    past the last level it is computed against the last level's frame.
    """
    L = inp.levels
    n_max = L - 1 if n_max is None else n_max
    if not 0 <= n_max < L:
        raise PreconditionFailed("cal-nmax", f"n_max {n_max} outside 0..{L - 1}")
    if precheck:
        rep = check_input(inp)
        if not rep.ok:
            first = rep.failures()[0]
            raise PreconditionFailed(first.tag, f"{first.subject} {first.witness}")
    bud = Budget(inp.budget * max(1, L), "calibrate")
    depth = inp.cert_depth
    D = inp.d_rows
    K: dict[tuple[int, int], int] = {}
    gp: list[int] = []
    lrho = [0]
    records: list[LevelRecord] = []

    # column 0: anchor where row 0 enters its frame
    f0 = inp.frame(0)
    lp = tail_threshold(D[0], lambda v, b: f0.contains(v, b), depth, bud, "D0 in F0")
    K[(0, 0)] = lp + 1
    gp.append(f0.seek_ge(D[0].nth(K[(0, 0)], bud), bud)[0])

    for col in range(1, n_max + 2):
        top = min(col, L - 1)
        ftop = inp.frame(top)
        rows_below = min(col - 1, L - 1)
        # spread each level's cut past the reach of the current frame
        X: dict[int, int] = {}
        for m in range(rows_below + 1):
            scan = MonotoneImageScanner(inp.proj[(top, m)], ftop)
            thr = tail_threshold(D[m], scan.covers, depth, bud, f"D{m} in proj(F{top})")
            X[m] = max(K[(m, col - 1)], thr)
        if col <= L - 1:
            last_hit = -1
            for i in range(depth):
                v = D[col].nth(i, bud)
                if any(_known_member(D[m], v, bud) for m in range(col)):
                    last_hit = i
            if last_hit == depth - 1:
                raise DepthExceeded(f"no disjointness threshold for D{col}")
            thr = tail_threshold(D[col], lambda v, b: ftop.contains(v, b), depth, bud,
                                 f"D{col} in F{col}")
            X[col] = max(last_hit + 1, thr)
        xstar = lrho[col - 1] + sum(X[m] - K[(m, col - 1)] for m in range(rows_below + 1))
        # re-anchor: level-0 point covered through every spread tail
        scanners = [MonotoneImageScanner(inp.proj[(m, 0)], D[m], X[m])
                    for m in range(min(col, L - 1) + 1)]
        k0 = None
        for l in range(X[0] + xstar + 1, depth + 1):
            bud.spend()
            cand = D[0].nth(l - 1, bud)
            if all(sc.covers(cand, bud) for sc in scanners):
                k0 = l
                break
        if k0 is None:
            raise DepthExceeded(f"no level-0 anchor for column {col} within depth")
        K[(0, col)] = k0
        target = D[0].nth(k0, bud)
        # least frame position whose level-0 image reaches the anchor
        pi_top0 = inp.proj[(top, 0)]
        g_l = 0
        while pi_top0.apply(ftop.nth(g_l, bud), bud) < target:
            bud.spend()
            g_l += 1
        gp.append(g_l)
        for m in range(1, min(col, L - 1) + 1):
            tail_scan = MonotoneImageScanner(inp.proj[(top, m)], ftop, g_l)
            K[(m, col)] = tail_threshold(D[m], tail_scan.covers, depth, bud,
                                         f"D{m} in proj(tail F{top}) col {col}")
        records.append(_build_record(inp, K, col - 1, bud))
        lrho.append(lrho[-1] + records[-1].count)
    return Calibration(L, n_max, K, gp, lrho, records)


def _rho_of(inp: CalibrationInput, k_table: dict) -> RhoTriple:
    return RhoTriple(rows=tuple(inp.d_rows), k_table=dict(k_table),
                     proj=dict(inp.proj), budget=inp.budget)


def _build_record(inp: CalibrationInput, k_table: dict, n: int, bud: Budget) -> LevelRecord:
    rho = _rho_of(inp, k_table)
    fresh_pts = delta_rho(rho, n, bud).merged
    m_max = min(n, inp.levels - 1)
    windows = {m: set(rho.window(m, n, bud)) for m in range(m_max + 1)}
    owners: dict[int, int] = {}
    for x in fresh_pts:
        hosts = [m for m in range(m_max + 1) if x in windows[m]]
        if len(hosts) != 1:
            raise PreconditionFailed(
                "t7:i55", f"point {x} of column {n} lies in {len(hosts)} windows")
        owners[x] = hosts[0]
    frame = inp.frame(n)
    anchors: dict[int, tuple[int, int]] = {}  # x -> (frame index, frame element)
    for m in sorted(set(owners.values())):
        xs = sorted(x for x in fresh_pts if owners[x] == m)
        pi = inp.proj[(n, m)]
        i = 0
        found: dict[int, int] = {}
        while xs:
            bud.spend()
            z = frame.nth(i, bud)
            v = pi.apply(z, bud)
            if v > xs[-1]:
                break
            if v in xs:
                found[v] = i  # keep the last hit: values are nondecreasing
            i += 1
        for x in xs:
            if x not in found:
                raise PreconditionFailed(
                    "t7:anchor", f"no frame element maps onto fresh point {x} (column {n})")
            anchors[x] = (found[x], frame.nth(found[x], bud))
    by_anchor = sorted(fresh_pts, key=lambda x: anchors[x][1])
    for a, b in zip(by_anchor, by_anchor[1:]):
        if anchors[a][1] == anchors[b][1]:
            raise PreconditionFailed(
                "t7:i56", f"fresh points {a} and {b} of column {n} share an anchor")
    e_row = inp.e_rows[n]
    e_idx = []
    for x in by_anchor:
        idx = e_row.index_of(anchors[x][1], bud)
        if idx is None:
            raise PreconditionFailed(
                "t7:anchor", f"anchor {anchors[x][1]} missing from E row {n}")
        e_idx.append(idx)
    return LevelRecord(
        fresh=tuple(by_anchor),
        owners=tuple(owners[x] for x in by_anchor),
        anchors=tuple(anchors[x][1] for x in by_anchor),
        anchor_pos=tuple(anchors[x][0] for x in by_anchor),
        anchor_e_index=tuple(e_idx),
    )


def verify_calibration(inp: CalibrationInput, cal: Calibration,
                       n_max: Optional[int] = None,
                       include_hypotheses: bool = True) -> Report:
    """Independently re-check every clause of a calibration.

    Fresh points are recomputed by a direct double loop over the
    materialized windows rather than through the engine's own machinery.
    """
    n_max = cal.n_max if n_max is None else min(n_max, cal.n_max)
    L = inp.levels
    bud = Budget(inp.budget * max(1, L), "verify calibration")
    depth = inp.cert_depth
    rep = Report("calibration")
    if include_hypotheses:
        rep.extend(check_input(inp))
    D = inp.d_rows

    for n in range(n_max + 2):
        ok = 2 * cal.gprime[n] >= cal.lrho[n]
        rep.add("t7:i52", f"n={n}", ok, f"2*{cal.gprime[n]} vs {cal.lrho[n]}")
    for n in range(1, n_max + 2):
        for m in range(min(n - 1, L - 1) + 1):
            ok = cal.k(m, n) > cal.k(m, n - 1)
            rep.add("t7:i51b", f"n={n} m={m}", ok, f"{cal.k(m, n)} vs {cal.k(m, n - 1)}")

    for n in range(n_max + 1):
        frame = inp.frame(n)
        g = cal.gprime[n]
        head = [frame.nth(j, bud) for j in range(g)]
        for m in range(min(n, L - 1) + 1):
            pi = inp.proj[(n, m)]
            tgt = D[m].nth(cal.k(m, n) - 1, bud)
            ok = any(pi.apply(z, bud) == tgt for z in head)
            rep.add("t7:i51", f"n={n} m={m}", ok,
                    f"target {tgt} within the first {g} frame elements" if ok
                    else f"target {tgt} missed below frame position {g}")
            scan = MonotoneImageScanner(pi, frame, g)
            bad = None
            for i in range(cal.k(m, n), depth):
                if not scan.covers(D[m].nth(i, bud), bud):
                    bad = i
                    break
            rep.add("t7:i53", f"n={n} m={m}", bad is None,
                    "" if bad is None else f"D{m}({bad}) escapes the frame-tail image")
            bound = frame.nth(g, bud)
            c_row = inp.c_rows[n]
            c0 = c_row.seek_ge(bound, bud)[0]
            bad = None
            for i in range(c0, depth):
                if pi.apply(c_row.nth(i, bud), bud) <= tgt:
                    bad = i
                    break
            rep.add("t7:i54", f"n={n} m={m}", bad is None,
                    "" if bad is None else f"C{n}({bad}) maps at or below {tgt}")
        if 0 < n <= L - 1:
            bad = None
            for i in range(cal.k(n, n), depth):
                v = D[n].nth(i, bud)
                if any(_known_member(D[m], v, bud) for m in range(n)):
                    bad = i
                    break
            rep.add("t7:i55a", f"n={n}", bad is None,
                    "" if bad is None else f"D{n}({bad}) meets an earlier row")

    for n in range(n_max + 1):
        rec = cal.records[n]
        m_max = min(n, L - 1)
        windows = {}
        for m in range(m_max + 1):
            lo, hi = cal.k(m, n), cal.k(m, n + 1)
            windows[m] = [D[m].nth(i, bud) for i in range(lo, hi)]
        # direct double loop, independent of the engine path
        fresh = set()
        for m in range(m_max + 1):
            for x in windows[m]:
                hit = False
                for mp in range(m + 1, m_max + 1):
                    if any(inp.proj[(mp, m)].apply(u, bud) == x for u in windows[mp]):
                        hit = True
                        break
                if not hit:
                    fresh.add(x)
        rep.add("t7:delta", f"n={n}", fresh == set(rec.fresh),
                f"{sorted(fresh)} vs {sorted(rec.fresh)}" if fresh != set(rec.fresh) else "")
        uniq = all(sum(x in windows[m] for m in range(m_max + 1)) == 1 for x in rec.fresh)
        rep.add("t7:i55b", f"n={n}", uniq, "" if uniq else "a fresh point sits in two windows")
        own_ok = all(rec.fresh[j] in windows[rec.owners[j]] for j in range(rec.count))
        rep.add("t7:i55c", f"n={n}", own_ok, "" if own_ok else "stored owner misses its window")
        frame = inp.frame(n)
        anchors_ok = True
        why = ""
        for j in range(rec.count):
            z = frame.nth(rec.anchor_pos[j], bud)
            if z != rec.anchors[j]:
                anchors_ok, why = False, f"j={j} stored anchor not on the frame"
                break
            if inp.proj[(n, rec.owners[j])].apply(z, bud) != rec.fresh[j]:
                anchors_ok, why = False, f"j={j} anchor does not project onto its point"
                break
            nxt = rec.anchor_pos[j] + 1
            pi = inp.proj[(n, rec.owners[j])]
            while nxt < depth:
                v = pi.apply(frame.nth(nxt, bud), bud)
                if v > rec.fresh[j]:
                    break
                if v == rec.fresh[j]:
                    anchors_ok, why = False, f"j={j} a later frame element also hits the point"
                    break
                nxt += 1
            if not anchors_ok:
                break
        rep.add("t7:anchor-max", f"n={n}", anchors_ok, why)
        pair_ok = all(rec.anchors[i] < rec.anchors[j]
                      for i in range(rec.count) for j in range(rec.count) if i < j)
        rep.add("t7:i56", f"n={n}", pair_ok,
                "" if pair_ok else "anchor order not a strict linear order")
        r3_ok = all(rec.anchor_pos[j] >= cal.gprime[n] for j in range(rec.count))
        rep.add("t7:r3-anchor", f"n={n}", r3_ok,
                "" if r3_ok else "an anchor sits below the frame head bound")
        i60_ok = True
        why = ""
        for j in range(rec.count):
            need = inp.f(cal.lrho[n] + j)
            if inp.e_rows[n].nth(rec.anchor_e_index[j], bud) != rec.anchors[j]:
                i60_ok, why = False, f"j={j} stored E index wrong"
                break
            if rec.anchor_e_index[j] < need:
                i60_ok, why = False, f"j={j} E index {rec.anchor_e_index[j]} below {need}"
                break
        rep.add("t7:i60", f"n={n}", i60_ok, why)
    return rep


def assemble_input(levels: int, proj: dict[tuple[int, int], Map],
                   e_rows: Sequence[SetStream], f: Callable[[int], int],
                   cert_depth: int, *, d_stride: int = 2, d_offset: int = 1,
                   d_drops: Optional[dict[int, Sequence[int]]] = None,
                   rapid_depth: Optional[int] = None, spread: str = "geometric",
                   budget: Optional[int] = None, max_attempts: int = 12) -> CalibrationInput:
    """Choose coherent C and D rows above given E rows and projections.

    The top C row is an index thinning of the top E row, pushed deeper
    until every projected level passes the thinning schedule against its
    own E row; the lower C rows are exact projection images, so every
    frame coincides with its C row.  D rows are a thinner projection
    chain inside C: the top picks every d_stride-th element from
    d_offset, and d_drops may delete finitely many positions per level
    to exercise the threshold machinery.

    spread "geometric" keeps projected values distinct under root-like
    compression but indexes the top E row exponentially deep, so it needs
    E rows with closed-form access; "linear" stays within polynomially
    deep indices for scan-only E rows, at the price of requiring
    projections that do not collide on sparse values.
    """
    budget = budget if budget is not None else default_budget()
    rd = rapid_depth if rapid_depth is not None else cert_depth
    top = levels - 1
    drops = {k: set(v) for k, v in (d_drops or {}).items()}
    extra = sum(len(v) for v in drops.values())
    need = cert_depth + extra + 2
    last_err: Optional[Exception] = None
    first_attempt = 0 if spread == "linear" else 2
    for attempt in range(first_attempt, first_attempt + max_attempts):
        # projections compress values like iterated roots, so the thinning
        # scale must grow doubly exponentially across attempts
        scale = 1 << (1 << attempt) if attempt < 10 else 1 << 1024
        picker = _schedule_picker(f, scale, budget, spread)
        c_rows: list[SetStream] = [None] * levels
        c_rows[top] = from_indices(e_rows[top], picker, budget, name=f"Ctop#{attempt}")
        for n in range(top - 1, -1, -1):
            c_rows[n] = image(c_rows[n + 1], proj[(n + 1, n)], budget, name=f"C{n}#{attempt}")
        try:
            bud = Budget(budget * levels, "assembly check")
            for n in range(levels):
                for k in range(rd):
                    if c_rows[n].nth(k, bud) < e_rows[n].nth(f(2 * k), bud):
                        raise _TooShallow(f"level {n} not rapid at {k}")
            bud = Budget(budget * levels * 8, "assembly D rows")
            rows_vals = _project_chain(c_rows[top], proj, levels, d_offset, d_stride, need, bud)
        except (_TooShallow, PreconditionFailed, DepthExceeded) as err:
            last_err = err
            continue
        d_rows = [scripted(_apply_drops(rows_vals[n], drops.get(n)), budget, name=f"D{n}")
                  for n in range(levels)]
        return CalibrationInput(levels=levels, proj=dict(proj), e_rows=tuple(e_rows),
                                c_rows=tuple(c_rows), d_rows=tuple(d_rows), f=f,
                                cert_depth=cert_depth, rapid_depth=rd, budget=budget)
    raise DepthExceeded(f"no workable thinning within {max_attempts} attempts ({last_err})")


def _project_chain(top_row: SetStream, proj, levels: int, offset: int, stride: int,
                   need: int, bud: Budget) -> list[list[int]]:
    top = levels - 1
    top_count = need
    while True:
        rows_vals: list[list[int]] = [[] for _ in range(levels)]
        rows_vals[top] = [top_row.nth(offset + stride * j, bud) for j in range(top_count)]
        short = False
        for n in range(top - 1, -1, -1):
            out: list[int] = []
            for v in rows_vals[n + 1]:
                w = proj[(n + 1, n)].apply(v, bud)
                if not out or w > out[-1]:
                    out.append(w)
            rows_vals[n] = out
            if len(out) < need:
                short = True
                break
        if not short:
            return rows_vals
        top_count *= 2
        if top_count > (1 << 15):
            raise DepthExceeded("projection chain keeps collapsing during assembly")


class _TooShallow(Exception):
    pass


def _schedule_picker(f, scale, budget, spread: str = "geometric") -> SetStream:
    if spread == "linear":
        return formula_stream(lambda k: scale * (f(2 * k) + 1) + k, budget,
                              name=f"picker+{scale}")
    # geometric spread keeps projected values distinct across levels of
    # root-like compression; the scale term buys the thinning schedule
    return formula_stream(lambda k: scale * (f(2 * k) + 1) * 4 ** k + k, budget,
                          name=f"picker*{scale}")


def _apply_drops(vals, drop_positions):
    if not drop_positions:
        return list(vals)
    return [v for i, v in enumerate(vals) if i not in drop_positions]
