"""Windowed diagonal analysis over a family of streams and projection maps.

A RhoTriple packages row streams D_m, a window table K[m, n], and the
projection maps between rows.  delta_rho extracts, per column, the window
points with no preimage trace in the higher rows of the same column, and
the running count of such points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import PreconditionFailed
from .maps import Map
from .streams import Budget, SetStream, _budget, default_budget


@dataclass(eq=False)
class RhoTriple:
    """Rows, window table, and projections.

    rows[m] is the m-th stream; k_table[(m, n)] with m <= n gives the
    window cut indices; proj[(n, m)] with m <= n maps row n into row m,
    with proj[(n, n)] the identity.
    """

    rows: tuple[SetStream, ...]
    k_table: dict[tuple[int, int], int]
    proj: dict[tuple[int, int], Map]
    budget: int = field(default_factory=default_budget)

    def __post_init__(self):
        for (m, n), v in self.k_table.items():
            if m > n:
                raise PreconditionFailed("k-table", f"entry ({m},{n}) above the diagonal")
            if m >= len(self.rows):
                raise PreconditionFailed("k-table", f"entry ({m},{n}) has no row")
        for m in range(len(self.rows)):
            self.proj.setdefault((m, m), Map.identity())

    def k(self, m: int, n: int) -> int:
        try:
            return self.k_table[(m, n)]
        except KeyError:
            raise PreconditionFailed("k-missing", f"K[{m},{n}] undefined") from None

    def has_column(self, n: int) -> bool:
        return all((m, n) in self.k_table for m in range(min(n + 1, len(self.rows))))

    def window(self, m: int, n: int, bud: Optional[Budget] = None) -> list[int]:
        """Row m elements with index in [K[m,n], K[m,n+1])."""
        bud = _budget(bud, self.budget, f"window({m},{n})")
        lo, hi = self.k(m, n), self.k(m, n + 1)
        return [self.rows[m].nth(i, bud) for i in range(lo, hi)]


@dataclass(frozen=True)
class DeltaResult:
    column: int
    fresh: tuple[tuple[int, ...], ...]  # per-row fresh window points, rows 0..m_max
    merged: tuple[int, ...]             # their sorted union
    running_before: int                 # count accumulated before this column
    running_after: int                  # count including this column


def delta_rho(rho: RhoTriple, n: int, bud: Optional[Budget] = None) -> DeltaResult:
    """Fresh points of column n and the updated running count.

    A window point of row m is fresh when no higher-row window point of
    the same column projects onto it.  The running count is accumulated
    from column 0, so columns 0..n must all be available in the table.
    """
    bud = _budget(bud, rho.budget, f"delta column {n}")
    running = 0
    result = None
    for col in range(n + 1):
        fresh = _fresh_points(rho, col, bud)
        merged = sorted(set().union(*[set(f) for f in fresh]) if fresh else set())
        result = DeltaResult(col, tuple(tuple(f) for f in fresh), tuple(merged),
                             running, running + len(merged))
        running += len(merged)
    return result


def _fresh_points(rho: RhoTriple, n: int, bud: Budget) -> list[list[int]]:
    m_max = min(n, len(rho.rows) - 1)
    windows = [rho.window(m, n, bud) for m in range(m_max + 1)]
    fresh: list[list[int]] = []
    for m in range(m_max + 1):
        keep = []
        for k in windows[m]:
            bud.spend()
            hit = False
            for mp in range(m + 1, m_max + 1):
                pi = rho.proj[(mp, m)]
                for u in windows[mp]:
                    bud.spend()
                    if pi.apply(u, bud) == k:
                        hit = True
                        break
                if hit:
                    break
            if not hit:
                keep.append(k)
        fresh.append(keep)
    return fresh


def running_counts(rho: RhoTriple, upto: int, bud: Optional[Budget] = None) -> list[int]:
    """Running fresh-point counts L(0..upto), with L(0) = 0."""
    bud = _budget(bud, rho.budget, "running counts")
    counts = [0]
    for col in range(upto):
        fresh = _fresh_points(rho, col, bud)
        merged = set().union(*[set(f) for f in fresh]) if fresh else set()
        counts.append(counts[-1] + len(merged))
    return counts
