import random

import pytest

from blocklab import Map, PreconditionFailed, RhoTriple, delta_rho, evens, scripted
from blocklab.rho import running_counts

from oracles import brute_fresh_points, brute_running_counts, random_rho_instance


def test_single_row_evens():
    rho = RhoTriple(rows=(evens(),), k_table={(0, 0): 1, (0, 1): 3}, proj={})
    r = delta_rho(rho, 0)
    assert r.merged == (2, 4)
    assert r.running_after == 2
    assert r.fresh == ((2, 4),)


def test_diagonal_row_window_is_kept_whole():
    # the top row of each column has no higher row to exclude its points
    rows = (scripted(range(0, 40, 3)), scripted(range(1, 60, 4)))
    k = {(0, 0): 0, (0, 1): 2, (0, 2): 5, (1, 1): 1, (1, 2): 4}
    drop_all = Map.tabulated([0] * 200)
    rho = RhoTriple(rows=rows, k_table=k, proj={(1, 0): drop_all})
    r1 = delta_rho(rho, 1)
    assert r1.fresh[1] == tuple(rows[1].prefix(4)[1:4])


def test_two_rows_projection_excludes():
    d0 = scripted([0, 1, 2, 3, 4, 5, 6, 7])
    d1 = scripted([10, 11, 12, 13])
    # projection sends 11 -> 1, hitting the only point of row 0's window
    table = [0] * 20
    table[11] = 1
    rho = RhoTriple(
        rows=(d0, d1),
        k_table={(0, 0): 0, (0, 1): 1, (0, 2): 2, (1, 1): 1, (1, 2): 2},
        proj={(1, 0): Map.tabulated(table)},
    )
    r = delta_rho(rho, 1)
    assert r.fresh[0] == ()  # point 1 was claimed by row 1
    assert r.fresh[1] == (11,)
    assert r.merged == (11,)


def test_missing_column_entry_is_reported():
    rho = RhoTriple(rows=(evens(),), k_table={(0, 0): 1}, proj={})
    with pytest.raises(PreconditionFailed):
        delta_rho(rho, 0)


def test_matches_brute_force_small_sample():
    rng = random.Random(77)
    for _ in range(40):
        row_vals, k_table, proj_tables, cols = random_rho_instance(rng)
        rho = RhoTriple(
            rows=tuple(scripted(v) for v in row_vals),
            k_table=dict(k_table),
            proj={key: Map.tabulated(tab) for key, tab in proj_tables.items()},
        )
        funcs = {key: (lambda u, t=tab: t[u]) for key, tab in proj_tables.items()}
        for n in range(cols):
            got = delta_rho(rho, n)
            fresh, merged = brute_fresh_points(row_vals, k_table, funcs, n)
            assert got.merged == tuple(merged)
            for m, pts in fresh.items():
                assert got.fresh[m] == tuple(pts)
        assert running_counts(rho, cols) == brute_running_counts(row_vals, k_table, funcs, cols)


def test_running_count_strictly_grows_on_nonempty_diagonal():
    # whenever every diagonal window is nonempty the count must rise
    rng = random.Random(3)
    for _ in range(20):
        row_vals, k_table, proj_tables, cols = random_rho_instance(rng)
        top_rows = [min(col, len(row_vals) - 1) for col in range(cols)]
        nonempty = all(
            k_table[(m, col + 1)] > k_table[(m, col)]
            for col, m in enumerate(top_rows)
        )
        rho = RhoTriple(
            rows=tuple(scripted(v) for v in row_vals),
            k_table=dict(k_table),
            proj={key: Map.tabulated(tab) for key, tab in proj_tables.items()},
        )
        counts = running_counts(rho, cols)
        if nonempty:
            for a, b in zip(counts, counts[1:]):
                assert b > a
