import random

import pytest

from blocklab import (
    periodic,
    DepthExceeded,
    arithmetic,
    block_seq_check,
    blocks_from_stream,
    le_at,
    le_some,
    naturals,
    scripted,
    scripted_blocks,
    sset,
    thin,
    triangular,
)
from blocklab.blocks import min_ge_index_holds


def test_triangular_blocks():
    c = triangular()
    assert c.block(0) == (0,)
    assert c.block(1) == (1, 2)
    assert c.block(3) == (6, 7, 8, 9)


def test_block_seq_check_accepts_triangular():
    assert block_seq_check(triangular(), 10).ok


def test_block_seq_check_size_clause():
    c = scripted_blocks([[0, 1], [2]])
    v = block_seq_check(c, 2)
    assert not v.ok and v.fail_index == 0 and v.clause == "size"


def test_block_seq_check_separation_clause():
    c = scripted_blocks([[5], [3, 4]])
    v = block_seq_check(c, 2)
    assert not v.ok and v.fail_index == 0 and v.clause == "separation"


def test_sset_of_triangular_is_omega():
    c = triangular()
    assert sset(c).prefix(8) == tuple(range(8))
    assert sset(c, 1).prefix(5) == (1, 2, 3, 4, 5)


def test_sset_brute_force_union():
    # thinned variant: keep even-indexed blocks only
    c = thin(triangular(), arithmetic(0, 2))
    want = []
    for n in range(0, 12, 2):
        want.extend(triangular().block(n))
    assert sset(c).prefix(len(want)) == tuple(sorted(want))


def test_le_at_identity_witness():
    c = triangular()
    v = le_at(c, c, 0, 20)
    assert v.ok
    assert all(n == m for m, n in v.witness)


def test_le_at_double_thinning():
    c = triangular()
    cp = thin(c, arithmetic(0, 2))  # c'(m) = c(2m)
    v = le_at(cp, c, 0, 15)
    assert v.ok
    assert all(n == 2 * m for m, n in v.witness)


def test_le_at_definite_failure_spanning():
    c = triangular()  # {0},{1,2},{3,4,5},...
    d = scripted_blocks([[0, 1], [3, 4, 5]])
    v = le_at(d, c, 0, 1)
    assert not v.ok and v.fail_at == 0 and "span" in v.reason


def test_le_at_budget_distinct_from_failure():
    c = triangular(budget=6)
    with pytest.raises(DepthExceeded):
        le_at(c, triangular(budget=6), 0, 60)


def test_le_some_finds_threshold():
    c = triangular()
    # first block breaks embedding (spans two target blocks), rest embed
    d = scripted_blocks([[1, 3]] + [list(c.block(n)) for n in range(2, 14)])
    v = le_some(d, c, 10)
    assert v.ok and v.l == 1


def test_min_floor_consequence():
    # min(c(n)) >= n falls out of the two defining clauses
    rng = random.Random(5)
    for _ in range(25):
        start = rng.randrange(0, 20)
        src = arithmetic(start, rng.randrange(1, 4))
        c = blocks_from_stream(src)
        assert block_seq_check(c, 20).ok
        assert min_ge_index_holds(c, 20) is None


def _random_thinning(rng, base, depth=None):
    start = rng.randrange(0, 3)
    diffs = [rng.randrange(1, 4) for _ in range(rng.randrange(1, 5))]
    return thin(base, periodic(start, diffs))


def test_composition_law():
    rng = random.Random(11)
    c = triangular()
    for _ in range(30):
        b = _random_thinning(rng, c, 40)
        a = _random_thinning(rng, b, 30)
        n = rng.randrange(0, 4)
        m = rng.randrange(0, 4)
        assert le_at(a, b, n, 25).ok
        assert le_at(b, c, m, 25).ok
        assert le_at(a, c, max(m, n), 25).ok


def test_chain_law():
    rng = random.Random(23)
    for _ in range(20):
        chain = [triangular()]
        ms = []
        for _ in range(4):
            chain.append(_random_thinning(rng, chain[-1], 40))
            ms.append(rng.randrange(0, 3))
        for k in range(1, len(chain)):
            assert le_at(chain[k], chain[k - 1], ms[k - 1], 20).ok
        l = max(ms)
        assert le_at(chain[-1], chain[0], l, 20).ok
