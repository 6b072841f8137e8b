import random

import pytest

from blocklab import (
    Map,
    NormalTriple,
    PreconditionFailed,
    ValueSeq,
    arithmetic,
    eventual_monotone_bound,
    evens,
    fiber_blocks,
    naturals,
    normal_check,
    periodic,
    scripted,
    scripted_blocks,
    thin,
    triangular,
)
from blocklab.maps import compose_witness


def block_index_triple(c=None, window=2):
    c = c or triangular()
    return NormalTriple(Map.block_index(c), ValueSeq.identity(), c, range_window=window)


def test_block_index_map_values():
    c = triangular()
    pi = Map.block_index(c)
    assert pi.apply(0) == 0
    assert pi.apply(4) == 2  # 4 sits in {3,4,5}
    assert pi.apply(9) == 3


def test_canonical_triple_is_normal():
    assert normal_check(block_index_triple(), 12).ok


def test_alternating_values_fail():
    c = triangular()
    psi = ValueSeq.scripted([l % 2 for l in range(30)])
    t = NormalTriple(Map.block(c, psi), psi, c)
    v = normal_check(t, 10)
    assert not v.ok and v.clause == "monotone"


def test_constant_values_fail_range():
    c = triangular()
    psi = ValueSeq.scripted([7] * 30)
    t = NormalTriple(Map.block(c, psi), psi, c, range_window=4)
    v = normal_check(t, 12)
    assert not v.ok and v.clause == "range"


def test_off_support_leak_detected():
    c = scripted_blocks([[1], [3, 4], [6, 7, 8], [10, 11, 12, 13]])
    # a tabulated map that is correct on blocks but nonzero in a gap
    table = [0] * 20
    for n, blk in enumerate([[1], [3, 4], [6, 7, 8], [10, 11, 12, 13]]):
        for k in blk:
            table[k] = n
    table[5] = 9
    t = NormalTriple(Map.tabulated(table), ValueSeq.identity(), c, range_window=1)
    v = normal_check(t, 4)
    assert not v.ok and v.clause == "off-support" and v.at == 5


def test_mismatched_value_stream_fails_constancy():
    c = triangular()
    t = NormalTriple(Map.block_index(c), ValueSeq.affine(1, 1), c)
    v = normal_check(t, 6)
    assert not v.ok and v.clause == "block-constancy"


def test_monotone_bound_identity_thinning():
    t = block_index_triple()
    assert eventual_monotone_bound(t, t.c, 0, 15) == 0


def test_monotone_bound_double_thinning():
    t = block_index_triple()
    d = thin(t.c, evens())
    assert eventual_monotone_bound(t, d, 0, 15) == 0


def test_monotone_bound_with_junk_head():
    c = triangular(offset=5)
    t = NormalTriple(Map.block_index(c), ValueSeq.identity(), c)
    d = scripted_blocks([[0]] + [list(c.block(m)) for m in range(2, 16)])
    n = eventual_monotone_bound(t, d, 1, 10)
    assert n == c.block(2)[0] == 8


def test_fibers_of_identity_targets():
    t = block_index_triple()
    fb = fiber_blocks(t, naturals(), t.c, 0, 8)
    assert all(fb.fibers[n] == (n,) for n in range(8))


def test_fibers_of_even_targets():
    t = block_index_triple()
    fb = fiber_blocks(t, evens(), t.c, 0, 8)
    assert all(fb.fibers[n] == (2 * n,) for n in range(8))


def test_fibers_beyond_threshold():
    t = block_index_triple()
    fb = fiber_blocks(t, arithmetic(2, 2), t.c, 2, 6)
    assert all(fb.min_beyond(n) >= 2 for n in range(6))


def test_fiber_precondition_failure():
    t = block_index_triple()
    # 0 is only the value of block 0, which sits below the threshold
    with pytest.raises(PreconditionFailed):
        fiber_blocks(t, evens(), t.c, 1, 3)


def test_fiber_interleaving_random():
    rng = random.Random(9)
    c = triangular()
    t = block_index_triple(c)
    for _ in range(20):
        start = rng.randrange(0, 4)
        diffs = [rng.randrange(1, 4) for _ in range(rng.randrange(1, 4))]
        a = periodic(start, diffs)
        fb = fiber_blocks(t, a, c, 0, 10)
        for n in range(9):
            assert fb.max_of(n) < fb.min_beyond(n + 1) <= fb.max_of(n + 1)


def test_lazy_composition_matches_eager():
    c = triangular()
    inner = Map.block_index(c)
    outer = Map.block(c, ValueSeq.affine(2, 1))
    lazy = Map.compose(outer, inner)
    eager = compose_witness(outer, inner, 40)
    for k in range(40):
        assert lazy.apply(k) == eager.apply(k)


def test_composition_of_thinned_bases():
    rng = random.Random(31)
    c = triangular()
    for _ in range(10):
        d = thin(c, periodic(rng.randrange(0, 3), [rng.randrange(1, 3)]))
        inner = Map.block_index(d)
        outer = Map.block(c, ValueSeq.affine(1, rng.randrange(0, 5)))
        lazy = Map.compose(outer, inner)
        eager = compose_witness(outer, inner, 30)
        assert [lazy.apply(k) for k in range(30)] == [eager.apply(k) for k in range(30)]
