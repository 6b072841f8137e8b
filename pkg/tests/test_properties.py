from hypothesis import given, settings
from hypothesis import strategies as st

from blocklab import (
    arithmetic,
    blocks_from_stream,
    group_of,
    intersect,
    le_at,
    periodic,
    s_of,
    s_t_eval,
    scripted,
    sset,
    t_of,
    thin,
    triangular,
    union,
)
from blocklab.blocks import block_seq_check, min_ge_index_holds


@given(st.integers(min_value=0, max_value=300))
def test_group_sizes_tile_the_layout(m):
    s, t = s_t_eval(m)
    assert s == sum(range(m + 1))
    assert t == sum(k + 1 for k in range(s, s_of(m + 1)))


@given(st.integers(min_value=0, max_value=2000))
def test_group_of_inverts_the_layout(n):
    m = group_of(n)
    assert s_of(m) <= n < s_of(m + 1)


@given(st.integers(min_value=0, max_value=30), st.integers(min_value=1, max_value=9),
       st.integers(min_value=0, max_value=30), st.integers(min_value=1, max_value=9))
def test_merge_agrees_with_set_algebra(a0, astep, b0, bstep):
    a = arithmetic(a0, astep)
    b = arithmetic(b0, bstep)
    brute_union = sorted({a0 + i * astep for i in range(60)} | {b0 + i * bstep for i in range(60)})
    assert union(a, b).prefix(30) == tuple(brute_union[:30])
    brute_meet = sorted({a0 + i * astep for i in range(400)} & {b0 + i * bstep for i in range(400)})
    if len(brute_meet) >= 5:
        assert intersect(a, b).prefix(5) == tuple(brute_meet[:5])


@given(st.integers(min_value=0, max_value=5),
       st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=4))
def test_blocks_from_any_stream_are_valid(start, diffs):
    src = periodic(start, diffs)
    c = blocks_from_stream(src)
    assert block_seq_check(c, 16).ok
    assert min_ge_index_holds(c, 16) is None
    assert sset(c).prefix(20) == src.prefix(20)


@given(st.integers(min_value=0, max_value=3),
       st.lists(st.integers(min_value=1, max_value=3), min_size=1, max_size=3))
def test_thinning_always_embeds(start, diffs):
    base = triangular()
    c = thin(base, periodic(start, diffs))
    v = le_at(c, base, 0, 14)
    assert v.ok
    assert all(n >= m for m, n in v.witness)


@settings(max_examples=40)
@given(st.lists(st.integers(min_value=0, max_value=400), min_size=2, max_size=24,
                unique=True))
def test_scripted_round_trips_sorted_values(values):
    vals = sorted(values)
    s = scripted(vals, total=True)
    assert s.prefix(len(vals)) == tuple(vals)
    for v in vals:
        assert s.contains(v)
    assert not s.contains(max(vals) + 1)
    gaps = [a + 1 for a, b in zip(vals, vals[1:]) if b > a + 1]
    for g in gaps[:3]:
        assert not s.contains(g)
