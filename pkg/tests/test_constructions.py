import pytest

from blocklab import (
    Map,
    NormalTriple,
    PreconditionFailed,
    ValueSeq,
    arithmetic,
    le_at,
    normal_check,
    scripted,
    triangular,
)
from blocklab.constructions import (
    FusionInput,
    TowerInput,
    diagonal,
    fuse,
    lift_system,
)
from blocklab.suites import (
    diagonal_suite,
    fusion_instance,
    fusion_suite,
    lift_suite,
    random_tower,
    rng_for,
)


def canonical_triple():
    c = triangular()
    return NormalTriple(Map.block_index(c), ValueSeq.identity(), c, range_window=1), c


class TestFusion:
    def test_constant_chain_hand_example(self):
        # image stream of the triangular base under the index map is the
        # whole naturals, so picking every other even value is rapid
        t, c = canonical_triple()
        inp = FusionInput(chain=[c, c, c], triple=t, pseudo=arithmetic(2, 2))
        res = fuse(inp, depth=10)
        assert res.report.ok
        for l in range(6):
            want = c.block(2 * l + 2)[: l + 1]
            assert res.fused.block(l) == want

    def test_image_is_exact(self):
        t, c = canonical_triple()
        inp = FusionInput(chain=[c, c], triple=t, pseudo=arithmetic(2, 2))
        res = fuse(inp, depth=8)
        got = sorted({t.pi.apply(x) for l in range(8) for x in res.fused.block(l)})
        assert got == [2 * l + 2 for l in range(8)]

    def test_blocks_strictly_separated(self):
        rng = rng_for(21, "fusion")
        for _ in range(6):
            inp = fusion_instance(rng)
            res = fuse(inp, depth=14)
            assert res.report.ok
            for l in range(13):
                assert res.fused.block(l)[-1] < res.fused.block(l + 1)[0]

    def test_missing_witness_spacing_rejected(self):
        t, c = canonical_triple()
        # element n placed at image position n violates the 2(n+1) spacing
        inp = FusionInput(chain=[c, c], triple=t, pseudo=arithmetic(0, 1))
        with pytest.raises(PreconditionFailed) as err:
            fuse(inp, depth=8)
        assert "rapidity" in err.value.clause

    def test_fused_below_every_chain_element(self):
        rng = rng_for(22, "fusion")
        for _ in range(5):
            inp = fusion_instance(rng)
            res = fuse(inp, depth=14)
            for j, lvl in enumerate(res.le_thresholds):
                assert le_at(res.fused, inp.chain[j], lvl, 14).ok

    def test_suite(self):
        assert fusion_suite(5, instances=8).ok


class TestLift:
    def test_single_level_enumerates_anchors(self):
        res = lift_system({(0, 0): Map.identity()}, 1, triangular(), depth=16)
        assert res.report.ok
        rec = res.calibration.records[0]
        # the lone lifted map is constant on block 0 with the anchor value
        c = triangular()
        for k in c.block(0):
            assert res.maps[0].apply(k) == rec.anchors[0]

    def test_late_levels_are_zero_on_early_groups(self):
        from blocklab.suites import projection_tower

        rng = rng_for(23, "lift")
        proj = projection_tower(rng, 3)
        res = lift_system(proj, 3, triangular(), depth=20)
        assert res.report.ok
        # level 2 must vanish on every block before its own group
        boundary = res.calibration.lrho[2]
        for l in range(boundary):
            assert res.psis[2].at(l) == 0

    def test_values_nondecreasing_across_boundary(self):
        from blocklab.suites import projection_tower

        rng = rng_for(24, "lift")
        proj = projection_tower(rng, 2)
        res = lift_system(proj, 2, triangular(), depth=20)
        assert res.report.ok
        total = res.validity_blocks
        for m in range(2):
            vals = [res.psis[m].at(l) for l in range(total)]
            assert vals == sorted(vals)

    def test_every_triple_normal(self):
        from blocklab.suites import projection_tower

        rng = rng_for(25, "lift")
        for _ in range(4):
            levels = rng.randrange(2, 5)
            proj = projection_tower(rng, levels)
            res = lift_system(proj, levels, triangular(offset=rng.randrange(3)), depth=18)
            assert res.report.ok
            for line in res.report.lines:
                if line.tag == "t101:i106":
                    assert line.ok

    def test_suite(self):
        assert lift_suite(6, instances=8).ok


def degenerate_tower(f=lambda n: n):
    b = triangular()
    psi = ValueSeq.affine(2, 1)
    master = Map.block(b, psi, name="m")
    tri = NormalTriple(master, psi, b, range_window=1)
    return TowerInput(levels=1, carrier=b, chain=[b], proj={}, top_maps=[master],
                      top_triples=[tri], side_maps=[master], side_triples=[tri],
                      side_level=[0], f=f)


class TestDiagonal:
    def test_degenerate_tower(self):
        res = diagonal(degenerate_tower())
        assert res.report.ok
        n = len(res.refined._rule.blocks)
        assert le_at(res.refined, degenerate_tower().carrier, res.chain_thresholds[0], n).ok

    def test_trace_is_connecting_image(self):
        res = diagonal(degenerate_tower())
        support = [x for blk in res.trace._rule.blocks for x in blk]
        got = sorted({res.connecting.apply(x)
                      for blk in res.refined._rule.blocks for x in blk})
        assert got == sorted(set(support[: len(res.refined._rule.blocks)]))

    def test_fast_schedule_witnesses(self):
        res = diagonal(degenerate_tower(f=lambda n: 2 * n))
        assert res.report.ok
        for k, w in enumerate(res.trace_witnesses):
            assert w >= 2 * k

    def test_block_sizes_exact(self):
        rng = rng_for(26, "tower")
        for _ in range(4):
            res = diagonal(random_tower(rng, max_levels=3))
            for k, blk in enumerate(res.trace._rule.blocks):
                assert len(blk) == k + 1
            for l, blk in enumerate(res.refined._rule.blocks):
                assert len(blk) == l + 1

    def test_connecting_map_normal(self):
        rng = rng_for(27, "tower")
        res = diagonal(random_tower(rng, max_levels=2))
        n = len(res.refined._rule.blocks)
        window = 1
        while window < n:
            tri = NormalTriple(res.connecting, res.psi, res.refined, range_window=window)
            if normal_check(tri, n).ok:
                break
            window += 1
        assert window < max(2, n)

    def test_exact_chain_thresholds(self):
        rng = rng_for(28, "tower")
        for _ in range(3):
            tw = random_tower(rng, max_levels=3)
            res = diagonal(tw)
            assert res.report.ok
            n = len(res.refined._rule.blocks)
            for j, lvl in enumerate(res.chain_thresholds):
                assert le_at(res.refined, tw.chain[j], lvl, n).ok

    def test_suite(self):
        assert diagonal_suite(9, instances=6).ok
