import pytest

from blocklab import Map, PreconditionFailed, ValueSeq, evens, periodic, thin, triangular
from blocklab.blocks import blocks_from_stream
from blocklab.errors import OracleRequired
from blocklab.forcing import (
    TOP,
    AddCoordinate,
    Condition,
    DecideSet,
    GenericContext,
    Kill,
    RKPullback,
    Rapidify,
    RestrictImage,
    SealLimit,
    Thin,
    TripleWitness,
    available_depth,
    check_condition,
    extend_condition,
    leq_condition,
    meet_chain,
    run_stage,
    seed_condition,
)
from blocklab.forcing import _derive_certs
from blocklab.streams import Budget, arithmetic, block_image, scripted
from blocklab.suites import anticipating_context, labeled_seed, rng_for


def bare_ctx():
    return GenericContext(labels=(), towers={})


class TestConditions:
    def test_seed_condition_passes(self):
        ctx = bare_ctx()
        q = seed_condition(ctx, triangular())
        assert check_condition(q, ctx, 24).ok

    def test_labeled_seed_passes(self):
        rng = rng_for(1, "cond")
        for n_labels in (1, 2):
            ctx, q = anticipating_context(rng, [], n_labels=n_labels)
            rep = check_condition(q, ctx, 10)
            assert rep.ok, rep.failures()[0]

    def test_monotone_witness_mutation_fails(self):
        rng = rng_for(2, "cond")
        ctx, q = anticipating_context(rng, [], n_labels=1)
        a = q.labels[0]
        bad = Condition(q.c, q.gamma, q.labels, dict(q.maps),
                        {a: TripleWitness(ValueSeq.scripted([3, 1, 0]), q.c, 1)},
                        dict(q.image_certs), dict(q.commute_certs))
        rep = check_condition(bad, ctx, 8)
        assert any(not l.ok and l.tag == "d14:i15" for l in rep.lines)

    def test_stage_discipline_violation_fails(self):
        rng = rng_for(3, "cond")
        ctx, q = None, None
        for _ in range(10):
            ctx, q = anticipating_context(rng, [], n_labels=2)
            if len(q.labels) > 1:
                break
        assert len(q.labels) > 1
        top = max(q.labels)
        others = tuple(a for a in q.labels if a != top)
        bad = Condition(q.c, top, others, {a: q.maps[a] for a in others},
                        {a: q.witnesses[a] for a in others})
        rep = check_condition(bad, ctx, 6)
        assert any(not l.ok and l.tag == "d14:i13" for l in rep.lines)

    def test_leq_reflexive_and_map_mismatch(self):
        rng = rng_for(4, "cond")
        ctx, q = anticipating_context(rng, [], n_labels=1)
        assert leq_condition(q, q, ctx, 10).ok
        a = q.labels[0]
        other = Condition(q.c, q.gamma, q.labels, {a: Map.identity()},
                          dict(q.witnesses), dict(q.image_certs), dict(q.commute_certs))
        rep = leq_condition(other, q, ctx, 10)
        assert any(not l.ok and l.tag == "d14:le-maps" for l in rep.lines)


class TestBareTasks:
    def test_decide_evens_exact_subset(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        q1, entry = extend_condition(q0, DecideSet(evens()), ctx, 10)
        assert entry.branch == "inside"
        assert all(x % 2 == 0 for n in range(10) for x in q1.c.block(n))
        assert leq_condition(q1, q0, ctx, 10).ok

    def test_decide_matches_weight_oracle(self):
        # the independent oracle: a block is heavy when it keeps at least
        # half its points; picks walk the doubled heavy positions
        ctx = bare_ctx()
        c = triangular()
        q1, _ = extend_condition(seed_condition(ctx, c), DecideSet(evens()), ctx, 8)
        heavy = [n for n in range(60)
                 if 2 * sum(1 for x in c.block(n) if x % 2 == 0) >= n + 1]
        for k in range(8):
            blk = c.block(heavy[2 * k + 1])
            assert q1.c.block(k) == tuple(x for x in blk if x % 2 == 0)[: k + 1]

    def test_decide_outside_branch(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        thin_set = scripted([10 ** 9])
        q1, entry = extend_condition(q0, DecideSet(thin_set), ctx, 6)
        assert entry.branch == "outside"
        assert all(not (x == 10 ** 9) for n in range(6) for x in q1.c.block(n))

    def test_thin_whole_blocks(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        q1, _ = extend_condition(q0, Thin(lambda n: 3 * n + 1, False), ctx, 8)
        for n in range(8):
            assert q1.c.block(n) == triangular().block(3 * n + 1)

    def test_rapidify_meets_schedule(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        q1, _ = extend_condition(q0, Rapidify(lambda n: 3 * n + 2), ctx, 8)
        support = [x for n in range(8) for x in q1.c.block(n)]
        assert all(support[n] >= 3 * n + 2 for n in range(len(support)))

    def test_rapidify_geometric_small_depth(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        q1, _ = extend_condition(q0, Rapidify(lambda n: 2 ** n), ctx, 4)
        support = [x for n in range(4) for x in q1.c.block(n)]
        assert all(support[n] >= 2 ** n for n in range(len(support)))

    def test_kill_halves_disjoint(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        q1, entry = extend_condition(q0, Kill(None, lambda s: set()), ctx, 8)
        assert entry.branch in ("half-1", "half-2")
        assert check_condition(q1, ctx, 8).ok and leq_condition(q1, q0, ctx, 8).ok


class TestLabeledTasks:
    def test_anticipated_thin_certifies(self):
        rng = rng_for(6, "lab")
        task = Thin(lambda n: 2 * n + 1, True)
        ctx, q0 = anticipating_context(rng, [task], n_labels=2)
        q1, entry = extend_condition(q0, task, ctx, 9, strict=True)
        assert not entry.obligations
        assert check_condition(q1, ctx, 9).ok
        assert leq_condition(q1, q0, ctx, 9).ok

    def test_unanticipated_thin_requires_oracle(self):
        rng = rng_for(7, "lab")
        ctx, q0 = anticipating_context(rng, [], n_labels=1)
        # towers anticipate only the identity run, not this deep thinning
        with pytest.raises(OracleRequired):
            extend_condition(q0, Thin(lambda n: 5 * n + 3, True), ctx, 9, strict=True)
        q1, entry = extend_condition(q0, Thin(lambda n: 5 * n + 3, True), ctx, 9, strict=False)
        assert entry.obligations

    def test_restrict_image_exact(self):
        rng = rng_for(8, "lab")
        task = RestrictImage(0, arithmetic(0, 1))
        ctx, q0 = anticipating_context(rng, [task], n_labels=1)
        q1, entry = extend_condition(q0, task, ctx, 9)
        bud = Budget(10 ** 6)
        for n in range(available_depth(q1.c, 9)):
            for x in q1.c.block(n):
                assert task.target.contains(q1.maps[0].apply(x, bud), bud)

    def test_kill_labeled(self):
        rng = rng_for(9, "lab")
        task = Kill(0, lambda s: set(sorted(s)[:1]) if s else set())
        ctx, q0 = anticipating_context(rng, [task], n_labels=1)
        q1, entry = extend_condition(q0, task, ctx, 9)
        assert entry.branch.startswith("half-")
        assert check_condition(q1, ctx, 9).ok

    def test_add_coordinate_compose(self):
        rng = rng_for(10, "lab")
        while True:
            ctx, q0 = anticipating_context(rng, [], n_labels=2)
            missing = [a for a in ctx.labels if a not in q0.labels]
            if missing:
                break
        q1, entry = extend_condition(q0, AddCoordinate(missing[0]), ctx, 9)
        assert entry.branch.startswith("compose-through")
        assert missing[0] in q1.labels
        rep = check_condition(q1, ctx, 9)
        assert rep.ok, rep.failures()[0]

    def test_add_coordinate_above_needs_oracle(self):
        rng = rng_for(11, "lab")
        labels, proj, q = labeled_seed(rng, 1)
        # a context with one more label above everything the seed carries
        proj2 = dict(proj)
        proj2[(1, 1)] = Map.identity()
        proj2[(1, 0)] = Map.formula(lambda v: 4 * (v // 4), name="down")
        bud = Budget(10 ** 6)
        img = block_image(q.c, q.maps[0], 0)
        t0 = blocks_from_stream(scripted(img.prefix(30, bud), name="T0"))
        t1 = blocks_from_stream(scripted([4 * v + 1 for v in range(30)], name="T1"))
        ctx = GenericContext(labels=(0, 1), towers={0: (t0,), 1: (t1,)}, proj=proj2)
        _derive_certs(ctx, q, 9, bud, False, [])
        with pytest.raises(OracleRequired):
            extend_condition(q, AddCoordinate(1), ctx, 9, strict=True)

    def test_rk_pullback_stage_case(self):
        rng = rng_for(12, "lab")
        ctx, q0 = anticipating_context(rng, [], n_labels=1)
        gamma = q0.gamma
        b1 = triangular(offset=2)
        psi1 = ValueSeq.affine(4, 4)
        pi1 = Map.block(b1, psi1, name="pull")
        task = RKPullback(pi1, psi1, b1, thin(b1, periodic(0, [2])), gamma)
        perm = GenericContext(labels=ctx.labels, towers={a: () for a in ctx.labels},
                              proj=dict(ctx.proj), decree=lambda l, s: True)
        bud = Budget(perm.budget * 8)
        _derive_certs(perm, q0, 9, bud, False, [])
        q_perm, _ = extend_condition(q0, task, perm, 8)
        towers = {}
        for a in ctx.labels:
            img = block_image(q_perm.c, q_perm.maps[a], 0)
            vals = []
            try:
                for i in range(40):
                    vals.append(img.nth(i, bud))
            except Exception:
                pass
            towers[a] = (blocks_from_stream(scripted(vals, name=f"T{a}")),)
        ctx2 = GenericContext(labels=ctx.labels, towers=towers, proj=dict(ctx.proj))
        _derive_certs(ctx2, q0, 8, bud, False, [])
        q1, entry = extend_condition(q0, task, ctx2, 8, strict=True)
        assert entry.branch == "stage-pullback" and not entry.obligations
        assert check_condition(q1, ctx2, 8).ok
        assert leq_condition(q1, q0, ctx2, 8).ok

    def test_seal_limit(self):
        rng = rng_for(13, "lab")
        labels, proj, q_seed = labeled_seed(rng, 2)
        q_top = Condition(q_seed.c, TOP, q_seed.labels, dict(q_seed.maps), dict(q_seed.witnesses))
        task = SealLimit(labels=q_top.labels,
                         chain=(q_seed.c, thin(q_seed.c, periodic(1, [2]))),
                         side_maps=tuple(q_seed.maps[a] for a in q_top.labels),
                         side_witnesses=tuple(q_seed.witnesses[a] for a in q_top.labels),
                         side_level=tuple(0 for _ in q_top.labels))
        perm = GenericContext(labels=labels, towers={a: () for a in labels},
                              proj=dict(proj), decree=lambda l, s: True)
        bud = Budget(perm.budget * 8)
        _derive_certs(perm, q_top, 8, bud, False, [])
        q1, entry = extend_condition(q_top, task, perm, 8)
        assert entry.branch == "sealed"
        assert leq_condition(q1, q_top, perm, 8).ok


class TestMeetAndStage:
    def test_closed_form_indices(self):
        ctx = bare_ctx()
        qs = [seed_condition(ctx, triangular()) for _ in range(4)]
        qm, entry = meet_chain(qs, ctx, depth=3)
        assert qm.c.block(0) == (0,)
        assert qm.c.block(1) == (3, 4, 5)
        assert qm.c.block(2) == tuple(range(28, 36))
        assert "0, 2, 7" in entry.detail

    def test_meet_below_chain(self):
        ctx = bare_ctx()
        qs = [seed_condition(ctx, triangular())]
        for _ in range(2):
            qq, _ = extend_condition(qs[-1], Thin(lambda n: n + 1, False), ctx, 12)
            qs.append(qq)
        qm, _ = meet_chain(qs, ctx, depth=4)
        for q in qs:
            assert leq_condition(qm, q, ctx, 4).ok

    def test_meet_fixed_stage_fuses(self):
        rng = rng_for(14, "meet")
        tasks = [Thin(lambda n: 2 * n + 1, False)]
        ctx, q0 = anticipating_context(rng, tasks, n_labels=1)
        chain = [q0]
        qq, _ = extend_condition(q0, tasks[0], ctx, 8)
        chain.append(qq)
        qm, entry = meet_chain(chain, ctx, depth=8)
        assert entry.branch == "fuse-at-stage"
        assert qm.labels == q0.labels  # constant label sets survive the meet
        for q in chain:
            assert leq_condition(qm, q, ctx, 8).ok

    def test_declared_limit_needs_oracle(self):
        rng = rng_for(15, "meet")
        ctx, q0 = anticipating_context(rng, [], n_labels=2)
        with pytest.raises(OracleRequired):
            meet_chain([q0], ctx, depth=4, declared_limit=max(ctx.labels))

    def test_stage_folds_tasks(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        res = run_stage(ctx, [DecideSet(evens()), Rapidify(lambda n: 2 * n + 1),
                              Kill(None, lambda s: set())], q0, depth=7)
        assert len(res.trace.entries) == 3
        assert all(e.ok for e in res.trace.entries)
        assert leq_condition(res.final, q0, ctx, 4).ok

    def test_stage_checkpoint_meets(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        res = run_stage(ctx, [DecideSet(evens()), Thin(lambda n: n + 1, False)],
                        q0, depth=7, checkpoints=(1,))
        kinds = [e.task for e in res.trace.entries]
        assert kinds == ["DecideSet", "Thin", "meet"]

    def test_stage_strict_aborts_on_missing_oracle(self):
        rng = rng_for(16, "stage")
        ctx, q0 = anticipating_context(rng, [], n_labels=1)
        task = RKPullback(Map.identity(), ValueSeq.identity(), triangular(),
                          triangular(), q0.labels[0])
        # identity is not a proper witness, but the oracle gate is hit
        # first when the stage marker is absent from the request
        qtop = Condition(q0.c, TOP, q0.labels, dict(q0.maps), dict(q0.witnesses),
                         dict(q0.image_certs), dict(q0.commute_certs))
        with pytest.raises(OracleRequired):
            run_stage(ctx, [task], qtop, depth=6, strict=True)
        res = run_stage(ctx, [task], qtop, depth=6, strict=False)
        assert not res.trace.entries[0].ok
        assert res.trace.entries[0].branch == "skipped"

    def test_empty_task_list_is_identity(self):
        ctx = bare_ctx()
        q0 = seed_condition(ctx, triangular())
        res = run_stage(ctx, [], q0, depth=6)
        assert res.final is q0 and not res.trace.entries


def test_add_coordinate_oracle_answer_verified():
    # a scripted anticipation: the new map sections the stage map up to
    # the higher label's residue band
    rng = rng_for(17, "oracle")
    labels, proj, q = labeled_seed(rng, 1)
    proj2 = dict(proj)
    proj2[(1, 1)] = Map.identity()
    down = Map.formula(lambda v: 4 * (v // 4), name="down")
    proj2[(1, 0)] = down

    def rk(kind, q, label, ctx):
        if kind != "add-coordinate":
            return None
        psi_up = ValueSeq.mapped(q.witnesses[0].psi, Map.formula(lambda v: 4 * (v // 4) + 1))
        new_map = Map.block(q.c, psi_up, name="up")
        return q.c, new_map, psi_up, None

    bud = Budget(10 ** 6)
    img0 = block_image(q.c, q.maps[0], 0)
    t0 = blocks_from_stream(scripted(img0.prefix(30, bud), name="T0"))
    up_vals = [4 * (v // 4) + 1 for v in img0.prefix(30, bud)]
    t1 = blocks_from_stream(scripted(sorted(set(up_vals)), name="T1"))
    ctx = GenericContext(labels=(0, 1), towers={0: (t0,), 1: (t1,)}, proj=proj2, rk_oracle=rk)
    _derive_certs(ctx, q, 9, bud, False, [])
    q1, entry = extend_condition(q, AddCoordinate(1), ctx, 9, strict=True)
    assert entry.branch == "oracle-anticipated"
    assert q1.gamma == 1 and 1 in q1.labels
    rep = check_condition(q1, ctx, 9)
    assert rep.ok, rep.failures()[0]
