import pytest

from blocklab import DepthExceeded, PreconditionFailed, evens, naturals
from blocklab.calibration import (
    CalibrationInput,
    assemble_input,
    calibrate,
    check_input,
    verify_calibration,
)
from blocklab.suites import calibration_instance, calibration_suite, mutate_calibration, rng_for


def one_level(d_row, f=lambda n: 0, depth=40):
    return CalibrationInput(levels=1, proj={}, e_rows=[naturals()], c_rows=[naturals()],
                            d_rows=[d_row], f=f, cert_depth=depth)


def test_first_step_everything_omega():
    cal = calibrate(one_level(naturals()))
    assert cal.k(0, 0) == 1
    assert cal.gprime[0] == 1


def test_first_step_even_row():
    # the least containment index is 0, so the cut is 1 and the frame
    # catches up at the second even number
    cal = calibrate(one_level(evens()))
    assert cal.k(0, 0) == 1
    assert cal.gprime[0] == 2


def test_cuts_grow_along_columns():
    rng = rng_for(3, "growth")
    for _ in range(10):
        inp, cal = calibration_instance(rng, max_levels=4)
        for (m, n), v in cal.k_table.items():
            if (m, n - 1) in cal.k_table:
                assert v > cal.k_table[(m, n - 1)]


def test_verify_passes_on_engine_output():
    rng = rng_for(4, "verify")
    for _ in range(8):
        inp, cal = calibration_instance(rng, max_levels=5)
        rep = verify_calibration(inp, cal)
        assert rep.ok, rep.failures()[0]


def test_anchor_positions_respect_frame_head():
    rng = rng_for(5, "r3")
    for _ in range(6):
        inp, cal = calibration_instance(rng, max_levels=4)
        for n, rec in enumerate(cal.records):
            assert all(p >= cal.gprime[n] for p in rec.anchor_pos)


def test_decremented_cut_fails_coverage():
    inp = one_level(evens())
    cal = calibrate(inp)
    cal.k_table[(0, 1)] -= 1
    rep = verify_calibration(inp, cal, include_hypotheses=False)
    assert not rep.ok
    assert any(l.tag in ("t7:i53", "t7:i51b", "t7:delta") for l in rep.failures())


def test_decremented_head_bound_fails():
    # with the head bound pulled to zero the head-anchor clause is empty
    inp = one_level(naturals())
    cal = calibrate(inp)
    cal.gprime[0] -= 1
    rep = verify_calibration(inp, cal, include_hypotheses=False)
    assert not rep.ok
    assert any(l.tag in ("t7:i51", "t7:i52", "t7:i54") for l in rep.failures())


def test_incremented_cut_fails_head_anchor():
    rng = rng_for(6, "mut")
    inp, cal = calibration_instance(rng, max_levels=3)
    cal.k_table[(0, 0)] += 1
    rep = verify_calibration(inp, cal, include_hypotheses=False)
    assert not rep.ok


def test_mutations_always_caught():
    rng = rng_for(8, "mut2")
    inp, cal = calibration_instance(rng, max_levels=4)
    for _ in range(12):
        bad, what = mutate_calibration(rng, cal)
        rep = verify_calibration(inp, bad, include_hypotheses=False)
        assert not rep.ok, what


def test_rapidity_hypothesis_enforced():
    inp = one_level(naturals(), f=lambda n: n)
    rep = check_input(inp)
    assert not rep.ok
    with pytest.raises(PreconditionFailed):
        calibrate(inp)


def test_search_exhaustion_is_depth_error():
    # a two-point table cannot support the column induction
    from blocklab import scripted

    inp = CalibrationInput(levels=1, proj={}, e_rows=[naturals()], c_rows=[naturals()],
                           d_rows=[scripted([0, 1])], f=lambda n: 0, cert_depth=30)
    with pytest.raises(DepthExceeded):
        calibrate(inp, precheck=False)


def test_suite_smoke():
    rep = calibration_suite(seed=11, instances=6, mutations=6)
    assert rep.ok
    assert len(rep.lines) == 12
