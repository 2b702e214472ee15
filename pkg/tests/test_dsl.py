import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import OracleError, random_expression, shunting_yard_eval
from qlconc.dsl import (DSLError, EvalError, ParseError, UnknownIdentifier, as_point_function, evaluate,
                        evaluate_array, parse, to_source, validate_assumptions)
from qlconc.energy import Region


def test_examples():
    assert evaluate(parse("1 + 0.5*exp(-r^2)"), {"r": 0.0}) == 1.5
    assert evaluate(parse("m - 0.5*min((r-1)^2, 1)", {"m": 2.0}), {"r": 1.0}) == 2.0
    assert evaluate(parse("r^2"), {"r": 3.0}) == 9.0
    assert evaluate(parse("x1*x2"), {"x1": 1.0, "x2": -2.0}) == -2.0
    assert parse("r ^ 2")(r=3.0) == 9.0


def test_precedence_and_associativity():
    assert parse("2^3^2")() == 512.0
    assert parse("-2^2")() == -4.0
    assert parse("2*3+4*5")() == 26.0
    assert parse("8/4/2")() == 1.0
    assert parse("1-2-3")() == -4.0
    assert parse("2^-1")() == 0.5
    assert parse("max(1, 5, 3) - min(4, -2)")() == 7.0


def test_syntax_errors_carry_positions():
    with pytest.raises(ParseError) as exc:
        parse("2*(3+")
    assert exc.value.col == 5 and exc.value.line == 1
    assert exc.value.expected
    with pytest.raises(ParseError) as exc:
        parse("1 +\n  * 2")
    assert exc.value.line == 2 and exc.value.col == 3
    for bad in ("", "1 2", "exp()", "min(1)", "sqrt(1, 2)", "((r)", "r)", "3 $ 4", "1e"):
        with pytest.raises(ParseError):
            parse(bad)
    with pytest.raises(UnknownIdentifier):
        parse("q + r")
    with pytest.raises(UnknownIdentifier):
        parse("foo(r)")
    with pytest.raises(DSLError):
        parse("r", {"exp": 1.0})
    with pytest.raises(DSLError):
        parse("c", {"c": float("nan")})


def test_evaluation_errors_carry_spans():
    e = parse("2 + 1/(r-1)")
    with pytest.raises(EvalError) as exc:
        e(r=1.0)
    assert e.source[exc.value.span.start:exc.value.span.end] == "1/(r-1)"
    for src in ("log(r)", "sqrt(r - 1)", "(r - 1)^0.5", "0^(-1)", "exp(1000)", "10^400"):
        with pytest.raises(EvalError):
            parse(src)(r=0.0)
    with pytest.raises(EvalError):
        parse("r")()


def test_array_evaluation_matches_scalar_and_reports_witness():
    e = parse("1 + 0.2*exp(-(x1^2 + x2^2)) + abs(x1 - x2)/(1 + r)")
    pts = np.random.default_rng(3).normal(size=(50, 2))
    vec = as_point_function(e)(pts)
    for p, val in zip(pts, vec):
        assert val == evaluate(e, {"x1": p[0], "x2": p[1], "r": math.hypot(*p)})
    bad = parse("1/(x1 - 0.5)")
    grid = np.array([[0.0, 0.0], [0.5, 1.0], [1.0, 0.0]])
    with pytest.raises(EvalError) as exc:
        as_point_function(bad)(grid)
    assert exc.value.witness == [0.5, 1.0]
    assert np.array_equal(evaluate_array(parse("2*r"), {"r": np.arange(3.0)}), [0.0, 2.0, 4.0])


def _env(rnd):
    return {"r": rnd.uniform(0, 3), "x1": rnd.uniform(-2, 2), "x2": rnd.uniform(-2, 2),
            "x3": rnd.uniform(-2, 2), "c": rnd.uniform(-1, 1)}


def test_differential_against_shunting_yard():
    rnd = random.Random(20240611)
    mismatches, both_ok = [], 0
    for _ in range(1000):
        src = random_expression(rnd)
        env = _env(rnd)
        c = env.pop("c")
        try:
            ours = evaluate(parse(src, {"c": c}), env)
        except EvalError:
            ours = "error"
        try:
            ref = shunting_yard_eval(src, {**env, "c": c})
        except OracleError:
            ref = "error"
        if ours != ref:
            mismatches.append((src, ours, ref))
        both_ok += ours != "error"
    assert mismatches == []
    assert both_ok > 500


def test_print_round_trip():
    rnd = random.Random(7)
    for _ in range(500):
        src = random_expression(rnd)
        e1 = parse(src, {"c": 0.3})
        printed = to_source(e1)
        e2 = parse(printed, {"c": 0.3})
        assert e2 == e1
        assert to_source(e2) == printed


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_literal_printing_is_exact(a, b):
    e = parse(f"{a!r} - {b!r}*r")
    assert parse(to_source(e)) == e
    assert e(r=1.0) == a - b


def test_assumptions_pass_and_locate_M():
    rep = validate_assumptions(parse("1"), parse("2 - min((r-1)^2, 0.5)"), Region.ball(2.0), dim=2)
    assert rep.ok and rep.violations == []
    assert rep.m == pytest.approx(2.0, abs=1e-3) and rep.V0 == 1.0
    assert rep.M_radius == pytest.approx(1.0, abs=0.05)
    assert np.allclose(rep.M_center, 0.0, atol=0.05)
    assert rep.boundary_max_K == pytest.approx(1.5)


def test_unbounded_V_rejected_at_box_edge():
    rep = validate_assumptions(parse("r"), parse("2 - min((r-1)^2, 0.5)"), Region.ball(2.0), dim=2)
    assert not rep.ok
    # r also vanishes at the origin, which is reported separately
    (v,) = [x for x in rep.violations if "grow" in x.message]
    assert v.assumption == "V"
    assert max(abs(c) for c in v.witness) == pytest.approx(64.0)


def test_nonpositive_V_rejected_with_witness():
    rep = validate_assumptions(parse("r - 0.5"), parse("2 - min((r-1)^2, 0.5)"), Region.ball(2.0),
                               dim=2, box_radii=(1.0,))
    (v,) = rep.violations
    assert v.assumption == "V" and np.allclose(v.witness, 0.0)


def test_K_maximal_on_boundary_rejected():
    rep = validate_assumptions(parse("1"), parse("r"), Region.ball(2.0), dim=2)
    (v,) = [x for x in rep.violations if x.assumption == "K"]
    assert "boundary" in v.message
    assert np.linalg.norm(v.witness) == pytest.approx(2.0)


def test_K0_bound():
    rep = validate_assumptions(parse("1"), parse("2 - min((r-1)^2, 0.5)"), Region.ball(2.0), dim=2, K0=1.5)
    assert [x.assumption for x in rep.violations] == ["K"]
