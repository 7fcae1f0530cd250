import itertools
import math

import numpy as np
import pytest

from coplan import mathprog as mp


def test_empty_min_program_is_zero():
    out = mp.solve_with_gap(mp.new_program("min").build())
    assert out.status == mp.OPTIMAL
    assert out.incumbent_value == 0.0


def test_max_single_binary():
    b = mp.new_program("max")
    x = b.add_binary("b")
    b.set_objective([(x, 1.0)])
    out = mp.solve_with_gap(b.build())
    assert out.incumbent_value == pytest.approx(1.0)
    assert out.value(x) == pytest.approx(1.0)


def test_min_with_lower_bound_row():
    b = mp.new_program("min")
    x = b.add_continuous("x")
    b.set_objective([(x, 1.0)])
    b.add_constraint([(x, 1.0)], ">=", 3.0)
    assert mp.solve_with_gap(b.build()).incumbent_value == pytest.approx(3.0)


@pytest.mark.parametrize("backend", ["highs", "bnb"])
def test_knapsack_exact(backend):
    b = mp.new_program("max")
    a = b.add_binary("a")
    c = b.add_binary("c")
    b.set_objective([(a, 3.0), (c, 2.0)])
    b.add_constraint([(a, 1.0), (c, 1.0)], "<=", 1.0)
    out = mp.solve_with_gap(b.build(), gap=0.0, backend=backend)
    assert out.incumbent_value == pytest.approx(3.0)
    assert out.value(a) == pytest.approx(1.0)
    assert out.gap <= 1e-9


@pytest.mark.parametrize("backend", ["highs", "bnb"])
def test_knapsack_gap_contract(backend):
    b = mp.new_program("max")
    a = b.add_binary("a")
    c = b.add_binary("c")
    b.set_objective([(a, 3.0), (c, 2.0)])
    b.add_constraint([(a, 1.0), (c, 1.0)], "<=", 1.0)
    out = mp.solve_with_gap(b.build(), gap=0.5, backend=backend)
    assert out.status == mp.OPTIMAL
    # any incumbent within 50% of the relaxation bound is acceptable
    assert (out.relaxation_value - out.incumbent_value) / out.relaxation_value <= 0.5 + 1e-12


def test_quadratic_objective_matches_calculus():
    # min 0.5 x^2 s.t. x >= 2: the unconstrained optimum 0 is cut off, so x = 2
    b = mp.new_program("min")
    x = b.add_continuous("x")
    b.add_quadratic_term(x, 0.5)
    b.add_constraint([(x, 1.0)], ">=", 2.0)
    out = mp.solve_with_gap(b.build())
    assert out.incumbent_value == pytest.approx(2.0, abs=1e-7)
    assert out.value(x) == pytest.approx(2.0, abs=1e-7)


def test_quadratic_with_binaries_rejected():
    b = mp.new_program("min")
    x = b.add_continuous("x")
    y = b.add_binary("y")
    b.add_quadratic_term(x, 1.0)
    b.set_objective([(y, 1.0)])
    with pytest.raises(mp.ProgramError):
        mp.solve_with_gap(b.build())


def test_infeasible_and_unbounded_statuses():
    b = mp.new_program("min")
    x = b.add_continuous("x", 0, 1)
    b.add_constraint([(x, 1.0)], ">=", 2.0)
    assert mp.solve_with_gap(b.build()).status == mp.INFEASIBLE

    b = mp.new_program("max")
    x = b.add_continuous("x")
    b.set_objective([(x, 1.0)])
    assert mp.solve_with_gap(b.build()).status == mp.UNBOUNDED


class TestBigM:
    def test_indicator_zero_pins_expression(self):
        b = mp.new_program("max")
        o = b.add_binary("o")
        pi = b.add_continuous("pi", 0, 100)
        b.add_bigm_indicator(o, [(pi, 1.0)], 10.0, mode="upper")
        b.add_constraint([(o, 1.0)], "==", 0.0)
        b.set_objective([(pi, 1.0)])
        out = mp.solve_with_gap(b.build())
        assert out.incumbent_value == pytest.approx(0.0, abs=1e-9)

    def test_indicator_one_allows_range(self):
        b = mp.new_program("max")
        o = b.add_binary("o")
        pi = b.add_continuous("pi", 0, 100)
        b.add_bigm_indicator(o, [(pi, 1.0)], 10.0, mode="upper")
        b.add_constraint([(o, 1.0)], "==", 1.0)
        b.set_objective([(pi, 1.0)])
        out = mp.solve_with_gap(b.build())
        assert out.incumbent_value == pytest.approx(10.0)

    def test_nonpositive_bigm_rejected(self):
        b = mp.new_program("min")
        o = b.add_binary("o")
        x = b.add_continuous("x", 0, 1)
        with pytest.raises(mp.ProgramError):
            b.add_bigm_indicator(o, [(x, 1.0)], 0.0)

    def test_complementarity_pair_excludes_both_positive(self):
        # brute force over o in {0,1}: pi and the slack are never both positive
        for o_fixed in (0.0, 1.0):
            b = mp.new_program("max")
            o = b.add_binary("o")
            pi = b.add_continuous("pi", 0, 10)
            slack = b.add_continuous("s", 0, 10)
            b.add_bigm_indicator(o, [(pi, 1.0)], 10.0, mode="upper")
            # slack <= M * (1 - o), written through the complementary indicator
            b.add_constraint([(slack, 1.0), (o, 10.0)], "<=", 10.0)
            b.add_constraint([(o, 1.0)], "==", o_fixed)
            b.set_objective([(pi, 1.0), (slack, 1.0)])
            out = mp.solve_with_gap(b.build())
            pi_v, s_v = out.value(pi), out.value(slack)
            assert min(pi_v, s_v) <= 1e-9

    def test_suggest_bigm_uses_interval_arithmetic(self):
        b = mp.new_program("min")
        x = b.add_continuous("x", -2, 3)
        y = b.add_continuous("y", 0, 4)
        # expr = 2x - y ranges over [-8, 6]; |expr| <= 8, times the 1.1 safety
        assert b.suggest_big_m([(x, 2.0), (y, -1.0)]) == pytest.approx(8.8)


def test_weak_duality_bookkeeping():
    rng = np.random.default_rng(3)
    for trial in range(20):
        b = mp.new_program("min")
        xs = [b.add_binary(f"z{i}") for i in range(5)]
        xs.append(b.add_continuous("w", 0, 5))
        b.set_objective(list(zip(xs, rng.normal(size=6))))
        for _ in range(3):
            b.add_constraint(list(zip(xs, rng.integers(-2, 3, size=6).astype(float))),
                             ">=", float(rng.integers(-3, 2)))
        out = mp.solve_with_gap(b.build(), gap=0.0)
        if out.status == mp.OPTIMAL:
            assert out.relaxation_value <= out.incumbent_value + 1e-8 * max(1, abs(out.incumbent_value))


def test_backends_agree_on_random_milps():
    rng = np.random.default_rng(11)
    for trial in range(12):
        rows = [(rng.integers(-3, 4, size=7).astype(float), float(rng.integers(-4, 2)))
                for _ in range(4)]
        c = rng.normal(size=7)
        outs = {}
        for backend in ("highs", "bnb"):
            b = mp.new_program("min")
            vs = [b.add_binary(f"z{i}") for i in range(6)] + [b.add_continuous("w", 0, 10)]
            b.set_objective(list(zip(vs, c)))
            for coefs, rhs in rows:
                b.add_constraint(list(zip(vs, coefs)), ">=", rhs)
            outs[backend] = mp.solve_with_gap(b.build(), gap=0.0, backend=backend)
        assert outs["highs"].status == outs["bnb"].status
        if outs["highs"].status == mp.OPTIMAL:
            assert outs["highs"].incumbent_value == pytest.approx(
                outs["bnb"].incumbent_value, abs=1e-6)


def test_determinism_under_fixed_backend():
    b = mp.new_program("min")
    xs = [b.add_binary(f"z{i}") for i in range(6)]
    rng = np.random.default_rng(5)
    b.set_objective(list(zip(xs, rng.normal(size=6))))
    b.add_constraint(list(zip(xs, np.ones(6))), ">=", 3.0)
    prog = b.build()
    v1 = mp.solve_with_gap(prog, gap=0.0).incumbent_value
    v2 = mp.solve_with_gap(prog, gap=0.0).incumbent_value
    assert abs(v1 - v2) <= 1e-9


def test_dump_parse_round_trip():
    b = mp.new_program("max")
    x = b.add_continuous("x", 0, 5)
    y = b.add_binary("y")
    z = b.add_continuous("z", -2, math.inf)
    b.set_objective([(x, 1.5), (y, -2.0)], constant=3.0)
    b.add_quadratic_term(x, 0.25)
    b.add_constraint([(x, 1.0), (y, -4.0)], "<=", 2.5, name="cap")
    b.add_constraint([(z, 2.0), (x, 1.0)], "==", 1.0, name="link")
    prog = b.build()
    text = mp.dump_program(prog)
    parsed = mp.parse_program(text)
    assert parsed.n_vars == prog.n_vars
    assert parsed.n_rows == prog.n_rows
    assert parsed.sense == prog.sense
    assert [r.sense for r in parsed.rows] == [r.sense for r in prog.rows]
    for r1, r2 in zip(prog.rows, parsed.rows):
        assert r1.coeffs.sum() == pytest.approx(r2.coeffs.sum())
    assert mp.dump_program(parsed) == text


def test_duplicate_terms_are_merged():
    b = mp.new_program("min")
    x = b.add_continuous("x", 0, 10)
    r = b.add_constraint([(x, 1.0), (x, 2.0)], "<=", 6.0)
    prog = b.build()
    assert len(prog.rows[r].indices) == 1
    assert prog.rows[r].coeffs[0] == pytest.approx(3.0)


def test_time_limit_reports_honestly():
    # a tiny problem cannot exceed the limit; the solve stays optimal
    b = mp.new_program("min")
    x = b.add_binary("x")
    b.set_objective([(x, 1.0)])
    out = mp.solve_with_gap(b.build(), gap=0.0, time_limit=10.0)
    assert out.status == mp.OPTIMAL
