import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmelab.exprlang import (
    Env,
    ExprDomainError,
    ExprError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
    compile_expr,
    depends_on,
    evaluate,
    fd_derivative,
    free_variables,
    parse,
    to_source,
)

GOLDEN = Path(__file__).parent / "golden"


def ev(src, **env):
    return evaluate(parse(src), Env(**env))


# ------------------------------------------------------------ parse


def test_precedence():
    assert ev("1+2*3") == 7


def test_power_right_associative():
    assert ev("2^3^2") == 512


def test_power_binds_tighter_than_negation():
    assert ev("-2^2") == -4
    assert ev("(-2)^2") == 4


def test_left_associative_minus_and_divide():
    assert ev("1-2-3") == -4
    assert ev("8/4/2") == 1


def test_unknown_identifier_names_it():
    with pytest.raises(UnknownIdentifierError) as exc:
        parse("log(q)")
    assert exc.value.name == "q"
    assert exc.value.offset == 4


def test_syntax_error_carries_offset_and_expectation():
    with pytest.raises(ExprSyntaxError) as exc:
        parse("x*/2")
    assert exc.value.offset == 2
    assert "expected" in str(exc.value)


def test_empty_source_rejected():
    with pytest.raises(ExprSyntaxError):
        parse("")
    with pytest.raises(ExprSyntaxError):
        parse("   ")


@pytest.mark.parametrize("src", ["max(1)", "sin(1, 2)", "exp()"])
def test_arity_checked(src):
    with pytest.raises(ExprSyntaxError):
        parse(src)


def test_golden_parser_output_byte_exact():
    cases = (GOLDEN / "parser_cases.txt").read_text().splitlines()
    lines = []
    for src in cases:
        try:
            res = to_source(parse(src))
        except ExprError as e:
            res = f"{type(e).__name__}: {e}"
        lines.append(f"{src}\t=> {res}")
    got = ("\n".join(lines) + "\n").encode()
    assert got == (GOLDEN / "parser_expected.txt").read_bytes()


# ------------------------------------------------------------ evaluate


def test_sin_pi():
    assert abs(ev("sin(pi)")) < 1e-12


def test_substitution():
    assert ev("x^2 + t", x=3.0, t=1.0) == 10


def test_division_by_zero_is_domain_error():
    with pytest.raises(ExprDomainError):
        ev("1/(x-1)", x=1.0)


@pytest.mark.parametrize("src", ["log(0 - 1)", "log(0)", "sqrt(0 - 1)", "(0 - 8)^(1/3)"])
def test_domain_errors(src):
    with pytest.raises(ExprDomainError):
        ev(src)


def test_domain_error_on_any_array_entry():
    with pytest.raises(ExprDomainError):
        ev("sqrt(x)", x=np.array([1.0, -1.0]))


def test_unbound_variable():
    with pytest.raises(UnboundVariableError):
        ev("p + 1", x=0.0)


def test_r_is_derived_from_x_and_y():
    assert ev("r", x=-3.0) == 3.0
    assert ev("r", x=3.0, y=4.0) == 5.0


def test_min_max_variadic():
    assert ev("max(1, 5, 3)") == 5
    assert ev("min(x, 2)", x=np.array([1.0, 3.0])).tolist() == [1.0, 2.0]


def test_constants():
    assert ev("e") == math.e
    assert ev("pi") == math.pi


def test_array_evaluation_matches_scalar():
    # scalars go through math, arrays through numpy: equal up to rounding
    xs = np.linspace(-1, 1, 11)
    src = "exp(-x^2)*cosh(x) + abs(x)"
    arr = ev(src, x=xs)
    np.testing.assert_allclose(arr, [ev(src, x=float(v)) for v in xs], rtol=1e-15, atol=0)


def test_free_variables_and_depends_on():
    e = parse("sin(r) + t*p")
    assert free_variables(e) == {"r", "t", "p"}
    assert depends_on(e, "x") and depends_on(e, "y")
    assert not depends_on(parse("t + 1"), "x")


# ------------------------------------------------------------ fd_derivative


def test_fd_first_derivative_of_square():
    assert abs(fd_derivative(parse("x^2"), Env(x=1.0), "x", 1) - 2) < 1e-8


def test_fd_second_derivative_of_square():
    assert abs(fd_derivative(parse("x^2"), Env(x=0.0), "x", 2) - 2) < 1e-6


def test_fd_exp():
    assert abs(fd_derivative(parse("exp(x)"), Env(x=0.0), "x", 1) - 1) < 1e-8


def test_fd_rejects_unbound_or_bad_order():
    with pytest.raises(ValueError):
        fd_derivative(parse("x"), Env(x=0.0), "x", 3)
    with pytest.raises(ExprError):
        fd_derivative(parse("x + t"), Env(x=0.0), "t", 1)


def test_fd_propagates_domain_errors():
    with pytest.raises(ExprDomainError):
        fd_derivative(parse("log(x)"), Env(x=0.0), "x", 1)


coef = st.floats(-3, 3, allow_nan=False)


@given(c0=coef, c1=coef, c2=coef, c3=coef, x=st.floats(-2, 2))
@settings(max_examples=60, deadline=None)
def test_fd_matches_cubic_derivatives(c0, c1, c2, c3, x):
    e = parse(f"{c0!r} + {c1!r}*x + {c2!r}*x^2 + {c3!r}*x^3")
    d1 = c1 + 2 * c2 * x + 3 * c3 * x * x
    d2 = 2 * c2 + 6 * c3 * x
    g1 = fd_derivative(e, Env(x=x), "x", 1)
    g2 = fd_derivative(e, Env(x=x), "x", 2)
    scale = 1 + abs(c0) + abs(c1) + abs(c2) + abs(c3)
    assert abs(g1 - d1) <= 1e-6 * max(abs(d1), scale)
    assert abs(g2 - d2) <= 1e-6 * max(abs(d2), scale) * 10


# ------------------------------------------------------------ round trip

_leaf = st.one_of(
    st.floats(0.0, 10.0, allow_nan=False).map(repr),
    st.sampled_from(["x", "y", "t", "p", "r", "pi", "e"]),
)


def _combine(children):
    unary = st.tuples(st.sampled_from(["sin", "cos", "tanh", "exp", "abs", "-"]), children).map(
        lambda a: f"-({a[1]})" if a[0] == "-" else f"{a[0]}({a[1]})"
    )
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda a: f"({a[0]}) {a[1]} ({a[2]})"
    )
    nary = st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
        lambda a: f"{a[0]}({', '.join(a[1])})"
    )
    return st.one_of(unary, binary, nary)


expressions = st.recursive(_leaf, _combine, max_leaves=12)


@given(src=expressions)
@settings(max_examples=100, deadline=None)
def test_print_parse_roundtrip_is_bitwise(src):
    first = parse(src)
    again = parse(to_source(first))
    assert to_source(again) == to_source(first)
    rng = np.random.default_rng(7)
    for _ in range(100):
        x, y, t, p = rng.uniform(-2, 2, 4)
        env = Env(x=x, y=y, t=t, p=p)
        a, b = evaluate(first, env), evaluate(again, env)
        assert a == b or (math.isnan(a) and math.isnan(b))


@given(src=expressions)
@settings(max_examples=60, deadline=None)
def test_compiled_matches_interpreter(src):
    e = parse(src)
    f = compile_expr(e)
    xs = np.linspace(-2, 2, 17)
    env = Env(x=xs, y=0.5 * xs, t=0.3, p=xs[::-1])
    assert np.array_equal(np.asarray(evaluate(e, env)), np.asarray(f(env)), equal_nan=True)


def test_evaluation_is_deterministic():
    e = parse("sin(x)*exp(-t) + max(p, 0.1)^2")
    env = Env(x=0.3, t=0.7, p=0.2)
    assert len({evaluate(e, env) for _ in range(20)}) == 1
