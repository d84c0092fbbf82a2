import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convlyap.errors import ContractError, DomainError
from convlyap.kappa import (
    PiecewiseKappa,
    PowerKappa,
    chi,
    compose,
    concave_inverse,
    convex_majorant,
    evaluate,
    invert,
)

from _helpers import linear, sampled


def test_eval_identity_inside_and_beyond(identity):
    assert evaluate(identity, 0.5) == 0.5
    assert evaluate(identity, 3.0) == 3.0


def test_eval_hand_interpolation(bent):
    assert evaluate(bent, 1.5) == pytest.approx(0.625, abs=1e-15)


def test_eval_rejects_negative(identity):
    with pytest.raises(DomainError):
        evaluate(identity, -0.1)


def test_invert_examples(identity, bent):
    assert invert(linear(2.0), 3.0) == pytest.approx(1.5, abs=1e-12)
    assert invert(identity, 0.0) == 0.0
    assert invert(bent, 0.625) == pytest.approx(1.5, abs=1e-12)


def test_invert_requires_strict():
    flat = PiecewiseKappa([0.0, 1.0, 2.0], [0.0, 1.0, 1.0], 1.0)
    with pytest.raises(ContractError):
        invert(flat, 0.5)


def test_invert_below_range():
    f = PiecewiseKappa([0.0, 1.0], [0.5, 1.0], 1.0)
    with pytest.raises(DomainError):
        f.inverse(0.1)


def test_generalized_inverse_of_zero_set_is_right_edge():
    f = PiecewiseKappa([0.0, 2.0, 3.0], [0.0, 0.0, 1.0], 1.0)
    assert f.inverse(0.0) == 2.0


def test_compose_identity_returns_g(identity, bent):
    h = compose(identity, bent)
    assert np.allclose(h(bent.v), bent.y, atol=1e-15)


def test_compose_linear():
    h = compose(linear(2.0), linear(3.0))
    xs = np.linspace(0, 10, 37)
    assert np.allclose(h(xs), 6 * xs, rtol=1e-14)


def test_compose_square_after_root_is_identity():
    grid = np.linspace(0, 4, 4001)
    sq = sampled(lambda v: v**2, np.linspace(0, 2, 2001))
    root = sampled(np.sqrt, grid)
    h = compose(sq, root)
    xs = np.linspace(0.05, 4, 300)
    assert np.max(np.abs(h(xs) - xs)) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=8), st.floats(0.01, 3.0))
def test_invert_after_eval_roundtrip(incs, ext):
    y = np.concatenate(([0.0], np.cumsum(incs)))
    f = PiecewiseKappa(np.arange(y.size, dtype=float), y, ext)
    xs = np.linspace(0, y.size + 2, 50)
    assert np.allclose(invert(f, f(xs)), xs, atol=1e-12, rtol=1e-12)


def test_compose_associative():
    f = sampled(lambda v: v**2, np.linspace(0, 30, 301))
    g = sampled(np.sqrt, np.linspace(0, 30, 301))
    h = linear(1.5)
    left = compose(compose(f, g), h)
    right = compose(f, compose(g, h))
    xs = np.linspace(0, 15, 200)
    assert np.allclose(left(xs), right(xs), atol=1e-9)


def test_chi_values():
    assert chi(0.5) == 0.5
    assert chi(-1.0) == 0.0
    assert chi(2.0) == 1.0


def test_convex_majorant_of_root_dominates():
    k = sampled(np.sqrt, np.linspace(0, 100, 401))
    m = convex_majorant(k, 1.0)
    xs = np.linspace(1.0, 100.0, 2000)
    assert np.all(m(xs) >= k(xs) - 1e-12)
    assert m.is_convex(rtol=0.0) and m.is_kinf
    assert np.all(np.diff(np.append(m.slopes, m.extension_slope)) >= 0)


def test_convex_majorant_fixes_convex_input():
    k = sampled(lambda v: v**2, np.linspace(0, 10, 101))
    m = convex_majorant(k, 0.5)
    xs = np.linspace(0.5, 12, 500)
    assert np.allclose(m(xs), k(xs), atol=1e-9)


def test_convex_majorant_of_linear_is_itself():
    k = linear(2.5)
    m = convex_majorant(k, 1.0)
    xs = np.linspace(0, 20, 100)
    assert np.allclose(m(xs), k(xs), atol=1e-12)


def test_concave_inverse_examples():
    r = concave_inverse(linear(2.0))
    assert r(3.0) == pytest.approx(1.5)
    assert r(0.0) == 0.0
    sq = sampled(lambda v: v**2, np.linspace(0, 10, 1001))
    r = concave_inverse(sq)
    ys = np.linspace(0, 100, 333)
    assert np.max(np.abs(r(ys) - np.sqrt(ys))) < 1e-2
    assert r.is_concave(rtol=0.0)
    assert np.allclose(sq(r(ys)), ys, atol=1e-9)


def test_concave_inverse_rejects_nonconvex():
    with pytest.raises(ContractError):
        concave_inverse(sampled(np.sqrt, np.linspace(0, 4, 9)))


def test_invariants_enforced():
    with pytest.raises(ContractError):
        PiecewiseKappa([0.0, 1.0, 1.0], [0.0, 1.0, 2.0], 1.0)
    with pytest.raises(ContractError):
        PiecewiseKappa([0.5, 1.0], [0.0, 1.0], 1.0)
    with pytest.raises(ContractError):
        PiecewiseKappa([0.0, 1.0], [1.0, 0.5], 1.0)


def test_flags(bent):
    assert bent.is_strict and bent.is_kinf
    bounded = PiecewiseKappa([0.0, 1.0], [0.0, 1.0], 0.0)
    assert not bounded.is_kinf


def test_json_roundtrip_is_exact(bent):
    f = sampled(np.sqrt, np.linspace(0, 3, 17))
    g = PiecewiseKappa.from_json(f.to_json())
    assert np.array_equal(g.v, f.v) and np.array_equal(g.y, f.y)
    assert g.extension_slope == f.extension_slope
    d = json.loads(bent.to_json())
    assert d["flags"] == {"strict": True, "kinf": True}


def test_power_kappa_inverse():
    p = PowerKappa(2.0, 3.0)
    xs = np.linspace(0, 5, 11)
    assert np.allclose(p.inverse(p(xs)), xs)
