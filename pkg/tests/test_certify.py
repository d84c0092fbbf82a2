import math

import numpy as np
import pytest

from convlyap.certify import (
    ExponentialFamily,
    FittedBound,
    StabilizationCertificate,
    check_overshoot,
    coverage,
    fit_exp_bound,
    hoeffding_n,
    hoeffding_radius,
    mean_to_as_check,
    lattice_offset,
    uniform_envelope,
)
from convlyap.chain import GoalSet, LinearFeedback, linear_uniform_chain, simulate_batch
from convlyap.errors import ConfigurationError
from convlyap.kappa import ExponentialKL


@pytest.mark.parametrize(
    "eps,delta,n", [(0.05, 0.05, 738), (0.1, 0.1, 150), (0.999999, 0.5, 1)]
)
def test_hoeffding_n(eps, delta, n):
    assert hoeffding_n(eps, delta) == n


def test_hoeffding_radius_inverts_n():
    n = hoeffding_n(0.05, 0.05)
    assert hoeffding_radius(n, 0.05) <= 0.05
    assert hoeffding_radius(n - 1, 0.05) > 0.05


def test_fit_exact_halving():
    f = fit_exp_bound([4, 2, 1, 0.5], 4.0)
    assert f.valid and f.C == 1.0
    assert f.lam == pytest.approx(math.log(2), rel=1e-12)


def test_fit_instant_convergence():
    f = fit_exp_bound([3.0, 0, 0, 0], 3.0, lam_max=50.0)
    assert f.valid and f.C == 1.0 and f.lam == 50.0


def test_fit_all_zero():
    f = fit_exp_bound([0.0, 0.0], 0.0, lam_max=7.0)
    assert f.valid and f.theta == (1.0, 7.0)


def test_fit_non_decaying_is_flagged():
    f = fit_exp_bound([1.0, 1.1, 1.05, 1.0], 1.0)
    assert f.overshoot
    assert f.C > 1.1 - 1e-12 and f.lam <= 1e-3


def test_fit_non_finite_invalid():
    assert not fit_exp_bound([1.0, np.inf], 1.0).valid


def test_fit_always_dominates():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = np.abs(rng.normal(size=8)) * rng.uniform(0.1, 3)
        f = fit_exp_bound(d, d[0])
        t = np.arange(d.size)
        assert np.all(d <= f.C * d[0] * np.exp(-f.lam * t))


def test_envelope_example():
    fits = [FittedBound(0, 1.0, 0.7, True), FittedBound(1, 1.5, 0.5, True), FittedBound(2, 10.0, 0.1, True)]
    lattice = ((1.0, 0.7), (1.5, 0.5), (10.0, 0.1))
    fam = ExponentialFamily.default()
    fam = type(fam)(fam.name, lattice, fam.dominates, fam.build, fam.xi_at_one)
    cert = uniform_envelope(fits, eta=1 / 3 - 0.01, eta_prime=0.01, family=fam)
    assert cert.passed
    assert cert.theta == (1.5, 0.5) and cert.covered_ids == (0, 1)


def test_envelope_singleton():
    fits = [FittedBound(0, 1.0, 0.3, True)]
    cert = uniform_envelope(fits, eta=0.0, eta_prime=0.5)
    assert cert.passed and cert.theta == (1.0, 0.3)


def test_envelope_fail_reports_best_fraction():
    fits = [FittedBound(i, 1e6, 1e-5, True) for i in range(4)]
    cert = uniform_envelope(fits, eta=0.0, eta_prime=0.1)
    assert cert.verdict == "FAIL" and cert.covered_fraction == 0.0


def test_envelope_rejects_bad_eta():
    with pytest.raises(ConfigurationError):
        uniform_envelope([FittedBound(0, 1, 1, True)], eta=0.6, eta_prime=0.4)


def test_lattice_offset_bound():
    assert lattice_offset(10**6, 0.1) <= 0.1 / 0.9 + 1e-15
    assert lattice_offset(0, 0.1) == pytest.approx(0.1)


def test_certificate_json_roundtrip_and_key_order():
    fits = [FittedBound(0, 1.0, 0.3, True)]
    cert = uniform_envelope(fits, eta=0.0, eta_prime=0.5)
    again = StabilizationCertificate.from_json(cert.to_json())
    assert again.to_json() == cert.to_json()
    assert list(cert.to_dict())[:9] == [
        "eta", "eta_prime", "c0", "family", "theta", "covered_fraction",
        "n_traj", "confidence_radius", "verdict",
    ]


def test_coverage_of_contraction():
    model = linear_uniform_chain(1.2, 1.0, 0.0)
    b = simulate_batch(model, LinearFeedback(-0.9), GoalSet(), 2.0, 10, 3, seed=0)
    assert coverage(b, ExponentialKL(1.0, -0.999 * math.log(0.3))).all()
    assert not coverage(b, ExponentialKL(1.0, 2.0)).any()


def _batch(F, s0, wbar=0.0, T=15, n=20):
    return simulate_batch(linear_uniform_chain(F, 1.0, wbar), LinearFeedback(0.0), GoalSet(), s0, T, n, seed=0)


def test_overshoot_contraction_and_origin():
    rows = [(e, e, _batch(0.3, e)) for e in (0.1, 0.5, 1.0)]
    assert [r.verdict for r in check_overshoot(rows, 0.0, 0.0)] == ["PASS"] * 3
    rows = [(e, e, _batch(0.3, 0.0)) for e in (0.1, 1.0)]
    assert all(r.frequency == 1.0 for r in check_overshoot(rows, 0.0, 0.0))


def test_overshoot_expanding_fails_and_skips():
    rows = [(0.5, 1.0, _batch(1.5, 1.0)), (0.01, 1.0, _batch(1.5, 1.0))]
    out = check_overshoot(rows, eps0=0.1, eta=0.0)
    assert out[0].frequency == 0.0 and out[0].verdict == "FAIL"
    assert out[1].verdict == "SKIP"


def test_overshoot_rejects_mismatched_row():
    with pytest.raises(ConfigurationError):
        check_overshoot([(1.0, 0.5, _batch(0.3, 1.0))], 0.0, 0.0)


def test_mean_to_as_examples():
    r = mean_to_as_check(_batch(0.3, 1.0, T=30), tol=1e-6)
    assert np.all(r.mean_curve <= 0.3 ** np.arange(31) + 1e-15)
    assert r.frequency == 1.0 and r.implication_holds
    r = mean_to_as_check(_batch(1.5, 1.0))
    assert not r.mean_converged and r.implication_holds


def test_invariant_ball():
    model = linear_uniform_chain(1.2, 1.0, 0.1)
    b = simulate_batch(model, LinearFeedback(-0.9), GoalSet(0.2), 0.0, 100, 100, seed=3)
    r = mean_to_as_check(b, tol=0.0)
    assert r.frequency == 1.0 and np.all(b.dists() == 0)
