"""Moments of exponential-Brownian time integrals: identities and sampling."""

import math

import numpy as np
import pytest
import scipy.stats

from scalar_closure.gbm_moments import (
    DEFAULT_SCHEDULE,
    GBMError,
    IntermittencyFit,
    MomentEntry,
    MomentQuery,
    MomentTable,
    XSampleStats,
    _a_snapshot_chunks,
    asym_neg_moment,
    dufresne_moment,
    evaluate_moment_query,
    intermittency_exponent,
    inverse_moment_asymptotic,
    inverse_moment_coth,
    neg_moment,
    neg_moment_recurrence,
    normalized_moment_asymptote,
    simulate_x_stats,
    x_moment,
)

FOUR_PI = 4.0 * math.pi


# ---------------------------------------------------------------------------
# validation


def test_error_type_is_value_error():
    assert issubclass(GBMError, ValueError)


def test_moment_integral_domain_errors():
    with pytest.raises(GBMError, match=r"r > -3/2"):
        dufresne_moment(-1.5, 0.0, 1.0)
    with pytest.raises(GBMError, match="positive"):
        dufresne_moment(-0.5, 0.0, 0.0)
    with pytest.raises(GBMError, match="derivative order"):
        dufresne_moment(-0.5, 0.0, 1.0, deriv=-1)
    with pytest.raises(GBMError, match="positive"):
        neg_moment(0.0, 0.0, 1.0)
    with pytest.raises(GBMError, match="positive"):
        inverse_moment_coth(-2.0)
    with pytest.raises(GBMError, match="n_terms"):
        inverse_moment_asymptotic(1.0, 4)
    with pytest.raises(GBMError, match="positive"):
        asym_neg_moment(-1.0, 2.0)


def test_recurrence_domain_errors():
    with pytest.raises(GBMError, match="m must be positive"):
        neg_moment_recurrence(0.0, 0.0, 1.0)
    with pytest.raises(GBMError, match=r"2m - mu >= 0"):
        neg_moment_recurrence(0.5, 2.0, 1.0)
    with pytest.raises(GBMError, match=r"2m - mu >= 0"):
        neg_moment(1.5, 2.0, 1.0)


def test_x_moment_validation():
    with pytest.raises(GBMError, match=">= 1"):
        x_moment(0.5, 1.0, 1.0)
    with pytest.raises(GBMError, match="g must be positive"):
        x_moment(2.0, 0.0, 1.0)
    with pytest.raises(GBMError, match="t must be positive"):
        x_moment(2.0, 1.0, -1.0)
    with pytest.raises(GBMError, match="method"):
        x_moment(2.0, 1.0, 1.0, method="series")
    with pytest.raises(GBMError, match="integer orders"):
        x_moment(2.5, 1.0, 1.0, method="monte-carlo")


def test_simulation_validation():
    with pytest.raises(GBMError, match="times must be positive"):
        simulate_x_stats(1.0, [-1.0, 2.0], n_paths=100)
    with pytest.raises(GBMError, match="distinct"):
        simulate_x_stats(1.0, [1.0, 1.0], n_paths=100)
    with pytest.raises(GBMError, match="n_paths"):
        simulate_x_stats(1.0, [1.0], n_paths=1)
    with pytest.raises(GBMError, match="max_order"):
        simulate_x_stats(1.0, [1.0], n_paths=100, max_order=3)
    with pytest.raises(GBMError, match="steps must be positive"):
        simulate_x_stats(1.0, [1.0], n_paths=100, schedule=((10.0, -1e-2),))
    with pytest.raises(GBMError, match="must increase"):
        simulate_x_stats(1.0, [1.0], n_paths=100,
                         schedule=((10.0, 1e-2), (5.0, 1e-2)))
    with pytest.raises(GBMError, match="cover"):
        simulate_x_stats(1.0, [20.0], n_paths=100, schedule=((10.0, 1e-2),))


def test_query_validation():
    with pytest.raises(GBMError, match="method"):
        MomentQuery(-1.0, 0.0, 1.0, "bogus")
    with pytest.raises(GBMError, match="t must be positive"):
        MomentQuery(-1.0, 0.0, 0.0, "coth")
    with pytest.raises(GBMError, match=r"r > -3/2"):
        MomentQuery(-2.0, 0.0, 1.0, "dufresne")
    with pytest.raises(GBMError, match="coth identity"):
        MomentQuery(-0.5, 0.0, 1.0, "coth")
    with pytest.raises(GBMError, match="coth identity"):
        MomentQuery(-1.0, 0.4, 1.0, "coth")
    with pytest.raises(GBMError, match="recurrence requires"):
        MomentQuery(-0.5, 0.0, 1.0, "recurrence")
    with pytest.raises(GBMError, match="recurrence requires"):
        MomentQuery(-1.5, 2.0, 1.0, "recurrence")
    with pytest.raises(GBMError, match="asymptotic law"):
        MomentQuery(0.5, 0.0, 1.0, "asymptotic")


def test_table_validation():
    with pytest.raises(GBMError, match="finite"):
        MomentEntry(-1.0, 1.0, "coth", math.inf, 0.0)
    with pytest.raises(GBMError, match="MomentEntry"):
        MomentTable(entries=("not-an-entry",))
    table = MomentTable(entries=(MomentEntry(-1.0, 1.0, "coth", 1.28, 1e-10),))
    assert table.rows() == [(-1.0, 1.0, "coth", 1.28, 1e-10)]
    assert MomentTable.COLUMNS == ("order", "t", "method", "value", "error")


# ---------------------------------------------------------------------------
# exact identities


def test_zeroth_moment_is_one():
    assert abs(dufresne_moment(0.0, 0.0, 1.0) - 1.0) < 1e-10
    assert abs(dufresne_moment(0.0, 0.7, 2.0) - 1.0) < 1e-10


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0, 5.0])
def test_inverse_sqrt_moment_exact(t):
    # E[A_t^{-1/2}] * sqrt(t) = 1, an exact identity
    assert abs(neg_moment(0.5, 0.0, t) * math.sqrt(t) - 1.0) < 1e-10


@pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
def test_inverse_moment_two_representations_agree(t):
    via_kernel = 2.0 * dufresne_moment(-1.0, 0.0, t)
    via_coth = inverse_moment_coth(t)
    assert abs(via_kernel - via_coth) < 1e-10 * via_coth


@pytest.mark.parametrize("t", [0.7, 1.0, 3.0])
def test_descent_chain_closed_forms(t):
    # E[A^{-3/2}] = t^{-1/2} + t^{-3/2}
    want32 = t**-0.5 + t**-1.5
    assert abs(neg_moment(1.5, 0.0, t) - want32) < 1e-12 * want32
    # E[A^{-5/2}] = 3 t^{-1/2} + (10/3) t^{-3/2} + t^{-5/2}
    want52 = 3.0 * t**-0.5 + (10.0 / 3.0) * t**-1.5 + t**-2.5
    assert abs(neg_moment(2.5, 0.0, t) - want52) < 1e-12 * want52


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_second_inverse_moment_two_paths(t):
    # descent from the kernel integral vs the coth pair (value and d/dt)
    via_rec = neg_moment_recurrence(1.0, 0.0, t)
    via_coth = 2.0 * inverse_moment_coth(t) - inverse_moment_coth(t, deriv=1)
    assert abs(via_rec - via_coth) < 1e-10 * via_coth


def test_frozen_second_inverse_moment():
    assert np.isclose(neg_moment(2.0, 0.0, 1.0), 3.6069990505732989, rtol=1e-10)


def test_frozen_kernel_integral_values():
    # cross-validated against an independent 2F1 implementation and a
    # singularity-regularizing substitution
    cases = [
        ((-0.7, 0.4, 1.3), 0.41119782259791388),
        ((-1.25, 0.0, 0.8), 0.81329496584645988),
        ((-0.3, 1.2, 2.0), 0.2755899436344868),
        ((-1.45, 0.6, 1.0), 0.35786858077792733),
    ]
    for (r, mu, t), want in cases:
        assert np.isclose(dufresne_moment(r, mu, t), want, rtol=1e-9)


def test_frozen_coth_values():
    assert np.isclose(inverse_moment_coth(0.5), 2.3059876104397832, rtol=1e-10)
    assert np.isclose(inverse_moment_coth(2.0), 0.75807782562576109, rtol=1e-10)
    assert np.isclose(inverse_moment_coth(10.0), 0.27214434583128455, rtol=1e-10)


def test_recurrence_overlaps_direct_evaluation():
    # orders in (-3/2, -1) are reachable both directly and by one descent
    direct = 2.0**1.25 * dufresne_moment(-1.25, 0.0, 1.5)
    descended = neg_moment_recurrence(0.25, 0.0, 1.5)
    assert abs(direct - descended) < 1e-9 * direct


# ---------------------------------------------------------------------------
# derivatives under the integral sign


def test_analytic_derivative_matches_richardson():
    for (m, mu, t) in [(0.5, 0.0, 1.0), (1.0, 0.3, 2.0), (1.3, 0.4, 1.5)]:
        d = neg_moment(m, mu, t, deriv=1)

        def fd(h):
            return (neg_moment(m, mu, t + h) - neg_moment(m, mu, t - h)) / (2 * h)

        rich = (4.0 * fd(5e-5 * t) - fd(1e-4 * t)) / 3.0
        assert abs(d - rich) < 1e-9 * max(1.0, abs(d))


def test_second_derivative_closed_form():
    # E[A^{-1/2}] = t^{-1/2}, so its second derivative at t=1 is 3/4
    assert abs(neg_moment(0.5, 0.0, 1.0, deriv=2) - 0.75) < 1e-9


def test_descent_step_equals_router():
    assert np.isclose(neg_moment_recurrence(1.0, 0.0, 1.0),
                      neg_moment(2.0, 0.0, 1.0), rtol=1e-12)


# ---------------------------------------------------------------------------
# long-time behavior


def test_positive_and_decreasing_in_time():
    for p in (0.5, 1.0, 1.5, 2.0, 2.5):
        vals = [neg_moment(p, 0.0, t) for t in (1.0, 2.0, 4.0, 8.0)]
        assert all(v > 0 for v in vals)
        assert all(a > b for a, b in zip(vals[:-1], vals[1:]))


def test_expansion_ordering_tightens():
    for t in (10.0, 50.0):
        q = inverse_moment_coth(t)
        gaps = [abs(q - inverse_moment_asymptotic(t, k)) for k in (1, 2, 3)]
        assert gaps[0] > gaps[1] > gaps[2]


def test_three_term_expansion_accuracy():
    # at t=2 the 3-term expansion sits within the dropped t^{-5/2} term
    t = 2.0
    dropped = math.pi**3.5 / (120.0 * math.sqrt(2.0) * t**2.5)
    assert abs(inverse_moment_coth(t) - inverse_moment_asymptotic(t, 3)) < dropped


def test_long_time_ratio_approaches_leading_term():
    t = 1e4
    ratio = inverse_moment_coth(t) / inverse_moment_asymptotic(t, 1)
    assert abs(ratio - 1.0) < 1e-3


def test_leading_law_special_orders():
    # n=1 reproduces the first expansion term; n=1/2 the exact identity
    assert np.isclose(asym_neg_moment(1.0, 7.0),
                      inverse_moment_asymptotic(7.0, 1), rtol=1e-14)
    assert np.isclose(asym_neg_moment(0.5, 3.0), 3.0**-0.5, rtol=1e-14)


# ---------------------------------------------------------------------------
# the peak amplitude X_t


@pytest.mark.parametrize("g,t", [(1.0, 1.0), (0.8, 2.5), (2.0, 10.0)])
def test_mean_amplitude_exact(g, t):
    # E[X_t] = (4 pi t)^{-1/2} for every g
    assert np.isclose(x_moment(1.0, g, t) * math.sqrt(FOUR_PI * t), 1.0,
                      rtol=1e-10)


def test_mean_amplitude_spec_value():
    assert np.isclose(x_moment(1.0, 1.0, 1.0), 0.2820948, atol=5e-8)


def test_second_moment_expansion_at_late_time():
    g, t = 1.0, 100.0
    value = x_moment(2.0, g, t)
    leading = g / (2.0 * math.sqrt(2.0) * math.pi**1.5 * math.sqrt(t))
    correction = math.sqrt(math.pi / 2.0) / (24.0 * g * t**1.5)
    assert np.isclose(leading, 0.0063494, atol=5e-8)
    assert abs(value - leading) < 1.2 * correction
    assert abs(value - (leading + correction)) < 1e-6


def test_asymptotic_law_reduces_to_exact_mean():
    # (2 pi)^{-1} Gamma(1/2) t^{-1/2} equals (4 pi t)^{-1/2} identically
    for (g, t) in [(0.5, 1.0), (1.0, 3.0), (2.0, 0.25)]:
        assert np.isclose(x_moment(1.0, g, t, method="asymptotic"),
                          x_moment(1.0, g, t), rtol=1e-10)


def test_third_moment_closed_form_through_chain():
    # E[X^3] = g^3 (4 pi)^{-3/2} (tau^{-1/2} + tau^{-3/2}) with tau = g^2 t
    g, t = 1.3, 2.0
    tau = g * g * t
    want = g**3 * FOUR_PI**-1.5 * (tau**-0.5 + tau**-1.5)
    assert np.isclose(x_moment(3.0, g, t), want, rtol=1e-10)


def test_fourth_moment_vs_coth_pair():
    g, t = 1.0, 4.0
    want = FOUR_PI**-2 * (2.0 * inverse_moment_coth(4.0)
                          - inverse_moment_coth(4.0, deriv=1))
    assert np.isclose(x_moment(4.0, g, t), want, rtol=1e-10)


def test_normalized_moment_asymptote_values():
    # n=2 normalizes to exactly 1 for g=1; general n matches the formula
    assert normalized_moment_asymptote(2.0, 1.0, 17.0) == 1.0
    want = (2.0 * math.pi)**0.25 * math.gamma(1.5) * 5.0**0.25
    assert np.isclose(normalized_moment_asymptote(3.0, 1.0, 5.0), want,
                      rtol=1e-14)


# ---------------------------------------------------------------------------
# Monte Carlo sampling


def test_simulation_deterministic_for_fixed_seed():
    a = simulate_x_stats(1.0, [0.5, 1.0], n_paths=2000, seed=9)
    b = simulate_x_stats(1.0, [0.5, 1.0], n_paths=2000, seed=9)
    assert np.array_equal(a.raw_moments, b.raw_moments)
    assert np.array_equal(a.central_moments, b.central_moments)


def test_power_sum_aggregation_matches_direct_statistics():
    g, times, n_paths, seed = 1.2, [0.5, 1.5], 4000, 31
    stats = simulate_x_stats(g, times, n_paths=n_paths, seed=seed)
    taus = [g * g * t for t in times]
    samples = np.concatenate(
        [g / np.sqrt(FOUR_PI * c) for c in
         _a_snapshot_chunks(taus, 0.0, n_paths, seed, DEFAULT_SCHEDULE, 20_000)])
    for k in range(1, 5):
        assert np.allclose(stats.raw_moments[:, k - 1],
                           (samples**k).mean(axis=0), rtol=1e-12)
        assert np.allclose(stats.central_moments[:, k - 1],
                           scipy.stats.moment(samples, moment=k, axis=0),
                           rtol=1e-10, atol=1e-300)
    assert np.allclose(stats.skewness, scipy.stats.skew(samples, axis=0),
                       rtol=1e-10)
    assert np.allclose(stats.kurtosis,
                       scipy.stats.kurtosis(samples, axis=0, fisher=False),
                       rtol=1e-10)


def test_sampled_mean_matches_exact_identity():
    stats = simulate_x_stats(1.0, [1.0, 10.0], n_paths=20_000, seed=4)
    ratio = stats.mean * np.sqrt(FOUR_PI * stats.times)
    z = np.abs(ratio - 1.0) / (stats.mean_stderr * np.sqrt(FOUR_PI * stats.times))
    assert np.all(z < 3.5)


def test_sampled_inverse_moment_query():
    entry = evaluate_moment_query(MomentQuery(-1.0, 0.0, 1.0, "monte-carlo"),
                                  n_paths=30_000, seed=12)
    assert entry.error > 0
    assert abs(entry.value - 1.2862124158563815) < 3.5 * entry.error


def test_monte_carlo_x_moment_mean():
    v = x_moment(1.0, 1.0, 1.0, method="monte-carlo", n_paths=30_000, seed=3)
    assert abs(v * math.sqrt(FOUR_PI) - 1.0) < 0.02


def test_query_evaluation_methods_agree():
    t = 2.0
    kernel = evaluate_moment_query(MomentQuery(-1.0, 0.0, t, "dufresne"))
    coth = evaluate_moment_query(MomentQuery(-1.0, 0.0, t, "coth"))
    assert np.isclose(kernel.value, coth.value, rtol=1e-9)
    rec = evaluate_moment_query(MomentQuery(-2.0, 0.0, 1.0, "recurrence"))
    assert np.isclose(rec.value, 3.6069990505732989, rtol=1e-9)
    # leading term only: off by the dropped t^{-3/2} correction (~2e-3 here)
    asym = evaluate_moment_query(MomentQuery(-1.0, 0.0, 400.0, "asymptotic"))
    assert np.isclose(asym.value, inverse_moment_coth(400.0), rtol=3e-3)
    assert abs(asym.value - inverse_moment_coth(400.0)) < asym.error


# ---------------------------------------------------------------------------
# intermittency fits


def test_intermittency_validation():
    with pytest.raises(GBMError, match=">= 2"):
        intermittency_exponent(1, 1.0, [1.0, 10.0, 100.0])
    with pytest.raises(GBMError, match="at least 3"):
        intermittency_exponent(3, 1.0, [1.0, 100.0])
    with pytest.raises(GBMError, match="two decades"):
        intermittency_exponent(3, 1.0, [1.0, 5.0, 50.0])
    with pytest.raises(GBMError, match="method"):
        intermittency_exponent(3, 1.0, [1.0, 10.0, 100.0], method="exact")


def test_intermittency_fit_of_closed_form_law():
    grid = np.logspace(0, 2, 9)
    fit3 = intermittency_exponent(3, 1.0, grid, method="asymptotic")
    assert abs(fit3.exponent - 0.25) < 1e-12
    assert fit3.expected == 0.25
    assert fit3.r_squared > 0.999999
    fit4 = intermittency_exponent(4, 2.0, grid, method="asymptotic")
    assert abs(fit4.exponent - 0.5) < 1e-12
    fit2 = intermittency_exponent(2, 1.0, grid, method="asymptotic")
    assert fit2.exponent == 0.0
    assert fit2.r_squared == 1.0


def test_intermittency_rejects_degraded_fit():
    times = np.array([1.0, 10.0, 100.0, 1000.0])
    central = np.ones((4, 4))
    central[:, 2] = [1.0, 5.0, 2.0, 40.0]  # not a power law
    stats = XSampleStats(times=times, n_paths=100,
                         raw_moments=np.ones((4, 4)),
                         central_moments=central,
                         mean_stderr=np.zeros(4))
    with pytest.raises(GBMError, match="degraded"):
        intermittency_exponent(3, 1.0, times, stats=stats)


def test_intermittency_from_shared_simulation():
    # one modest simulation serves both orders; exponents land near the
    # exact-curve fits for this window (0.280 and 0.484 at g=3)
    grid = np.logspace(0, 2, 7)
    stats = simulate_x_stats(3.0, grid, n_paths=20_000, seed=8,
                             schedule=((10.0, 5e-3), (math.inf, 5e-2)))
    fit3 = intermittency_exponent(3, 3.0, grid, stats=stats)
    fit4 = intermittency_exponent(4, 3.0, grid, stats=stats)
    assert isinstance(fit3, IntermittencyFit)
    assert abs(fit3.exponent - 0.2801) < 0.04
    assert abs(fit4.exponent - 0.4844) < 0.08
    assert fit3.meta["source"] == "stats"
