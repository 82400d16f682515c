import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rxswitch.metrics import (
    AnnotationVerdict,
    annotation_summary,
    chi_square_test,
    cohens_kappa,
    micro_f1,
    regularized_beta,
    regularized_gamma_p,
    regularized_gamma_q,
    t_test,
)

# reference values computed with mpmath (30 digits), frozen
GAMMA_P_REFERENCE = [
    (0.5, 0.25, 0.52049987781304654),
    (0.5, 2.0, 0.95449973610364159),
    (1.0, 1.0, 0.63212055882855768),
    (2.5, 3.3333333333333335, 0.75336584781394785),
    (5.0, 2.0, 0.052653017343711157),
    (10.0, 10.0, 0.54207028552814779),
]
BETA_REFERENCE = [
    (0.5, 0.5, 0.25, 0.33333333333333333),  # arcsine law: 1/3 exactly
    (2.0, 3.0, 0.4, 0.52480000000000004),
    (1.0, 1.0, 0.7, 0.69999999999999996),  # I_x(1,1) = x
    (10.0, 0.5, 0.9, 0.15164090963470997),
    (5.0, 5.0, 0.5, 0.5),  # symmetry
    (0.3, 0.7, 0.1, 0.43331004733423451),
]


@pytest.mark.parametrize("a,x,expected", GAMMA_P_REFERENCE)
def test_gamma_p_reference(a, x, expected):
    assert regularized_gamma_p(a, x) == pytest.approx(expected, rel=1e-8)
    assert regularized_gamma_q(a, x) == pytest.approx(1 - expected, rel=1e-6)


@pytest.mark.parametrize("a,b,x,expected", BETA_REFERENCE)
def test_beta_reference(a, b, x, expected):
    assert regularized_beta(a, b, x) == pytest.approx(expected, rel=1e-8)


def test_special_functions_match_scipy_oracle():
    import random

    import scipy.special as sp

    rng = random.Random(0)
    for _ in range(200):
        a, x = rng.uniform(0.1, 80), rng.uniform(0.0, 150)
        assert regularized_gamma_p(a, x) == pytest.approx(
            float(sp.gammainc(a, x)), abs=1e-10)
        b, xx = rng.uniform(0.1, 80), rng.random()
        assert regularized_beta(a, b, xx) == pytest.approx(
            float(sp.betainc(a, b, xx)), abs=1e-10)


# ---------------------------------------------------------------------------
# micro F1


def test_micro_f1_all_correct():
    pairs = [({"oral"}, {"oral"})] * 10
    f1, tally = micro_f1(pairs)
    assert f1 == 1.0 and tally.tp == 10


def test_micro_f1_hand_count():
    pairs = [({"oral"}, {"oral"}), ({"iud"}, {"oral"}), ({"injection"}, set())]
    f1, tally = micro_f1(pairs)
    assert (tally.tp, tally.fp, tally.fn) == (1, 1, 2)
    assert f1 == 0.4


def test_micro_f1_all_empty_predictions():
    f1, _ = micro_f1([({"oral"}, set()), ({"iud"}, set())])
    assert f1 == 0.0


def test_micro_f1_vacuous_is_one():
    f1, _ = micro_f1([(set(), set())])
    assert f1 == 1.0


@given(st.lists(st.tuples(st.sets(st.sampled_from("abcd")),
                          st.sets(st.sampled_from("abcd"))), max_size=30))
@settings(deadline=None)
def test_micro_f1_permutation_invariant(pairs):
    f1a, _ = micro_f1(pairs)
    f1b, _ = micro_f1(list(reversed(pairs)))
    assert f1a == f1b


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")),
                min_size=1, max_size=40))
@settings(deadline=None)
def test_micro_f1_equals_accuracy_on_singletons(labels):
    pairs = [({g}, {p}) for g, p in labels]
    f1, _ = micro_f1(pairs)
    acc = sum(g == p for g, p in labels) / len(labels)
    assert f1 == pytest.approx(acc)


# ---------------------------------------------------------------------------
# kappa


def test_kappa_identical_lists():
    assert cohens_kappa(list("ABAB"), list("ABAB")) == 1.0


def test_kappa_hand_case_zero():
    assert cohens_kappa(list("AABB"), list("ABAB")) == 0.0


def test_kappa_disjoint_constant_lists():
    assert cohens_kappa(list("AAAA"), list("BBBB")) == 0.0


def test_kappa_degenerate_single_label():
    assert cohens_kappa(list("AAA"), list("AAA")) == 1.0


def test_kappa_length_mismatch_fatal():
    with pytest.raises(ValueError):
        cohens_kappa(["A"], ["A", "B"])


@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=50),
       st.lists(st.sampled_from("abc"), min_size=1, max_size=50))
@settings(deadline=None)
def test_kappa_bounded_above(a, b):
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    k = cohens_kappa(a, b)
    assert k <= 1.0 + 1e-12
    if k == 1.0:
        assert a == b


# ---------------------------------------------------------------------------
# annotation summary


def _verdicts(n, accurate, hallucinating):
    return [AnnotationVerdict(note_id=f"n{i}", prompt_id=4,
                              started_correct=True, stopped_correct=True,
                              reason_accurate=i < accurate,
                              hallucination=i < hallucinating)
            for i in range(n)]


def test_annotation_rates_match_reported_precision():
    summary = annotation_summary(_verdicts(93, accurate=85, hallucinating=2))
    assert round(summary.accuracy, 3) == 0.914
    assert round(summary.hallucination_rate, 4) == 0.0215
    assert round(summary.hallucination_rate * 100, 1) == 2.2
    assert summary.n == 93


def test_annotation_summary_empty():
    summary = annotation_summary([])
    assert summary.accuracy is None
    assert summary.hallucination_rate is None
    assert summary.n == 0


# ---------------------------------------------------------------------------
# t-test


def test_t_identical_samples():
    r = t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.t == 0.0 and r.p == 1.0


def test_t_cohort_age_summaries():
    r = t_test((25.9, 7.7, 1515), (29.1, 8.4, 15907))
    assert r.df == 17420
    assert r.p < 0.001


def test_t_shifted_samples():
    r = t_test([1.0, 2.0, 3.0], [11.0, 12.0, 13.0])
    # |t| = 10/sqrt(2/3) ~ 12.25 at df=4 -> beyond the 0.01 critical value 4.604
    assert abs(r.t) == pytest.approx(10 / math.sqrt(2 / 3))
    assert r.p < 0.01


def test_t_matches_scipy_on_raw_samples():
    import scipy.stats as stats

    a = [12.1, 10.3, 9.8, 11.5, 10.9, 12.4]
    b = [9.1, 8.7, 10.2, 9.9, 8.5]
    ours = t_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=True)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-9)


def test_t_summary_equals_raw():
    a = [3.0, 4.0, 5.0, 7.0]
    b = [6.0, 6.5, 8.0]
    raw = t_test(a, b)
    mean_a = sum(a) / len(a)
    sd_a = (sum((x - mean_a) ** 2 for x in a) / (len(a) - 1)) ** 0.5
    mean_b = sum(b) / len(b)
    sd_b = (sum((x - mean_b) ** 2 for x in b) / (len(b) - 1)) ** 0.5
    summ = t_test((mean_a, sd_a, len(a)), (mean_b, sd_b, len(b)))
    assert raw.t == pytest.approx(summ.t) and raw.p == pytest.approx(summ.p)


def test_t_degenerate_zero_variance():
    r = t_test([5.0, 5.0], [7.0, 7.0])
    assert r.p == 0.0 and r.degenerate


# ---------------------------------------------------------------------------
# chi-square


def test_chi_square_independent_table():
    r = chi_square_test([[10, 10], [10, 10]])
    assert r.chi2 == 0.0 and r.p == 1.0


def test_chi_square_hand_case():
    r = chi_square_test([[10, 20], [20, 10]])
    assert r.chi2 == pytest.approx(20 / 3, abs=1e-12)
    assert r.df == 1
    assert r.p == pytest.approx(0.00982, abs=1e-4)


def test_chi_square_cohort_race_table():
    table = [[490, 6813], [286, 1237], [286, 2281],
             [237, 3071], [115, 1224], [69, 466]]
    r = chi_square_test(table)
    assert r.df == 5
    assert r.p < 0.001


def test_chi_square_zero_marginal_fatal():
    with pytest.raises(ValueError, match="column 1"):
        chi_square_test([[1, 0], [2, 0]])


def test_chi_square_matches_scipy():
    import scipy.stats as stats

    table = [[13, 25, 8], [22, 11, 19]]
    ours = chi_square_test(table)
    chi2, p, df, _ = stats.chi2_contingency(table, correction=False)
    assert ours.chi2 == pytest.approx(chi2, rel=1e-12)
    assert ours.df == df
    assert ours.p == pytest.approx(p, rel=1e-9)


@given(st.floats(min_value=0.01, max_value=50),
       st.floats(min_value=0.05, max_value=30),
       st.integers(min_value=1, max_value=10))
@settings(deadline=None)
def test_chi_square_p_monotone_in_statistic(x, delta, df):
    lo = regularized_gamma_q(df / 2, x / 2)
    hi = regularized_gamma_q(df / 2, (x + delta) / 2)
    assert hi <= lo + 1e-12


@given(st.lists(st.lists(st.integers(min_value=1, max_value=50),
                         min_size=2, max_size=5),
                min_size=2, max_size=5).filter(
    lambda rows: len({len(r) for r in rows}) == 1))
@settings(deadline=None, max_examples=60)
def test_chi_square_p_in_unit_interval(rows):
    r = chi_square_test(rows)
    assert 0.0 <= r.p <= 1.0
