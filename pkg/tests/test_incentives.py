import itertools
import random
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st
from sympy import Rational

from microcredit.core import Amount, Rate
from microcredit.incentives import (
    BuyerParams, IncentiveReport, MerchantParams, NoDeterrence, avoided_opportunity_cost,
    buyer_utilities, check_buyer_conditions, check_merchant_conditions, delta_threshold,
    discounted_loss, merchant_utilities, punishment_utility, suspension_loss, verify_buyer_ppe,
    verify_merchant_ppe,
)

import oracle

A = Amount.units


def same(frac, rat):
    return Rational(frac.numerator, frac.denominator) == rat


MERCHANT = MerchantParams(payments=[100], fees=[1], exec_costs=[2], rebates=[3], deferral_gains=[2],
                          late_penalties=[6], default_penalties=[20], stake_reward=A(5),
                          stake_cost=A(4), max_liability=A(2))

BUYER = BuyerParams(values=[120], payments=[100], deferral_gains=[3], late_penalties=[5], tx_rebate=A(2),
                    stake_reward=A(1), stake_cost=A(1), finance_cost=A(2), credit_reward=A(4),
                    credit_penalty=A(4), credit_limit=A(50), stake=A(30), credit_weight=Fraction(1, 2),
                    max_exposure=A(100), delta=Fraction(4, 5), opportunity_rate=Rate(50_000))


# -- merchants -------------------------------------------------------------------

def test_merchant_example_utilities():
    u = merchant_utilities(MERCHANT)
    assert u == (101, 97, 78)
    ref = oracle.merchant_rows([100], [1], [2], [3], [2], [6], [20], 5, 4)
    assert all(same(a, b) for a, b in zip(u, ref))


def test_merchant_zero_and_empty():
    assert merchant_utilities(MerchantParams()) == (0, 0, 0)
    assert merchant_utilities(MerchantParams(stake_reward=A(5), stake_cost=A(4))) == (1, 1, -4)


def test_merchant_conditions_example():
    rep = check_merchant_conditions(MERCHANT)
    assert rep["late_dominated"].margin == 4
    assert rep["liveness"].margin == 19  # 25 against 6
    assert rep["ordering"].holds
    assert rep["participation"].margin == 1
    assert rep.passed
    assert verify_merchant_ppe(MERCHANT)


def test_late_penalty_equal_to_outside_option_is_boundary():
    p = replace(MERCHANT, late_penalties=(A(2),))
    rep = check_merchant_conditions(p)
    c = rep["late_dominated"]
    assert not c.holds and c.margin == 0 and c.note == "boundary: fails strict"
    assert not rep.passed
    assert not verify_merchant_ppe(replace(MERCHANT, late_penalties=(A(1),)))


def test_participation_fails_by_one_micro_unit():
    # rebate lowered by 1 unit + 1 micro-unit turns a margin of 1 into -1 micro-unit
    p = replace(MERCHANT, rebates=(A(3) - A(1) - Amount(1),))
    rep = check_merchant_conditions(p)
    assert rep["participation"].margin == Fraction(-1, 10**6)
    assert not rep["participation"].holds


def test_reversed_liveness_fails_ppe():
    p = replace(MERCHANT, default_penalties=(A(0),), stake_reward=A(0), rebates=(A(0),))
    rep = check_merchant_conditions(p)
    assert not rep["liveness"].holds
    assert not verify_merchant_ppe(p)


def test_punishment_utility_withholds_rewards():
    assert punishment_utility(MERCHANT) == 101 - 3 - 5


amount_lists = st.lists(st.integers(0, 200), min_size=0, max_size=4)


@st.composite
def merchant_params(draw):
    n = draw(st.integers(0, 4))
    col = lambda: draw(st.lists(st.integers(0, 10**8), min_size=n, max_size=n))  # noqa: E731
    return MerchantParams(
        payments=[Amount(x) for x in col()], fees=[Amount(x) for x in col()],
        exec_costs=[Amount(x) for x in col()], rebates=[Amount(x) for x in col()],
        deferral_gains=[Amount(x) for x in col()], late_penalties=[Amount(x) for x in col()],
        default_penalties=[Amount(x) for x in col()],
        stake_reward=Amount(draw(st.integers(0, 10**8))), stake_cost=Amount(draw(st.integers(0, 10**8))))


def _units(xs):
    return [str(x) for x in xs]


@given(merchant_params())
def test_merchant_rows_match_oracle(p):
    ref = oracle.merchant_rows(_units(p.payments), _units(p.fees), _units(p.exec_costs), _units(p.rebates),
                               _units(p.deferral_gains), _units(p.late_penalties), _units(p.default_penalties),
                               str(p.stake_reward), str(p.stake_cost))
    assert all(same(a, b) for a, b in zip(merchant_utilities(p), ref))


@given(merchant_params())
def test_merchant_gap_identities(p):
    u = merchant_utilities(p)
    s = lambda xs: sum((x.as_units for x in xs), Fraction(0))  # noqa: E731
    assert u.conform - u.late == s(p.late_penalties) - s(p.deferral_gains)
    assert u.late - u.default == (p.stake_reward.as_units + s(p.default_penalties) + s(p.rebates)
                                  - s(p.exec_costs) - s(p.fees) - s(p.late_penalties))


# -- suspension loss -----------------------------------------------------------

def test_suspension_loss_example():
    closed, direct = suspension_loss(Fraction(9, 10), 3, A(10))
    assert closed == direct == Fraction(271, 10)
    assert same(closed, oracle.geometric_loss("9/10", 3, 10))


def test_suspension_loss_edges():
    assert suspension_loss(Fraction(1, 2), 0, A(10)) == (0, 0)
    assert suspension_loss(Fraction(0), 5, A(7)) == (7, 7)
    with pytest.raises(ValueError):
        suspension_loss(Fraction(1), 3, A(1))
    with pytest.raises(ValueError):
        suspension_loss(Fraction(1, 2), -1, A(1))


@given(st.fractions(min_value=0, max_value=Fraction(99, 100)), st.integers(0, 12),
       st.integers(0, 50), st.lists(st.integers(0, 30), min_size=12, max_size=12))
def test_constant_floor_bounds_any_larger_losses(delta, T, floor, extra):
    closed, direct = suspension_loss(delta, T, floor)
    assert closed == direct
    losses = [floor + e for e in extra[:T]]
    assert closed <= discounted_loss(delta, losses)


# -- buyers --------------------------------------------------------------------

def test_buyer_example_utilities():
    u = buyer_utilities(BUYER)
    assert u == (24, 14, 67)
    ref = oracle.buyer_rows([120], [100], [3], [5], 2, 1, 1, 2, 4, 4, 30, 50, "1/2")
    assert all(same(a, b) for a, b in zip(u, ref))
    assert u.default > u.conform  # one-shot temptation when under-collateralised


def test_buyer_zero_and_no_credit_weight():
    assert buyer_utilities(BuyerParams()) == (0, 0, 0)
    p = replace(BUYER, credit_weight=Fraction(0))
    q = replace(p, credit_reward=A(999), credit_penalty=A(999), credit_limit=A(999))
    assert buyer_utilities(p) == buyer_utilities(q)


def test_exposure_bound_enforced():
    with pytest.raises(ValueError):
        replace(BUYER, max_exposure=A(99))


def test_threshold_examples():
    t = delta_threshold(A(100), A(30), 24)
    assert t.value == Fraction(70, 94) and not t.over_collateralized
    assert same(t.value, oracle.threshold(100, 30, 24))
    assert delta_threshold(A(100), A(100), 5).value == 0
    over = delta_threshold(A(100), A(120), 5)
    assert over.value == 0 and over.over_collateralized
    with pytest.raises(NoDeterrence):
        delta_threshold(A(100), A(30), 0)


def test_threshold_brackets_continuation_inequality():
    t = Fraction(70, 94)
    for d, ok in ((t, True), (t + Fraction(1, 10**9), True), (t - Fraction(1, 10**9), False)):
        assert (d * 24 / (1 - d) >= 70) is ok


def test_threshold_monotone_on_grid():
    vals = range(1, 11)
    for v, s, u in itertools.product(vals, vals, vals):
        if v <= s:
            continue
        t = delta_threshold(v * 10, s, u).value
        assert delta_threshold(v * 10, s + 1, u).value <= t
        assert delta_threshold(v * 10, s, u + 1).value <= t
        assert delta_threshold(v * 10 + 1, s, u).value >= t


def test_buyer_conditions_example():
    rep = check_buyer_conditions(BUYER)
    assert rep["late_dominated"].margin == 2
    assert rep["default_deterred"].holds
    assert rep["continuation_covers_gain"].margin == 26  # 96 against 70
    assert rep["ordering"].holds
    assert verify_buyer_ppe(BUYER)


def test_buyer_conditions_low_delta():
    p = replace(BUYER, delta=Fraction(7, 10))
    rep = check_buyer_conditions(p)
    assert not rep["default_deterred"].holds
    assert rep["continuation_covers_gain"].margin == 56 - 70
    assert not verify_buyer_ppe(p)


def test_full_collateral_deters_at_any_delta():
    p = replace(BUYER, stake=A(100), delta=Fraction(0))
    assert check_buyer_conditions(p)["default_deterred"].holds


def test_participation_flip():
    cost = avoided_opportunity_cost(BUYER)
    assert cost == Fraction(14, 8760)
    at = replace(BUYER, finance_cost=A(Fraction(1598, 10**6)))
    above = replace(BUYER, finance_cost=A(Fraction(1599, 10**6)))
    assert check_buyer_conditions(at)["participation"].holds
    assert not check_buyer_conditions(above)["participation"].holds


@st.composite
def buyer_params(draw):
    n = draw(st.integers(0, 3))
    col = lambda hi: draw(st.lists(st.integers(0, hi), min_size=n, max_size=n))  # noqa: E731
    payments = col(10**8)
    amt = lambda: Amount(draw(st.integers(0, 10**8)))  # noqa: E731
    return BuyerParams(values=[Amount(x) for x in col(10**8)], payments=[Amount(x) for x in payments],
                       deferral_gains=[Amount(x) for x in col(10**7)], late_penalties=[Amount(x) for x in col(10**7)],
                       tx_rebate=amt(), stake_reward=amt(), stake_cost=amt(), finance_cost=amt(),
                       credit_reward=amt(), credit_penalty=amt(), credit_limit=amt(), stake=amt(),
                       credit_weight=draw(st.fractions(min_value=0, max_value=3, max_denominator=20)))


@given(buyer_params())
def test_buyer_rows_match_oracle(p):
    ref = oracle.buyer_rows(_units(p.values), _units(p.payments), _units(p.deferral_gains), _units(p.late_penalties),
                            str(p.tx_rebate), str(p.stake_reward), str(p.stake_cost), str(p.finance_cost),
                            str(p.credit_reward), str(p.credit_penalty), str(p.stake), str(p.credit_limit),
                            str(p.credit_weight))
    assert all(same(a, b) for a, b in zip(buyer_utilities(p), ref))


@given(buyer_params())
def test_buyer_gap_identity(p):
    u = buyer_utilities(p)
    s = lambda xs: sum((x.as_units for x in xs), Fraction(0))  # noqa: E731
    assert u.conform - u.late == (s(p.late_penalties) - s(p.deferral_gains) + p.tx_rebate.as_units
                                  + p.finance_cost.as_units
                                  + p.credit_weight * (p.credit_reward.as_units + p.credit_penalty.as_units))


def test_report_json_roundtrip():
    for rep in (check_merchant_conditions(MERCHANT), check_buyer_conditions(BUYER)):
        assert IncentiveReport.from_json(rep.to_json()) == rep
    assert check_buyer_conditions(BUYER).to_json()["conditions"][1]["margin"] == "13/235"
