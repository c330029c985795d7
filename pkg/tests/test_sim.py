import csv
import io
import json
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from microcredit import config as cfgio
from microcredit import incentives as inc
from microcredit.core import Action, Amount, Conduct, Outcome, Rate
from microcredit.sim import (
    STAGE, WORST_CASE, AlwaysConform, AlwaysLate, BuyerSpec, DefaultAtEpoch, Deviate, GrimConform,
    GuarantorSpec, MerchantSpec, ScenarioConfig, one_shot_deviation_scan, pair_scenario,
    parse_strategy, replay_trace, run_scenario, strategy_json, sweep_delta,
)

import oracle

A = Amount.units
CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BUYER = inc.BuyerParams(values=[120], payments=[100], deferral_gains=[3], late_penalties=[5], tx_rebate=A(2),
                        stake_reward=A(1), stake_cost=A(1), finance_cost=A(2), credit_reward=A(4),
                        credit_penalty=A(4), credit_limit=A(50), stake=A(30), credit_weight=Fraction(1, 2),
                        max_exposure=A(100), delta=Fraction(4, 5), opportunity_rate=Rate(50_000))
MERCHANT = inc.MerchantParams(payments=[100], fees=[1], exec_costs=[2], rebates=[3], deferral_gains=[2],
                              late_penalties=[6], default_penalties=[20], stake_reward=A(5),
                              stake_cost=A(4), max_liability=A(2))


def scenario(name):
    return cfgio.scenario_from_json(cfgio.load(CONFIGS / "scenarios" / f"{name}.json"))


def test_conform_three_epochs_closed_form():
    cfg = pair_scenario(BUYER, MERCHANT, horizon=3, delta=Fraction(9, 10))
    trace = run_scenario(cfg)
    ubar = inc.buyer_utilities(BUYER).conform
    d = Fraction(9, 10)
    assert trace.discounted["buyer"] == ubar * (1 + d + d * d)
    assert all(r.signal.outcome_of("buyer") is Outcome.PAID for r in trace.records)
    assert all(r.signal.outcome_of("merchant") is Outcome.DELIVERED for r in trace.records)


def test_single_epoch_equals_stage_game():
    for conduct, pick in ((Conduct.CONFORM, 0), (Conduct.LATE, 1), (Conduct.DEFAULT, 2)):
        strategies = {"buyer": Deviate(AlwaysConform(), 0, conduct), "merchant": Deviate(AlwaysConform(), 0, conduct)}
        trace = run_scenario(pair_scenario(BUYER, MERCHANT, horizon=1), strategies)
        assert trace.records[0].payoffs["buyer"] == inc.buyer_utilities(BUYER)[pick]
        assert trace.records[0].payoffs["merchant"] == inc.merchant_utilities(MERCHANT)[pick]


def test_default_at_zero_is_absorbing():
    trace = run_scenario(pair_scenario(BUYER, MERCHANT, horizon=4), {"buyer": DefaultAtEpoch(0)})
    first = trace.records[0]
    assert ("buyer", "buyer_default") in first.signal.penalties
    assert first.holdings_after["penalty_pool"] - first.holdings_before["penalty_pool"] == A(30)
    for r in trace.records[1:]:
        assert "buyer" not in r.actions
        assert r.kept == ()
        # the merchant refuses service: absent, zero stage payoff
        assert r.actions["merchant"] is None
        assert r.payoffs["merchant"] == 0
        assert r.payoffs["buyer"] == 0


def test_late_buyer_enters_punishment_and_recovers():
    s = replace(pair_scenario(BUYER, MERCHANT, horizon=9), delta=Fraction(9, 10))
    trace = run_scenario(s, {"buyer": Deviate(GrimConform(), 1, Conduct.LATE)})
    phases = [r.phases["buyer"] for r in trace.records]
    assert phases == ["Normal", "Normal", "Punishment(3)", "Punishment(2)", "Punishment(1)",
                      "Recovery(0)", "Recovery(1)", "Recovery(2)", "Recovery(3)"]
    pay = trace.payoffs("buyer")
    assert pay[1] == 14
    assert pay[2:5] == [24 - BUYER.suspended_rewards] * 3
    assert pay[5:] == [24] * 4


def test_determinism_and_replay():
    for name in ("conform", "late", "default", "merchant_default", "auction"):
        cfg = scenario(name)
        a, b = run_scenario(cfg), run_scenario(cfg)
        assert a.to_json() == b.to_json()
        assert a.to_csv() == b.to_csv()
        assert replay_trace(a) == a.signals


def test_conservation_in_bundled_scenarios():
    for name in ("conform", "late", "default", "merchant_default", "auction"):
        trace = run_scenario(scenario(name))
        assert all(r.conserved for r in trace.records), name


def test_auction_scenario_clears_every_epoch():
    trace = run_scenario(scenario("auction"))
    for r in trace.records:
        assert len(r.auctions) == 1
        out = r.auctions[0].outcome
        assert not out.failed
        assert out.winner.name == "g-low" and out.clearing == Rate(45_000)
    # the bidder that never reveals loses its lock while it can still afford to bid
    slashes = [("g-silent", "auction_slash") in r.signal.penalties for r in trace.records]
    assert slashes == [True, True, True]


def test_failed_auction_drops_the_payment():
    cfg = scenario("auction")
    cfg = replace(cfg, guarantors=tuple(replace(g, cost=Rate(90_000)) for g in cfg.guarantors))
    trace = run_scenario(cfg)
    assert all(r.kept == () for r in trace.records)
    assert all(r.auctions[0].outcome.failed for r in trace.records)


def test_csv_rows_per_agent():
    trace = run_scenario(scenario("conform"))
    rows = list(csv.DictReader(io.StringIO(trace.to_csv())))
    H = trace.config.horizon
    for agent in ("alice", "shop"):
        assert sum(1 for r in rows if r["agent"] == agent) == H
    assert sum(Fraction(r["discounted_payoff"]) for r in rows if r["agent"] == "alice") == trace.discounted["alice"]


def test_tail_bound_reported():
    trace = run_scenario(pair_scenario(BUYER, MERCHANT, horizon=3, delta=Fraction(1, 2)))
    assert trace.tail_bound["buyer"] == Fraction(1, 8) * 24 / Fraction(1, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        pair_scenario(BUYER, horizon=0)
    with pytest.raises(ValueError):
        pair_scenario(BUYER, delta=Fraction(1))
    with pytest.raises(ValueError):
        pair_scenario(BUYER, replace(MERCHANT, payments=(A(99),), fees=(A(1),)))


# -- deviation scans -------------------------------------------------------------

def test_buyer_default_gain_examples():
    for delta, expected in ((Fraction(4, 5), -26), (Fraction(7, 10), 14)):
        gains = one_shot_deviation_scan(pair_scenario(BUYER, delta=delta), "buyer", 0)
        assert gains[Conduct.DEFAULT] == expected
        assert oracle.deviation_gain(100, 30, 24, delta) == expected


def test_gain_does_not_depend_on_deviation_epoch():
    cfg = pair_scenario(BUYER, delta=Fraction(4, 5))
    g0 = one_shot_deviation_scan(cfg, "buyer", 0)
    g2 = one_shot_deviation_scan(cfg, "buyer", 2)
    assert g0 == g2


def test_merchant_late_gain_below_gap():
    cfg = pair_scenario(BUYER, MERCHANT, delta=Fraction(9, 10))
    gap = sum(p.as_units - s.as_units for p, s in zip(MERCHANT.late_penalties, MERCHANT.deferral_gains))
    for k in range(3):
        gains = one_shot_deviation_scan(cfg, "merchant", k, (Conduct.LATE,))
        assert gains[Conduct.LATE] <= -gap < 0


def test_scan_rejects_negative_epoch():
    with pytest.raises(ValueError):
        one_shot_deviation_scan(pair_scenario(BUYER), "buyer", -1)


def test_sweep_buyer_example():
    res = sweep_delta(pair_scenario(BUYER), Fraction(1, 100))
    assert res.analytic == Fraction(70, 94)
    assert res.empirical == Fraction(3, 4)
    assert Fraction(70, 94) <= res.empirical <= Fraction(70, 94) + Fraction(1, 100)
    i = res.grid.index(Fraction(74, 100))
    assert res.best[i] is Conduct.DEFAULT and res.best[i + 1] is Conduct.CONFORM
    assert res.brackets_analytic()


def test_sweep_full_collateral():
    res = sweep_delta(pair_scenario(replace(BUYER, stake=A(100))), Fraction(1, 10))
    assert res.analytic == 0 and res.empirical == 0
    assert all(b is Conduct.CONFORM for b in res.best)


def test_sweep_without_continuation_value():
    res = sweep_delta(pair_scenario(replace(BUYER, conforming_utility=Fraction(0))), Fraction(1, 20))
    assert res.analytic is None and res.empirical is None
    assert all(b is Conduct.DEFAULT for b in res.best)
    assert res.brackets_analytic()


def test_sweep_parallel_matches_serial():
    cfg = pair_scenario(BUYER)
    assert sweep_delta(cfg, Fraction(1, 10), workers=2) == sweep_delta(cfg, Fraction(1, 10))


@settings(max_examples=25, deadline=None)
@given(st.integers(40, 200), st.integers(0, 200), st.integers(0, 60),
       st.sampled_from([Fraction(1, 2), Fraction(7, 10), Fraction(4, 5), Fraction(19, 20)]))
def test_scan_agrees_with_ppe_check(vmax, stake, ubar, delta):
    p = replace(BUYER, values=(A(vmax + 20),), payments=(A(vmax),), max_exposure=A(vmax), stake=A(stake),
                conforming_utility=Fraction(ubar), delta=delta)
    gains = one_shot_deviation_scan(pair_scenario(p), "buyer", 0)
    assert inc.verify_buyer_ppe(p) == all(g <= 0 for g in gains.values())


# -- strategies ------------------------------------------------------------------

def test_strategies_read_only_public_history():
    assert AlwaysLate().decide(()) is Conduct.LATE
    assert DefaultAtEpoch(2).decide((None, None)) is Conduct.DEFAULT
    assert DefaultAtEpoch(2).decide((None,)) is Conduct.CONFORM


def test_strategy_json_roundtrip():
    for s in (AlwaysConform(), AlwaysLate(), GrimConform(), DefaultAtEpoch(3),
              Deviate(GrimConform(), 2, Conduct.LATE)):
        assert parse_strategy(strategy_json(s)) == s
    with pytest.raises(ValueError):
        parse_strategy("Tit4Tat")
