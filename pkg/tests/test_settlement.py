import itertools
import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from microcredit.auction import Cleared, StakeFate
from microcredit.commitment import LeafRecord, RootKind, build_tree, commit_batch
from microcredit.core import Action, AgentId, Amount, Conduct, EpochIndex, Outcome, Rate, Role, Transaction
from microcredit.settlement import (
    AccountClosed, AuctionSettlement, AuthStatus, BuyerAccount, BuyerTerms, MerchantAccount,
    MerchantTerms, Normal, Punishment, Recovery, SettlementConfig, SettlementState, TxTerms,
    UnprovenTransaction, authorize_payment, credit_update, parse_phase, settle_epoch, state_to_json,
    step_phase,
)

A = Amount.units
GOLDEN = Path(__file__).parent / "golden"

B1 = AgentId.from_label("b1", Role.BUYER)
B2 = AgentId.from_label("b2", Role.BUYER)
M = AgentId.from_label("m", Role.MERCHANT)
G = AgentId.from_label("g", Role.GUARANTOR)


# -- authorisation ---------------------------------------------------------------

def test_authorize_within_limit():
    auth, acct = authorize_payment(BuyerAccount(A(30), A(100), used=A(40)), A(50))
    assert auth.status is AuthStatus.APPROVED and acct.used == A(90)


def test_authorize_over_limit():
    acct = BuyerAccount(A(30), A(100), used=A(90))
    auth, after = authorize_payment(acct, A(30))
    assert auth.status is AuthStatus.OVER_LIMIT and auth.deficit == A(20)
    assert after == acct


def test_authorize_misuse():
    auth, after = authorize_payment(BuyerAccount(A(30), A(100), used=A(90)), A(60))
    assert auth.status is AuthStatus.REJECTED and auth.reason == "Misuse"
    assert after.misuse_flags == 1 and after.used == A(90)


def test_authorize_closed_account():
    with pytest.raises(AccountClosed):
        authorize_payment(BuyerAccount(A(0), A(0), alive=False), A(1))


@given(st.integers(0, 10**9), st.integers(0, 10**9), st.integers(1, 10**9))
def test_used_never_exceeds_limit_without_flag(cl, used, amount):
    used = min(used, cl)
    auth, acct = authorize_payment(BuyerAccount(A(0), Amount(cl), used=Amount(used)), Amount(amount))
    assert acct.used <= acct.credit_limit or acct.misuse_flags > 0
    if auth.status is AuthStatus.OVER_LIMIT:
        assert 4 * auth.deficit.micros <= cl


# -- phases --------------------------------------------------------------------

def test_phase_examples():
    assert step_phase(Punishment(1), True) == Recovery(0)
    assert step_phase(Recovery(2), False, T_pun=3) == Punishment(3)
    assert step_phase(Normal(), True) == Normal()
    assert step_phase(Recovery(3), True, R_max=3) == Normal()
    assert step_phase(Normal(), False, T_pun=0) == Recovery(0)


def _phases(T, R):
    return [Normal()] + [Punishment(k) for k in range(1, T + 1)] + [Recovery(l) for l in range(R + 1)]


@pytest.mark.parametrize("T,R", [(1, 0), (3, 3), (2, 5)])
def test_phase_machine_exhaustive(T, R):
    states = _phases(T, R)
    for s in states:
        assert step_phase(s, False, T, R) == Punishment(T)
        nxt = step_phase(s, True, T, R)
        assert nxt in states
    # from any state, conforming returns to Normal in at most T + R + 1 steps, never later
    for s in states:
        cur, steps = s, 0
        while cur != Normal():
            cur = step_phase(cur, True, T, R)
            steps += 1
            assert steps <= T + R + 1


def test_phase_text_roundtrip():
    for p in _phases(3, 3):
        assert parse_phase(str(p)) == p


# -- credit --------------------------------------------------------------------

def test_credit_update_examples():
    cfg = SettlementConfig(credit_max=A(120))
    assert credit_update(BuyerAccount(A(0), A(100)), Conduct.CONFORM, A(4), A(4), cfg) == A(104)
    assert credit_update(BuyerAccount(A(0), A(118)), Conduct.CONFORM, A(4), A(4), cfg) == A(120)
    assert credit_update(BuyerAccount(A(0), A(3)), Conduct.LATE, A(4), A(4)) == A(0)
    assert credit_update(BuyerAccount(A(0), A(100)), Conduct.DEFAULT, A(4), A(4)) == A(0)
    with pytest.raises(AccountClosed):
        credit_update(BuyerAccount(A(0), A(0), alive=False), Conduct.CONFORM, A(1), A(1))


# -- settlement ----------------------------------------------------------------

def make_state(buyers=(B1,), stake=A(30), cl=A(50), mstake=A(20), terms=None, phase=Normal()):
    return SettlementState(
        EpochIndex(0),
        {b: BuyerAccount(stake, cl, phase=phase) for b in buyers},
        {M: MerchantAccount(mstake, phase=phase)},
        {b: A(500) for b in buyers} | {M: A(500), G: A(500)},
        guarantor_stakes={G: A(50)},
        reward_pool=A(1000),
        buyer_terms={b: BuyerTerms(A(2), A(1), A(4), A(4)) for b in buyers},
        merchant_terms={M: MerchantTerms(A(5))},
        tx_terms=terms or {},
    )


def txs_for(buyers, payment=A(40), n=1):
    return [Transaction.make(b, M, payment, payment + A(10), EpochIndex(0), k) for b in buyers for k in range(n)]


def proven(txs):
    root, tree = commit_batch([LeafRecord.from_transaction(t) for t in txs], RootKind.TX, EpochIndex(0))
    return root, tuple((t, tree.prove(i)) for i, t in enumerate(txs)) if tree else ()


def terms(txs, fee=A(1), rebate=A(3), plm=A(6), pdm=A(20), plb=A(5)):
    return {t.id: TxTerms(fee, rebate, plm, pdm, plb) for t in txs}


def test_all_conform():
    txs = txs_for([B1])
    state = make_state(terms=terms(txs))
    root, pv = proven(txs)
    new, outcomes, signal = settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.DELIVER_ON_TIME}, pv, root)
    assert signal.penalties == ()
    assert signal.outcome_of("b1") is Outcome.PAID
    assert new.buyers[B1].trust == 1 and new.merchants[M].trust == 1
    assert new.buyers[B1].credit_limit == A(54)
    assert new.total_value() == state.total_value()
    assert new.epoch == EpochIndex(1)


def test_buyer_default_confiscates():
    txs = txs_for([B1])
    state = make_state(terms=terms(txs))
    root, pv = proven(txs)
    new, _, signal = settle_epoch(state, {B1: Action.DEFAULT, M: Action.DELIVER_ON_TIME}, pv, root)
    acct = new.buyers[B1]
    assert (acct.stake, acct.credit_limit, acct.alive) == (A(0), A(0), False)
    assert new.penalty_pool == A(30)
    assert ("b1", "buyer_default") in signal.penalties
    assert new.total_value() == state.total_value()
    # absorbed: no further authorisation, no further outcomes
    with pytest.raises(AccountClosed):
        authorize_payment(acct, A(1))
    new2, outcomes2, _ = settle_epoch(new, {M: Action.DELIVER_ON_TIME}, (), None)
    assert all(o.agent != B1 for o in outcomes2)
    with pytest.raises(AccountClosed):
        settle_epoch(new, {B1: Action.PAY_ON_TIME}, (), None)


def test_merchant_late_on_all_transactions():
    txs = txs_for([B1], n=3)
    state = make_state(cl=A(200), terms=terms(txs))
    root, pv = proven(txs)
    new, outcomes, _ = settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.LATE_DELIVER}, pv, root)
    mo = next(o for o in outcomes if o.agent == M)
    assert [n for n, _ in mo.penalties] == ["late_delivery"] * 3
    assert mo.total_penalties == A(18)  # 3 x P_LM
    assert new.merchants[M].phase == Punishment(3)
    assert new.penalty_pool == A(18)


def test_merchant_default_capped_by_stake():
    txs = txs_for([B1], n=2)
    state = make_state(cl=A(200), mstake=A(30), terms=terms(txs))
    root, pv = proven(txs)
    new, _, signal = settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.FAIL_TO_DELIVER}, pv, root)
    assert new.penalty_pool == A(30)  # 2 x 20 due, only 30 staked
    assert not new.merchants[M].alive
    assert signal.outcome_of("m") is Outcome.FAILED


def test_rewards_suspended_in_punishment():
    txs = txs_for([B1])
    state = make_state(terms=terms(txs), phase=Punishment(2))
    root, pv = proven(txs)
    new, outcomes, _ = settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.DELIVER_ON_TIME}, pv, root)
    assert all(o.rewards == () for o in outcomes)
    assert new.buyers[B1].credit_limit == A(50)
    assert new.buyers[B1].trust == 0  # no regeneration while punished
    assert new.buyers[B1].phase == Punishment(1)


def test_unproven_transaction_rejected():
    txs = txs_for([B1])
    state = make_state(terms=terms(txs))
    root, pv = proven(txs)
    other = Transaction.make(B1, M, A(41), A(50), EpochIndex(0), 0)
    with pytest.raises(UnprovenTransaction):
        settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.DELIVER_ON_TIME}, ((other, pv[0][1]),), root)
    with pytest.raises(UnprovenTransaction):
        settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.DELIVER_ON_TIME}, ((txs[0], None),), root)


def test_auction_funded_payment_flows():
    txs = txs_for([B1], payment=A(60))
    state = make_state(terms=terms(txs))
    root, pv = proven(txs)
    cleared = Cleared(G, Rate.bps(500), G, M, A(10), A(10) + Amount(228), ((G, StakeFate.RELEASED_ON_COMPLETION, A(10)),))
    au = (AuctionSettlement(txs[0].id, B1, cleared),)
    new, _, _ = settle_epoch(state, {B1: Action.PAY_ON_TIME, M: Action.DELIVER_ON_TIME}, pv, root, au)
    assert new.balances[G] == A(500) + Amount(228)
    assert new.balances[B1] == A(500) - A(60) - Amount(228) + A(2) + A(1)
    assert new.total_value() == state.total_value()


actions = st.sampled_from([Conduct.CONFORM, Conduct.LATE, Conduct.DEFAULT, None])


@settings(max_examples=150, deadline=None)
@given(actions, actions, actions, st.integers(1, 3), st.sampled_from([Normal(), Punishment(2), Recovery(1)]),
       st.integers(0, 40))
def test_conservation_and_trust_bounds(c1, c2, cm, n, phase, mstake):
    active = [b for b, c in ((B1, c1), (B2, c2)) if c is not None]
    if cm is None:
        active = []
    txs = txs_for(active, payment=A(7), n=n)
    state = make_state(buyers=(B1, B2), cl=A(100), mstake=A(mstake), terms=terms(txs), phase=phase)
    root, pv = proven(txs)
    acts = {}
    for agent, role, c in ((B1, Role.BUYER, c1), (B2, Role.BUYER, c2), (M, Role.MERCHANT, cm)):
        acts[agent] = None if c is None else Action.of(role, c)
    new, outcomes, signal = settle_epoch(state, acts, pv, root)
    assert new.total_value() == state.total_value()
    for acct in list(new.buyers.values()) + list(new.merchants.values()):
        assert 0 <= acct.trust <= state.config.trust_max
        assert acct.stake.micros >= 0
    if isinstance(phase, Punishment):
        assert all(o.rewards == () for o in outcomes)
    # determinism
    assert settle_epoch(state, acts, pv, root) == (new, outcomes, signal)


def test_golden_snapshot():
    txs = txs_for([B1, B2], payment=A(12), n=2)
    state = make_state(buyers=(B1, B2), cl=A(100), terms=terms(txs))
    root, pv = proven(txs)
    new, _, signal = settle_epoch(state, {B1: Action.LATE_PAY, B2: Action.DEFAULT, M: Action.DELIVER_ON_TIME},
                                  pv, root)
    got = {"state": state_to_json(new), "signal": signal.to_json()}
    path = GOLDEN / "settle_late_and_default.json"
    assert got == json.loads(path.read_text())
