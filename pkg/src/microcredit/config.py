"""JSON configuration files for parameter sets and scenarios.

Every file carries ``"schema": 1``.  Money is a decimal string in units
(``"0.031963"``), ratios are strings (``"4/5"`` or ``"0.8"``), and rates are
integer ppm.  JSON floats are refused so nothing is silently rounded.
"""
from __future__ import annotations

import json
from decimal import InvalidOperation
from fractions import Fraction
from pathlib import Path

from . import incentives as inc
from . import sim
from .core import Amount, Rate, format_ratio, parse_ratio
from .settlement import SettlementConfig

SCHEMA = 1


class ConfigError(ValueError):
    """Malformed input; ``where`` points at the offending field or line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def _amount(v, where):
    if v is None:
        return None
    if isinstance(v, bool) or isinstance(v, float):
        raise ConfigError(where, "amounts must be decimal strings or integers, not floats")
    try:
        return Amount.units(v if isinstance(v, (int, str)) else str(v))
    except (ValueError, TypeError, InvalidOperation, ZeroDivisionError) as e:
        raise ConfigError(where, f"bad amount {v!r} ({e})") from None


def _amounts(v, where):
    if not isinstance(v, list):
        raise ConfigError(where, "expected a list of amounts")
    return tuple(_amount(x, f"{where}[{i}]") for i, x in enumerate(v))


def _ratio(v, where):
    if v is None:
        return None
    if isinstance(v, (bool, float)):
        raise ConfigError(where, "ratios must be strings like '4/5', not floats")
    try:
        return parse_ratio(v)
    except (ValueError, TypeError, InvalidOperation, ZeroDivisionError) as e:
        raise ConfigError(where, f"bad ratio {v!r} ({e})") from None


def _int(v, where, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(where, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(where, f"must be at least {minimum}")
    return v


def _rate(v, where):
    try:
        return Rate(_int(v, where, 0))
    except ValueError as e:
        raise ConfigError(where, str(e)) from None


def _object(v, where):
    if not isinstance(v, dict):
        raise ConfigError(where, "expected an object")
    return v


def _reject_unknown(d, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(where, f"unknown field(s) {', '.join(extra)}")


MERCHANT_LISTS = ("payments", "fees", "exec_costs", "rebates", "deferral_gains", "late_penalties",
                  "default_penalties")
MERCHANT_AMOUNTS = ("stake_reward", "stake_cost", "max_liability", "loss_floor")
BUYER_LISTS = ("values", "payments", "deferral_gains", "late_penalties")
BUYER_AMOUNTS = ("tx_rebate", "stake_reward", "stake_cost", "finance_cost", "credit_reward",
                 "credit_penalty", "credit_limit", "stake", "max_exposure")


def merchant_params(d, where="params") -> inc.MerchantParams:
    d = _object(d, where)
    _reject_unknown(d, MERCHANT_LISTS + MERCHANT_AMOUNTS + ("punishment_epochs", "delta"), where)
    kw = {k: _amounts(d.get(k, []), f"{where}.{k}") for k in MERCHANT_LISTS}
    for k in MERCHANT_AMOUNTS:
        if k in d:
            kw[k] = _amount(d[k], f"{where}.{k}")
    if "punishment_epochs" in d:
        kw["punishment_epochs"] = _int(d["punishment_epochs"], f"{where}.punishment_epochs", 0)
    if "delta" in d:
        kw["delta"] = _ratio(d["delta"], f"{where}.delta")
    try:
        return inc.MerchantParams(**kw)
    except ValueError as e:
        raise ConfigError(where, str(e)) from None


def buyer_params(d, where="params") -> inc.BuyerParams:
    d = _object(d, where)
    _reject_unknown(d, BUYER_LISTS + BUYER_AMOUNTS
                    + ("credit_weight", "conforming_utility", "delta", "opportunity_rate_ppm"), where)
    kw = {k: _amounts(d.get(k, []), f"{where}.{k}") for k in BUYER_LISTS}
    for k in BUYER_AMOUNTS:
        if k in d:
            kw[k] = _amount(d[k], f"{where}.{k}")
    for k in ("credit_weight", "conforming_utility", "delta"):
        if k in d:
            kw[k] = _ratio(d[k], f"{where}.{k}")
    if "opportunity_rate_ppm" in d:
        kw["opportunity_rate"] = _rate(d["opportunity_rate_ppm"], f"{where}.opportunity_rate_ppm")
    try:
        return inc.BuyerParams(**kw)
    except ValueError as e:
        raise ConfigError(where, str(e)) from None


def _fmt_amount(a):
    return None if a is None else str(a)


def merchant_params_json(p: inc.MerchantParams) -> dict:
    out = {k: [str(x) for x in getattr(p, k)] for k in MERCHANT_LISTS}
    for k in MERCHANT_AMOUNTS:
        if getattr(p, k) is not None:
            out[k] = str(getattr(p, k))
    out["punishment_epochs"] = p.punishment_epochs
    out["delta"] = format_ratio(p.delta)
    return out


def buyer_params_json(p: inc.BuyerParams) -> dict:
    out = {k: [str(x) for x in getattr(p, k)] for k in BUYER_LISTS}
    for k in BUYER_AMOUNTS:
        if getattr(p, k) is not None:
            out[k] = str(getattr(p, k))
    out["credit_weight"] = format_ratio(p.credit_weight)
    if p.conforming_utility is not None:
        out["conforming_utility"] = format_ratio(p.conforming_utility)
    out["delta"] = format_ratio(p.delta)
    out["opportunity_rate_ppm"] = p.opportunity_rate.ppm
    return out


def _check_schema(d, where="$"):
    d = _object(d, where)
    if d.get("schema") != SCHEMA:
        raise ConfigError(f"{where}.schema", f"expected schema {SCHEMA}, got {d.get('schema')!r}")
    return d


def _no_floats(text):
    def reject(s):
        raise ValueError(f"float literal {s} not allowed")
    return json.loads(text, parse_float=reject)


def loads(text: str, source: str = "<input>"):
    try:
        return _no_floats(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}", e.msg) from None
    except ValueError as e:
        raise ConfigError(source, f"{e}; write numbers as strings") from None


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(path), e.strerror or str(e)) from None
    return loads(text, str(path))


def params_from_json(d):
    """``{"schema": 1, "role": "merchant"|"buyer", "params": {...}}``."""
    d = _check_schema(d)
    _reject_unknown(d, ("schema", "role", "params"), "$")
    role = d.get("role")
    if role == "merchant":
        return merchant_params(d.get("params"), "$.params")
    if role == "buyer":
        return buyer_params(d.get("params"), "$.params")
    raise ConfigError("$.role", f"expected 'merchant' or 'buyer', got {role!r}")


def params_to_json(p) -> dict:
    if isinstance(p, inc.MerchantParams):
        return {"schema": SCHEMA, "role": "merchant", "params": merchant_params_json(p)}
    return {"schema": SCHEMA, "role": "buyer", "params": buyer_params_json(p)}


def _strategy(v, where):
    try:
        return sim.parse_strategy(v)
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(where, str(e)) from None


SETTLEMENT_FIELDS = ("trust_max", "punishment_epochs", "recovery_levels", "risk_bound",
                     "credit_max", "credit_min", "cure_hours", "window_hours")


def settlement_config(d, where="$.settlement") -> SettlementConfig:
    d = _object(d, where)
    _reject_unknown(d, SETTLEMENT_FIELDS, where)
    kw = {}
    for k in ("trust_max", "punishment_epochs", "recovery_levels", "cure_hours", "window_hours"):
        if k in d:
            kw[k] = _int(d[k], f"{where}.{k}", 0)
    if "risk_bound" in d:
        kw["risk_bound"] = _ratio(d["risk_bound"], f"{where}.risk_bound")
    for k in ("credit_max", "credit_min"):
        if k in d:
            kw[k] = _amount(d[k], f"{where}.{k}")
    return SettlementConfig(**kw)


def scenario_from_json(d, horizon=None) -> sim.ScenarioConfig:
    d = _check_schema(d)
    _reject_unknown(d, ("schema", "name", "horizon", "delta", "payoff_model", "auction_cap_ppm",
                        "reward_pool", "settlement", "merchants", "buyers", "guarantors"), "$")
    merchants = []
    for i, m in enumerate(d.get("merchants", [])):
        w = f"$.merchants[{i}]"
        m = _object(m, w)
        _reject_unknown(m, ("name", "params", "strategy", "balance", "stake"), w)
        merchants.append(sim.MerchantSpec(
            str(m.get("name", f"merchant{i}")), merchant_params(m.get("params", {}), f"{w}.params"),
            _strategy(m.get("strategy", "GrimConform"), f"{w}.strategy"),
            _amount(m.get("balance", 0), f"{w}.balance"), _amount(m.get("stake"), f"{w}.stake")))
    buyers = []
    for i, b in enumerate(d.get("buyers", [])):
        w = f"$.buyers[{i}]"
        b = _object(b, w)
        _reject_unknown(b, ("name", "merchant", "params", "strategy", "balance", "credit_limit"), w)
        if "merchant" not in b:
            raise ConfigError(f"{w}.merchant", "missing")
        buyers.append(sim.BuyerSpec(
            str(b.get("name", f"buyer{i}")), str(b["merchant"]),
            buyer_params(b.get("params", {}), f"{w}.params"),
            _strategy(b.get("strategy", "GrimConform"), f"{w}.strategy"),
            _amount(b.get("balance", 0), f"{w}.balance"), _amount(b.get("credit_limit"), f"{w}.credit_limit")))
    guarantors = []
    for i, g in enumerate(d.get("guarantors", [])):
        w = f"$.guarantors[{i}]"
        g = _object(g, w)
        _reject_unknown(g, ("name", "cost_ppm", "stake", "balance", "reveals"), w)
        guarantors.append(sim.GuarantorSpec(
            str(g.get("name", f"guarantor{i}")), _rate(g.get("cost_ppm"), f"{w}.cost_ppm"),
            _amount(g.get("stake", 0), f"{w}.stake"), _amount(g.get("balance", 0), f"{w}.balance"),
            bool(g.get("reveals", True))))
    kw = {}
    if horizon is not None:
        kw["horizon"] = horizon
    elif "horizon" in d:
        kw["horizon"] = _int(d["horizon"], "$.horizon")
    if "delta" in d:
        kw["delta"] = _ratio(d["delta"], "$.delta")
    if "payoff_model" in d:
        kw["payoff_model"] = d["payoff_model"]
    if "auction_cap_ppm" in d:
        kw["auction_cap"] = _rate(d["auction_cap_ppm"], "$.auction_cap_ppm")
    if "reward_pool" in d:
        kw["reward_pool"] = _amount(d["reward_pool"], "$.reward_pool")
    if "settlement" in d:
        kw["settlement"] = settlement_config(d["settlement"])
    if not buyers or not merchants:
        raise ConfigError("$", "a scenario needs at least one buyer and one merchant")
    try:
        return sim.ScenarioConfig(tuple(buyers), tuple(merchants), tuple(guarantors), **kw)
    except ValueError as e:
        raise ConfigError("$", str(e)) from None


def scenario_to_json(c: sim.ScenarioConfig) -> dict:
    s = c.settlement
    settlement = {"trust_max": s.trust_max, "punishment_epochs": s.punishment_epochs,
                  "recovery_levels": s.recovery_levels, "risk_bound": format_ratio(s.risk_bound),
                  "credit_min": str(s.credit_min), "cure_hours": s.cure_hours,
                  "window_hours": s.window_hours}
    if s.credit_max is not None:
        settlement["credit_max"] = str(s.credit_max)
    return {
        "schema": SCHEMA,
        "horizon": c.horizon,
        "delta": format_ratio(c.delta),
        "payoff_model": c.payoff_model,
        "auction_cap_ppm": c.auction_cap.ppm,
        "reward_pool": str(c.reward_pool),
        "settlement": settlement,
        "merchants": [{"name": m.name, "params": merchant_params_json(m.params),
                       "strategy": sim.strategy_json(m.strategy), "balance": str(m.balance),
                       **({"stake": str(m.stake)} if m.stake is not None else {})}
                      for m in c.merchants],
        "buyers": [{"name": b.name, "merchant": b.merchant, "params": buyer_params_json(b.params),
                    "strategy": sim.strategy_json(b.strategy), "balance": str(b.balance),
                    **({"credit_limit": str(b.credit_limit)} if b.credit_limit is not None else {})}
                   for b in c.buyers],
        "guarantors": [{"name": g.name, "cost_ppm": g.cost.ppm, "stake": str(g.stake),
                        "balance": str(g.balance), "reveals": g.reveals} for g in c.guarantors],
    }


def load_any(path, horizon=None):
    """Parameter file or scenario file, whichever ``path`` holds."""
    d = load(path)
    if isinstance(d, dict) and "role" in d:
        return params_from_json(d)
    return scenario_from_json(d, horizon)
