"""Scenario model: invariants, generator determinism, balance properties."""
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppbsp import market
from ppbsp.fixedpoint import dsum
from ppbsp.market import (BUY, SELL, PriceSchedule, Scenario, SlotTruth, UserRecord,
                          _unchecked_schedule, generate, to_json, from_json,
                          users_per_supplier, validate)


def make_scenario(schedule=None, users=None, suppliers=("S_1",), slots=None):
    users = users if users is not None else (UserRecord("U_1", "S_1"),)
    if slots is None:
        slots = ((SlotTruth("U_1", Decimal("1"), Decimal("1"), True, BUY),),)
    return Scenario(users=tuple(users), suppliers=tuple(suppliers),
                    schedule=schedule or market.DEFAULT_SCHEDULE,
                    slots=tuple(slots), slots_per_billing_period=len(slots))


class TestPriceSchedule:
    def test_constructor_rejects_bad_ordering(self):
        with pytest.raises(ValueError):
            PriceSchedule(fit=Decimal("0.3"), tp=Decimal("0.2"), rp=Decimal("0.1"))

    def test_constructor_rejects_nonpositive_fit(self):
        with pytest.raises(ValueError):
            PriceSchedule(fit=Decimal("0"), tp=Decimal("0.1"), rp=Decimal("0.2"))

    def test_boundary_equalities_allowed(self):
        PriceSchedule(fit=Decimal("0.1"), tp=Decimal("0.1"), rp=Decimal("0.1"))

    def test_validate_reports_ordering_violation(self):
        bad = _unchecked_schedule(Decimal("0.3"), Decimal("0.2"), Decimal("0.1"))
        violations = validate(make_scenario(schedule=bad))
        assert any("PriceSchedule ordering" in v for v in violations)


class TestValidate:
    def test_well_formed(self):
        scenario = generate(seed=1, n_users=3, n_suppliers=1, n_slots=2,
                            deviation_spread="0.5")
        assert validate(scenario) == []

    def test_unknown_supplier_reference(self):
        scenario = make_scenario(users=(UserRecord("U_1", "S_9"),))
        violations = validate(scenario)
        assert any("unknown supplier S_9" in v for v in violations)

    def test_slot_coverage(self):
        scenario = make_scenario(
            users=(UserRecord("U_1", "S_1"), UserRecord("U_2", "S_1")),
            slots=((SlotTruth("U_1", Decimal(1), Decimal(1), True, BUY),),))
        assert any("does not cover every user" in v for v in validate(scenario))

    def test_negative_committed_volume(self):
        scenario = make_scenario(
            slots=((SlotTruth("U_1", Decimal("-1"), Decimal("1"), True, BUY),),))
        assert any("negative committed volume" in v for v in validate(scenario))

    def test_bad_bid_type(self):
        scenario = make_scenario(
            slots=((SlotTruth("U_1", Decimal("1"), Decimal("1"), True, 2),),))
        assert any("bid_type 2" in v for v in validate(scenario))

    def test_off_grid_value(self):
        scenario = make_scenario(
            slots=((SlotTruth("U_1", Decimal("0.0000001"), Decimal("1"), True, BUY),),))
        assert any("off the micro grid" in v for v in validate(scenario))


class TestGenerate:
    def test_deterministic(self):
        a = generate(seed=42, n_users=20, n_suppliers=3, n_slots=4, deviation_spread="2")
        b = generate(seed=42, n_users=20, n_suppliers=3, n_slots=4, deviation_spread="2")
        assert to_json(a) == to_json(b)

    def test_different_seed_differs(self):
        a = generate(seed=1, n_users=20, n_suppliers=3, n_slots=4, deviation_spread="2")
        b = generate(seed=2, n_users=20, n_suppliers=3, n_slots=4, deviation_spread="2")
        assert to_json(a) != to_json(b)

    def test_zero_spread_means_zero_deviations(self):
        scenario = generate(seed=3, n_users=10, n_suppliers=2, n_slots=3,
                            deviation_spread="0")
        assert all(t.deviation == 0 for slot in scenario.slots for t in slot)

    def test_supplier_partition(self):
        scenario = generate(seed=4, n_users=17, n_suppliers=5, n_slots=1,
                            deviation_spread="1")
        counts = {}
        for user in scenario.users:
            counts[user.supplier_id] = counts.get(user.supplier_id, 0) + 1
        assert sum(counts.values()) == 17
        for k, sid in enumerate(scenario.suppliers):
            assert counts.get(sid, 0) == users_per_supplier(17, 5, k)

    def test_full_market_partition_arithmetic(self):
        # 900k users over 30 suppliers: 30000 customers each
        assert all(users_per_supplier(900_000, 30, k) == 30_000 for k in range(30))
        assert sum(users_per_supplier(900_000, 30, k) for k in range(30)) == 900_000

    def test_accepted_volumes_balance(self):
        scenario = generate(seed=5, n_users=40, n_suppliers=4, n_slots=6,
                            deviation_spread="1.5")
        for slot in scenario.slots:
            bought = dsum(t.committed_volume for t in slot
                          if t.bid_accepted and t.bid_type == BUY)
            sold = dsum(t.committed_volume for t in slot
                        if t.bid_accepted and t.bid_type == SELL)
            assert bought == sold

    def test_committed_within_cap(self):
        scenario = generate(seed=6, n_users=30, n_suppliers=2, n_slots=3,
                            deviation_spread="1")
        for slot in scenario.slots:
            for t in slot:
                assert Decimal(0) <= t.committed_volume <= Decimal(10)

    def test_non_p2p_users(self):
        scenario = generate(seed=7, n_users=30, n_suppliers=2, n_slots=2,
                            deviation_spread="1", non_p2p_fraction=0.5)
        non_p2p = [u for u in scenario.users if not u.p2p_participant]
        assert non_p2p
        for slot in scenario.slots:
            for t in slot:
                if t.user_id in {u.user_id for u in non_p2p}:
                    assert not t.bid_accepted
                    assert t.committed_volume == 0

    def test_rejects_zero_users(self):
        with pytest.raises(ValueError):
            generate(seed=1, n_users=0, n_suppliers=0, n_slots=1, deviation_spread="1")

    def test_rejects_more_suppliers_than_users(self):
        with pytest.raises(ValueError):
            generate(seed=1, n_users=2, n_suppliers=3, n_slots=1, deviation_spread="1")

    @given(seed=st.integers(min_value=0, max_value=10**6))
    def test_generated_scenarios_validate(self, seed):
        scenario = generate(seed=seed, n_users=8, n_suppliers=3, n_slots=2,
                            deviation_spread="1.5", rejected_fraction=0.3)
        assert validate(scenario) == []


class TestJson:
    def test_roundtrip(self):
        scenario = generate(seed=11, n_users=12, n_suppliers=3, n_slots=3,
                            deviation_spread="0.7")
        assert from_json(to_json(scenario)) == scenario

    def test_decimal_strings(self):
        scenario = generate(seed=11, n_users=3, n_suppliers=1, n_slots=1,
                            deviation_spread="0.7")
        import json
        doc = json.loads(to_json(scenario))
        value = doc["slots"][0][0]["committed_volume"]
        assert isinstance(value, str)

    def test_rejects_foreign_format(self):
        with pytest.raises(ValueError):
            from_json('{"format": "something-else"}')

    def test_invalid_schedule_loads_and_reports(self):
        scenario = generate(seed=11, n_users=3, n_suppliers=1, n_slots=1,
                            deviation_spread="0")
        text = to_json(scenario).replace('"fit": "0.05"', '"fit": "0.99"')
        loaded = from_json(text)
        assert any("PriceSchedule ordering" in v for v in validate(loaded))
