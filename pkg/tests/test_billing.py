"""Billing models: worked examples, oracle equivalence, conservation."""
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppbsp import billing, market, meter, ops, phe, settlement
from ppbsp.billing import (AddressedPayload, BillingModel, KeyDomain,
                           PlainAggregates, bill_slot, oracle_bill, rm_volume)
from ppbsp.fixedpoint import as_fraction
from ppbsp.market import BUY, SELL, DEFAULT_SCHEDULE, SlotTruth

MICRO = Decimal("0.000001")


@pytest.fixture(scope="module")
def keys():
    """Two suppliers and a grid operator at test key size."""
    suppliers = {"S_1": phe.keygen(256), "S_2": phe.keygen(256)}
    gridop = phe.keygen(256)
    return suppliers, gridop


def truth(uid, committed, reading, accepted=True, bid_type=BUY):
    return SlotTruth(user_id=uid, committed_volume=Decimal(committed),
                     meter_reading=Decimal(reading), bid_accepted=accepted,
                     bid_type=bid_type)


def consumer(uid, committed, deviation, accepted=True):
    reading = Decimal(committed) + Decimal(deviation)
    return truth(uid, committed, reading, accepted, BUY)


def prosumer(uid, committed, deviation, accepted=True):
    reading = -(Decimal(committed) + Decimal(deviation))
    return truth(uid, committed, reading, accepted, SELL)


def run_both_domains(model, truths, keys, supplier_of, workers=1):
    """Build payloads, bill in both key domains, decrypt everything."""
    suppliers, (grid_pk, grid_sk) = keys
    payloads = []
    for t in truths:
        sup_pk, _ = suppliers[supplier_of[t.user_id]]
        payloads.append(AddressedPayload(t.user_id, supplier_of[t.user_id],
                                         meter.build_payload(t, sup_pk, grid_pk)))
    aggregates = PlainAggregates.from_truths(truths)
    supplier_pk_map = {sid: kp[0] for sid, kp in suppliers.items()}
    gridop_pk_map = {sid: grid_pk for sid in suppliers}
    out_sup = bill_slot(model, payloads, DEFAULT_SCHEDULE, KeyDomain.SUPPLIER,
                        supplier_pk_map, aggregates=aggregates, workers=workers)
    out_grid = bill_slot(model, payloads, DEFAULT_SCHEDULE, KeyDomain.GRID_OPERATOR,
                         gridop_pk_map, aggregates=aggregates, workers=workers)

    def decrypt_run(output, sk_for_user, sk_for_supplier):
        bills = {uid: phe.decrypt_to_decimal(sk_for_user(uid), ct)
                 for uid, ct in output.bill_or_reward.items()}
        balances = {sid: phe.decrypt_to_decimal(sk_for_supplier(sid), ct)
                    for sid, ct in output.balance.items()}
        return bills, balances

    sup_bills, sup_balances = decrypt_run(
        out_sup, lambda uid: suppliers[supplier_of[uid]][1], lambda sid: suppliers[sid][1])
    grid_bills, grid_balances = decrypt_run(
        out_grid, lambda uid: grid_sk, lambda sid: grid_sk)
    return (sup_bills, sup_balances), (grid_bills, grid_balances)


def single_supplier_map(truths):
    return {t.user_id: "S_1" for t in truths}


class TestStatusQuoExamples:
    def test_net_buyer_at_rp(self, keys):
        truths = [truth("U_1", "0", "5", accepted=False)]
        (bills, balances), _ = run_both_domains(BillingModel.STATUS_QUO, truths,
                                                keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("1.00")
        assert balances["S_1"] == Decimal("1.00")

    def test_net_seller_at_fit(self, keys):
        truths = [truth("U_1", "0", "-2", accepted=False)]
        (bills, balances), _ = run_both_domains(BillingModel.STATUS_QUO, truths,
                                                keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("-0.10")
        assert balances["S_1"] == Decimal("-0.10")

    def test_zero_reading(self, keys):
        truths = [truth("U_1", "0", "0", accepted=False)]
        (bills, balances), _ = run_both_domains(BillingModel.STATUS_QUO, truths,
                                                keys, single_supplier_map(truths))
        assert bills["U_1"] == 0
        assert balances["S_1"] == 0

    def test_p2p_payload_reconstruction(self, keys):
        # committed/deviation split reconstructs the reading: 3 + 1 = 4 kWh at RP
        truths = [consumer("U_1", "3", "1")]
        (bills, _), _ = run_both_domains(BillingModel.STATUS_QUO, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("0.80")

    def test_prosumer_net_importer_negation(self, keys):
        # sell bid but net import of 4 kWh: billed as net buyer
        truths = [truth("U_1", "3", "4", accepted=False, bid_type=SELL)]
        (bills, _), _ = run_both_domains(BillingModel.STATUS_QUO, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("0.80")


class TestIndividualExamples:
    def test_consumer_over(self, keys):
        truths = [consumer("U_1", "3", "1")]
        (bills, _), _ = run_both_domains(BillingModel.INDIVIDUAL, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("0.50")   # 3*0.10 + 1*0.20

    def test_consumer_under(self, keys):
        truths = [consumer("U_1", "3", "-1")]
        (bills, _), _ = run_both_domains(BillingModel.INDIVIDUAL, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("0.25")   # 3*0.10 - 1*0.05

    def test_prosumer_under(self, keys):
        truths = [prosumer("U_1", "3", "-1")]
        (bills, _), _ = run_both_domains(BillingModel.INDIVIDUAL, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("-0.10")  # -(3*0.10 - 1*0.20)

    def test_prosumer_over(self, keys):
        truths = [prosumer("U_1", "3", "1")]
        (bills, _), _ = run_both_domains(BillingModel.INDIVIDUAL, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("-0.35")  # -(3*0.10 + 1*0.05)

    def test_zero_deviation_both_sides(self, keys):
        truths = [consumer("U_1", "3", "0"), prosumer("U_2", "3", "0")]
        (bills, balances), _ = run_both_domains(BillingModel.INDIVIDUAL, truths,
                                                keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("0.30")
        assert bills["U_2"] == Decimal("-0.30")
        assert balances["S_1"] == 0


class TestSocialExamples:
    # consumers committed 3 each with deviations -1, +1, +2:
    # TDD = +2, T_c_under = 1, T_c_over = 3
    TRUTHS = [consumer("U_1", "3", "-1"), consumer("U_2", "3", "1"),
              consumer("U_3", "3", "2")]

    def test_aggregates(self):
        aggs = PlainAggregates.from_truths(self.TRUTHS)
        assert (aggs.t_c_under, aggs.t_c_over) == (1, 3)
        assert aggs.tdd == 2

    def test_bills(self, keys):
        (bills, _), _ = run_both_domains(BillingModel.SOCIAL, self.TRUTHS,
                                         keys, single_supplier_map(self.TRUTHS))
        assert bills["U_1"] == Decimal("0.20")                      # (3-1)*0.10
        assert abs(bills["U_2"] - Decimal("0.466667")) <= MICRO     # (3+1/3)*0.10 + (2/3)*0.20
        assert abs(bills["U_3"] - Decimal("0.633334")) <= MICRO     # (3+2/3)*0.10 + 2*(2/3)*0.20

    def test_bill_conservation_identity(self, keys):
        # sum of bills = 9*TP + TDD*RP = 1.30
        (bills, _), _ = run_both_domains(BillingModel.SOCIAL, self.TRUTHS,
                                         keys, single_supplier_map(self.TRUTHS))
        assert abs(sum(bills.values()) - Decimal("1.30")) <= MICRO

    def test_prosumer_mirror(self, keys):
        # prosumers committed 3 each, deviations -1, +1, +2: TSD = +2
        truths = [prosumer("U_1", "3", "-1"), prosumer("U_2", "3", "1"),
                  prosumer("U_3", "3", "2")]
        (bills, _), _ = run_both_domains(BillingModel.SOCIAL, truths,
                                         keys, single_supplier_map(truths))
        # under-supplier sells actual at TP
        assert bills["U_1"] == Decimal("-0.20")
        # over-suppliers: (3 + dev/3)*TP + dev*(2/3)*FiT as rewards
        assert abs(bills["U_2"] + Decimal("0.366667")) <= MICRO
        assert abs(bills["U_3"] + Decimal("0.433334")) <= MICRO


class TestUniversalExamples:
    def test_td_zero_everyone_trades_actual(self, keys):
        truths = [consumer("U_1", "3", "2"), prosumer("U_2", "3", "2")]
        aggs = PlainAggregates.from_truths(truths)
        assert aggs.td == 0
        (bills, balances), _ = run_both_domains(BillingModel.UNIVERSAL, truths,
                                                keys, single_supplier_map(truths))
        assert bills["U_1"] == Decimal("0.50")
        assert bills["U_2"] == Decimal("-0.50")
        assert balances["S_1"] == 0

    def test_td_negative_market(self, keys):
        # consumers dev {+2, -1}, prosumer dev {-1}: T_up=1, T_down=3, TD=-2
        truths = [consumer("U_1", "3", "2"), consumer("U_2", "3", "-1"),
                  prosumer("U_3", "3", "-1")]
        aggs = PlainAggregates.from_truths(truths)
        assert (aggs.t_up, aggs.t_down, aggs.td) == (1, 3, -2)
        (bills, _), _ = run_both_domains(BillingModel.UNIVERSAL, truths,
                                         keys, single_supplier_map(truths))
        assert bills["U_2"] == Decimal("0.20")                      # (3-1)*0.10
        assert abs(bills["U_1"] - Decimal("0.633334")) <= MICRO     # (3+2/3)*0.10 + 2*(2/3)*0.20
        assert abs(bills["U_3"] + Decimal("0.133333")) <= MICRO     # -( (3-1/3)*0.10 - (2/3)*0.20 )

    def test_td_negative_rm_volume_equals_abs_td(self):
        truths = [consumer("U_1", "3", "2"), consumer("U_2", "3", "-1"),
                  prosumer("U_3", "3", "-1")]
        assert rm_volume(BillingModel.UNIVERSAL, truths) == 2

    def test_td_positive_mirror(self, keys):
        # consumer dev {-2}, prosumer dev {+1, -... } pick T_up=3, T_down=1, TD=+2
        truths = [consumer("U_1", "3", "-2"), prosumer("U_2", "3", "1"),
                  consumer("U_3", "3", "1")]
        aggs = PlainAggregates.from_truths(truths)
        assert (aggs.t_up, aggs.t_down, aggs.td) == (3, 1, 2)
        (bills, _), _ = run_both_domains(BillingModel.UNIVERSAL, truths,
                                         keys, single_supplier_map(truths))
        # downtrender (over-consumer) trades actual at TP
        assert bills["U_3"] == Decimal("0.40")
        # uptrender under-consumer: (3 - 2/3)*0.10 - 2*(2/3)*0.05
        assert abs(bills["U_1"] - Decimal("0.166667")) <= MICRO
        # uptrender over-supplier: -((3 + 1/3)*0.10 + (2/3)*0.05)
        assert abs(bills["U_2"] + Decimal("0.366667")) <= MICRO


class TestRejectedBidRouting:
    @pytest.mark.parametrize("model", [BillingModel.INDIVIDUAL, BillingModel.SOCIAL,
                                       BillingModel.UNIVERSAL])
    def test_rejected_bid_falls_back_to_status_quo(self, keys, model):
        truths = [consumer("U_1", "3", "1", accepted=False),
                  consumer("U_2", "2", "0"), prosumer("U_3", "2", "0")]
        supplier_of = single_supplier_map(truths)
        (bills, _), _ = run_both_domains(model, truths, keys, supplier_of)
        # rejected over-consumer pays the whole 4 kWh reading at RP
        assert bills["U_1"] == Decimal("0.80")

    def test_non_p2p_user_is_status_quo_in_every_model(self, keys):
        non_p2p = truth("U_1", "0", "1.5", accepted=False)
        for model in BillingModel:
            (bills, _), _ = run_both_domains(model, [non_p2p], keys,
                                             {"U_1": "S_1"})
            assert bills["U_1"] == Decimal("0.30")


class TestOracleEquivalence:
    @pytest.mark.parametrize("model", list(BillingModel))
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_pipeline_matches_oracle_exactly(self, keys, model, seed):
        scenario = market.generate(seed=seed, n_users=12, n_suppliers=2, n_slots=2,
                                   deviation_spread="1.5", rejected_fraction=0.25)
        supplier_of = scenario.supplier_of()
        for truths in scenario.slots:
            (sup_bills, sup_balances), (grid_bills, grid_balances) = run_both_domains(
                model, truths, keys, supplier_of)
            oracle = oracle_bill(model, truths, scenario.schedule, supplier_of)
            for uid, expected in oracle.bill_or_reward.items():
                assert as_fraction(sup_bills[uid]) == expected
                assert as_fraction(grid_bills[uid]) == expected
            for sid, expected in oracle.balance.items():
                assert as_fraction(sup_balances[sid]) == expected
                assert as_fraction(grid_balances[sid]) == expected

    @pytest.mark.parametrize("model", list(BillingModel))
    def test_dual_run_agreement(self, keys, model):
        scenario = market.generate(seed=9, n_users=10, n_suppliers=2, n_slots=1,
                                   deviation_spread="2")
        supplier_of = scenario.supplier_of()
        (sup_bills, sup_balances), (grid_bills, grid_balances) = run_both_domains(
            model, scenario.slots[0], keys, supplier_of)
        assert sup_bills == grid_bills
        assert sup_balances == grid_balances

    def test_workers_do_not_change_results(self, keys):
        scenario = market.generate(seed=10, n_users=9, n_suppliers=2, n_slots=1,
                                   deviation_spread="1")
        supplier_of = scenario.supplier_of()
        serial = run_both_domains(BillingModel.UNIVERSAL, scenario.slots[0],
                                  keys, supplier_of, workers=1)
        parallel = run_both_domains(BillingModel.UNIVERSAL, scenario.slots[0],
                                    keys, supplier_of, workers=4)
        assert serial[0][0] == parallel[0][0]
        assert serial[0][1] == parallel[0][1]


class TestConservation:
    @pytest.mark.parametrize("model", list(BillingModel))
    @pytest.mark.parametrize("seed", [11, 12, 13, 14])
    def test_money_conserved_per_slot(self, model, seed):
        scenario = market.generate(seed=seed, n_users=20, n_suppliers=3, n_slots=3,
                                   deviation_spread="2", rejected_fraction=0.2)
        for truths in scenario.slots:
            oracle = oracle_bill(model, truths, scenario.schedule,
                                 scenario.supplier_of())
            # exact zero up to the 1e-12 ratio grid; far below one micro-unit
            assert abs(oracle.conservation_gap()) <= Fraction(1, 10**9)

    def test_zero_deviation_fixed_point(self):
        scenario = market.generate(seed=15, n_users=12, n_suppliers=2, n_slots=2,
                                   deviation_spread="0", rejected_fraction=0.0)
        supplier_of = scenario.supplier_of()
        for model in billing.P2P_MODELS:
            for truths in scenario.slots:
                oracle = oracle_bill(model, truths, scenario.schedule, supplier_of)
                tp = as_fraction(scenario.schedule.tp)
                for t in truths:
                    expected = t.bid_type * as_fraction(t.committed_volume) * tp
                    assert oracle.bill_or_reward[t.user_id] == expected
                assert all(v == 0 for v in oracle.balance.values())


class TestSingleUserMarket:
    @pytest.mark.parametrize("deviation", ["1.5", "-1.5", "0"])
    @pytest.mark.parametrize("maker", [consumer, prosumer])
    def test_p2p_models_coincide(self, maker, deviation):
        truths = [maker("U_1", "3", deviation)]
        supplier_of = {"U_1": "S_1"}
        results = [oracle_bill(m, truths, DEFAULT_SCHEDULE, supplier_of)
                   for m in billing.P2P_MODELS]
        bills = {r.bill_or_reward["U_1"] for r in results}
        balances = {r.balance["S_1"] for r in results}
        assert len(bills) == 1
        assert len(balances) == 1


class TestRmVolume:
    def test_opposite_consumer_deviations(self):
        truths = [consumer("U_1", "3", "1"), consumer("U_2", "3", "-1")]
        assert rm_volume(BillingModel.INDIVIDUAL, truths) == 2
        assert rm_volume(BillingModel.SOCIAL, truths) == 0
        assert rm_volume(BillingModel.UNIVERSAL, truths) == 0

    def test_all_zero_deviations(self):
        truths = [consumer("U_1", "3", "0"), prosumer("U_2", "3", "0")]
        for model in billing.P2P_MODELS:
            assert rm_volume(model, truths) == 0

    def test_status_quo_counts_all_readings(self):
        truths = [truth("U_1", "0", "5", accepted=False),
                  truth("U_2", "0", "-2", accepted=False)]
        assert rm_volume(BillingModel.STATUS_QUO, truths) == 7

    def test_rejected_bids_excluded_from_p2p_volumes(self):
        truths = [consumer("U_1", "3", "1"), consumer("U_2", "3", "2", accepted=False),
                  prosumer("U_3", "3", "-1")]
        assert rm_volume(BillingModel.INDIVIDUAL, truths) == 2

    @given(c_devs=st.lists(st.integers(-10**6, 10**6), max_size=8),
           p_devs=st.lists(st.integers(-10**6, 10**6), max_size=8))
    @settings(max_examples=200)
    def test_volume_ordering(self, c_devs, p_devs):
        truths = [consumer(f"C_{i}", "5", Decimal(d).scaleb(-6))
                  for i, d in enumerate(c_devs)]
        truths += [prosumer(f"P_{i}", "5", Decimal(d).scaleb(-6))
                   for i, d in enumerate(p_devs)]
        univ = rm_volume(BillingModel.UNIVERSAL, truths)
        soc = rm_volume(BillingModel.SOCIAL, truths)
        ind = rm_volume(BillingModel.INDIVIDUAL, truths)
        assert univ <= soc <= ind

    def test_equality_at_both_bounds(self):
        # all consumer deviations positive, all prosumer deviations negative:
        # no netting is possible anywhere, so all three volumes coincide
        truths = [consumer("C_1", "3", "1"), consumer("C_2", "3", "2"),
                  prosumer("P_1", "3", "-1")]
        univ = rm_volume(BillingModel.UNIVERSAL, truths)
        soc = rm_volume(BillingModel.SOCIAL, truths)
        ind = rm_volume(BillingModel.INDIVIDUAL, truths)
        assert univ == soc == ind == 4


class TestBillCalcCounting:
    def test_two_runs_give_two_nu_billcalcs(self, keys):
        scenario = market.generate(seed=20, n_users=7, n_suppliers=2, n_slots=1,
                                   deviation_spread="1")
        with ops.scope() as counter:
            run_both_domains(BillingModel.INDIVIDUAL, scenario.slots[0], keys,
                             scenario.supplier_of())
        assert counter.get(ops.BILL_CALC) == 2 * 7


class TestErrors:
    def test_weighted_models_require_aggregates(self, keys):
        suppliers, (grid_pk, _) = keys
        truths = [consumer("U_1", "3", "1")]
        payload = AddressedPayload("U_1", "S_1",
                                   meter.build_payload(truths[0],
                                                       suppliers["S_1"][0], grid_pk))
        for fn in (billing.bill_social_split, billing.bill_universal_split):
            with pytest.raises(ValueError):
                fn([payload], DEFAULT_SCHEDULE, None, KeyDomain.SUPPLIER,
                   {"S_1": suppliers["S_1"][0]})
