"""Meter protocol: deviation formula, payload shape, dual-key agreement."""
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppbsp import meter, ops, phe
from ppbsp.market import BUY, SELL, SlotTruth

kwh = st.integers(min_value=-10**7, max_value=10**7).map(lambda m: Decimal(m).scaleb(-6))
committed_kwh = st.integers(min_value=0, max_value=10**7).map(lambda m: Decimal(m).scaleb(-6))


def truth(committed="3", reading="4", accepted=True, bid_type=BUY, uid="U_1"):
    return SlotTruth(user_id=uid, committed_volume=Decimal(committed),
                     meter_reading=Decimal(reading), bid_accepted=accepted,
                     bid_type=bid_type)


class TestIndividualDeviation:
    def test_over_consumption(self):
        assert meter.individual_deviation(BUY, Decimal(4), Decimal(3)) == 1

    def test_perfect_prosumer_fulfillment(self):
        assert meter.individual_deviation(SELL, Decimal(-3), Decimal(3)) == 0

    def test_under_consumption(self):
        assert meter.individual_deviation(BUY, Decimal(2), Decimal(3)) == -1

    def test_rejects_negative_committed(self):
        with pytest.raises(ValueError):
            meter.individual_deviation(BUY, Decimal(1), Decimal(-1))

    @given(bid_type=st.sampled_from([BUY, SELL]), reading=kwh, committed=committed_kwh)
    def test_reading_identity(self, bid_type, reading, committed):
        # reading == bid_type * (committed + deviation)
        deviation = meter.individual_deviation(bid_type, reading, committed)
        assert bid_type * (committed + deviation) == reading


class TestBuildPayload:
    def test_flags_for_over_consumer(self, keypair_256, second_keypair_256):
        sup_pk, sup_sk = keypair_256
        grid_pk, grid_sk = second_keypair_256
        payload = meter.build_payload(truth(), sup_pk, grid_pk)
        assert payload.flags == (1, 1, 1, 1)
        assert phe.decode(phe.decrypt(sup_sk, payload.indev_for_supplier)) == 1
        assert phe.decode(phe.decrypt(grid_sk, payload.indev_for_gridop)) == 1

    def test_zero_reading_zero_committed(self, keypair_256, second_keypair_256):
        sup_pk, sup_sk = keypair_256
        grid_pk, grid_sk = second_keypair_256
        payload = meter.build_payload(truth(committed="0", reading="0"), sup_pk, grid_pk)
        assert payload.indev_sign == 0
        assert phe.decode(phe.decrypt(sup_sk, payload.indev_for_supplier)) == 0
        assert phe.decode(phe.decrypt(grid_sk, payload.indev_for_gridop)) == 0

    def test_net_export_flag(self, keypair_256, second_keypair_256):
        payload = meter.build_payload(truth(reading="-2", bid_type=SELL),
                                      keypair_256[0], second_keypair_256[0])
        assert payload.net_consumption_type == -1

    def test_zero_reading_counts_as_net_buyer(self, keypair_256, second_keypair_256):
        payload = meter.build_payload(truth(reading="0"),
                                      keypair_256[0], second_keypair_256[0])
        assert payload.net_consumption_type == 1

    def test_shape_four_cts_four_flags(self, keypair_256, second_keypair_256):
        payload = meter.build_payload(truth(), keypair_256[0], second_keypair_256[0])
        assert len(payload.ciphertexts) == 4
        assert len(payload.flags) == 4
        assert all(isinstance(ct, phe.Ciphertext) for ct in payload.ciphertexts)

    def test_exactly_four_encryptions(self, keypair_256, second_keypair_256):
        with ops.scope() as counter:
            meter.build_payload(truth(), keypair_256[0], second_keypair_256[0])
        assert counter.get(ops.HOMO_ENC) == 4
        assert counter.get(ops.HOMO_DEC) == 0

    @given(bid_type=st.sampled_from([BUY, SELL]), reading=kwh, committed=committed_kwh)
    def test_dual_key_agreement(self, keypair_256, second_keypair_256,
                                bid_type, reading, committed):
        sup_pk, sup_sk = keypair_256
        grid_pk, grid_sk = second_keypair_256
        payload = meter.build_payload(
            truth(committed=committed, reading=reading, bid_type=bid_type),
            sup_pk, grid_pk)
        sup_committed = phe.decode(phe.decrypt(sup_sk, payload.committed_for_supplier))
        grid_committed = phe.decode(phe.decrypt(grid_sk, payload.committed_for_gridop))
        sup_dev = phe.decode(phe.decrypt(sup_sk, payload.indev_for_supplier))
        grid_dev = phe.decode(phe.decrypt(grid_sk, payload.indev_for_gridop))
        assert sup_committed == grid_committed == committed
        assert sup_dev == grid_dev
        # flag consistency
        assert payload.indev_sign == (sup_dev > 0) - (sup_dev < 0)
        assert payload.net_consumption_type == (1 if reading >= 0 else -1)


class TestPayloadWire:
    def test_roundtrip(self, keypair_256, second_keypair_256):
        sup_pk, sup_sk = keypair_256
        grid_pk, _ = second_keypair_256
        payload = meter.build_payload(truth(reading="-1.5", bid_type=SELL), sup_pk, grid_pk)
        data = meter.serialize_payload(payload)
        registry = {sup_pk.fingerprint: sup_pk, grid_pk.fingerprint: grid_pk}
        parsed = meter.parse_payload(data, registry)
        assert parsed == payload

    def test_body_bits_match_table_accounting(self, keypair_256, second_keypair_256):
        sup_pk, _ = keypair_256
        grid_pk, _ = second_keypair_256
        payload = meter.build_payload(truth(), sup_pk, grid_pk)
        # 4 x (|ciphertext| + |boolean|) with 512-bit ciphertexts at 256-bit keys
        assert meter.payload_body_bits(payload) == 4 * (512 + 8)
        data = meter.serialize_payload(payload)
        assert len(data) * 8 == meter.payload_body_bits(payload) + meter.payload_overhead_bits()

    def test_truncated_payload_rejected(self, keypair_256, second_keypair_256):
        sup_pk, _ = keypair_256
        grid_pk, _ = second_keypair_256
        payload = meter.build_payload(truth(), sup_pk, grid_pk)
        data = meter.serialize_payload(payload) + b"\x00"
        registry = {sup_pk.fingerprint: sup_pk, grid_pk.fingerprint: grid_pk}
        with pytest.raises(ValueError):
            meter.parse_payload(data, registry)
