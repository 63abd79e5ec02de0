"""In-process simulation of the protocol's entities and network.

The "network" is byte-accurate message passing between in-process entities:
every message that would cross the wire is actually serialized, its length
recorded, and parsed again on the receiving side. Bits are accounted in two
buckets per protocol segment: *body* bits (ciphertext values and flag
bytes, the quantities the communication-cost formulas describe) and
*overhead* bits (envelope headers, indices, the one-byte acknowledgement),
so body counts can be compared exactly against the closed-form costs.

Entity roles and their per-trading-period operation budget:

* each smart meter: 4 encryptions;
* trading platform: 2 * N_u bill calculations (one run per key domain),
  and no decryption capability at all - it never holds a private key;
* grid operator: 4 decryptions (the market aggregates);
* each supplier: 1 decryption (its balance change).

Per billing period each supplier decrypts its customers' final bills, and
the grid operator decrypts 2 * N_s backup aggregates if an audit is called.
The trading platform deletes every per-user payload ciphertext at the end
of each slot; only the encrypted partial-bill folds (per user) and the
grid-operator-keyed per-supplier backups are retained.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction

from . import billing, meter, ops, phe, settlement
from .billing import AddressedPayload, BillingModel, KeyDomain, PlainAggregates
from .fixedpoint import (as_fraction, dsum, format_decimal, fraction_to_decimal,
                         from_micro, to_micro)
from .market import DEFAULT_SCHEDULE, Scenario, SlotTruth, validate
from .settlement import RESIDUE_TOLERANCE

ACK_BITS = 8
FLOAT_BITS = 64
INDEX_BYTES = 2
COUNT_BYTES = 2


class Role(Enum):
    SMART_METER = "SM"
    TRADING_PLATFORM = "TrPlat"
    GRID_OPERATOR = "GridOp"
    SUPPLIER = "Supplier"
    REGULATOR = "Regulator"


class MessageKind(Enum):
    PAYLOAD = "payload"
    ENC_AGGREGATES = "enc_aggregates"
    PLAIN_AGGREGATES = "plain_aggregates"
    SUPPLIER_BALANCE = "supplier_balance"
    FINAL_BILLS = "final_bills"
    RESIDUE_REPORT = "residue_report"
    AUDIT_BACKUP = "audit_backup"
    ACK = "ack"


SEGMENTS = {
    (Role.SMART_METER, Role.TRADING_PLATFORM): "SM-to-TrPlat",
    (Role.TRADING_PLATFORM, Role.GRID_OPERATOR): "TrPlat-to-GridOp",
    (Role.GRID_OPERATOR, Role.TRADING_PLATFORM): "GridOp-to-TrPlat",
    (Role.TRADING_PLATFORM, Role.SUPPLIER): "TrPlat-to-Sup",
    (Role.SUPPLIER, Role.REGULATOR): "Sup-to-Regulator",
}

PERIOD_INIT = "init"
PERIOD_TRADING = "trading"
PERIOD_BILLING = "billing"


@dataclass(frozen=True)
class Message:
    sender: Role
    receiver: Role
    kind: MessageKind
    byte_length: int
    slot_index: int | None


class MetricsLedger:
    """Counters for expensive operations and transmitted bits.

    Operation counters are keyed by (role, instance, period); bit counters
    by (segment, period). Counters only ever grow; a fresh ledger is used
    per run (and per slot, for deltas).
    """

    def __init__(self):
        self.op_counters: dict[tuple[str, str, str], ops.OpCounter] = {}
        self.body_bits: dict[tuple[str, str], int] = {}
        self.overhead_bits: dict[tuple[str, str], int] = {}

    def counter(self, role: Role, instance: str = "-",
                period: str = PERIOD_TRADING) -> ops.OpCounter:
        key = (role.value, instance, period)
        counter = self.op_counters.get(key)
        if counter is None:
            counter = ops.OpCounter()
            self.op_counters[key] = counter
        return counter

    def add_bits(self, segment: str, period: str, body: int, overhead: int = 0):
        key = (segment, period)
        self.body_bits[key] = self.body_bits.get(key, 0) + body
        if overhead:
            self.overhead_bits[key] = self.overhead_bits.get(key, 0) + overhead

    def role_total(self, role: Role, op_name: str, period: str | None = None) -> int:
        return sum(c.get(op_name) for (r, _, p), c in self.op_counters.items()
                   if r == role.value and (period is None or p == period))

    def instance_count(self, role: Role, instance: str, op_name: str,
                       period: str | None = None) -> int:
        return sum(c.get(op_name) for (r, i, p), c in self.op_counters.items()
                   if r == role.value and i == instance
                   and (period is None or p == period))

    def segment_bits(self, segment: str, period: str) -> int:
        return self.body_bits.get((segment, period), 0)

    def merge(self, other: "MetricsLedger") -> None:
        for key, counter in other.op_counters.items():
            self.op_counters.setdefault(key, ops.OpCounter()).merge(counter)
        for key, bits in other.body_bits.items():
            self.body_bits[key] = self.body_bits.get(key, 0) + bits
        for key, bits in other.overhead_bits.items():
            self.overhead_bits[key] = self.overhead_bits.get(key, 0) + bits

    def csv_rows(self) -> list[tuple[str, str, str, str]]:
        """Deterministic (entity_or_segment, period, metric, value) rows."""
        totals: dict[tuple[str, str, str], int] = {}
        for (role, _, period), counter in self.op_counters.items():
            for op_name, count in counter.counts.items():
                key = (role, period, op_name)
                totals[key] = totals.get(key, 0) + count
        rows = [(role, period, op_name, str(count))
                for (role, period, op_name), count in sorted(totals.items())]
        for (segment, period), bits in sorted(self.body_bits.items()):
            rows.append((segment, period, "body_bits", str(bits)))
        for (segment, period), bits in sorted(self.overhead_bits.items()):
            rows.append((segment, period, "overhead_bits", str(bits)))
        return rows


def metrics_csv(ledger: MetricsLedger) -> str:
    lines = ["entity_or_segment,period,metric,value"]
    for row in ledger.csv_rows():
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


@dataclass
class KeySet:
    """All keypairs of one deployment (phase 1 output)."""

    gridop: tuple[phe.PublicKey, phe.PrivateKey]
    suppliers: dict[str, tuple[phe.PublicKey, phe.PrivateKey]]

    @classmethod
    def generate(cls, supplier_ids, key_bits: int, ledger: MetricsLedger | None = None):
        ledger = ledger if ledger is not None else MetricsLedger()
        with ops.scope(ledger.counter(Role.GRID_OPERATOR, period=PERIOD_INIT)):
            gridop = phe.keygen(key_bits)
        suppliers = {}
        for sid in supplier_ids:
            with ops.scope(ledger.counter(Role.SUPPLIER, sid, period=PERIOD_INIT)):
                suppliers[sid] = phe.keygen(key_bits)
        return cls(gridop=gridop, suppliers=suppliers)

    def registry(self) -> dict[bytes, phe.PublicKey]:
        reg = {self.gridop[0].fingerprint: self.gridop[0]}
        for pk, _ in self.suppliers.values():
            reg[pk.fingerprint] = pk
        return reg


class PayloadTape:
    """Recorded serialized payloads, replayable across model runs.

    Payloads do not depend on the billing model, so comparative experiments
    on one scenario can encrypt once and replay. Replayed slots skip the
    smart meters entirely: their encryption work is not re-counted, so use
    a tape only where operation counts are not under test.
    """

    def __init__(self):
        self.slots: dict[int, list[tuple[str, bytes]]] = {}


class TradingPlatform:
    """Honest-but-curious bill calculator.

    Holds public keys only. Per-user payload ciphertexts live only inside
    one slot; what survives a slot are the per-user encrypted partial-bill
    folds (supplier-keyed) and the per-supplier backup folds (grid-operator
    keyed) used in audits.
    """

    def __init__(self, scenario: Scenario, supplier_pks: dict[str, phe.PublicKey],
                 gridop_pk: phe.PublicKey, model: BillingModel, workers: int = 1):
        self.schedule = scenario.schedule
        self.supplier_of = scenario.supplier_of()
        self.supplier_pks = supplier_pks
        self.gridop_pk = gridop_pk
        self.model = model
        self.workers = workers
        self.slot_payloads: list[AddressedPayload] = []
        self.monthly_user_delta: dict[str, phe.Ciphertext] = {}
        self.partial_bills_folded: dict[str, int] = {}
        self.audit_bills: dict[str, phe.Ciphertext] = {}
        self.audit_balances: dict[str, phe.Ciphertext] = {}

    @property
    def stored_payload_count(self) -> int:
        return len(self.slot_payloads)

    def receive_payload(self, user_id: str, data: bytes, registry) -> None:
        payload = meter.parse_payload(data, registry)
        self.slot_payloads.append(
            AddressedPayload(user_id=user_id, supplier_id=self.supplier_of[user_id],
                             payload=payload))

    def build_aggregates(self) -> settlement.EncryptedAggregates:
        return settlement.aggregate_deviations(self.slot_payloads, self.gridop_pk)

    def bill(self, domain: KeyDomain, aggregates: PlainAggregates | None):
        keys = (self.supplier_pks if domain is KeyDomain.SUPPLIER
                else {sid: self.gridop_pk for sid in self.supplier_pks})
        return billing.bill_slot(self.model, self.slot_payloads, self.schedule,
                                 domain, keys, aggregates=aggregates,
                                 workers=self.workers)

    def fold_slot(self, supplier_run, gridop_run) -> None:
        for user_id, delta in supplier_run.bill_or_reward.items():
            prev = self.monthly_user_delta.get(user_id)
            self.monthly_user_delta[user_id] = delta if prev is None else phe.hom_add(prev, delta)
            self.partial_bills_folded[user_id] = self.partial_bills_folded.get(user_id, 0) + 1
        for user_id, delta in gridop_run.bill_or_reward.items():
            sid = self.supplier_of[user_id]
            prev = self.audit_bills.get(sid)
            self.audit_bills[sid] = delta if prev is None else phe.hom_add(prev, delta)
        for sid, balance in gridop_run.balance.items():
            prev = self.audit_balances.get(sid)
            self.audit_balances[sid] = balance if prev is None else phe.hom_add(prev, balance)

    def clear_slot(self) -> None:
        self.slot_payloads = []


class GridOperator:
    def __init__(self, keypair):
        self.public_key, self._private_key = keypair

    def decrypt_aggregates(self, aggregates) -> PlainAggregates:
        return settlement.gridop_decrypt_aggregates(aggregates, self._private_key)

    def audit(self, backups, reported, tolerance=RESIDUE_TOLERANCE):
        return settlement.audit(backups, reported, self._private_key, tolerance)


class Supplier:
    def __init__(self, supplier_id: str, keypair, customer_ids):
        self.supplier_id = supplier_id
        self.public_key, self._private_key = keypair
        self.customer_ids = tuple(customer_ids)
        self.slot_balances: list[Decimal] = []
        self.ledger: settlement.SupplierLedger | None = None

    def receive_balance(self, ct: phe.Ciphertext) -> None:
        self.slot_balances.append(phe.decrypt_to_decimal(self._private_key, ct))

    def settle(self, encrypted_bills: dict[str, phe.Ciphertext]) -> settlement.SupplierLedger:
        self.ledger = settlement.supplier_settle(
            self.supplier_id, self.slot_balances, encrypted_bills,
            self._private_key, self.customer_ids)
        return self.ledger


@dataclass
class TradingPeriodResult:
    slot_index: int
    metrics: MetricsLedger
    aggregates: PlainAggregates
    rm_volume: Decimal


@dataclass
class BillingPeriodResult:
    model: BillingModel
    key_bits: int
    regulator_report: settlement.RegulatorReport
    monthly_bills: dict[str, Decimal]
    supplier_ledgers: dict[str, settlement.SupplierLedger]
    metrics: MetricsLedger              # cumulative for the whole run
    billing_metrics: MetricsLedger      # the billing-period delta only
    rm_volume_per_slot: list[Decimal]
    partial_bills_folded: dict[str, int]

    @property
    def rm_volume_total(self) -> Decimal:
        return dsum(self.rm_volume_per_slot)


class Simulation:
    """One deployment running one billing period under one model."""

    def __init__(self, scenario: Scenario, model: BillingModel,
                 key_bits: int = phe.DEFAULT_KEY_BITS, workers: int = 1,
                 keys: KeySet | None = None, meter_tape: PayloadTape | None = None):
        violations = validate(scenario)
        if violations:
            raise ValueError("invalid scenario: " + "; ".join(violations))
        self.scenario = scenario
        self.model = model
        self.key_bits = key_bits
        self.workers = workers
        self.metrics = MetricsLedger()
        self.message_log: list[Message] = []
        self.meter_tape = meter_tape
        if keys is None:
            keys = KeySet.generate(scenario.suppliers, key_bits, self.metrics)
        self.keys = keys
        self.registry = keys.registry()
        supplier_pks = {sid: kp[0] for sid, kp in keys.suppliers.items()}
        self.gridop = GridOperator(keys.gridop)
        self.trplat = TradingPlatform(scenario, supplier_pks, keys.gridop[0],
                                      model, workers)
        customers: dict[str, list[str]] = {sid: [] for sid in scenario.suppliers}
        for user in scenario.users:
            customers[user.supplier_id].append(user.user_id)
        self.suppliers = {
            sid: Supplier(sid, keys.suppliers[sid], customers[sid])
            for sid in scenario.suppliers
        }
        self._user_index = {u.user_id: i for i, u in enumerate(scenario.users)}
        self._supplier_index = {sid: i for i, sid in enumerate(scenario.suppliers)}
        self.slots_run = 0

    def _log(self, sender, receiver, kind, data_len, slot_index,
             delta: MetricsLedger, period, body_bits, overhead_bits):
        delta.add_bits(SEGMENTS[(sender, receiver)], period, body_bits, overhead_bits)
        self.message_log.append(Message(sender, receiver, kind, data_len, slot_index))

    # -- phase 2: one trading period ---------------------------------------

    def run_trading_period(self, slot_index: int) -> TradingPeriodResult:
        if slot_index != self.slots_run:
            raise ValueError(f"slots must run in order; expected {self.slots_run}")
        delta = MetricsLedger()
        scenario = self.scenario
        truths = scenario.slots[slot_index]
        supplier_of = self.trplat.supplier_of
        tape_entry = self.meter_tape.slots.get(slot_index) if self.meter_tape else None

        if tape_entry is None:
            serialized = []
            for truth in truths:
                supplier_pk = self.trplat.supplier_pks[supplier_of[truth.user_id]]
                with ops.scope(delta.counter(Role.SMART_METER, truth.user_id)):
                    payload = meter.build_payload(truth, supplier_pk, self.gridop.public_key)
                serialized.append((truth.user_id, meter.serialize_payload(payload)))
            if self.meter_tape is not None:
                self.meter_tape.slots[slot_index] = serialized
        else:
            serialized = tape_entry

        ct_bits = 2 * self.key_bits
        for user_id, data in serialized:
            self._log(Role.SMART_METER, Role.TRADING_PLATFORM, MessageKind.PAYLOAD,
                      len(data), slot_index, delta, PERIOD_TRADING,
                      body_bits=4 * (ct_bits + 8),
                      overhead_bits=4 * phe.ENVELOPE_HEADER_BYTES * 8)
            self.trplat.receive_payload(user_id, data, self.registry)

        with ops.scope(delta.counter(Role.TRADING_PLATFORM)):
            enc_aggs = self.trplat.build_aggregates()
        agg_data = b"".join(ct.serialize() for ct in enc_aggs.ciphertexts)
        self._log(Role.TRADING_PLATFORM, Role.GRID_OPERATOR, MessageKind.ENC_AGGREGATES,
                  len(agg_data), slot_index, delta, PERIOD_TRADING,
                  body_bits=4 * ct_bits, overhead_bits=4 * phe.ENVELOPE_HEADER_BYTES * 8)
        # acknowledgement: one byte, reported as overhead only (the
        # communication-cost formulas do not include it)
        self._log(Role.GRID_OPERATOR, Role.TRADING_PLATFORM, MessageKind.ACK,
                  1, slot_index, delta, PERIOD_TRADING, body_bits=0,
                  overhead_bits=ACK_BITS)

        def gridop_roundtrip() -> PlainAggregates:
            cts = []
            offset = 0
            for _ in range(4):
                ct, offset = phe.parse_ciphertext(agg_data, offset, self.registry)
                cts.append(ct)
            parsed = settlement.EncryptedAggregates(*cts)
            with ops.scope(delta.counter(Role.GRID_OPERATOR)):
                plain = self.gridop.decrypt_aggregates(parsed)
            data = _frame_plain_aggregates(plain)
            self._log(Role.GRID_OPERATOR, Role.TRADING_PLATFORM, MessageKind.PLAIN_AGGREGATES,
                      len(data), slot_index, delta, PERIOD_TRADING,
                      body_bits=4 * FLOAT_BITS, overhead_bits=0)
            return _parse_aggregates_message(data)

        if self.model in (BillingModel.STATUS_QUO, BillingModel.INDIVIDUAL):
            # billing proceeds without waiting for the decrypted statistics
            with ops.scope(delta.counter(Role.TRADING_PLATFORM)):
                supplier_run = self.trplat.bill(KeyDomain.SUPPLIER, None)
                gridop_run = self.trplat.bill(KeyDomain.GRID_OPERATOR, None)
            plain_aggs = gridop_roundtrip()
        else:
            plain_aggs = gridop_roundtrip()
            with ops.scope(delta.counter(Role.TRADING_PLATFORM)):
                supplier_run = self.trplat.bill(KeyDomain.SUPPLIER, plain_aggs)
                gridop_run = self.trplat.bill(KeyDomain.GRID_OPERATOR, plain_aggs)

        self.trplat.fold_slot(supplier_run, gridop_run)

        for sid in scenario.suppliers:
            data = supplier_run.balance[sid].serialize()
            self._log(Role.TRADING_PLATFORM, Role.SUPPLIER, MessageKind.SUPPLIER_BALANCE,
                      len(data), slot_index, delta, PERIOD_TRADING,
                      body_bits=ct_bits, overhead_bits=phe.ENVELOPE_HEADER_BYTES * 8)
            received, _ = phe.parse_ciphertext(data, 0, self.registry)
            with ops.scope(delta.counter(Role.SUPPLIER, sid)):
                self.suppliers[sid].receive_balance(received)

        self.trplat.clear_slot()
        self.slots_run += 1
        self.metrics.merge(delta)
        return TradingPeriodResult(slot_index=slot_index, metrics=delta,
                                   aggregates=plain_aggs,
                                   rm_volume=billing.rm_volume(self.model, truths))

    # -- phase 3: billing period -------------------------------------------

    def run_billing_period(self, inject_dishonest: str | None = None,
                           perturbation: Decimal = Decimal("0.10"),
                           tolerance: Decimal = RESIDUE_TOLERANCE) -> BillingPeriodResult:
        scenario = self.scenario
        if self.slots_run != scenario.slots_per_billing_period:
            raise ValueError("all trading periods must run before settlement")
        delta = MetricsLedger()
        ct_bits = 2 * self.key_bits

        monthly_bills: dict[str, Decimal] = {}
        ledgers: dict[str, settlement.SupplierLedger] = {}
        for sid in scenario.suppliers:
            supplier = self.suppliers[sid]
            data = _frame_final_bills(self.trplat.monthly_user_delta,
                                      supplier.customer_ids, self._user_index)
            n_bills = len(supplier.customer_ids)
            self._log(Role.TRADING_PLATFORM, Role.SUPPLIER, MessageKind.FINAL_BILLS,
                      len(data), None, delta, PERIOD_BILLING,
                      body_bits=n_bills * ct_bits,
                      overhead_bits=(COUNT_BYTES
                                     + n_bills * (INDEX_BYTES + phe.ENVELOPE_HEADER_BYTES)) * 8)
            encrypted_bills = _parse_final_bills(data, scenario, self.registry)
            with ops.scope(delta.counter(Role.SUPPLIER, sid, period=PERIOD_BILLING)):
                ledger = supplier.settle(encrypted_bills)
            ledgers[sid] = ledger
            monthly_bills.update(ledger.customer_bills)

        reported: dict[str, Decimal] = {}
        for sid in scenario.suppliers:
            value = ledgers[sid].residue
            if sid == inject_dishonest:
                value = value + perturbation
            reported[sid] = value
            data = _frame_residue_report(sid, value, self._supplier_index)
            self._log(Role.SUPPLIER, Role.REGULATOR, MessageKind.RESIDUE_REPORT,
                      len(data), None, delta, PERIOD_BILLING,
                      body_bits=0, overhead_bits=len(data) * 8)

        report = settlement.regulator_check(reported, scenario.suppliers, tolerance)

        if report.verdict == "audit_required":
            backups = {sid: (self.trplat.audit_bills[sid], self.trplat.audit_balances[sid])
                       for sid in scenario.suppliers}
            data = _frame_audit_backup(backups, self._supplier_index)
            self._log(Role.TRADING_PLATFORM, Role.GRID_OPERATOR, MessageKind.AUDIT_BACKUP,
                      len(data), None, delta, PERIOD_BILLING,
                      body_bits=2 * len(backups) * ct_bits,
                      overhead_bits=(COUNT_BYTES
                                     + len(backups) * (INDEX_BYTES
                                                       + 2 * phe.ENVELOPE_HEADER_BYTES)) * 8)
            parsed = _parse_audit_backup(data, scenario, self.registry)
            with ops.scope(delta.counter(Role.GRID_OPERATOR, period=PERIOD_BILLING)):
                report.findings.extend(self.gridop.audit(parsed, reported, tolerance))

        self.metrics.merge(delta)
        rm_volumes = [billing.rm_volume(self.model, slot) for slot in scenario.slots]
        return BillingPeriodResult(
            model=self.model, key_bits=self.key_bits, regulator_report=report,
            monthly_bills=monthly_bills, supplier_ledgers=ledgers,
            metrics=self.metrics, billing_metrics=delta,
            rm_volume_per_slot=rm_volumes,
            partial_bills_folded=dict(self.trplat.partial_bills_folded))

    def run(self, inject_dishonest: str | None = None,
            perturbation: Decimal = Decimal("0.10")) -> BillingPeriodResult:
        for slot_index in range(self.scenario.slots_per_billing_period):
            self.run_trading_period(slot_index)
        return self.run_billing_period(inject_dishonest=inject_dishonest,
                                       perturbation=perturbation)


# -- wire framing -----------------------------------------------------------

def _frame_plain_aggregates(plain: PlainAggregates) -> bytes:
    values = (plain.t_c_under, plain.t_c_over, plain.t_p_under, plain.t_p_over)
    return b"".join(to_micro(v).to_bytes(8, "big", signed=True) for v in values)


def _parse_aggregates_message(data: bytes) -> PlainAggregates:
    values = [from_micro(int.from_bytes(data[i * 8:(i + 1) * 8], "big", signed=True))
              for i in range(4)]
    return PlainAggregates(*values)


def _frame_final_bills(monthly_delta, customer_ids, user_index) -> bytes:
    parts = [len(customer_ids).to_bytes(COUNT_BYTES, "big")]
    for user_id in customer_ids:
        parts.append(user_index[user_id].to_bytes(INDEX_BYTES, "big"))
        parts.append(monthly_delta[user_id].serialize())
    return b"".join(parts)


def _parse_final_bills(data: bytes, scenario: Scenario, registry) -> dict[str, phe.Ciphertext]:
    count = int.from_bytes(data[:COUNT_BYTES], "big")
    offset = COUNT_BYTES
    bills = {}
    for _ in range(count):
        idx = int.from_bytes(data[offset:offset + INDEX_BYTES], "big")
        offset += INDEX_BYTES
        ct, offset = phe.parse_ciphertext(data, offset, registry)
        bills[scenario.users[idx].user_id] = ct
    return bills


def _frame_residue_report(supplier_id: str, value: Decimal, supplier_index) -> bytes:
    text = format_decimal(value).encode("ascii")
    return (supplier_index[supplier_id].to_bytes(INDEX_BYTES, "big")
            + len(text).to_bytes(2, "big") + text)


def _frame_audit_backup(backups, supplier_index) -> bytes:
    parts = [len(backups).to_bytes(COUNT_BYTES, "big")]
    for sid in sorted(backups, key=lambda s: supplier_index[s]):
        bills_ct, balance_ct = backups[sid]
        parts.append(supplier_index[sid].to_bytes(INDEX_BYTES, "big"))
        parts.append(bills_ct.serialize())
        parts.append(balance_ct.serialize())
    return b"".join(parts)


def _parse_audit_backup(data: bytes, scenario: Scenario, registry):
    count = int.from_bytes(data[:COUNT_BYTES], "big")
    offset = COUNT_BYTES
    backups = {}
    for _ in range(count):
        idx = int.from_bytes(data[offset:offset + INDEX_BYTES], "big")
        offset += INDEX_BYTES
        bills_ct, offset = phe.parse_ciphertext(data, offset, registry)
        balance_ct, offset = phe.parse_ciphertext(data, offset, registry)
        backups[scenario.suppliers[idx]] = (bills_ct, balance_ct)
    return backups


# -- verification against the plaintext oracle -------------------------------

def verify_against_oracle(scenario: Scenario, model: BillingModel,
                          result: BillingPeriodResult,
                          tolerance: Decimal = RESIDUE_TOLERANCE) -> list[str]:
    """Compare a run's decrypted outputs with the plaintext oracle.

    Returns human-readable mismatch descriptions; empty means equivalent
    (within one micro-unit, though agreement is expected to be exact).
    """
    supplier_of = scenario.supplier_of()
    monthly: dict[str, Fraction] = {u.user_id: Fraction(0) for u in scenario.users}
    balances: dict[str, Fraction] = {sid: Fraction(0) for sid in scenario.suppliers}
    for truths in scenario.slots:
        oracle = billing.oracle_bill(model, truths, scenario.schedule, supplier_of)
        for uid, value in oracle.bill_or_reward.items():
            monthly[uid] += value
        for sid, value in oracle.balance.items():
            balances[sid] += value

    mismatches = []
    tol = as_fraction(tolerance)
    for uid, expected in monthly.items():
        got = as_fraction(result.monthly_bills[uid])
        if abs(got - expected) > tol:
            mismatches.append(
                f"monthly bill of {uid}: pipeline {result.monthly_bills[uid]} "
                f"!= oracle {fraction_to_decimal(expected)}")
    for sid, ledger in result.supplier_ledgers.items():
        got = as_fraction(ledger.monthly_balance)
        if abs(got - balances[sid]) > tol:
            mismatches.append(
                f"monthly balance of {sid}: pipeline {ledger.monthly_balance} "
                f"!= oracle {fraction_to_decimal(balances[sid])}")
        expected_residue = (sum((monthly[uid] for uid in ledger.customer_bills), Fraction(0))
                            - balances[sid])
        if abs(as_fraction(ledger.residue) - expected_residue) > tol:
            mismatches.append(f"residue of {sid}: pipeline {ledger.residue} "
                              f"!= oracle {fraction_to_decimal(expected_residue)}")
    return mismatches


# -- primitive benchmark ------------------------------------------------------

@dataclass
class BenchmarkRow:
    primitive: str
    mean_ms: float
    stdev_ms: float


@dataclass
class BenchmarkReport:
    key_bits: int
    repetitions: int
    rows: list[BenchmarkRow]

    def mean(self, primitive: str) -> float:
        for row in self.rows:
            if row.primitive == primitive:
                return row.mean_ms
        raise KeyError(primitive)

    def csv(self) -> str:
        lines = ["primitive,mean_ms,stdev_ms"]
        for row in self.rows:
            lines.append(f"{row.primitive},{row.mean_ms:.6f},{row.stdev_ms:.6f}")
        return "\n".join(lines) + "\n"


def benchmark_primitives(key_bits: int = phe.DEFAULT_KEY_BITS,
                         repetitions: int = 1000) -> BenchmarkReport:
    """Time KeyGen, HomoEnc, HomoDec and BillCalc.

    Absolute numbers are hardware-dependent; the stable claims are the
    ordering (KeyGen >> HomoEnc > HomoDec > BillCalc) and linear scaling of
    total billing time in the number of users. KeyGen is sampled at a tenth
    of the repetitions (it dominates the budget by two orders of magnitude).
    """
    if repetitions < 100:
        raise ValueError("need at least 100 repetitions for stable means")

    def timed(fn, reps):
        samples = []
        for _ in range(reps):
            start = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - start) * 1000.0)
        return samples

    keygen_samples = timed(lambda: phe.keygen(key_bits), max(100, repetitions // 10))

    public_key, private_key = phe.keygen(key_bits)
    value = phe.encode(public_key, Decimal("3.141593"))
    enc_samples = timed(lambda: phe.encrypt(public_key, value), repetitions)
    ct = phe.encrypt(public_key, value)
    dec_samples = timed(lambda: phe.decrypt(private_key, ct), repetitions)

    truth = SlotTruth(user_id="U_1", committed_volume=Decimal("3"),
                      meter_reading=Decimal("4"), bid_accepted=True, bid_type=1)
    payload = meter.build_payload(truth, public_key, public_key)
    addressed = [AddressedPayload("U_1", "S_1", payload)]
    keys = {"S_1": public_key}

    def one_bill():
        billing.bill_individual_split(addressed, DEFAULT_SCHEDULE,
                                      KeyDomain.SUPPLIER, keys)

    bill_samples = timed(one_bill, repetitions)

    rows = [
        BenchmarkRow("KeyGen", statistics.fmean(keygen_samples),
                     statistics.stdev(keygen_samples)),
        BenchmarkRow("HomoEnc", statistics.fmean(enc_samples),
                     statistics.stdev(enc_samples)),
        BenchmarkRow("HomoDec", statistics.fmean(dec_samples),
                     statistics.stdev(dec_samples)),
        BenchmarkRow("BillCalc", statistics.fmean(bill_samples),
                     statistics.stdev(bill_samples)),
    ]
    return BenchmarkReport(key_bits=key_bits, repetitions=repetitions, rows=rows)


# -- privacy posture helpers --------------------------------------------------

def find_private_keys(obj, _path="trplat", _seen=None) -> list[str]:
    """Paths to any PrivateKey reachable from *obj*'s attribute graph."""
    if _seen is None:
        _seen = set()
    if id(obj) in _seen:
        return []
    _seen.add(id(obj))
    if isinstance(obj, phe.PrivateKey):
        return [_path]
    found = []
    if isinstance(obj, dict):
        for key, value in obj.items():
            found.extend(find_private_keys(value, f"{_path}[{key!r}]", _seen))
    elif isinstance(obj, (list, tuple, set, frozenset)):
        for i, value in enumerate(obj):
            found.extend(find_private_keys(value, f"{_path}[{i}]", _seen))
    elif hasattr(obj, "__dict__"):
        for name, value in vars(obj).items():
            found.extend(find_private_keys(value, f"{_path}.{name}", _seen))
    return found


def run_manifest(scenario: Scenario, model: BillingModel, key_bits: int,
                 workers: int) -> dict:
    return {
        "scenario_seed": scenario.seed,
        "n_users": scenario.n_users,
        "n_suppliers": scenario.n_suppliers,
        "slots_per_billing_period": scenario.slots_per_billing_period,
        "model": model.value,
        "key_bits": key_bits,
        "workers": workers,
    }
