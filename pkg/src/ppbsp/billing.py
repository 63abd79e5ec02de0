"""The four partial-bill models over ciphertexts, plus their plaintext oracle.

Every model maps one user-slot to a single signed account delta (positive:
the user owes their supplier; negative: the user is owed) and to the
supplier's retail-market income/expenditure for that trade. Branch
selection uses only the plaintext payload flags and, for the weighted
models, the grid operator's decrypted market aggregates; individual
ciphertexts are never compared or decrypted here.

Models:

* ``STATUS_QUO``     - everyone trades their whole metered volume with the
  supplier: net buyers at RP, net sellers at FiT. Also the fallback for
  rejected bids and non-participants inside the other models.
* ``INDIVIDUAL``     - committed volume at TP, each user's own deviation
  bought/sold at the retail market (RP/FiT by direction).
* ``SOCIAL``         - consumer deviations are netted against each other
  and only the unmatched remainder (weighted by each user's share of the
  matching aggregate) touches the retail market; prosumers analogously.
* ``UNIVERSAL``      - consumer and prosumer deviations are netted
  together: users pushing the total deviation away from zero settle a
  proportional remainder at the retail market, everyone else trades their
  actual reading at TP.

Aggregate ratios are rounded onto the 10^-12 grid before being applied
(finely enough that market-wide money conservation holds to well below one
micro-unit), and the oracle applies the identically rounded ratio, so a
decrypted pipeline bill equals the oracle bill exactly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction

from . import ops, phe
from .fixedpoint import MICRO_EXPONENT, RATIO_EXPONENT, as_fraction, dsum, quantize_ratio
from .market import BUY, SELL, PriceSchedule, SlotTruth
from .meter import MeterPayload


class BillingModel(Enum):
    STATUS_QUO = "status_quo"
    INDIVIDUAL = "individual"
    SOCIAL = "social"
    UNIVERSAL = "universal"


class KeyDomain(Enum):
    SUPPLIER = "supplier"
    GRID_OPERATOR = "gridop"


P2P_MODELS = (BillingModel.INDIVIDUAL, BillingModel.SOCIAL, BillingModel.UNIVERSAL)


@dataclass(frozen=True)
class PlainAggregates:
    """Market-wide deviation aggregates for one slot (all non-negative)."""

    t_c_under: Decimal
    t_c_over: Decimal
    t_p_under: Decimal
    t_p_over: Decimal

    @property
    def tdd(self) -> Decimal:
        """Total demand deviation: t_c_over - t_c_under."""
        return self.t_c_over - self.t_c_under

    @property
    def tsd(self) -> Decimal:
        """Total supply deviation: t_p_over - t_p_under."""
        return self.t_p_over - self.t_p_under

    @property
    def t_up(self) -> Decimal:
        return self.t_c_under + self.t_p_over

    @property
    def t_down(self) -> Decimal:
        return self.t_c_over + self.t_p_under

    @property
    def td(self) -> Decimal:
        """Total deviation: tsd - tdd == t_up - t_down."""
        return self.tsd - self.tdd

    @classmethod
    def from_truths(cls, truths) -> "PlainAggregates":
        """Plaintext aggregates of the accepted bids (oracle side)."""
        c_under = c_over = p_under = p_over = Decimal(0)
        for truth in truths:
            if not truth.bid_accepted:
                continue
            deviation = truth.deviation
            if truth.bid_type == BUY:
                if deviation > 0:
                    c_over += deviation
                elif deviation < 0:
                    c_under += -deviation
            else:
                if deviation > 0:
                    p_over += deviation
                elif deviation < 0:
                    p_under += -deviation
        return cls(c_under, c_over, p_under, p_over)


@dataclass(frozen=True)
class AddressedPayload:
    """A meter payload together with its routing identity."""

    user_id: str
    supplier_id: str
    payload: MeterPayload


@dataclass
class SlotBillOutput:
    """Encrypted result of one billing run (one key domain, one slot)."""

    domain: KeyDomain
    bill_or_reward: dict[str, phe.Ciphertext]     # per user, signed account delta
    income: dict[str, phe.Ciphertext]             # per supplier
    expenditure: dict[str, phe.Ciphertext]        # per supplier
    balance: dict[str, phe.Ciphertext]            # per supplier, income - expenditure


def _sign(value) -> int:
    return (value > 0) - (value < 0)


class _ScalarBank:
    """Per-public-key cache of encoded plaintext scalars."""

    def __init__(self, schedule: PriceSchedule):
        self.schedule = schedule
        self._cache = {}

    def get(self, public_key, value, exponent=MICRO_EXPONENT):
        key = (public_key.fingerprint, str(value), exponent)
        enc = self._cache.get(key)
        if enc is None:
            enc = phe.encode(public_key, value, exponent=exponent)
            self._cache[key] = enc
        return enc


@dataclass(frozen=True)
class _Ratios:
    """The quantized redistribution ratios a model needs for one slot."""

    consumer: Decimal | None = None
    prosumer: Decimal | None = None
    universal: Decimal | None = None


def _model_ratios(model: BillingModel, aggregates: PlainAggregates | None) -> _Ratios:
    if model is BillingModel.SOCIAL:
        consumer = prosumer = None
        if aggregates.tdd > 0:
            consumer = quantize_ratio(aggregates.t_c_under, aggregates.t_c_over)
        elif aggregates.tdd < 0:
            consumer = quantize_ratio(aggregates.t_c_over, aggregates.t_c_under)
        if aggregates.tsd > 0:
            prosumer = quantize_ratio(aggregates.t_p_under, aggregates.t_p_over)
        elif aggregates.tsd < 0:
            prosumer = quantize_ratio(aggregates.t_p_over, aggregates.t_p_under)
        return _Ratios(consumer=consumer, prosumer=prosumer)
    if model is BillingModel.UNIVERSAL:
        universal = None
        if aggregates.td < 0:
            universal = quantize_ratio(aggregates.t_up, aggregates.t_down)
        elif aggregates.td > 0:
            universal = quantize_ratio(aggregates.t_down, aggregates.t_up)
        return _Ratios(universal=universal)
    return _Ratios()


# --------------------------------------------------------------------------
# Encrypted pipeline
# --------------------------------------------------------------------------

def _domain_cts(payload: MeterPayload, domain: KeyDomain):
    if domain is KeyDomain.SUPPLIER:
        return payload.committed_for_supplier, payload.indev_for_supplier
    return payload.committed_for_gridop, payload.indev_for_gridop


def _status_quo_user(payload, committed, indev, bank):
    public_key = committed.public_key
    # Reconstructed reading is bid_type * U_val; flipping it when the net
    # consumption direction disagrees with the bid leaves |U_val|.
    reading = phe.hom_add(committed, indev)
    if payload.net_consumption_type != payload.bid_type:
        reading = phe.negate(reading)
    if payload.net_consumption_type == BUY:
        bill = phe.mul_plain(reading, bank.get(public_key, bank.schedule.rp))
        return bill, bill, None
    reward = phe.mul_plain(reading, bank.get(public_key, bank.schedule.fit))
    return phe.negate(reward), None, reward


def _individual_user(payload, committed, indev, bank):
    public_key = committed.public_key
    sign = payload.indev_sign
    base = phe.mul_plain(committed, bank.get(public_key, bank.schedule.tp))
    if sign == 0:
        delta = base if payload.bid_type == BUY else phe.negate(base)
        return delta, None, None
    if payload.bid_type == BUY:
        price = bank.schedule.rp if sign > 0 else bank.schedule.fit
        term = phe.mul_plain(indev, bank.get(public_key, price))
        delta = phe.hom_add(base, term)
        if sign > 0:
            return delta, term, None
        return delta, None, phe.negate(term)
    price = bank.schedule.fit if sign > 0 else bank.schedule.rp
    term = phe.mul_plain(indev, bank.get(public_key, price))
    reward = phe.hom_add(base, term)
    if sign > 0:
        return phe.negate(reward), None, term
    return phe.negate(reward), phe.negate(term), None


def _weighted_user(committed, indev, bank, ratio, rm_price, supplier_buys):
    """Shared shape of the matched-sign branches of the weighted models:
    (committed + indev*ratio)*TP + indev*(1-ratio)*rm_price."""
    public_key = committed.public_key
    part = phe.mul_plain(indev, bank.get(public_key, ratio, RATIO_EXPONENT))
    volume = phe.hom_add(committed, part)
    at_tp = phe.mul_plain(volume, bank.get(public_key, bank.schedule.tp))
    remainder = phe.mul_plain(indev, bank.get(public_key, 1 - ratio, RATIO_EXPONENT))
    rm_term = phe.mul_plain(remainder, bank.get(public_key, rm_price))
    settled = phe.hom_add(at_tp, rm_term)
    if supplier_buys:
        # supplier pays the user for the remainder (expenditure)
        return settled, None, rm_term
    return settled, rm_term, None


def _actual_at_tp(committed, indev, bank):
    actual = phe.hom_add(committed, indev)
    return phe.mul_plain(actual, bank.get(committed.public_key, bank.schedule.tp))


def _social_user(payload, committed, indev, bank, aggregates, ratios):
    sign = payload.indev_sign
    if payload.bid_type == BUY:
        tdd_sign = _sign(aggregates.tdd)
        if tdd_sign == 0 or sign == 0 or sign != tdd_sign:
            return _actual_at_tp(committed, indev, bank), None, None
        if tdd_sign > 0:
            bill, inc, exp = _weighted_user(committed, indev, bank, ratios.consumer,
                                            bank.schedule.rp, supplier_buys=False)
            return bill, inc, exp
        bill, _, exp = _weighted_user(committed, indev, bank, ratios.consumer,
                                      bank.schedule.fit, supplier_buys=True)
        # indev < 0: the supplier buys |indev|*(1-ratio) at FiT
        return bill, None, phe.negate(exp)
    tsd_sign = _sign(aggregates.tsd)
    if tsd_sign == 0 or sign == 0 or sign != tsd_sign:
        return phe.negate(_actual_at_tp(committed, indev, bank)), None, None
    if tsd_sign > 0:
        reward, _, exp = _weighted_user(committed, indev, bank, ratios.prosumer,
                                        bank.schedule.fit, supplier_buys=True)
        return phe.negate(reward), None, exp
    reward, inc, _ = _weighted_user(committed, indev, bank, ratios.prosumer,
                                    bank.schedule.rp, supplier_buys=False)
    # indev < 0: the user buys |indev|*(1-ratio) at RP from the supplier
    return phe.negate(reward), phe.negate(inc), None


def _universal_user(payload, committed, indev, bank, aggregates, ratios):
    sign = payload.indev_sign
    td_sign = _sign(aggregates.td)
    is_consumer = payload.bid_type == BUY
    # Downtrenders pull the total deviation down (over-consumers and
    # under-suppliers); uptrenders push it up.
    is_downtrender = (is_consumer and sign > 0) or (not is_consumer and sign < 0)
    is_uptrender = (is_consumer and sign < 0) or (not is_consumer and sign > 0)
    settles_remainder = ((td_sign < 0 and is_downtrender)
                         or (td_sign > 0 and is_uptrender))
    if td_sign == 0 or not settles_remainder:
        bill = _actual_at_tp(committed, indev, bank)
        return (bill, None, None) if is_consumer else (phe.negate(bill), None, None)
    rm_price = bank.schedule.rp if td_sign < 0 else bank.schedule.fit
    settled, rm_term, _ = _weighted_user(committed, indev, bank, ratios.universal,
                                         rm_price, supplier_buys=False)
    if is_consumer:
        if sign > 0:       # over-consumer buys the remainder at RP
            return settled, rm_term, None
        # under-consumer sells the remainder at FiT (rm_term is negative)
        return settled, None, phe.negate(rm_term)
    if sign < 0:           # under-supplier buys the remainder at RP
        return phe.negate(settled), phe.negate(rm_term), None
    # over-supplier sells the remainder at FiT
    return phe.negate(settled), None, rm_term


def _bill_one(model, addressed, domain, bank, aggregates, ratios):
    payload = addressed.payload
    committed, indev = _domain_cts(payload, domain)
    ops.tick(ops.BILL_CALC)
    if model is BillingModel.STATUS_QUO or not payload.is_bid_accepted:
        delta, inc, exp = _status_quo_user(payload, committed, indev, bank)
    elif model is BillingModel.INDIVIDUAL:
        delta, inc, exp = _individual_user(payload, committed, indev, bank)
    elif model is BillingModel.SOCIAL:
        delta, inc, exp = _social_user(payload, committed, indev, bank, aggregates, ratios)
    else:
        delta, inc, exp = _universal_user(payload, committed, indev, bank, aggregates, ratios)
    return addressed.user_id, addressed.supplier_id, delta, inc, exp


def _run_model(model, payloads, schedule, domain, supplier_keys,
               aggregates=None, workers: int = 1) -> SlotBillOutput:
    if model in (BillingModel.SOCIAL, BillingModel.UNIVERSAL) and aggregates is None:
        raise ValueError(f"{model.value} billing requires decrypted aggregates")
    bank = _ScalarBank(schedule)
    ratios = _model_ratios(model, aggregates)

    def job(addressed):
        return _bill_one(model, addressed, domain, bank, aggregates, ratios)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, payloads))
    else:
        results = [job(a) for a in payloads]

    bills: dict[str, phe.Ciphertext] = {}
    income: dict[str, phe.Ciphertext] = {}
    expenditure: dict[str, phe.Ciphertext] = {}
    for user_id, supplier_id, delta, inc, exp in results:
        bills[user_id] = delta
        if inc is not None:
            income[supplier_id] = phe.hom_add(income[supplier_id], inc) \
                if supplier_id in income else inc
        if exp is not None:
            expenditure[supplier_id] = phe.hom_add(expenditure[supplier_id], exp) \
                if supplier_id in expenditure else exp
    balance = {}
    for supplier_id, public_key in supplier_keys.items():
        inc = income.setdefault(supplier_id, phe.zero_ciphertext(public_key, 2 * MICRO_EXPONENT))
        exp = expenditure.setdefault(supplier_id, phe.zero_ciphertext(public_key, 2 * MICRO_EXPONENT))
        balance[supplier_id] = phe.hom_sub(inc, exp)
    return SlotBillOutput(domain=domain, bill_or_reward=bills, income=income,
                          expenditure=expenditure, balance=balance)


def bill_status_quo(payloads, schedule, domain, supplier_keys, *, workers=1) -> SlotBillOutput:
    """Retail-only billing: net buyers pay RP, net sellers earn FiT."""
    return _run_model(BillingModel.STATUS_QUO, payloads, schedule, domain,
                      supplier_keys, workers=workers)


def bill_individual_split(payloads, schedule, domain, supplier_keys, *, workers=1) -> SlotBillOutput:
    """Committed volume at TP; each deviation settled alone at RP/FiT."""
    return _run_model(BillingModel.INDIVIDUAL, payloads, schedule, domain,
                      supplier_keys, workers=workers)


def bill_social_split(payloads, schedule, aggregates, domain, supplier_keys, *,
                      workers=1) -> SlotBillOutput:
    """Deviations netted within consumers and within prosumers, remainder
    settled at the retail market pro rata."""
    return _run_model(BillingModel.SOCIAL, payloads, schedule, domain,
                      supplier_keys, aggregates=aggregates, workers=workers)


def bill_universal_split(payloads, schedule, aggregates, domain, supplier_keys, *,
                         workers=1) -> SlotBillOutput:
    """Consumer and prosumer deviations netted together; only the market-wide
    remainder reaches the retail market."""
    return _run_model(BillingModel.UNIVERSAL, payloads, schedule, domain,
                      supplier_keys, aggregates=aggregates, workers=workers)


def bill_slot(model: BillingModel, payloads, schedule, domain, supplier_keys, *,
              aggregates=None, workers=1) -> SlotBillOutput:
    if model is BillingModel.STATUS_QUO:
        return bill_status_quo(payloads, schedule, domain, supplier_keys, workers=workers)
    if model is BillingModel.INDIVIDUAL:
        return bill_individual_split(payloads, schedule, domain, supplier_keys, workers=workers)
    if model is BillingModel.SOCIAL:
        return bill_social_split(payloads, schedule, aggregates, domain, supplier_keys,
                                 workers=workers)
    if model is BillingModel.UNIVERSAL:
        return bill_universal_split(payloads, schedule, aggregates, domain, supplier_keys,
                                    workers=workers)
    raise ValueError(f"unknown model {model}")


# --------------------------------------------------------------------------
# Plaintext oracle
# --------------------------------------------------------------------------

@dataclass
class OracleSlotResult:
    """Exact plaintext twin of a billing run, in rational arithmetic."""

    bill_or_reward: dict[str, Fraction]
    income: dict[str, Fraction]
    expenditure: dict[str, Fraction]
    balance: dict[str, Fraction]
    rm_volume: Fraction

    def conservation_gap(self) -> Fraction:
        """sum(deltas) - sum(balances); the net P2P-internal transfer."""
        return sum(self.bill_or_reward.values(), Fraction(0)) \
            - sum(self.balance.values(), Fraction(0))


def _oracle_status_quo(truth: SlotTruth, fit, tp, rp):
    reading = abs(as_fraction(truth.meter_reading))
    if truth.meter_reading >= 0:
        bill = reading * rp
        return bill, bill, Fraction(0)
    reward = reading * fit
    return -reward, Fraction(0), reward


def _oracle_individual(truth: SlotTruth, fit, tp, rp):
    committed = as_fraction(truth.committed_volume)
    deviation = as_fraction(truth.deviation)
    base = committed * tp
    inc = exp = Fraction(0)
    if truth.bid_type == BUY:
        if deviation > 0:
            delta = base + deviation * rp
            inc = deviation * rp
        elif deviation < 0:
            delta = base + deviation * fit
            exp = -deviation * fit
        else:
            delta = base
        return delta, inc, exp
    if deviation > 0:
        reward = base + deviation * fit
        exp = deviation * fit
    elif deviation < 0:
        reward = base + deviation * rp
        inc = -deviation * rp
    else:
        reward = base
    return -reward, inc, exp


def _oracle_weighted(committed, deviation, ratio, tp, rm_price):
    settled = (committed + deviation * ratio) * tp + deviation * (1 - ratio) * rm_price
    rm_term = deviation * (1 - ratio) * rm_price
    return settled, rm_term


def _oracle_social(truth: SlotTruth, fit, tp, rp, aggregates, ratios):
    committed = as_fraction(truth.committed_volume)
    deviation = as_fraction(truth.deviation)
    sign = _sign(deviation)
    inc = exp = Fraction(0)
    if truth.bid_type == BUY:
        tdd_sign = _sign(aggregates.tdd)
        if tdd_sign == 0 or sign == 0 or sign != tdd_sign:
            return (committed + deviation) * tp, inc, exp
        ratio = as_fraction(ratios.consumer)
        if tdd_sign > 0:
            bill, rm_term = _oracle_weighted(committed, deviation, ratio, tp, rp)
            return bill, rm_term, Fraction(0)
        bill, rm_term = _oracle_weighted(committed, deviation, ratio, tp, fit)
        return bill, Fraction(0), -rm_term
    tsd_sign = _sign(aggregates.tsd)
    if tsd_sign == 0 or sign == 0 or sign != tsd_sign:
        return -(committed + deviation) * tp, inc, exp
    ratio = as_fraction(ratios.prosumer)
    if tsd_sign > 0:
        reward, rm_term = _oracle_weighted(committed, deviation, ratio, tp, fit)
        return -reward, Fraction(0), rm_term
    reward, rm_term = _oracle_weighted(committed, deviation, ratio, tp, rp)
    return -reward, -rm_term, Fraction(0)


def _oracle_universal(truth: SlotTruth, fit, tp, rp, aggregates, ratios):
    committed = as_fraction(truth.committed_volume)
    deviation = as_fraction(truth.deviation)
    sign = _sign(deviation)
    td_sign = _sign(aggregates.td)
    is_consumer = truth.bid_type == BUY
    is_downtrender = (is_consumer and sign > 0) or (not is_consumer and sign < 0)
    is_uptrender = (is_consumer and sign < 0) or (not is_consumer and sign > 0)
    settles_remainder = ((td_sign < 0 and is_downtrender)
                         or (td_sign > 0 and is_uptrender))
    if td_sign == 0 or not settles_remainder:
        actual = (committed + deviation) * tp
        return (actual if is_consumer else -actual), Fraction(0), Fraction(0)
    ratio = as_fraction(ratios.universal)
    rm_price = rp if td_sign < 0 else fit
    settled, rm_term = _oracle_weighted(committed, deviation, ratio, tp, rm_price)
    if is_consumer:
        if sign > 0:
            return settled, rm_term, Fraction(0)
        return settled, Fraction(0), -rm_term
    if sign < 0:
        return -settled, -rm_term, Fraction(0)
    return -settled, Fraction(0), rm_term


def oracle_bill(model: BillingModel, truths, schedule: PriceSchedule,
                supplier_of) -> OracleSlotResult:
    """Evaluate one slot of *model* on plaintext truths, exactly.

    This is the independent ground truth the encrypted pipeline is checked
    against: same branch logic and identically quantized ratios, but pure
    rational arithmetic with no ciphertexts anywhere.
    """
    fit, tp, rp = (as_fraction(x) for x in (schedule.fit, schedule.tp, schedule.rp))
    aggregates = PlainAggregates.from_truths(truths)
    ratios = _model_ratios(model, aggregates)
    bills: dict[str, Fraction] = {}
    income: dict[str, Fraction] = {}
    expenditure: dict[str, Fraction] = {}
    for truth in truths:
        if model is BillingModel.STATUS_QUO or not truth.bid_accepted:
            delta, inc, exp = _oracle_status_quo(truth, fit, tp, rp)
        elif model is BillingModel.INDIVIDUAL:
            delta, inc, exp = _oracle_individual(truth, fit, tp, rp)
        elif model is BillingModel.SOCIAL:
            delta, inc, exp = _oracle_social(truth, fit, tp, rp, aggregates, ratios)
        elif model is BillingModel.UNIVERSAL:
            delta, inc, exp = _oracle_universal(truth, fit, tp, rp, aggregates, ratios)
        else:
            raise ValueError(f"unknown model {model}")
        bills[truth.user_id] = delta
        supplier_id = supplier_of[truth.user_id]
        income[supplier_id] = income.get(supplier_id, Fraction(0)) + inc
        expenditure[supplier_id] = expenditure.get(supplier_id, Fraction(0)) + exp
    for supplier_id in set(supplier_of.values()):
        income.setdefault(supplier_id, Fraction(0))
        expenditure.setdefault(supplier_id, Fraction(0))
    balance = {sid: income[sid] - expenditure[sid] for sid in income}
    return OracleSlotResult(bill_or_reward=bills, income=income,
                            expenditure=expenditure, balance=balance,
                            rm_volume=as_fraction(rm_volume(model, truths)))


def rm_volume(model: BillingModel, truths) -> Decimal:
    """Energy volume the model routes through the retail market.

    Status quo counts every metered volume; the P2P models count only the
    accepted bids' deviations: all of them (individual), netted per side
    (social: |TDD| + |TSD|), or netted market-wide (universal: |TD|).
    """
    if model is BillingModel.STATUS_QUO:
        return dsum(abs(t.meter_reading) for t in truths)
    accepted = [t for t in truths if t.bid_accepted]
    if model is BillingModel.INDIVIDUAL:
        return dsum(abs(t.deviation) for t in accepted)
    aggregates = PlainAggregates.from_truths(accepted)
    if model is BillingModel.SOCIAL:
        return abs(aggregates.tdd) + abs(aggregates.tsd)
    if model is BillingModel.UNIVERSAL:
        return abs(aggregates.td)
    raise ValueError(f"unknown model {model}")
