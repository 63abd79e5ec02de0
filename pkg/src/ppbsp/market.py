"""Domain model of the local energy market: prices, users, slot truths.

A :class:`Scenario` is the full plaintext ground truth for one billing
period: the user/supplier roster, the price schedule, and per-slot meter
readings with the committed volumes and bid outcomes from the (out of
scope) auction. Scenarios are immutable after construction and fully
determined by the generator seed.

Sign conventions: a positive meter reading is net import (consumption), a
negative one net export; a reading of exactly zero is classified as a net
buyer. ``bid_type`` is +1 for a buy bid (consumer) and -1 for a sell offer
(prosumer). Committed volumes are always non-negative.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from decimal import Decimal

from .fixedpoint import from_micro, parse_decimal, to_micro, format_decimal

SCENARIO_FORMAT = "ppbsp-scenario/1"

BUY = 1
SELL = -1


def net_consumption_type(meter_reading) -> int:
    """+1 for net import, -1 for net export; zero counts as net buyer."""
    return SELL if meter_reading < 0 else BUY


def indev_sign(deviation) -> int:
    """Ternary sign of an individual deviation."""
    if deviation > 0:
        return 1
    if deviation < 0:
        return -1
    return 0


@dataclass(frozen=True)
class PriceSchedule:
    """FiT / TP / RP price triple; the constructor enforces the ordering
    0 < fit <= tp <= rp."""

    fit: Decimal
    tp: Decimal
    rp: Decimal

    def __post_init__(self):
        for violation in _schedule_violations(self):
            raise ValueError(violation)


def _schedule_violations(schedule) -> list[str]:
    out = []
    if not (schedule.fit > 0):
        out.append(f"PriceSchedule: fit must be positive, got {schedule.fit}")
    if not (schedule.fit <= schedule.tp <= schedule.rp):
        out.append(
            f"PriceSchedule ordering violated: need fit <= tp <= rp, got "
            f"fit={schedule.fit} tp={schedule.tp} rp={schedule.rp}")
    return out


def _unchecked_schedule(fit: Decimal, tp: Decimal, rp: Decimal) -> PriceSchedule:
    # Loader path: keeps invalid file contents representable so that
    # validate() can report them as data instead of raising mid-parse.
    schedule = object.__new__(PriceSchedule)
    object.__setattr__(schedule, "fit", fit)
    object.__setattr__(schedule, "tp", tp)
    object.__setattr__(schedule, "rp", rp)
    return schedule


DEFAULT_SCHEDULE = PriceSchedule(fit=Decimal("0.05"), tp=Decimal("0.10"), rp=Decimal("0.20"))


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    supplier_id: str
    p2p_participant: bool = True


@dataclass(frozen=True)
class SlotTruth:
    """Ground truth for one user in one trading slot."""

    user_id: str
    committed_volume: Decimal
    meter_reading: Decimal
    bid_accepted: bool
    bid_type: int

    @property
    def deviation(self) -> Decimal:
        """bid_type * reading - committed volume."""
        return self.bid_type * self.meter_reading - self.committed_volume


@dataclass(frozen=True)
class Scenario:
    users: tuple[UserRecord, ...]
    suppliers: tuple[str, ...]
    schedule: PriceSchedule
    slots: tuple[tuple[SlotTruth, ...], ...]
    slots_per_billing_period: int
    seed: int | None = None

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_suppliers(self) -> int:
        return len(self.suppliers)

    def supplier_of(self) -> dict[str, str]:
        return {u.user_id: u.supplier_id for u in self.users}

    def user(self, user_id: str) -> UserRecord:
        return self._index()[user_id]

    def _index(self):
        cached = getattr(self, "_user_index", None)
        if cached is None:
            cached = {u.user_id: u for u in self.users}
            object.__setattr__(self, "_user_index", cached)
        return cached


def users_per_supplier(n_users: int, n_suppliers: int, supplier_index: int) -> int:
    """Customer count for supplier *supplier_index* (0-based) under the
    round-robin assignment used by the generator."""
    return (n_users - supplier_index + n_suppliers - 1) // n_suppliers


def validate(scenario: Scenario) -> list[str]:
    """All invariant violations in *scenario*; empty means well formed."""
    violations = list(_schedule_violations(scenario.schedule))
    if scenario.n_users == 0:
        violations.append("scenario has no users")
    if scenario.n_suppliers == 0:
        violations.append("scenario has no suppliers")
    supplier_set = set(scenario.suppliers)
    if len(supplier_set) != scenario.n_suppliers:
        violations.append("duplicate supplier ids")
    seen_users = set()
    for user in scenario.users:
        if user.user_id in seen_users:
            violations.append(f"duplicate user id {user.user_id}")
        seen_users.add(user.user_id)
        if user.supplier_id not in supplier_set:
            violations.append(
                f"user {user.user_id} references unknown supplier {user.supplier_id}")
    if scenario.slots_per_billing_period != len(scenario.slots):
        violations.append(
            f"slots_per_billing_period={scenario.slots_per_billing_period} "
            f"but {len(scenario.slots)} slots present")
    for slot_index, slot in enumerate(scenario.slots):
        covered = [t.user_id for t in slot]
        if sorted(covered) != sorted(seen_users):
            violations.append(f"slot {slot_index} does not cover every user exactly once")
        for truth in slot:
            if truth.committed_volume < 0:
                violations.append(
                    f"slot {slot_index}: user {truth.user_id} has negative committed volume")
            if truth.bid_type not in (BUY, SELL):
                violations.append(
                    f"slot {slot_index}: user {truth.user_id} has bid_type {truth.bid_type}")
            for label, value in (("committed_volume", truth.committed_volume),
                                 ("meter_reading", truth.meter_reading)):
                try:
                    to_micro(value)
                except ValueError:
                    violations.append(
                        f"slot {slot_index}: user {truth.user_id} {label}={value} "
                        f"is off the micro grid")
    return violations


MAX_COMMITTED_MICRO = 10_000_000  # 10 kWh


def generate(seed: int, n_users: int, n_suppliers: int, n_slots: int,
             deviation_spread, *, rejected_fraction: float = 0.15,
             non_p2p_fraction: float = 0.0,
             schedule: PriceSchedule = DEFAULT_SCHEDULE) -> Scenario:
    """Deterministically generate a scenario.

    Committed volumes are drawn from [0, 10] kWh on the micro grid and the
    accepted buy/sell volumes of each slot are balanced exactly, matching
    the market assumption that P2P volume bought equals volume sold. Slots
    whose accepted bids end up one-sided are downgraded to all-rejected
    (a one-sided auction cannot clear). Deviations are uniform on
    [-deviation_spread, +deviation_spread].
    """
    if n_users < 1 or n_suppliers < 1:
        raise ValueError("need at least one user and one supplier")
    if n_users < n_suppliers:
        raise ValueError("need n_users >= n_suppliers")
    rng = random.Random(seed)
    spread_micro = to_micro(parse_decimal(deviation_spread))
    if spread_micro < 0:
        raise ValueError("deviation_spread must be non-negative")

    suppliers = tuple(f"S_{k + 1}" for k in range(n_suppliers))
    users = tuple(
        UserRecord(user_id=f"U_{i + 1}", supplier_id=suppliers[i % n_suppliers],
                   p2p_participant=rng.random() >= non_p2p_fraction)
        for i in range(n_users))

    slots = []
    for _ in range(n_slots):
        committed = {}
        accepted = {}
        bid_type = {}
        for user in users:
            if user.p2p_participant:
                committed[user.user_id] = rng.randint(0, MAX_COMMITTED_MICRO)
                accepted[user.user_id] = rng.random() >= rejected_fraction
                bid_type[user.user_id] = rng.choice((BUY, SELL))
            else:
                committed[user.user_id] = 0
                accepted[user.user_id] = False
                bid_type[user.user_id] = BUY
        buyers = [u.user_id for u in users if accepted[u.user_id] and bid_type[u.user_id] == BUY]
        sellers = [u.user_id for u in users if accepted[u.user_id] and bid_type[u.user_id] == SELL]
        if not buyers or not sellers:
            for uid in list(accepted):
                accepted[uid] = False
        else:
            _balance_committed(committed, buyers, sellers)
        truths = []
        for user in users:
            uid = user.user_id
            deviation = rng.randint(-spread_micro, spread_micro) if spread_micro else 0
            reading = bid_type[uid] * (committed[uid] + deviation)
            truths.append(SlotTruth(
                user_id=uid,
                committed_volume=from_micro(committed[uid]),
                meter_reading=from_micro(reading),
                bid_accepted=accepted[uid],
                bid_type=bid_type[uid]))
        slots.append(tuple(truths))

    return Scenario(users=users, suppliers=suppliers, schedule=schedule,
                    slots=tuple(slots), slots_per_billing_period=n_slots, seed=seed)


def _balance_committed(committed: dict, buyers: list, sellers: list) -> None:
    # Shave the heavier side down until accepted buy volume == sell volume.
    buy_total = sum(committed[u] for u in buyers)
    sell_total = sum(committed[u] for u in sellers)
    heavier = buyers if buy_total > sell_total else sellers
    excess = abs(buy_total - sell_total)
    for uid in heavier:
        if excess == 0:
            break
        cut = min(excess, committed[uid])
        committed[uid] -= cut
        excess -= cut


def to_json(scenario: Scenario) -> str:
    """Serialize with all numeric fields as decimal strings."""
    doc = {
        "format": SCENARIO_FORMAT,
        "seed": scenario.seed,
        "schedule": {
            "fit": format_decimal(scenario.schedule.fit),
            "tp": format_decimal(scenario.schedule.tp),
            "rp": format_decimal(scenario.schedule.rp),
        },
        "suppliers": list(scenario.suppliers),
        "users": [
            {"user_id": u.user_id, "supplier_id": u.supplier_id,
             "p2p_participant": u.p2p_participant}
            for u in scenario.users
        ],
        "slots_per_billing_period": scenario.slots_per_billing_period,
        "slots": [
            [
                {"user_id": t.user_id,
                 "committed_volume": format_decimal(t.committed_volume),
                 "meter_reading": format_decimal(t.meter_reading),
                 "bid_accepted": t.bid_accepted,
                 "bid_type": t.bid_type}
                for t in slot
            ]
            for slot in scenario.slots
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def from_json(text: str) -> Scenario:
    doc = json.loads(text)
    if doc.get("format") != SCENARIO_FORMAT:
        raise ValueError(f"not a {SCENARIO_FORMAT} document")
    raw = doc["schedule"]
    fit, tp, rp = (parse_decimal(raw[k]) for k in ("fit", "tp", "rp"))
    if _schedule_violations(_unchecked_schedule(fit, tp, rp)):
        schedule = _unchecked_schedule(fit, tp, rp)
    else:
        schedule = PriceSchedule(fit=fit, tp=tp, rp=rp)
    users = tuple(UserRecord(u["user_id"], u["supplier_id"], bool(u["p2p_participant"]))
                  for u in doc["users"])
    slots = tuple(
        tuple(SlotTruth(user_id=t["user_id"],
                        committed_volume=parse_decimal(t["committed_volume"]),
                        meter_reading=parse_decimal(t["meter_reading"]),
                        bid_accepted=bool(t["bid_accepted"]),
                        bid_type=int(t["bid_type"]))
              for t in slot)
        for slot in doc["slots"])
    return Scenario(users=users, suppliers=tuple(doc["suppliers"]), schedule=schedule,
                    slots=slots, slots_per_billing_period=int(doc["slots_per_billing_period"]),
                    seed=doc.get("seed"))
