"""Command-line driver: generate scenarios, run simulations, benchmark, audit.

Exit code contract for `run`: 0 iff the regulator's verdict is settled and,
when --verify is passed, every decrypted output matches the plaintext
oracle. All emitted numbers are decimal strings; re-running with the same
manifest reproduces byte-identical CSVs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from decimal import Decimal
from pathlib import Path

from . import market, phe, simnet
from .billing import BillingModel
from .fixedpoint import format_decimal

MODEL_NAMES = [m.value for m in BillingModel]


def _workers_fallback(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("PPBSP_WORKERS")
    return int(env) if env else 1


def cmd_generate(args) -> int:
    scenario = market.generate(
        seed=args.seed, n_users=args.users, n_suppliers=args.suppliers,
        n_slots=args.slots, deviation_spread=args.spread,
        rejected_fraction=args.rejected_fraction,
        non_p2p_fraction=args.non_p2p_fraction)
    violations = market.validate(scenario)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.write_text(market.to_json(scenario))
    nonzero = sum(1 for slot in scenario.slots for t in slot if t.deviation != 0)
    print(f"wrote {out}")
    print(f"users={scenario.n_users} suppliers={scenario.n_suppliers} "
          f"slots={scenario.slots_per_billing_period}")
    print(f"nonzero deviations: {nonzero}")
    return 0


def _load_scenario(path: str) -> market.Scenario:
    scenario = market.from_json(Path(path).read_text())
    violations = market.validate(scenario)
    if violations:
        raise ValueError("invalid scenario: " + "; ".join(violations))
    return scenario


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario)
    model = BillingModel(args.model)
    workers = _workers_fallback(args.workers)
    sim = simnet.Simulation(scenario, model, key_bits=args.key_bits, workers=workers)
    result = sim.run(inject_dishonest=args.inject_dishonest_supplier)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    supplier_of = scenario.supplier_of()
    bill_lines = ["user_id,supplier_id,monthly_bill"]
    for user in scenario.users:
        bill_lines.append(f"{user.user_id},{supplier_of[user.user_id]},"
                          f"{format_decimal(result.monthly_bills[user.user_id])}")
    (out_dir / "monthly_bills.csv").write_text("\n".join(bill_lines) + "\n")
    (out_dir / "metrics.csv").write_text(simnet.metrics_csv(result.metrics))
    (out_dir / "regulator_report.json").write_text(result.regulator_report.to_json())
    manifest = simnet.run_manifest(scenario, model, args.key_bits, workers)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    summary = {
        "verdict": result.regulator_report.verdict,
        "rm_volume_total": format_decimal(result.rm_volume_total),
        "rm_volume_per_slot": [format_decimal(v) for v in result.rm_volume_per_slot],
        "residues": {sid: format_decimal(ledger.residue)
                     for sid, ledger in sorted(result.supplier_ledgers.items())},
    }
    (out_dir / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    ok = result.regulator_report.verdict == "settled"
    if not ok:
        flagged = [f.supplier_id for f in result.regulator_report.findings]
        print(f"audit required; flagged suppliers: {', '.join(flagged) or 'none'}",
              file=sys.stderr)
    if args.verify:
        mismatches = simnet.verify_against_oracle(scenario, model, result)
        for m in mismatches:
            print(f"oracle mismatch: {m}", file=sys.stderr)
        ok = ok and not mismatches
        if not mismatches:
            print("oracle verification: all decrypted outputs match")
    print(f"verdict: {result.regulator_report.verdict}")
    print(f"retail-market volume: {format_decimal(result.rm_volume_total)} kWh")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    report = simnet.benchmark_primitives(key_bits=args.key_bits, repetitions=args.reps)
    out = Path(args.out)
    out.write_text(report.csv())
    print(report.csv(), end="")
    ordered = (report.mean("HomoEnc") > report.mean("HomoDec") > report.mean("BillCalc"))
    keygen_dominates = report.mean("KeyGen") > max(
        report.mean("HomoEnc"), report.mean("HomoDec"), report.mean("BillCalc"))
    print(f"ordering HomoEnc > HomoDec > BillCalc: {'holds' if ordered else 'VIOLATED'}")
    print(f"KeyGen dominates: {'holds' if keygen_dominates else 'VIOLATED'}")
    return 0


def cmd_audit(args) -> int:
    scenario = _load_scenario(args.scenario)
    model = BillingModel(args.model)
    workers = _workers_fallback(args.workers)
    sim = simnet.Simulation(scenario, model, key_bits=args.key_bits, workers=workers)
    result = sim.run(inject_dishonest=args.inject_dishonest_supplier,
                     perturbation=Decimal(args.perturbation))
    report = result.regulator_report
    print(report.to_json(), end="")
    flagged = {f.supplier_id for f in report.findings}
    if args.inject_dishonest_supplier:
        expected = {args.inject_dishonest_supplier}
        return 0 if (report.verdict == "audit_required" and flagged == expected) else 1
    return 0 if report.verdict == "settled" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppbsp",
        description="Privacy-preserving billing and settlements for P2P energy markets")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a scenario file")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--users", type=int, required=True)
    gen.add_argument("--suppliers", type=int, required=True)
    gen.add_argument("--slots", type=int, required=True)
    gen.add_argument("--spread", default="1.0", help="deviation spread in kWh")
    gen.add_argument("--rejected-fraction", type=float, default=0.15)
    gen.add_argument("--non-p2p-fraction", type=float, default=0.0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(fn=cmd_generate)

    run = sub.add_parser("run", help="run one billing period")
    run.add_argument("--scenario", required=True)
    run.add_argument("--model", choices=MODEL_NAMES, required=True)
    run.add_argument("--key-bits", type=int, default=phe.DEFAULT_KEY_BITS)
    run.add_argument("--out", required=True)
    run.add_argument("--workers", type=int, default=None,
                     help="parallel bill workers (default: PPBSP_WORKERS or 1)")
    run.add_argument("--verify", action="store_true",
                     help="check every decrypted output against the plaintext oracle")
    run.add_argument("--inject-dishonest-supplier", default=None, metavar="SUPPLIER_ID")
    run.set_defaults(fn=cmd_run)

    bench = sub.add_parser("bench", help="benchmark the crypto primitives")
    bench.add_argument("--key-bits", type=int, default=phe.DEFAULT_KEY_BITS)
    bench.add_argument("--reps", type=int, default=1000)
    bench.add_argument("--out", default="bench.csv")
    bench.set_defaults(fn=cmd_bench)

    aud = sub.add_parser("audit", help="run settlement and print the regulator report")
    aud.add_argument("--scenario", required=True)
    aud.add_argument("--model", choices=MODEL_NAMES, default="individual")
    aud.add_argument("--key-bits", type=int, default=phe.DEFAULT_KEY_BITS)
    aud.add_argument("--workers", type=int, default=None)
    aud.add_argument("--inject-dishonest-supplier", default=None, metavar="SUPPLIER_ID")
    aud.add_argument("--perturbation", default="0.10")
    aud.set_defaults(fn=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
