"""Privacy-preserving billing and settlements for P2P local energy markets.

Smart meters encrypt their committed volumes and deviations under additive
homomorphic (Paillier) keys; the trading platform computes every partial
bill on ciphertexts; the grid operator decrypts only market-wide
aggregates; suppliers see only their own balance changes and their
customers' final monthly bills; and a regulator checks that the suppliers'
P2P residues sum to zero, with a grid-operator audit path when they do not.
"""

from .billing import (AddressedPayload, BillingModel, KeyDomain, PlainAggregates,
                      SlotBillOutput, bill_individual_split, bill_slot,
                      bill_social_split, bill_status_quo, bill_universal_split,
                      oracle_bill, rm_volume)
from .market import (DEFAULT_SCHEDULE, PriceSchedule, Scenario, SlotTruth,
                     UserRecord, generate, validate)
from .meter import MeterPayload, build_payload, individual_deviation
from .phe import (Ciphertext, EncodedNumber, EncodingOverflowError,
                  InvalidBlindingError, KeyMismatchError, PheError, PrivateKey,
                  PublicKey, decode, decrypt, encode, encrypt, hom_add, hom_sub,
                  keygen, mul_plain, negate)
from .settlement import (EncryptedAggregates, RegulatorReport, SupplierLedger,
                         aggregate_deviations, audit, gridop_decrypt_aggregates,
                         regulator_check, supplier_settle)
from .simnet import (BillingPeriodResult, KeySet, MetricsLedger, PayloadTape,
                     Simulation, benchmark_primitives, verify_against_oracle)

__version__ = "0.1.0"
