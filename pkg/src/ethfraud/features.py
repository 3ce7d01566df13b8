"""Per-account transaction aggregates (the 13 explanatory variables)."""

from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import FEATURE_NAMES, Dataset, label_code
from .ingest import Transaction

WEI_PER_ETHER = 10**18
WEI_PER_GWEI = 10**9
SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class FeatureVector:
    it: int    # incoming transactions
    ot: int    # outgoing transactions
    uit: int   # distinct senders
    uot: int   # distinct recipients
    avit: float  # ether
    avot: float
    vit: float
    vot: float
    atit: float  # seconds
    atot: float
    agp: float   # gwei
    agl: float
    dur: float   # days

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def _mean_gap(timestamps: list[int]) -> float:
    if len(timestamps) < 2:
        return 0.0
    # timestamps are sorted, so the consecutive gaps telescope
    return (timestamps[-1] - timestamps[0]) / (len(timestamps) - 1)


def extract_features(address: str, txs: Sequence[Transaction]) -> FeatureVector:
    """Aggregate one account's successful transactions, sorted ascending by time.

    A self-transfer counts as both incoming and outgoing. Gas price and gas
    limit are averaged over all of the account's transactions.
    """
    if not txs:
        raise ValueError(f"{address}: no transactions")
    prev = None
    for tx in txs:
        if not tx.involves(address):
            raise ValueError(f"{address}: transaction {tx.tx_hash} does not involve the account")
        if tx.is_error:
            raise ValueError(f"{address}: failed transaction {tx.tx_hash} must be filtered out")
        if prev is not None and tx.timestamp < prev:
            raise ValueError(f"{address}: transactions not sorted by timestamp")
        prev = tx.timestamp

    incoming = [t for t in txs if t.recipient == address]
    outgoing = [t for t in txs if t.sender == address]
    vit_wei = sum(t.value_wei for t in incoming)
    vot_wei = sum(t.value_wei for t in outgoing)
    it, ot = len(incoming), len(outgoing)
    return FeatureVector(
        it=it,
        ot=ot,
        uit=len({t.sender for t in incoming}),
        uot=len({t.recipient for t in outgoing}),
        avit=vit_wei / (it * WEI_PER_ETHER) if it else 0.0,
        avot=vot_wei / (ot * WEI_PER_ETHER) if ot else 0.0,
        vit=vit_wei / WEI_PER_ETHER,
        vot=vot_wei / WEI_PER_ETHER,
        atit=_mean_gap([t.timestamp for t in incoming]),
        atot=_mean_gap([t.timestamp for t in outgoing]),
        agp=sum(t.gas_price_wei for t in txs) / (len(txs) * WEI_PER_GWEI),
        agl=sum(t.gas_limit for t in txs) / len(txs),
        dur=(txs[-1].timestamp - txs[0].timestamp) / SECONDS_PER_DAY,
    )


def build_feature_table(tx_map: Mapping[str, Sequence[Transaction]],
                        labels: Mapping[str, str]) -> tuple[Dataset, list[str]]:
    """One row per labeled address with usable transactions, in sorted-address order.

    Returns the dataset and the skip report: labeled addresses that had no
    successful transactions and were therefore left out.
    """
    addresses, rows, codes, skipped = [], [], [], []
    for address in sorted(labels):
        txs = [t for t in tx_map.get(address, ()) if not t.is_error]
        if not txs:
            skipped.append(address)
            continue
        txs.sort(key=lambda t: t.timestamp)
        addresses.append(address)
        rows.append(extract_features(address, txs).as_array())
        codes.append(label_code(labels[address]))
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(FEATURE_NAMES))
    return Dataset(tuple(addresses), X, np.array(codes, dtype=np.int8), FEATURE_NAMES), skipped
