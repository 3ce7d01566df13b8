"""Transaction acquisition: Etherscan-compatible HTTP client and CSV loaders.

Only normal ETH transfers (``action=txlist``) are fetched. Token transfers,
internal transactions and block data are never requested.
"""

from __future__ import annotations

import csv
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import requests

log = logging.getLogger(__name__)

FRAUD = "fraud"
NONFRAUD = "nonfraud"
LABELS = (FRAUD, NONFRAUD)

API_KEY_ENV = "ETHERSCAN_API_KEY"
TX_HEADER = ["tx_hash", "timestamp", "from", "to", "value_wei", "gas_price_wei", "gas_limit", "is_error"]
LABEL_HEADER = ["address", "label"]

_ADDRESS_RE = re.compile(r"^0x[0-9a-f]{40}$")
_LAST_BLOCK = 999_999_999


class InvalidAddressError(ValueError):
    pass


class ParseError(ValueError):
    """A malformed row in a transaction or label file."""

    def __init__(self, path, row: int, reason: str):
        super().__init__(f"{path}: row {row}: {reason}")
        self.path = path
        self.row = row
        self.reason = reason


class TransportError(RuntimeError):
    pass


class RemoteError(RuntimeError):
    """The API answered with an error payload."""


def normalize_address(address: str) -> str:
    """Lowercase ``address`` and check it is a 0x-prefixed 40-hex-digit string."""
    if not isinstance(address, str):
        raise InvalidAddressError(f"address must be a string, got {type(address).__name__}")
    a = address.strip().lower()
    if not _ADDRESS_RE.match(a):
        raise InvalidAddressError(f"malformed address: {address!r}")
    return a


@dataclass(frozen=True)
class Transaction:
    tx_hash: str
    timestamp: int
    sender: str
    recipient: str  # "" for contract creation
    value_wei: int
    gas_price_wei: int
    gas_limit: int
    is_error: bool = False

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if self.value_wei < 0:
            raise ValueError(f"negative value: {self.value_wei}")
        if self.gas_price_wei < 0:
            raise ValueError(f"negative gas price: {self.gas_price_wei}")
        if self.gas_limit < 0:
            raise ValueError(f"negative gas limit: {self.gas_limit}")
        if not _ADDRESS_RE.match(self.sender):
            raise InvalidAddressError(f"malformed sender: {self.sender!r}")
        if self.recipient and not _ADDRESS_RE.match(self.recipient):
            raise InvalidAddressError(f"malformed recipient: {self.recipient!r}")

    def involves(self, address: str) -> bool:
        return bool(address) and (self.sender == address or self.recipient == address)


def _sorted_by_time(txs: Iterable[Transaction]) -> list[Transaction]:
    return sorted(txs, key=lambda t: t.timestamp)


# --------------------------------------------------------------------------- files


def _parse_int(text: str, name: str) -> int:
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ValueError(f"{name} is not an integer: {text!r}") from None


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true"):
        return True
    if t in ("0", "false", ""):
        return False
    raise ValueError(f"is_error is not a boolean: {text!r}")


def read_transactions(path) -> list[Transaction]:
    """Read every row of a transaction CSV, in file order."""
    path = Path(path)
    txs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return txs
        if [h.strip() for h in header] != TX_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(TX_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TX_HEADER):
                raise ParseError(path, lineno, f"expected {len(TX_HEADER)} fields, got {len(row)}")
            try:
                txs.append(
                    Transaction(
                        tx_hash=row[0].strip().lower(),
                        timestamp=_parse_int(row[1], "timestamp"),
                        sender=row[2].strip().lower(),
                        recipient=row[3].strip().lower(),
                        value_wei=_parse_int(row[4], "value_wei"),
                        gas_price_wei=_parse_int(row[5], "gas_price_wei"),
                        gas_limit=_parse_int(row[6], "gas_limit"),
                        is_error=_parse_bool(row[7]),
                    )
                )
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return txs


def group_by_account(txs: Iterable[Transaction], accounts: Iterable[str] | None = None) -> dict[str, list[Transaction]]:
    """Map each participating account to its time-sorted transactions.

    With ``accounts`` given, only those addresses get an entry (and only if
    they appear in at least one transaction). A self-transfer is listed once.
    """
    wanted = None if accounts is None else {normalize_address(a) for a in accounts}
    grouped: dict[str, list[Transaction]] = {}
    for tx in txs:
        for party in {tx.sender, tx.recipient}:
            if not party or (wanted is not None and party not in wanted):
                continue
            grouped.setdefault(party, []).append(tx)
    return {a: _sorted_by_time(v) for a, v in grouped.items()}


def load_transactions_file(path, accounts: Iterable[str] | None = None) -> dict[str, list[Transaction]]:
    return group_by_account(read_transactions(path), accounts)


def write_transactions(path, txs: Iterable[Transaction]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TX_HEADER)
        for t in txs:
            w.writerow([t.tx_hash, t.timestamp, t.sender, t.recipient, t.value_wei,
                        t.gas_price_wei, t.gas_limit, int(t.is_error)])


def unique_transactions(tx_map: Mapping[str, list[Transaction]]) -> list[Transaction]:
    """Flatten a per-account mapping, each hash once, accounts in sorted order."""
    seen = set()
    out = []
    for address in sorted(tx_map):
        for t in tx_map[address]:
            if t.tx_hash not in seen:
                seen.add(t.tx_hash)
                out.append(t)
    return out


def load_labels(path) -> dict[str, str]:
    """Read an ``address,label`` CSV.

    An optional third ``exclude`` column (0/1) marks wallets to leave out of
    the corpus entirely, e.g. token-trading wallets; excluded rows are dropped.
    """
    path = Path(path)
    labels: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return labels
        header = [h.strip() for h in header]
        if header[:2] != LABEL_HEADER or header[2:] not in ([], ["exclude"]):
            raise ParseError(path, 1, "expected header address,label[,exclude]")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                address = normalize_address(row[0])
            except InvalidAddressError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            label = row[1].strip().lower().replace("-", "").replace("_", "")
            if label not in LABELS:
                raise ParseError(path, lineno, f"unknown label {row[1]!r}")
            if len(row) == 3:
                try:
                    if _parse_bool(row[2]):
                        continue
                except ValueError as exc:
                    raise ParseError(path, lineno, str(exc)) from None
            previous = labels.get(address)
            if previous is not None and previous != label:
                raise ParseError(path, lineno, f"{address} labeled both {previous} and {label}")
            labels[address] = label
    return labels


def write_labels(path, labels: Mapping[str, str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for address in sorted(labels):
            w.writerow([address, labels[address]])


# --------------------------------------------------------------------------- HTTP


class RateLimiter:
    """Thread-safe request pacer: consecutive grants are at least 1/rate apart."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = None

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            slot = now if self._next is None else max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            self._sleep(slot - now)


@dataclass
class ClientConfig:
    base_url: str = "https://api.etherscan.io/api"
    api_key: str = field(default_factory=lambda: os.environ.get(API_KEY_ENV, ""), repr=False)
    max_requests_per_second: float = 5.0
    page_size: int = 1000
    max_retries: int = 3
    timeout: float = 30.0
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_requests_per_second <= 0:
            raise ValueError("max_requests_per_second must be positive")
        if self.page_size < 1:
            raise ValueError("page_size must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


def _tx_from_record(rec: Mapping) -> tuple[int, Transaction]:
    try:
        block = int(rec.get("blockNumber", 0))
        tx = Transaction(
            tx_hash=str(rec["hash"]).lower(),
            timestamp=int(rec["timeStamp"]),
            sender=str(rec["from"]).lower(),
            recipient=str(rec.get("to") or "").lower(),
            value_wei=int(rec["value"]),
            gas_price_wei=int(rec["gasPrice"]),
            gas_limit=int(rec["gas"]),
            is_error=str(rec.get("isError", "0")) == "1",
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RemoteError(f"malformed transaction record: {exc}") from None
    return block, tx


class EtherscanClient:
    """Paginated ``txlist`` fetcher sharing one rate limiter across threads."""

    def __init__(self, cfg: ClientConfig, session: requests.Session | None = None,
                 limiter: RateLimiter | None = None):
        self.cfg = cfg
        self.session = session or requests.Session()
        self.limiter = limiter or RateLimiter(cfg.max_requests_per_second)
        self.requests_made = 0
        self._count_lock = threading.Lock()

    def _get(self, params: dict) -> list:
        last_exc = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            self.limiter.acquire()
            with self._count_lock:
                self.requests_made += 1
            try:
                resp = self.session.get(self.cfg.base_url, params=params, timeout=self.cfg.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                log.warning("request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = TransportError(f"HTTP {resp.status_code}")
                log.warning("HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code} from {self.cfg.base_url}")
            try:
                payload = resp.json()
            except ValueError:
                raise RemoteError("response is not JSON") from None
            return self._unwrap(payload)
        raise TransportError(f"giving up after {self.cfg.max_retries + 1} attempts: {last_exc}")

    @staticmethod
    def _unwrap(payload) -> list:
        if not isinstance(payload, dict):
            raise RemoteError("unexpected response shape")
        result = payload.get("result")
        if str(payload.get("status")) == "1" and isinstance(result, list):
            return result
        message = str(payload.get("message", ""))
        if message.startswith("No transactions found"):
            return []
        detail = result if isinstance(result, str) else message
        raise RemoteError(detail or "unknown API error")

    def fetch_transactions(self, address: str) -> list[Transaction]:
        address = normalize_address(address)
        start = 0
        seen: set[str] = set()
        out: list[Transaction] = []
        while True:
            params = {
                "module": "account", "action": "txlist", "address": address,
                "startblock": start, "endblock": _LAST_BLOCK,
                "page": 1, "offset": self.cfg.page_size, "sort": "asc",
                "apikey": self.cfg.api_key,
            }
            page = [_tx_from_record(r) for r in self._get(params)]
            for _, tx in page:
                if tx.tx_hash not in seen:
                    seen.add(tx.tx_hash)
                    out.append(tx)
            if len(page) < self.cfg.page_size:
                break
            # next page restarts at the last block seen; overlap is deduplicated by hash
            last_block = page[-1][0]
            if last_block <= start:
                raise RemoteError(
                    f"block {last_block} holds at least page_size={self.cfg.page_size} transactions; "
                    "increase page_size")
            start = last_block
        return _sorted_by_time(out)

    def fetch_many(self, addresses: Iterable[str], threads: int = 1) -> dict[str, list[Transaction]]:
        addresses = [normalize_address(a) for a in addresses]
        if threads <= 1:
            return {a: self.fetch_transactions(a) for a in addresses}
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(self.fetch_transactions, addresses))
        return dict(zip(addresses, results))


def fetch_transactions(address: str, cfg: ClientConfig, session: requests.Session | None = None) -> list[Transaction]:
    """All normal transactions of ``address``, ascending by timestamp."""
    return EtherscanClient(cfg, session=session).fetch_transactions(address)
