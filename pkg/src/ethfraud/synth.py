"""Seeded generator of transaction corpora with planted fraud signal.

Each account belongs to one latent behavior component. Components set how
many transfers come in (rounded lognormal), from how large a counterparty
pool, how large they are (lognormal ether), how fast they arrive
(exponential gaps), and how often each one is swept out again (Bernoulli,
exponential delay, lognormal value). Activity duration is not drawn directly;
it follows from the count and the arrival rate.

These distributions are generator conventions, not a model of real traffic.
Because every density is known, ``fraud_posterior`` gives the Bayes
classifier over components, a ceiling for what any learner can reach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import FRAUD, NONFRAUD, Transaction, unique_transactions, write_labels, write_transactions

SECONDS_PER_DAY = 86400
START_WINDOW = (1_500_000_000, 1_600_000_000)
WEI_PER_ETHER = 10**18


@dataclass(frozen=True)
class Component:
    name: str
    weight: float              # share within its class
    count_mu: float            # incoming count: round(lognormal), at least 1
    count_sigma: float
    pool_size: int             # counterparties drawn uniformly with replacement
    value_mu: float            # incoming value, lognormal ether
    value_sigma: float
    arrival_rate: float        # incoming transfers per day
    sweep_prob: float          # chance an incoming transfer is forwarded
    sweep_rate: float          # forwarding delay, per day
    sweep_value_mu: float
    sweep_value_sigma: float

    def __post_init__(self):
        if self.weight <= 0 or self.pool_size < 1:
            raise ValueError(f"{self.name}: weight and pool_size must be positive")
        if min(self.count_sigma, self.value_sigma, self.sweep_value_sigma) <= 0:
            raise ValueError(f"{self.name}: sigmas must be positive")
        if self.arrival_rate <= 0 or self.sweep_rate <= 0:
            raise ValueError(f"{self.name}: rates must be positive")
        if not 0.0 <= self.sweep_prob <= 1.0:
            raise ValueError(f"{self.name}: sweep_prob must lie in [0, 1]")


FRAUD_COMPONENTS = (
    # bursty collection from many strangers, large values, little forwarding
    Component("phishing", 0.6, 3.0, 0.6, 5000, 0.0, 1.0, 4.0, 0.3, 24.0, 1.5, 1.0),
    # slower scheme that resembles an ordinary wallet
    Component("mimic", 0.4, 1.6, 0.8, 10, -1.1, 1.5, 0.07, 0.8, 0.3, -1.2, 1.5),
)

NONFRAUD_COMPONENTS = (
    Component("regular", 0.75, 1.5, 0.8, 8, -1.5, 1.5, 0.05, 0.9, 0.2, -1.5, 1.5),
    Component("busy", 0.25, 3.2, 0.7, 40, -1.0, 1.5, 1.0, 0.95, 2.0, -1.0, 1.5),
)


@dataclass(frozen=True)
class SynthParams:
    n_nonfraud: int = 5000
    n_fraud: int = 250
    seed: int = 42
    fraud_components: tuple = FRAUD_COMPONENTS
    nonfraud_components: tuple = NONFRAUD_COMPONENTS

    def __post_init__(self):
        if self.n_nonfraud < 1 or self.n_fraud < 1:
            raise ValueError("class counts must be at least 1")
        if not self.fraud_components or not self.nonfraud_components:
            raise ValueError("each class needs at least one component")


@dataclass
class Account:
    """One generated account: observable transactions plus the draws behind them."""
    address: str
    label: str
    component: str
    txs: list
    in_values: np.ndarray = field(repr=False)
    in_gaps: np.ndarray = field(repr=False)      # days between consecutive incoming transfers
    swept: np.ndarray = field(repr=False)        # per incoming transfer
    sweep_delays: np.ndarray = field(repr=False)
    sweep_values: np.ndarray = field(repr=False)
    n_unique: int = 0                            # distinct counterparties
    n_slots: int = 0                             # counterparty draws


def _hex(rng: np.random.Generator, n_bytes: int) -> str:
    return "0x" + rng.bytes(n_bytes).hex()


def _pick(rng, components) -> Component:
    w = np.array([c.weight for c in components], dtype=float)
    return components[int(rng.choice(len(components), p=w / w.sum()))]


def _gas(rng) -> tuple[int, int]:
    price = int(float(rng.lognormal(math.log(20.0), 0.5)) * 1e9)
    limit = 21000 if rng.random() < 0.8 else int(rng.integers(21000, 100001))
    return price, limit


def _account(p: SynthParams, idx: int, label: str) -> Account:
    rng = np.random.default_rng([p.seed, idx])
    comps = p.fraud_components if label == FRAUD else p.nonfraud_components
    c = _pick(rng, comps)
    address = _hex(rng, 20)
    pool: dict[int, str] = {}  # materialized on first use

    def counterparty() -> str:
        k = int(rng.integers(c.pool_size))
        if k not in pool:
            pool[k] = _hex(rng, 20)
        return pool[k]

    n_in = max(1, int(round(float(rng.lognormal(c.count_mu, c.count_sigma)))))
    values = rng.lognormal(c.value_mu, c.value_sigma, n_in)
    gaps = rng.exponential(1.0 / c.arrival_rate, n_in - 1)
    swept = rng.random(n_in) < c.sweep_prob
    n_out = int(swept.sum())
    delays = rng.exponential(1.0 / c.sweep_rate, n_out)
    out_values = rng.lognormal(c.sweep_value_mu, c.sweep_value_sigma, n_out)

    start = float(rng.uniform(*START_WINDOW))
    in_times = start + SECONDS_PER_DAY * np.concatenate([[0.0], np.cumsum(gaps)])
    used = set()
    txs = []
    for t, v in zip(in_times, values):
        sender = counterparty()
        used.add(sender)
        price, limit = _gas(rng)
        txs.append(Transaction(_hex(rng, 32), int(t), sender, address,
                               int(float(v) * WEI_PER_ETHER), price, limit))
    for t, d, v in zip(in_times[swept], delays, out_values):
        recipient = counterparty()
        used.add(recipient)
        price, limit = _gas(rng)
        txs.append(Transaction(_hex(rng, 32), int(t + d * SECONDS_PER_DAY), address, recipient,
                               int(float(v) * WEI_PER_ETHER), price, limit))
    txs.sort(key=lambda tx: tx.timestamp)
    return Account(address, label, c.name, txs, values, gaps, swept, delays, out_values,
                   n_unique=len(used), n_slots=n_in + n_out)


def generate_accounts(p: SynthParams) -> list[Account]:
    """Fraud accounts take stream indices 0..n_fraud-1, non-fraud the rest."""
    accounts = [_account(p, i, FRAUD) for i in range(p.n_fraud)]
    accounts += [_account(p, p.n_fraud + i, NONFRAUD) for i in range(p.n_nonfraud)]
    if len({a.address for a in accounts}) != len(accounts):
        raise RuntimeError("address collision")  # 160-bit draws; not expected
    return accounts


def generate(p: SynthParams) -> tuple[dict, dict]:
    """(address -> time-sorted transactions, address -> label)."""
    accounts = generate_accounts(p)
    return {a.address: a.txs for a in accounts}, {a.address: a.label for a in accounts}


def write_corpus(out_dir, tx_map: dict, labels: dict) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tx_path, label_path = out / "tx.csv", out / "labels.csv"
    write_transactions(tx_path, unique_transactions(tx_map))
    write_labels(label_path, labels)
    return tx_path, label_path


# --------------------------------------------------------------------------- Bayes oracle


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _count_logpmf(n: int, mu: float, sigma: float) -> float:
    hi = _norm_cdf((math.log(n + 0.5) - mu) / sigma)
    lo = 0.0 if n == 1 else _norm_cdf((math.log(n - 0.5) - mu) / sigma)
    return math.log(hi - lo) if hi > lo else -math.inf


def _lognormal_logpdf(x: np.ndarray, mu: float, sigma: float) -> float:
    lx = np.log(x)
    return float(np.sum(-lx - math.log(sigma * math.sqrt(2 * math.pi)) - (lx - mu) ** 2 / (2 * sigma**2)))


def _exponential_logpdf(x: np.ndarray, rate: float) -> float:
    return float(len(x) * math.log(rate) - rate * np.sum(x))


def _bernoulli_log(k: int, n: int, prob: float) -> float:
    out = 0.0
    for count, q in ((k, prob), (n - k, 1.0 - prob)):
        if count:
            if q <= 0:
                return -math.inf
            out += count * math.log(q)
    return out


def _pattern_log(n_unique: int, n_slots: int, pool: int) -> float:
    """Log-probability of one specific repeat pattern of counterparties from a uniform pool."""
    if n_unique > pool:
        return -math.inf
    return math.lgamma(pool + 1) - math.lgamma(pool - n_unique + 1) - n_slots * math.log(pool)


def component_log_likelihood(a: Account, c: Component) -> float:
    n_in = len(a.in_values)
    return (_count_logpmf(n_in, c.count_mu, c.count_sigma)
            + _lognormal_logpdf(a.in_values, c.value_mu, c.value_sigma)
            + _exponential_logpdf(a.in_gaps, c.arrival_rate)
            + _bernoulli_log(int(a.swept.sum()), n_in, c.sweep_prob)
            + _exponential_logpdf(a.sweep_delays, c.sweep_rate)
            + _lognormal_logpdf(a.sweep_values, c.sweep_value_mu, c.sweep_value_sigma)
            + _pattern_log(a.n_unique, a.n_slots, c.pool_size))


def fraud_posterior(a: Account, p: SynthParams) -> float:
    """P(fraud | the account's draws) under the true generating mixture."""
    n = p.n_fraud + p.n_nonfraud
    terms, is_fraud = [], []
    for comps, prior, flag in ((p.fraud_components, p.n_fraud / n, True),
                               (p.nonfraud_components, p.n_nonfraud / n, False)):
        total = sum(c.weight for c in comps)
        for c in comps:
            terms.append(math.log(prior * c.weight / total) + component_log_likelihood(a, c))
            is_fraud.append(flag)
    t = np.array(terms)
    w = np.exp(t - t.max())
    return float(w[np.array(is_fraud)].sum() / w.sum())
