"""Random account histories for property tests."""

import numpy as np

from ethfraud.ingest import Transaction

ME = "0x" + "1" * 40


def random_account(rng: np.random.Generator, max_txs: int = 30, n_peers: int = 6) -> list[Transaction]:
    """Time-sorted transactions of ``ME`` against a small peer pool (repeats likely)."""
    peers = ["0x" + f"{i + 2:040x}" for i in range(n_peers)]
    n = int(rng.integers(1, max_txs + 1))
    times = np.sort(rng.integers(1, 10**6, size=n))
    txs = []
    for i, t in enumerate(times):
        kind = rng.integers(0, 5)  # 0-1 incoming, 2-3 outgoing, 4 self-transfer
        peer = peers[int(rng.integers(0, n_peers))]
        frm, to = (peer, ME) if kind < 2 else (ME, peer) if kind < 4 else (ME, ME)
        txs.append(Transaction(f"0x{i:064x}", int(t), frm, to, int(rng.integers(0, 10**18)) * int(rng.integers(1, 10**4)),
                               int(rng.integers(0, 10**12)), int(rng.integers(21000, 10**6))))
    return txs
