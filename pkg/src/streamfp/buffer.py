"""Retain-Drop rehearsal buffer with rank-probability sampling.

The buffer fills directly while it has room; once full, each offered
batch triggers a Retain-Drop exchange: a small number of novel batch
samples (low similarity to the fingerprints) replace redundant residents
(high similarity), with the exchange size shrinking as the stream grows.
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class BufferItem:
    sample_id: int
    embedding: np.ndarray  # (L, D) token embeddings
    label: int
    similarity: float


class RehearsalBuffer:
    """Capacity-bounded store of past samples; single-writer."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.items = []
        self.n_seen = 0

    def __len__(self):
        return len(self.items)

    @property
    def is_full(self):
        return len(self.items) >= self.capacity

    def embeddings(self):
        """Stacked (|items|, L, D) view of the stored token embeddings."""
        return np.stack([it.embedding for it in self.items])

    def labels(self):
        return np.array([it.label for it in self.items], dtype=np.int64)

    def dump_text(self):
        """Debug dump: one line per resident (sample-id, label, similarity)."""
        lines = [
            f"{it.sample_id}\t{it.label}\t{it.similarity:.6f}" for it in self.items
        ]
        return "\n".join(lines)


def compute_update_count(b, m, n_seen, rng):
    """Number of Retain-Drop exchanges for a batch of size b.

    Draws ``n_left`` uniform integers from [0, n_seen) and counts the
    hits below the capacity m; the count is clamped to [1, floor(b/2)].
    A stream that has seen nothing yet counts every slot as a hit.
    Only meaningful once the buffer cannot absorb the batch directly.
    """
    if b < 1 or m < 1:
        raise ValueError("b and m must be >= 1")
    n_left = b - max(0, m - n_seen)
    if n_left <= 0:
        raise ValueError("buffer has room for the whole batch; no exchange needed")
    if n_seen <= 0:
        hits = n_left
    else:
        draws = rng.integers(0, n_seen, size=n_left)
        hits = int(np.count_nonzero(draws < m))
    return min(b // 2, max(1, hits))


def rank_probabilities(similarity):
    """Rank-based novelty weights: pi_i = 1 - (1/r_i) / sum_j (1/r_j).

    Rank 1 is the most similar sample (descending sort, ties broken by
    lower index), so low-similarity samples get weights near 1. The
    weights sum to n - 1; they are relative preferences, not a
    distribution. A single element gets weight 0.
    """
    s = np.asarray(similarity, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("similarity must be a non-empty vector")
    n = s.size
    if n == 1:
        return np.zeros(1)
    order = np.argsort(-s, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.arange(1, n + 1)
    inv = 1.0 / ranks
    return 1.0 - inv / inv.sum()


def weighted_sample_without_replacement(weights, k, rng):
    """Draw k distinct indices, renormalizing the weights after each draw.

    Falls back to uniform sampling over the remaining pool if the
    positive weights run out before k draws are made.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    n = w.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    remaining = list(range(n))
    chosen = []
    warned = False
    for _ in range(k):
        pool = np.array(remaining)
        pw = w[pool]
        total = pw.sum()
        if total > 0:
            pick = pool[rng.choice(pool.size, p=pw / total)]
        else:
            if not warned:
                logger.warning(
                    "weighted sampling ran out of positive weights; "
                    "falling back to uniform for the remaining %d draw(s)",
                    k - len(chosen),
                )
                warned = True
            pick = pool[rng.integers(0, pool.size)]
        chosen.append(int(pick))
        remaining.remove(int(pick))
    return chosen


def update_buffer(buffer, batch_items, s_batch, s_buffer, rng):
    """Offer a batch to the buffer: fill while there is room, then Retain-Drop.

    Args:
        buffer: the RehearsalBuffer to update in place.
        batch_items: list of BufferItem for the whole incoming batch.
        s_batch: similarity of each batch sample to the fingerprints, (b,).
        s_buffer: similarity of each current resident, (|items|,); may be
            empty when the buffer is empty.
        rng: generator driving the exchange-count draw and both samplings.

    Returns:
        The updated buffer (same object).
    """
    s_batch = np.asarray(s_batch, dtype=np.float64)
    b = len(batch_items)
    if s_batch.shape != (b,):
        raise ValueError("s_batch length must match the batch")
    s_resident = np.asarray(s_buffer, dtype=np.float64).reshape(-1)
    if s_resident.shape != (len(buffer.items),):
        raise ValueError("s_buffer length must match the buffer contents")
    n_seen_before = buffer.n_seen

    # phase 1: direct fill
    free = buffer.capacity - len(buffer.items)
    fill = min(free, b)
    for i in range(fill):
        it = batch_items[i]
        buffer.items.append(
            BufferItem(it.sample_id, it.embedding, it.label, float(s_batch[i]))
        )
    rest = list(range(fill, b))

    # phase 2: Retain-Drop exchange on the remainder
    if rest:
        nu = compute_update_count(b, buffer.capacity, n_seen_before, rng)
        nu = min(nu, len(rest), len(buffer.items))
        if nu >= 1:
            pi_batch = rank_probabilities(s_batch[rest])
            s_buf = np.concatenate([s_resident, s_batch[:fill]])
            pi_buffer = rank_probabilities(s_buf)
            retain = weighted_sample_without_replacement(pi_batch, nu, rng)
            drop = weighted_sample_without_replacement(1.0 - pi_buffer, nu, rng)
            for slot, src in zip(drop, retain):
                i = rest[src]
                it = batch_items[i]
                buffer.items[slot] = BufferItem(
                    it.sample_id, it.embedding, it.label, float(s_batch[i])
                )
    buffer.n_seen += b
    return buffer


def mmd_squared(f_buffer, f_seen):
    """Squared MMD between two similarity samples under the rank-1 kernel.

    With kernel k(x, y) = sim(x) * sim(y) the biased V-statistic collapses
    to the squared difference of the two sample means.
    """
    fb = np.asarray(f_buffer, dtype=np.float64)
    fs = np.asarray(f_seen, dtype=np.float64)
    if fb.size == 0 or fs.size == 0:
        raise ValueError("mmd_squared needs non-empty samples")
    gap = fb.mean() - fs.mean()
    return float(gap * gap)
