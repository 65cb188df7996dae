"""Surrogate stream learner: embedders, prototype classifier, metrics.

The learner stands in for a frozen vision backbone. Embeddings come from
a pluggable source (synthetic drifting Gaussian clusters, or a binary
embedding file); the classifier is a set of learnable class prototypes
over token-pooled features modulated by fingerprint similarity, so the
fingerprints and gate receive real gradients through the loss.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .core_math import NORM_EPS, batch_similarity, l2_normalize
from .fingerprints import (
    AttunementParams,
    FingerprintPool,
    aggregate,
    attune,
    attune_backward,
)
from .seeding import substream, substream_indexed

logger = logging.getLogger(__name__)

EMBED_MAGIC = b"SFPE"
EMBED_VERSION = 1


@dataclass
class EmbeddingBatch:
    embeddings: np.ndarray  # (b, L, D)
    labels: np.ndarray  # (b,)
    sample_ids: np.ndarray  # (b,) globally unique ids

    def __len__(self):
        return self.embeddings.shape[0]


class SyntheticEmbedder:
    """Drifting Gaussian class clusters emitted as token embeddings.

    Each task owns a contiguous slice of the (possibly permuted) class
    list. The class means drift by a cumulative random shift per task.
    Sample generation is deterministic given (seed, task, sample index).
    An optional outlier fraction emits pure-noise samples with random
    labels, standing in for corrupted stream content; an optional
    dominant fraction emits near-duplicate copies of the task's first
    class, standing in for dominant clips in redundant video streams.
    A class concentration in (0, 1) mixes a shared unit direction into
    every class mean, raising cross-task interference.
    """

    def __init__(
        self,
        seed,
        n_classes,
        dim,
        tokens,
        n_tasks,
        noise_std=0.2,
        drift_std=0.0,
        outlier_fraction=0.0,
        outlier_scale=1.0,
        dominant_fraction=0.0,
        class_concentration=0.0,
        class_order=None,
    ):
        if n_classes < n_tasks:
            raise ValueError("need at least one class per task")
        self.seed = int(seed)
        self.n_classes = int(n_classes)
        self.dim = int(dim)
        self.tokens = int(tokens)
        self.n_tasks = int(n_tasks)
        self.noise_std = float(noise_std)
        self.drift_std = float(drift_std)
        self.outlier_fraction = float(outlier_fraction)
        self.outlier_scale = float(outlier_scale)
        self.dominant_fraction = float(dominant_fraction)
        self.class_concentration = float(class_concentration)
        if not 0 <= self.class_concentration < 1:
            raise ValueError("class_concentration must be in [0, 1)")
        if class_order is None:
            class_order = np.arange(n_classes)
        self.class_order = np.asarray(class_order, dtype=np.int64)
        if sorted(self.class_order.tolist()) != list(range(n_classes)):
            raise ValueError("class_order must be a permutation of the class set")

        init_rng = substream(self.seed, "embedder-init")
        means = l2_normalize(init_rng.standard_normal((n_classes, dim)))
        if self.class_concentration > 0:
            # pull every class mean toward one shared unit direction: a
            # high-interference regime where classes share most of their
            # signal and differ only in a small residual component
            common_rng = substream(self.seed, "embedder-common")
            common = l2_normalize(common_rng.standard_normal(dim))
            w = self.class_concentration
            means = l2_normalize(w * common[None, :] + (1 - w) * means)
        self.class_means = means
        # cumulative per-task drift of the whole embedding space
        drift_rng = substream(self.seed, "embedder-drift")
        steps = self.drift_std * drift_rng.standard_normal((n_tasks, dim)) / np.sqrt(dim)
        steps[0] = 0.0
        self.task_shifts = np.cumsum(steps, axis=0)

    def task_classes(self, task):
        per = self.n_classes // self.n_tasks
        lo = task * per
        hi = self.n_classes if task == self.n_tasks - 1 else lo + per
        return self.class_order[lo:hi]

    def embed(self, task, sample_indices):
        """Generate the batch for the given task and sample indices."""
        if not 0 <= task < self.n_tasks:
            raise ValueError(f"task {task} out of range")
        sample_indices = np.asarray(sample_indices, dtype=np.int64)
        classes = self.task_classes(task)
        b = sample_indices.size
        emb = np.empty((b, self.tokens, self.dim), dtype=np.float64)
        labels = np.empty(b, dtype=np.int64)
        shift = self.task_shifts[task]
        for j, idx in enumerate(sample_indices):
            rng = substream_indexed(self.seed, f"sample-task{task}", int(idx))
            if self.outlier_fraction > 0 and rng.random() < self.outlier_fraction:
                emb[j] = self.outlier_scale * rng.standard_normal(
                    (self.tokens, self.dim)
                )
                labels[j] = rng.integers(0, self.n_classes)
            elif (
                self.dominant_fraction > 0
                and rng.random() < self.dominant_fraction
            ):
                # near-duplicate of the task's first class: a dominant
                # clip repeated across the stream with tiny jitter
                cls = classes[0]
                mean = self.class_means[cls] + shift
                emb[j] = mean + 0.1 * self.noise_std * rng.standard_normal(
                    (self.tokens, self.dim)
                )
                labels[j] = cls
            else:
                cls = classes[int(idx) % classes.size]
                mean = self.class_means[cls] + shift
                emb[j] = mean + self.noise_std * rng.standard_normal(
                    (self.tokens, self.dim)
                )
                labels[j] = cls
        ids = np.int64(task) * 10_000_000 + sample_indices
        return EmbeddingBatch(emb, labels, ids)


def write_embedding_file(path, embeddings, labels):
    """Binary embedding dump: "SFPE", u32 version, u64 n, u32 L, u32 D,
    then n*L*D little-endian f32 row-major, then n u32 labels."""
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    n, tokens, dim = embeddings.shape
    if labels.shape != (n,):
        raise ValueError("labels length must match the embedding count")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<IQII", EMBED_VERSION, n, tokens, dim))
        fh.write(embeddings.astype("<f4").tobytes())
        fh.write(labels.astype("<u4").tobytes())


def read_embedding_file(path):
    with open(path, "rb") as fh:
        if fh.read(4) != EMBED_MAGIC:
            raise ValueError(f"bad magic in embedding file {path}")
        version, n, tokens, dim = struct.unpack("<IQII", fh.read(20))
        if version != EMBED_VERSION:
            raise ValueError(f"unsupported embedding file version {version}")
        payload = fh.read(4 * n * tokens * dim)
        if len(payload) != 4 * n * tokens * dim:
            raise ValueError("embedding file truncated")
        emb = np.frombuffer(payload, dtype="<f4").reshape(n, tokens, dim).astype(np.float64)
        labels = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
    return emb, labels


class FileEmbedder:
    """Embeddings replayed from a binary embedding file."""

    def __init__(self, path):
        self.embeddings, self.labels = read_embedding_file(path)
        self.dim = self.embeddings.shape[2]
        self.tokens = self.embeddings.shape[1]

    def embed(self, task, sample_indices):
        idx = np.asarray(sample_indices, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.embeddings.shape[0]):
            raise ValueError("sample index out of range for embedding file")
        return EmbeddingBatch(self.embeddings[idx], self.labels[idx], idx.copy())


@dataclass
class PrototypeModel:
    """Class prototypes + fingerprints + attunement, trained jointly."""

    prototypes: np.ndarray  # (K_cls, D)
    pool: FingerprintPool
    attn: AttunementParams
    learning_rate: float = 0.001
    grad_steps: int = 1
    r_select: int | None = None

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.grad_steps < 1:
            raise ValueError("need at least one gradient step")

    @classmethod
    def init_random(cls, n_classes, dim, pool_count, pool_length, num_experts, rng,
                    learning_rate=0.001, grad_steps=1):
        return cls(
            prototypes=0.01 * rng.standard_normal((n_classes, dim)),
            pool=FingerprintPool.init_random(pool_count, pool_length, dim, rng),
            attn=AttunementParams.init_random(dim, num_experts, rng),
            learning_rate=learning_rate,
            grad_steps=grad_steps,
        )


def _cross_entropy(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    nll = logz - shifted[np.arange(len(labels)), labels]
    return float(nll.mean())


def forward_loss(model, batch):
    """Cross-entropy loss of the prototype classifier on a batch.

    Per-sample feature = token-mean embedding scaled by (1 + S), where S
    is the mean cosine similarity to the attuned fingerprints; this is
    the differentiable coupling that lets the fingerprints and gate train.
    """
    labels = np.asarray(batch.labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= model.prototypes.shape[0]):
        raise ValueError("label out of range for the prototype set")
    p_att = attune(model.pool, model.attn, model.r_select)
    p_agg = p_att.sum(axis=1)
    _, s = batch_similarity(batch.embeddings, p_agg)
    pooled = batch.embeddings.mean(axis=1)
    feat = pooled * (1.0 + s)[:, None]
    logits = feat @ model.prototypes.T
    return _cross_entropy(logits, labels), logits


def loss_gradients(model, batch):
    """Analytic gradients of forward_loss w.r.t. prototypes, pool, gate."""
    labels = np.asarray(batch.labels, dtype=np.int64)
    emb = batch.embeddings
    bsz, tokens, _ = emb.shape
    p_att = attune(model.pool, model.attn, model.r_select)
    p_agg = p_att.sum(axis=1)
    s_full, s = batch_similarity(emb, p_agg)
    pooled = emb.mean(axis=1)
    feat = pooled * (1.0 + s)[:, None]
    logits = feat @ model.prototypes.T

    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    dlogits = probs.copy()
    dlogits[np.arange(bsz), labels] -= 1.0
    dlogits /= bsz

    grad_proto = dlogits.T @ feat
    dfeat = dlogits @ model.prototypes
    ds = np.einsum("bd,bd->b", dfeat, pooled)  # dL/dS per sample

    # through the similarity: S_i = mean_{l,n} <e_hat_il, p_hat_n>; only the
    # fingerprint side is a parameter. Exact Jacobian of p / (|p| + eps).
    e_sum = l2_normalize(emb).sum(axis=1)  # (b, D)
    n_fp = p_agg.shape[0]
    q = (ds[:, None] * e_sum).sum(axis=0) / (tokens * n_fp)  # (D,)
    norms = np.sqrt((p_agg * p_agg).sum(axis=1))
    scale = norms + NORM_EPS
    # J v = v/s - p (p.v) / (|p| s^2), rows of p_agg independently
    pv = p_agg @ q
    d_p_agg = q[None, :] / scale[:, None] - p_agg * (
        pv / (np.maximum(norms, NORM_EPS) * scale * scale)
    )[:, None]
    d_p_att = np.repeat(d_p_agg[:, None, :], p_att.shape[1], axis=1)
    grad_pool, grad_gate = attune_backward(model.pool, model.attn, d_p_att, model.r_select)
    loss = _cross_entropy(logits, labels)
    return loss, grad_proto, grad_pool, grad_gate


def train_step(model, batch, steps=None):
    """K steps of gradient descent on {prototypes, pool, gate} in place."""
    if steps is None:
        steps = model.grad_steps
    eta = model.learning_rate
    last_loss = None
    for _ in range(steps):
        if eta == 0.0:
            last_loss, _ = forward_loss(model, batch)
            continue
        loss, g_proto, g_pool, g_gate = loss_gradients(model, batch)
        model.prototypes -= eta * g_proto
        model.pool.weights -= eta * g_pool
        model.attn.gate -= eta * g_gate
        last_loss = loss
    return model, last_loss


def evaluate(model, batch):
    """Argmax-logit accuracy of the model on an evaluation batch."""
    if len(batch) == 0:
        raise ValueError("empty evaluation set")
    _, logits = forward_loss(model, batch)
    pred = logits.argmax(axis=1)
    return float(np.mean(pred == batch.labels))


def average_accuracy(acc_rows):
    """Mean final-row accuracy over all seen tasks.

    ``acc_rows`` is the lower-triangular accuracy matrix as a list of
    rows; row i holds the accuracy on tasks 0..i after training task i.
    """
    if not acc_rows:
        raise ValueError("empty accuracy matrix")
    return float(np.mean(acc_rows[-1]))


def average_forgetting(acc_rows):
    """Mean drop from each task's best earlier accuracy to its final one."""
    if not acc_rows:
        raise ValueError("empty accuracy matrix")
    t = len(acc_rows)
    if t == 1:
        logger.warning("average_forgetting undefined for a single task; returning 0")
        return 0.0
    drops = []
    for j in range(t - 1):
        best_earlier = max(acc_rows[k][j] for k in range(j, t - 1))
        drops.append(best_earlier - acc_rows[t - 1][j])
    return float(np.mean(drops))
