"""Fingerprint pool, aggregation, and the attunement block.

The attunement block refines each fingerprint token through a learnable
gate over a small bank of frozen MLPs (a key/value linear pair with an
exact-GELU nonlinearity in between). Only the fingerprints and the gate
weights receive gradients; the MLP bank is frozen at construction.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .core_math import gelu, gelu_grad, softmax, top_k

WEIGHTS_MAGIC = b"SFPW"
WEIGHTS_VERSION = 1


@dataclass
class FingerprintPool:
    """Learnable fingerprints, shape (N, L_p, D).

    L_p must be even: conceptually each fingerprint splits into key and
    value halves of equal length.
    """

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ValueError(f"pool must be rank-3 (N, L_p, D), got {self.weights.shape}")
        n, lp, _ = self.weights.shape
        if n < 1:
            raise ValueError("pool needs at least one fingerprint")
        if lp < 2 or lp % 2 != 0:
            raise ValueError(f"fingerprint length must be even and >= 2, got {lp}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("pool contains non-finite entries")

    @property
    def count(self):
        return self.weights.shape[0]

    @property
    def length(self):
        return self.weights.shape[1]

    @property
    def dim(self):
        return self.weights.shape[2]

    @classmethod
    def init_random(cls, count, length, dim, rng, scale=0.02):
        return cls(scale * rng.standard_normal((count, length, dim)))


def _random_orthogonal(dim, rng):
    # QR of a Gaussian matrix with sign-fixed diagonal: Haar-ish orthogonal
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


@dataclass
class AttunementParams:
    """Gate weights (learnable) plus a frozen bank of key/value MLPs."""

    gate: np.ndarray  # (D, R), learnable
    keys: np.ndarray  # (R, D, D), frozen
    values: np.ndarray  # (R, D, D), frozen

    def __post_init__(self):
        self.gate = np.asarray(self.gate, dtype=np.float64)
        self.keys = np.asarray(self.keys, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.keys.shape != self.values.shape or self.keys.ndim != 3:
            raise ValueError("keys/values must both have shape (R, D, D)")
        r, d, d2 = self.keys.shape
        if d != d2 or r < 1:
            raise ValueError(f"MLP weights must be square with R >= 1, got {self.keys.shape}")
        if self.gate.shape != (d, r):
            raise ValueError(f"gate must have shape ({d}, {r}), got {self.gate.shape}")
        if not np.all(np.isfinite(self.gate)):
            raise ValueError("gate weights contain non-finite entries")
        # frozen: any in-place write on the MLP bank raises
        self.keys.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def num_experts(self):
        return self.keys.shape[0]

    @property
    def dim(self):
        return self.keys.shape[1]

    @classmethod
    def init_random(cls, dim, num_experts, rng, gate_scale=0.02):
        """Random orthogonal frozen MLPs and a small random gate.

        Orthogonal init preserves signal scale; a weights file can be
        loaded instead when pretrained matrices are available.
        """
        keys = np.stack([_random_orthogonal(dim, rng) for _ in range(num_experts)])
        values = np.stack([_random_orthogonal(dim, rng) for _ in range(num_experts)])
        gate = gate_scale * rng.standard_normal((dim, num_experts))
        return cls(gate, keys, values)


def save_mlp_weights(path, keys, values):
    """Write the frozen MLP bank in the binary weights format.

    Layout (little-endian): magic "SFPW", u32 version=1, u32 R, u32 D,
    then R pairs of D x D row-major f32 matrices (K then V).
    """
    keys = np.asarray(keys)
    values = np.asarray(values)
    r, d, _ = keys.shape
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", WEIGHTS_VERSION, r, d))
        for i in range(r):
            fh.write(keys[i].astype("<f4").tobytes())
            fh.write(values[i].astype("<f4").tobytes())


def load_mlp_weights(path):
    """Read a frozen MLP bank written by :func:`save_mlp_weights`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"bad magic {magic!r} in weights file {path}")
        version, r, d = struct.unpack("<III", fh.read(12))
        if version != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {version}")
        keys = np.empty((r, d, d), dtype=np.float64)
        values = np.empty((r, d, d), dtype=np.float64)
        mat_bytes = 4 * d * d
        for i in range(r):
            keys[i] = np.frombuffer(fh.read(mat_bytes), dtype="<f4").reshape(d, d)
            values[i] = np.frombuffer(fh.read(mat_bytes), dtype="<f4").reshape(d, d)
    return keys, values


def aggregate(pool):
    """Sum the fingerprint length dimension: (N, L_p, D) -> (N, D)."""
    return pool.weights.sum(axis=1)


def gate_forward(pool, params, r_select=None):
    """Gate decision per fingerprint: mixing weights and expert indices.

    The gate input is the mean over the length dimension of each
    fingerprint, projected through the gate matrix; the top ``r_select``
    scores are kept and softmaxed into mixing weights.

    Returns:
        (W, I): both (N, r_select); rows of W sum to 1.
    """
    r_total = params.num_experts
    if r_select is None:
        r_select = r_total
    if not 1 <= r_select <= r_total:
        raise ValueError(f"r_select={r_select} out of range [1, {r_total}]")
    pooled = pool.weights.mean(axis=1)  # (N, D)
    scores = pooled @ params.gate  # (N, R)
    n = pool.count
    mix = np.empty((n, r_select), dtype=np.float64)
    idx = np.empty((n, r_select), dtype=np.int64)
    for i in range(n):
        vals, order = top_k(scores[i], r_select)
        mix[i] = softmax(vals)
        idx[i] = order
    return mix, idx


def _expert_outputs(pool, params):
    """Per-expert tokenwise MLP outputs, shape (R, N, L_p, D)."""
    outs = []
    pre = []
    for r in range(params.num_experts):
        h = pool.weights @ params.keys[r].T  # (N, L_p, D)
        outs.append(gelu(h) @ params.values[r].T)
        pre.append(h)
    return np.stack(outs), np.stack(pre)


def attune(pool, params, r_select=None):
    """Refine fingerprints through the gated frozen-MLP bank.

    Each token of fingerprint n becomes the gate-weighted convex
    combination of its selected experts' outputs; the output shape equals
    the input shape (N, L_p, D).
    """
    if pool.dim != params.dim:
        raise ValueError(f"pool dim {pool.dim} does not match MLP dim {params.dim}")
    mix, idx = gate_forward(pool, params, r_select)
    expert_out, _ = _expert_outputs(pool, params)
    out = np.zeros_like(pool.weights)
    rows = np.arange(pool.count)
    for j in range(mix.shape[1]):
        out += mix[:, j, None, None] * expert_out[idx[:, j], rows]
    return out


def attune_backward(pool, params, upstream, r_select=None):
    """Analytic gradients of a scalar loss through :func:`attune`.

    The top-k index selection is treated as constant (straight-through):
    gradient flows through the softmax over the selected gate scores and
    through the expert MLPs, never through the index choice. Frozen MLP
    gradients are not produced.

    Args:
        upstream: dLoss/dOutput, shape (N, L_p, D).

    Returns:
        (grad_pool, grad_gate) with shapes (N, L_p, D) and (D, R).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != pool.weights.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match pool {pool.weights.shape}"
        )
    mix, idx = gate_forward(pool, params, r_select)
    expert_out, pre_act = _expert_outputs(pool, params)
    n, r_sel = mix.shape
    rows = np.arange(n)
    lp = pool.length

    # gate path: dL/dmix[n, j] = <upstream[n], expert_out[idx[n, j], n]>
    dmix = np.empty((n, r_sel), dtype=np.float64)
    for j in range(r_sel):
        dmix[:, j] = np.einsum("nld,nld->n", upstream, expert_out[idx[:, j], rows])
    # softmax Jacobian per row
    dvals = mix * (dmix - np.sum(mix * dmix, axis=1, keepdims=True))
    dscores = np.zeros((n, params.num_experts), dtype=np.float64)
    np.add.at(dscores, (rows[:, None], idx), dvals)

    pooled = pool.weights.mean(axis=1)  # (N, D)
    grad_gate = pooled.T @ dscores  # (D, R)
    grad_pool = np.repeat((dscores @ params.gate.T)[:, None, :] / lp, lp, axis=1)

    # token path: accumulate per expert over the fingerprints routed to it
    for r in range(params.num_experts):
        coef = np.zeros(n, dtype=np.float64)
        for j in range(r_sel):
            coef += np.where(idx[:, j] == r, mix[:, j], 0.0)
        if not np.any(coef):
            continue
        d_act = upstream @ params.values[r]  # dL/d gelu(h)
        d_pre = d_act * gelu_grad(pre_act[r])
        grad_pool += coef[:, None, None] * (d_pre @ params.keys[r])
    return grad_pool, grad_gate
