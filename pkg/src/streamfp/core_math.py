"""Deterministic numeric kernels shared by the whole engine.

All kernels operate on 64-bit floats and are pure functions: no hidden
state, fixed reduction order, safe to call concurrently.
"""

import numpy as np
from scipy.special import ndtr

NORM_EPS = 1e-12


def l2_normalize(v):
    """L2-normalize along the last axis with an epsilon-guarded norm.

    A zero vector maps to the zero vector rather than NaN.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    return v / (norm + NORM_EPS)


def batch_similarity(emd, p_agg):
    """Mean cosine similarity between token embeddings and fingerprint rows.

    Args:
        emd: array of shape (b, L, D), per-sample token embeddings.
        p_agg: array of shape (N, D), length-aggregated fingerprints.

    Returns:
        (s_full, s): s_full has shape (b, L, N) with the per-token,
        per-fingerprint cosine similarities; s has shape (b,) and is the
        mean of s_full over the token and fingerprint axes.
    """
    emd = np.asarray(emd, dtype=np.float64)
    p_agg = np.asarray(p_agg, dtype=np.float64)
    if emd.ndim != 3:
        raise ValueError(f"emd must be rank-3 (b, L, D), got shape {emd.shape}")
    if p_agg.ndim != 2:
        raise ValueError(f"p_agg must be rank-2 (N, D), got shape {p_agg.shape}")
    if emd.shape[2] != p_agg.shape[1]:
        raise ValueError(
            f"embedding dim {emd.shape[2]} does not match fingerprint dim {p_agg.shape[1]}"
        )
    e_hat = l2_normalize(emd)
    p_hat = l2_normalize(p_agg)
    s_full = np.einsum("bld,nd->bln", e_hat, p_hat)
    # mean over tokens (l) then fingerprints (n); einsum + mean keep a fixed
    # sequential reduction order on a single thread
    s = s_full.mean(axis=(1, 2))
    return s_full, s


def angular_cost(sims):
    """Average angular distance arccos(s) over a vector of similarities.

    Entries are clamped to [-1, 1] before arccos so floating-point
    overshoot cannot produce NaN.
    """
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size == 0:
        raise ValueError("angular_cost of an empty similarity vector")
    clipped = np.clip(sims, -1.0, 1.0)
    return float(np.mean(np.arccos(clipped)))


def softmax(v):
    """Numerically stable (max-subtracted) softmax."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / np.sum(e)


def gelu(x):
    """Exact Gaussian-CDF GELU, x * Phi(x). Accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = x * ndtr(x)
    return out if out.ndim else float(out)


def gelu_grad(x):
    """Derivative of the exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    out = ndtr(x) + x * phi
    return out if out.ndim else float(out)


def top_k(v, k):
    """Top-k values of ``v`` in descending order with their indices.

    Ties are broken by the lower original index.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"top_k expects a vector, got shape {v.shape}")
    if not 1 <= k <= v.size:
        raise ValueError(f"k={k} out of range for vector of length {v.size}")
    order = np.argsort(-v, kind="stable")
    idx = order[:k]
    return v[idx], idx
