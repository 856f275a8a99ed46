"""Numpy reference implementations of the fused hot kernels.

These are the fallback backend and the semantic definition the compiled
kernels must match. Dense matmuls are delegated to BLAS here exactly as
in the compiled backend; only the fusable elementwise/reduction work
differs between the two.
"""

import numpy as np

WMEAN_EPS = 1e-8


def edge_forward(gram, denom, thresh):
    """E = max(|gram|/denom - thresh, 0), elementwise."""
    return np.maximum(np.abs(gram) / denom - thresh, 0.0)


def edge_backward(gram, denom, thresh, d_out):
    """VJP of edge_forward w.r.t. (gram, denom, thresh).

    Active entries are those strictly above the threshold (the ReLU
    subgradient at the kink is the negative-side slope, zero).
    """
    q = np.abs(gram) / denom
    active = q > thresh
    g_masked = np.where(active, d_out, 0.0)
    d_gram = g_masked * np.sign(gram) / denom
    d_denom = -g_masked * q / denom
    d_thresh = -float(g_masked.sum())
    return d_gram, d_denom, d_thresh


def wmean_forward(weights, feats):
    """Row-normalized weighted mean: (W @ H) / (rowsum(W) + eps).

    Returns the aggregated matrix and the raw row sums (reused by the
    backward pass). A zero row yields a zero output row.
    """
    rowsum = weights.sum(axis=1)
    out = (weights @ feats) / (rowsum + WMEAN_EPS)[:, None]
    return out, rowsum


def wmean_backward(weights, feats, out, rowsum, d_out):
    """VJP of wmean_forward w.r.t. (weights, feats)."""
    denom = (rowsum + WMEAN_EPS)[:, None]
    d_prod = d_out / denom
    d_feats = weights.T @ d_prod
    d_rows = -(d_out * out).sum(axis=1, keepdims=True) / denom
    d_weights = d_prod @ feats.T + d_rows
    return d_weights, d_feats


def adamw_update(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on all buffers."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param)
