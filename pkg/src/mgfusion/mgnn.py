"""Message passing over the supra walk operators and the graph readout.

Each layer runs two parallel branches of the isomorphism-network update
h <- phi((1 + eps) h + wmean(neighbors)), one branch per walk operator,
and concatenates the branch outputs. The readout mixes a patient's
per-plane embeddings with softmaxed convex weights and maps linearly to
class logits.
"""

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ShapeError


class MgnnLayer:
    """One depth of the two-branch update.

    Each branch: linear (out width 64 by default), ReLU, batch norm.
    The learnable eps is shared between the branches of a layer.
    """

    def __init__(self, in_dim, out_dim=64, rng=None, name="layer0"):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.name = name

        def linear(tag):
            w = ad.Parameter(f"{name}.{tag}.w",
                             ad.fan_in_uniform(rng, in_dim, (in_dim, out_dim)))
            b = ad.Parameter(f"{name}.{tag}.b", np.zeros((1, out_dim)))
            gamma = ad.Parameter(f"{name}.{tag}.gamma", np.ones((1, out_dim)))
            beta = ad.Parameter(f"{name}.{tag}.beta", np.zeros((1, out_dim)))
            return w, b, gamma, beta

        self.branch_i = linear("phi_i")
        self.branch_ii = linear("phi_ii")
        self.eps = ad.Parameter(f"{name}.eps", np.zeros((1, 1)))
        self.bn_i = ad.BatchNormState(out_dim)
        self.bn_ii = ad.BatchNormState(out_dim)

    def parameters(self):
        return [*self.branch_i, *self.branch_ii, self.eps]

    def buffers(self):
        return {
            f"{self.name}.phi_i.bn_mean": self.bn_i.mean,
            f"{self.name}.phi_i.bn_var": self.bn_i.var,
            f"{self.name}.phi_ii.bn_mean": self.bn_ii.mean,
            f"{self.name}.phi_ii.bn_var": self.bn_ii.var,
        }


def init_embedding(pb):
    """Depth-0 supra embedding: row k*P + i is patient i's plane-k vector."""
    return ad.concat_rows(pb.zs)


def wmean(walk, feats):
    """Weighted neighborhood mean with row-sum normalization.

    out_i = sum_j walk[i, j] feats_j / (sum_j walk[i, j] + 1e-8); rows
    with no neighbors come out zero.
    """
    value, rowsum = kernels.wmean_forward(walk.value, feats.value)
    cache = {"g": None, "result": None}

    def backward(g):
        # one fused backward pass shared by both parents' VJPs
        if cache["g"] is not g:
            cache["g"] = g
            cache["result"] = kernels.wmean_backward(
                walk.value, feats.value, value, rowsum, np.ascontiguousarray(g)
            )
        return cache["result"]

    return ad.make_node(value, "wmean", (walk, feats),
                        (lambda g: backward(g)[0], lambda g: backward(g)[1]))


def _branch(h, walk, params, bn_state, eps, training):
    w, b, gamma, beta = params
    if h.value.shape[1] != w.value.shape[0]:
        raise ShapeError("mgnn branch", h.value.shape, w.value.shape)
    one_plus_eps = ad.add(ad.constant(1.0), eps.node)
    pre = ad.add(ad.mul(h, one_plus_eps), wmean(walk, h))
    lin = ad.add(ad.matmul(pre, w.node), b.node)
    return ad.batchnorm(ad.relu(lin), gamma.node, beta.node, bn_state, training)


def layer_forward(layer, h, supra, training=True):
    out_i = _branch(h, supra.walk_ac, layer.branch_i, layer.bn_i, layer.eps, training)
    out_ii = _branch(h, supra.walk_ca, layer.branch_ii, layer.bn_ii, layer.eps, training)
    return ad.concat_cols([out_i, out_ii])


def mgnn_forward(h0, supra, layers, training=True):
    """Run all layers; output width doubles the branch width per layer."""
    h = h0
    for layer in layers:
        h = layer_forward(layer, h, supra, training)
    return h


class Readout:
    """Convex mixture over planes followed by a linear map to logits."""

    def __init__(self, n_modalities, in_dim, n_classes=5, rng=None, name="readout"):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_modalities = int(n_modalities)
        self.alpha = ad.Parameter(f"{name}.alpha", np.zeros((1, n_modalities)))
        self.w_out = ad.Parameter(f"{name}.w",
                                  ad.fan_in_uniform(rng, in_dim, (in_dim, n_classes)))
        self.b_out = ad.Parameter(f"{name}.b", np.zeros((1, n_classes)))

    def parameters(self):
        return [self.alpha, self.w_out, self.b_out]

    def convex_weights(self):
        return ad.softmax_rows(self.alpha.node)


def readout_logits(h, ro, n_patients, n_modalities):
    """Per-patient logits from the final supra embedding.

    logits_i = W ( sum_k softmax(alpha)_k h[k*P + i] ) + b.
    """
    if h.value.shape[0] != n_patients * n_modalities:
        raise ShapeError("readout", h.value.shape, (n_patients * n_modalities,))
    weights = ro.convex_weights()
    mixed = None
    for k in range(n_modalities):
        block = ad.gather_rows(h, range(k * n_patients, (k + 1) * n_patients))
        weighted = ad.mul(block, ad.entry(weights, 0, k))
        mixed = weighted if mixed is None else ad.add(mixed, weighted)
    return ad.add(ad.matmul(mixed, ro.w_out.node), ro.b_out.node)
