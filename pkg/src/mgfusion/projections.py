"""Per-modality projection networks and the soft maximal-correlation loss.

Each modality gets its own small MLP mapping the raw feature space into a
shared projection space. Projected batches are mean-centered per column
(the zero-mean constraint enforced step-wise); the loss rewards cross-
modal inner products and penalizes the product of the per-modality
covariances through a trace term, averaged over ordered modality pairs.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataError, ShapeError


class ProjectionBank:
    """K modality-specific MLPs sharing one output width.

    Layer stack per modality: input -> hidden... -> output, with
    LeakyReLU (slope 0.01) after each hidden layer and a linear output.
    """

    def __init__(self, input_dims, proj_dim=64, hidden=(32, 32), slope=0.01,
                 rng=None, prefix="proj"):
        if rng is None:
            rng = np.random.default_rng(0)
        self.input_dims = [int(d) for d in input_dims]
        self.proj_dim = int(proj_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.slope = float(slope)
        self.nets = []
        for k, d_in in enumerate(self.input_dims):
            layers = []
            widths = [d_in, *self.hidden, self.proj_dim]
            for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
                w = ad.Parameter(
                    f"{prefix}{k}.w{i}",
                    ad.fan_in_uniform(rng, fan_in, (fan_in, fan_out)),
                )
                b = ad.Parameter(f"{prefix}{k}.b{i}", np.zeros((1, fan_out)))
                layers.append((w, b))
            self.nets.append(layers)

    @property
    def n_modalities(self):
        return len(self.input_dims)

    def parameters(self):
        return [p for net in self.nets for w, b in net for p in (w, b)]

    def forward(self, k, x):
        """Project modality ``k`` inputs (N x D_k) to N x proj_dim."""
        if not isinstance(x, ad.Node):
            x = ad.constant(x, op="input")
        if x.value.shape[1] != self.input_dims[k]:
            raise ShapeError(
                f"modality {k} expects {self.input_dims[k]} features",
                x.value.shape,
            )
        h = x
        last = len(self.nets[k]) - 1
        for i, (w, b) in enumerate(self.nets[k]):
            h = ad.add(ad.matmul(h, w.node), b.node)
            if i < last:
                h = ad.leaky_relu(h, self.slope)
        return h


@dataclass
class ProjectedBatch:
    """Centered projections per modality plus the means removed."""

    zs: list  # K nodes, each N x proj_dim, column means zero
    means: list  # K nodes, each 1 x proj_dim
    n: int

    @property
    def n_modalities(self):
        return len(self.zs)


def project(bank, xs):
    """Project one batch for every modality and center per column.

    ``xs`` holds one N x D_k array (or node) per modality; every patient
    in the batch must have a complete row in each (imputation happens
    upstream).
    """
    if len(xs) != bank.n_modalities:
        raise DataError(
            f"expected {bank.n_modalities} modality blocks, got {len(xs)}"
        )
    zs, means = [], []
    n = None
    for k, x in enumerate(xs):
        raw = bank.forward(k, x)
        if n is None:
            n = raw.value.shape[0]
        elif raw.value.shape[0] != n:
            raise DataError(f"modality {k} has {raw.value.shape[0]} rows, expected {n}")
        mu = ad.mean(raw, axis=0)
        zs.append(ad.sub(raw, mu))
        means.append(mu)
    return ProjectedBatch(zs=zs, means=means, n=n)


def project_with_means(bank, xs, stored_means):
    """Project using previously stored centering means (inference path)."""
    zs, means = [], []
    n = None
    for k, x in enumerate(xs):
        raw = bank.forward(k, x)
        if n is None:
            n = raw.value.shape[0]
        mu = ad.constant(stored_means[k], op="stored_mean")
        zs.append(ad.sub(raw, mu))
        means.append(mu)
    return ProjectedBatch(zs=zs, means=means, n=n)


def covariance(z):
    """Empirical covariance Z'Z/(N-1) of a centered N x D matrix node."""
    n = z.value.shape[0]
    if n < 2:
        raise DataError(f"covariance needs at least 2 samples, got {n}")
    return ad.scale(ad.matmul(ad.transpose(z), z), 1.0 / (n - 1))


def shgr_loss(pb):
    """Soft maximal-correlation loss over all ordered modality pairs.

    -(1/(K(K-1))) * sum_{l != m} [ sum_n z_n^l . z_n^m / (N-1)
                                   - tr(Cov_l Cov_m) / 2 ]

    The pair terms are combined with an exact scalar sum, so the value is
    bit-identical under any permutation of the modalities.
    """
    k = pb.n_modalities
    if k < 2:
        raise DataError("shgr_loss needs at least 2 modalities")
    n = pb.n
    if n < 2:
        raise DataError(f"shgr_loss needs at least 2 samples, got {n}")
    covs = [covariance(z) for z in pb.zs]
    terms = []
    for l in range(k):
        for m in range(l + 1, k):
            dot = ad.scale(ad.summation(ad.mul(pb.zs[l], pb.zs[m])), 1.0 / (n - 1))
            tr = ad.scale(ad.trace(ad.matmul(covs[l], covs[m])), 0.5)
            # each unordered pair stands for both ordered orientations
            terms.append(ad.scale(ad.sub(dot, tr), 2.0))
    return ad.scale(ad.fsum_scalars(terms), -1.0 / (k * (k - 1)))
