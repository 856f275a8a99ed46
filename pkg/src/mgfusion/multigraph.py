"""Patient-modality multigraph construction and supra-operator assembly.

Edges are absolute cosine similarities of projected embeddings, passed
through a learnable soft threshold: each modality pair (l, m) shares one
sigmoid-squashed threshold, and edge weights are ReLU(|cos| - threshold).
The K in-plane blocks and K(K-1)/2 cross-plane blocks assemble into two
PK x PK supra-operators whose products give the walk matrices used for
message passing.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import DataError

RHO_EPS = 1e-8


class SoftThresholdMatrix:
    """Learnable K x K threshold logits, symmetrized before the sigmoid."""

    def __init__(self, n_modalities, name="sthresh.s", init=None):
        value = np.zeros((n_modalities, n_modalities)) if init is None else init
        self.param = ad.Parameter(name, value)
        self.k = n_modalities

    def parameters(self):
        return [self.param]

    def normalized(self):
        """sigmoid((S + S^T)/2): exactly symmetric, entries in (0, 1)."""
        s = self.param.node
        sym = ad.scale(ad.add(s, ad.transpose(s)), 0.5)
        return ad.sigmoid(sym)


@dataclass
class MultiGraph:
    """Per-plane adjacencies and unordered cross-plane blocks (as nodes)."""

    planes: list  # K nodes, each P x P
    cross: dict  # {(l, m) with l < m -> P x P node}; (m, l) is the transpose
    patient_ids: list
    n_modalities: int

    @property
    def n_patients(self):
        return len(self.patient_ids)

    def supra_index(self, k, i):
        """Supra node of patient slot i in plane k (modality-major)."""
        return k * self.n_patients + i

    def cross_block(self, l, m):
        if l == m:
            raise ValueError("cross_block needs two distinct planes")
        if l < m:
            return self.cross[(l, m)]
        return ad.transpose(self.cross[(m, l)])


@dataclass
class SupraMatrices:
    a_supra: ad.Node  # PK x PK block diagonal
    c_supra: ad.Node  # PK x PK, identity diagonal blocks
    walk_ac: ad.Node
    walk_ca: ad.Node
    n_patients: int
    n_modalities: int
    patient_ids: list = field(default_factory=list)


def _edge_block(gram, denom, thresh):
    """Fused edge primitive: relu(|gram|/denom - thresh) with thresh 1x1."""
    t = float(thresh.value[0, 0])
    value = kernels.edge_forward(gram.value, denom.value, t)
    cache = {"g": None, "result": None}

    def backward(g):
        # one fused backward pass shared by the three parents' VJPs
        if cache["g"] is not g:
            cache["g"] = g
            cache["result"] = kernels.edge_backward(
                gram.value, denom.value, t, np.ascontiguousarray(g)
            )
        return cache["result"]

    return ad.make_node(
        value,
        "edge_block",
        (gram, denom, thresh),
        (
            lambda g: backward(g)[0],
            lambda g: backward(g)[1],
            lambda g: np.array([[backward(g)[2]]]),
        ),
    )


def _row_norms(z):
    return ad.sqrt(ad.summation(ad.mul(z, z), axis=1))


def _gram_denom(z_l, z_m):
    gram = ad.matmul(z_l, ad.transpose(z_m))
    denom = ad.add(ad.matmul(_row_norms(z_l), ad.transpose(_row_norms(z_m))),
                   ad.constant(RHO_EPS))
    return gram, denom


def pairwise_rho(pb, l, m):
    """Absolute cosine similarity matrix between planes l and m.

    rho[i, j] = |z_i^l . z_j^m| / (||z_i^l|| * ||z_j^m|| + 1e-8),
    all entries in [0, 1], differentiable (zero norms are epsilon-guarded).
    """
    gram, denom = _gram_denom(pb.zs[l], pb.zs[m])
    return ad.div(ad.absval(gram), denom)


def build_multigraph(pb, sthresh, patient_ids=None, threshold_offset=0.0):
    """Threshold pairwise correlations into the multigraph blocks.

    In-plane block k uses threshold (k, k); cross block (l, m) uses
    (l, m). Gradients flow to both the projections and the threshold
    logits. ``threshold_offset`` is a debug knob that raises every
    threshold uniformly.
    """
    k = pb.n_modalities
    if sthresh.k != k:
        raise DataError(f"threshold matrix is {sthresh.k}x{sthresh.k}, need {k}x{k}")
    if patient_ids is None:
        patient_ids = list(range(pb.n))
    s_tilde = sthresh.normalized()
    if threshold_offset:
        s_tilde = ad.add(s_tilde, ad.constant(float(threshold_offset)))
    planes = []
    for plane in range(k):
        gram, denom = _gram_denom(pb.zs[plane], pb.zs[plane])
        planes.append(_edge_block(gram, denom, ad.entry(s_tilde, plane, plane)))
    cross = {}
    for l in range(k):
        for m in range(l + 1, k):
            gram, denom = _gram_denom(pb.zs[l], pb.zs[m])
            cross[(l, m)] = _edge_block(gram, denom, ad.entry(s_tilde, l, m))
    return MultiGraph(planes=planes, cross=cross,
                      patient_ids=list(patient_ids), n_modalities=k)


def assemble_supra(mg):
    """Stack the blocks into the two supra-operators and their products.

    a_supra is the direct sum of the in-plane blocks; c_supra carries the
    cross blocks off the diagonal and exact identity blocks on it. The
    walk operators are the two matrix products a_supra c_supra and
    c_supra a_supra.
    """
    k, p = mg.n_modalities, mg.n_patients
    zeros = ad.constant(np.zeros((p, p)), op="zero_block")
    eye = ad.constant(np.eye(p), op="identity_block")
    a_rows, c_rows = [], []
    for l in range(k):
        a_row = [mg.planes[l] if l == m else zeros for m in range(k)]
        c_row = [eye if l == m else mg.cross_block(l, m) for m in range(k)]
        a_rows.append(ad.concat_cols(a_row))
        c_rows.append(ad.concat_cols(c_row))
    a_supra = ad.concat_rows(a_rows)
    c_supra = ad.concat_rows(c_rows)
    return SupraMatrices(
        a_supra=a_supra,
        c_supra=c_supra,
        walk_ac=ad.matmul(a_supra, c_supra),
        walk_ca=ad.matmul(c_supra, a_supra),
        n_patients=p,
        n_modalities=k,
        patient_ids=list(mg.patient_ids),
    )


def induced_subgraph(mg, patient_ids):
    """Restrict every block to the given patients (differentiably).

    ``patient_ids`` must be a subset of ``mg.patient_ids``; the returned
    graph is indexed in the order given. Restricting then assembling
    equals assembling then restricting the supra blocks (walk products
    are recomputed from the restricted blocks in both cases).
    """
    pos = {pid: i for i, pid in enumerate(mg.patient_ids)}
    try:
        idx = [pos[pid] for pid in patient_ids]
    except KeyError as missing:
        raise DataError(f"unknown patient id {missing.args[0]!r}") from None

    def restrict(block):
        rows = ad.gather_rows(block, idx)
        return ad.transpose(ad.gather_rows(ad.transpose(rows), idx))

    return MultiGraph(
        planes=[restrict(a) for a in mg.planes],
        cross={key: restrict(c) for key, c in mg.cross.items()},
        patient_ids=list(patient_ids),
        n_modalities=mg.n_modalities,
    )


def restrict_supra(supra, keep_positions):
    """Induced restriction of assembled supra structures.

    Keeps the given patient positions in every plane, remaps supra
    indices correspondingly, and recomputes the walk products from the
    restricted operators.
    """
    p, k = supra.n_patients, supra.n_modalities
    keep = list(keep_positions)
    for i in keep:
        if not 0 <= i < p:
            raise DataError(f"unknown patient position {i}")
    supra_idx = [plane * p + i for plane in range(k) for i in keep]

    def restrict(block):
        rows = ad.gather_rows(block, supra_idx)
        return ad.transpose(ad.gather_rows(ad.transpose(rows), supra_idx))

    a_res = restrict(supra.a_supra)
    c_res = restrict(supra.c_supra)
    ids = [supra.patient_ids[i] for i in keep] if supra.patient_ids else keep
    return SupraMatrices(
        a_supra=a_res,
        c_supra=c_res,
        walk_ac=ad.matmul(a_res, c_res),
        walk_ca=ad.matmul(c_res, a_res),
        n_patients=len(keep),
        n_modalities=k,
        patient_ids=ids,
    )


def write_edge_list(mg, path, thresholds=None):
    """Dump nonzero edges as plain text, one line per edge.

    Line format: plane_l,plane_m,patient_i,patient_j,weight with 9
    significant digits. Unordered cross blocks are emitted once (l <= m).
    An optional K x K threshold matrix is echoed as '#'-prefixed header
    lines.
    """
    ids = mg.patient_ids
    lines = []
    if thresholds is not None:
        lines.append("# thresholds l,m,value")
        for l in range(mg.n_modalities):
            for m in range(mg.n_modalities):
                lines.append(f"# {l},{m},{thresholds[l, m]:.9g}")
    lines.append("plane_l,plane_m,patient_i,patient_j,weight")
    count = 0
    for l in range(mg.n_modalities):
        for m in range(l, mg.n_modalities):
            block = mg.planes[l].value if l == m else mg.cross[(l, m)].value
            for i, j in zip(*np.nonzero(block)):
                lines.append(f"{l},{m},{ids[i]},{ids[j]},{block[i, j]:.9g}")
                count += 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return count
