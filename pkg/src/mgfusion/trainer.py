"""Joint optimization of the correlation and classification objectives.

The training loop follows the inductive protocol: each step samples a
training minibatch, projects it, builds that batch's induced multigraph,
runs message passing, and takes one AdamW step on
lambda * L_corr + (1 - lambda) * L_ce. Validation and test patients
never contribute edges during training; at evaluation time the
parameters are frozen and the graph is extended with the unseen
patients for a single forward pass.
"""

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import mgnn as mg_nn
from .data import impute_means
from .errors import ConfigError, DataError, TrainingAbort
from .multigraph import SoftThresholdMatrix, assemble_supra, build_multigraph
from .optim import AdamW
from .projections import ProjectionBank, project, project_with_means, shgr_loss

CHECKPOINT_VERSION = 1

# rng stream tags (one master seed, disjoint deterministic streams)
TAG_INIT = 0
TAG_SHUFFLE = 1
TAG_SPLIT = 2


def rng_for(seed, tag, run_index=0):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, run_index]))


@dataclass
class TrainConfig:
    lam: float = 0.01
    lr: float = 1e-4
    weight_decay: float = 1e-3
    epochs: int = 50
    pretrain_epochs: int = 50
    batch_size: int = 128
    mgnn_depth: int = 2
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.mgnn_depth < 1:
            raise ConfigError("mgnn_depth must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")


@dataclass
class Split:
    train_ids: list
    val_ids: list
    test_ids: list

    def validate(self):
        train, val, test = map(set, (self.train_ids, self.val_ids, self.test_ids))
        if train & val or train & test or val & test:
            raise ConfigError("split id sets must be pairwise disjoint")


def make_split(ids, ratios, seed, run_index=0):
    """Deterministic shuffle split; regenerates per (seed, run_index)."""
    r_train, r_val, r_test = ratios
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    rng = rng_for(seed, TAG_SPLIT, run_index)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = int(round(r_val * n))
    n_test = int(round(r_test * n))
    split = Split(
        train_ids=shuffled[n_val + n_test:],
        val_ids=shuffled[:n_val],
        test_ids=shuffled[n_val:n_val + n_test],
    )
    split.validate()
    return split


@dataclass
class ModelDims:
    input_dims: list
    proj_dim: int = 64
    hidden: tuple = (32, 32)
    depth: int = 2
    n_classes: int = 5
    branch_width: int = 64
    slope: float = 0.01

    def to_dict(self):
        return {
            "input_dims": list(self.input_dims),
            "proj_dim": self.proj_dim,
            "hidden": list(self.hidden),
            "depth": self.depth,
            "n_classes": self.n_classes,
            "branch_width": self.branch_width,
            "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dims=list(d["input_dims"]),
            proj_dim=int(d["proj_dim"]),
            hidden=tuple(d["hidden"]),
            depth=int(d["depth"]),
            n_classes=int(d["n_classes"]),
            branch_width=int(d["branch_width"]),
            slope=float(d["slope"]),
        )


class FusionModel:
    """The full learnable bundle: projections, thresholds, layers, readout.

    The parameter set is exactly {projection nets} + {threshold logits}
    + {branch transforms, eps per layer} + {readout}; names are unique.
    """

    def __init__(self, dims, rng):
        self.dims = dims
        k = len(dims.input_dims)
        self.bank = ProjectionBank(
            dims.input_dims, proj_dim=dims.proj_dim, hidden=dims.hidden,
            slope=dims.slope, rng=rng,
        )
        self.sthresh = SoftThresholdMatrix(k)
        self.layers = []
        width = dims.proj_dim
        for d in range(dims.depth):
            self.layers.append(
                mg_nn.MgnnLayer(width, dims.branch_width, rng=rng, name=f"layer{d}")
            )
            width = 2 * dims.branch_width
        self.readout = mg_nn.Readout(k, width, dims.n_classes, rng=rng)

    def parameters(self):
        params = (
            self.bank.parameters()
            + self.sthresh.parameters()
            + [p for layer in self.layers for p in layer.parameters()]
            + self.readout.parameters()
        )
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in model")
        return params

    def param_dict(self):
        return {p.name: p for p in self.parameters()}

    def buffers(self):
        merged = {}
        for layer in self.layers:
            merged.update(layer.buffers())
        return merged

    def bn_states(self):
        return [s for layer in self.layers for s in (layer.bn_i, layer.bn_ii)]

    def forward(self, pb, patient_ids=None, training=True, threshold_offset=0.0):
        """Projected batch -> (logits node, multigraph, supra operators)."""
        graph = build_multigraph(pb, self.sthresh, patient_ids=patient_ids,
                                 threshold_offset=threshold_offset)
        supra = assemble_supra(graph)
        h = mg_nn.mgnn_forward(mg_nn.init_embedding(pb), supra, self.layers, training)
        logits = mg_nn.readout_logits(h, self.readout, pb.n, pb.n_modalities)
        return logits, graph, supra


# ---------------------------------------------------------------------------
# losses


def one_hot(labels, n_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(
            f"label outside class range [0, {n_classes}): {labels.min()}..{labels.max()}"
        )
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under row softmax."""
    n, c = logits.value.shape
    onehot = ad.constant(one_hot(labels, c), op="onehot")
    picked = ad.summation(ad.mul(ad.log_softmax_rows(logits), onehot))
    return ad.scale(picked, -1.0 / n)


def joint_loss(logits, labels, shgr, lam):
    """lambda * correlation loss + (1 - lambda) * cross-entropy."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    ce = cross_entropy(logits, labels)
    return ad.add(ad.scale(shgr, lam), ad.scale(ce, 1.0 - lam))


# ---------------------------------------------------------------------------
# training state


class TrainState:
    def __init__(self, model, optimizer, split, cfg, rng, run_index=0,
                 run_config=None):
        self.model = model
        self.optimizer = optimizer
        self.split = split
        self.cfg = cfg
        self.rng = rng
        self.run_index = run_index
        self.run_config = run_config or {}
        self.train_means = None
        self.epoch = 0

    def snapshot_values(self):
        params = {p.name: p.value.copy() for p in self.model.parameters()}
        buffers = {k: v.copy() for k, v in self.model.buffers().items()}
        return params, buffers

    def restore_values(self, params, buffers):
        for name, p in self.model.param_dict().items():
            p.value = params[name]
        current = self.model.buffers()
        for name, arr in buffers.items():
            current[name][...] = arr


def init_state(dims, cfg, split, run_index=0, run_config=None):
    cfg.validate()
    split.validate()
    model = FusionModel(dims, rng_for(cfg.seed, TAG_INIT, run_index))
    optimizer = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = rng_for(cfg.seed, TAG_SHUFFLE, run_index)
    return TrainState(model, optimizer, split, cfg, rng, run_index, run_config)


def _minibatches(rng, ids, batch_size):
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start:start + batch_size]
        if len(chunk) >= 2:  # covariance needs two samples
            yield chunk


def compute_train_means(state, ds):
    """Training-set projection column means (pre-centering), per modality."""
    complete = impute_means(ds, state.split.train_ids)
    xs = complete.features(state.split.train_ids)
    means = []
    for k, x in enumerate(xs):
        raw = state.model.bank.forward(k, x)
        means.append(raw.value.mean(axis=0, keepdims=True).copy())
    return means


def pretrain(state, ds, cfg=None):
    """Optimize only the projection nets on the correlation loss.

    Returns the per-epoch mean loss curve. Deterministic given the
    state's seed; all other parameters stay bit-identical.
    """
    cfg = cfg or state.cfg
    complete = impute_means(ds, state.split.train_ids)
    bank_params = state.model.bank.parameters()
    optimizer = AdamW(bank_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    curve = []
    for _ in range(cfg.pretrain_epochs):
        batch_losses = []
        for batch_ids in _minibatches(state.rng, state.split.train_ids, cfg.batch_size):
            pb = project(state.model.bank, complete.features(batch_ids))
            loss = shgr_loss(pb)
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise TrainingAbort(
                    "non-finite correlation loss during pre-training",
                    snapshot={"epoch": len(curve), "loss": value},
                )
            optimizer.zero_grad()
            ad.backprop(loss)
            optimizer.step()
            batch_losses.append(value)
        curve.append(float(np.mean(batch_losses)) if batch_losses else float("nan"))
    return curve


def train(state, ds, cfg=None, track_validation=True, select_best=True):
    """Joint training loop; returns per-epoch history rows.

    Each row records the epoch, the mean training loss, and (when
    validation tracking is on) the validation weighted AUROC. Validation
    is a pure forward pass: it consumes no training randomness and
    mutates nothing, so histories with tracking disabled have identical
    training-loss columns. With ``select_best`` the parameters of the
    best-validation epoch are restored at the end.
    """
    from .metrics import multiclass_auroc  # local import avoids a cycle

    cfg = cfg or state.cfg
    complete = impute_means(ds, state.split.train_ids)
    history = []
    best_auc = -np.inf
    best_snapshot = None
    track = track_validation and len(state.split.val_ids) > 0
    for epoch in range(cfg.epochs):
        batch_losses = []
        for batch_index, batch_ids in enumerate(
            _minibatches(state.rng, state.split.train_ids, cfg.batch_size)
        ):
            xs = complete.features(batch_ids)
            labels = complete.labels_for(batch_ids)
            pb = project(state.model.bank, xs)
            shgr = shgr_loss(pb) if cfg.lam > 0 else ad.constant(0.0)
            logits, _, _ = state.model.forward(pb, patient_ids=batch_ids, training=True)
            loss = joint_loss(logits, labels, shgr, cfg.lam)
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise TrainingAbort(
                    "non-finite joint loss",
                    snapshot={
                        "epoch": epoch,
                        "batch": batch_index,
                        "loss": value,
                        "shgr": float(shgr.value[0, 0]),
                    },
                )
            state.optimizer.zero_grad()
            ad.backprop(loss)
            state.optimizer.step()
            batch_losses.append(value)
        row = {
            "epoch": state.epoch + epoch,
            "train_loss": float(np.mean(batch_losses)) if batch_losses else float("nan"),
            "val_weighted_auc": float("nan"),
        }
        if track:
            val_logits = predict_inductive(state, ds, state.split.val_ids)
            val_labels = complete.labels_for(state.split.val_ids)
            roc = multiclass_auroc(val_logits, val_labels,
                                   n_classes=state.model.dims.n_classes)
            row["val_weighted_auc"] = roc.weighted_auc
            if select_best and roc.weighted_auc > best_auc:
                best_auc = roc.weighted_auc
                best_snapshot = state.snapshot_values()
        history.append(row)
    if best_snapshot is not None:
        state.restore_values(*best_snapshot)
    state.epoch += cfg.epochs
    state.train_means = compute_train_means(state, ds)
    return history


def _forward_frozen(state, ds, ids):
    """Eval-mode forward over the given patients with stored means."""
    complete = impute_means(ds, state.split.train_ids)
    xs = complete.features(ids)
    means = state.train_means
    if means is None:
        means = compute_train_means(state, ds)
    pb = project_with_means(state.model.bank, xs, means)
    logits, _, _ = state.model.forward(pb, patient_ids=ids, training=False)
    return logits.value.copy()


def predict_inductive(state, ds, eval_ids):
    """Frozen-parameter logits for unseen patients.

    The graph spans the training patients plus ``eval_ids``; projections
    are centered with the stored training means and batch norm runs in
    eval mode. Labels of the eval patients are never read. Returns one
    logits row per eval id.
    """
    eval_ids = list(eval_ids)
    overlap = set(eval_ids) & set(state.split.train_ids)
    if overlap:
        raise DataError(f"eval ids overlap training ids: {sorted(overlap)[:3]}")
    if not eval_ids:
        return np.zeros((0, state.model.dims.n_classes))
    all_ids = list(state.split.train_ids) + eval_ids
    logits = _forward_frozen(state, ds, all_ids)
    return logits[len(state.split.train_ids):, :]


def predict_on_train(state, ds):
    """Frozen-parameter logits for the training patients themselves."""
    return _forward_frozen(state, ds, list(state.split.train_ids))


# ---------------------------------------------------------------------------
# checkpoint container (single JSON file, byte-deterministic)


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode(blob):
    arr = np.frombuffer(base64.b64decode(blob["data"]), dtype="<f8")
    return arr.reshape(blob["shape"]).copy()


def save_checkpoint(state, path, kind="mgnn"):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "model_dims": state.model.dims.to_dict(),
        "train_config": {
            "lam": state.cfg.lam,
            "lr": state.cfg.lr,
            "weight_decay": state.cfg.weight_decay,
            "epochs": state.cfg.epochs,
            "pretrain_epochs": state.cfg.pretrain_epochs,
            "batch_size": state.cfg.batch_size,
            "mgnn_depth": state.cfg.mgnn_depth,
            "seed": state.cfg.seed,
        },
        "run_config": state.run_config,
        "run_index": state.run_index,
        "epoch": state.epoch,
        "params": {p.name: _encode(p.value) for p in state.model.parameters()},
        "buffers": {k: _encode(v) for k, v in state.model.buffers().items()},
        "optimizer": {
            "t": state.optimizer.t,
            "m": {k: _encode(v) for k, v in state.optimizer.m.items()},
            "v": {k: _encode(v) for k, v in state.optimizer.v.items()},
        },
        "split": {
            "train": list(state.split.train_ids),
            "val": list(state.split.val_ids),
            "test": list(state.split.test_ids),
        },
        "train_means": (
            None if state.train_means is None
            else [_encode(m) for m in state.train_means]
        ),
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_checkpoint_kind(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh).get("kind", "mgnn")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version in {path}")
    if payload.get("kind") != "mgnn":
        raise ConfigError(f"checkpoint {path} holds a {payload.get('kind')!r} model")
    dims = ModelDims.from_dict(payload["model_dims"])
    tc = payload["train_config"]
    cfg = TrainConfig(
        lam=tc["lam"], lr=tc["lr"], weight_decay=tc["weight_decay"],
        epochs=tc["epochs"], pretrain_epochs=tc["pretrain_epochs"],
        batch_size=tc["batch_size"], mgnn_depth=tc["mgnn_depth"], seed=tc["seed"],
    )
    split = Split(
        train_ids=payload["split"]["train"],
        val_ids=payload["split"]["val"],
        test_ids=payload["split"]["test"],
    )
    state = init_state(dims, cfg, split, run_index=payload.get("run_index", 0),
                       run_config=payload.get("run_config", {}))
    for name, p in state.model.param_dict().items():
        p.value = _decode(payload["params"][name])
    buffers = state.model.buffers()
    for name, blob in payload["buffers"].items():
        buffers[name][...] = _decode(blob)
    state.optimizer.load_state_dict({
        "t": payload["optimizer"]["t"],
        "m": {k: _decode(v) for k, v in payload["optimizer"]["m"].items()},
        "v": {k: _decode(v) for k, v in payload["optimizer"]["v"].items()},
    })
    if payload["train_means"] is not None:
        state.train_means = [_decode(m) for m in payload["train_means"]]
    state.rng.bit_generator.state = payload["rng_state"]
    state.epoch = payload["epoch"]
    return state
