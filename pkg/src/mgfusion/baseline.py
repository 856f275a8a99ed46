"""Early-fusion MLP baseline: concatenated features through a small net.

Serves as the sanity opponent for the multigraph model in comparisons.
Same optimizer, split handling, and checkpoint container; no graph and
no correlation loss.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import impute_means
from .errors import ConfigError, TrainingAbort
from .optim import AdamW
from .trainer import (
    CHECKPOINT_VERSION,
    TAG_INIT,
    TAG_SHUFFLE,
    Split,
    TrainConfig,
    _decode,
    _encode,
    _minibatches,
    cross_entropy,
    rng_for,
)


class EarlyFusionMlp:
    """Concat -> hidden widths (LeakyReLU 0.01) -> class logits."""

    def __init__(self, input_dims, hidden=(400, 20), n_classes=5, slope=0.01,
                 rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.input_dims = [int(d) for d in input_dims]
        self.hidden = tuple(int(h) for h in hidden)
        self.n_classes = int(n_classes)
        self.slope = float(slope)
        total = sum(self.input_dims)
        widths = [total, *self.hidden, self.n_classes]
        self.layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = ad.Parameter(f"mlp.w{i}", ad.fan_in_uniform(rng, fan_in, (fan_in, fan_out)))
            b = ad.Parameter(f"mlp.b{i}", np.zeros((1, fan_out)))
            self.layers.append((w, b))

    def parameters(self):
        return [p for w, b in self.layers for p in (w, b)]

    def forward(self, xs):
        x = ad.constant(np.hstack(xs), op="input")
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w.node), b.node)
            if i < last:
                h = ad.leaky_relu(h, self.slope)
        return h


@dataclass
class BaselineState:
    model: EarlyFusionMlp
    optimizer: AdamW
    split: Split
    cfg: TrainConfig
    rng: np.random.Generator
    run_index: int = 0
    run_config: dict = None
    epoch: int = 0


def init_baseline(input_dims, cfg, split, hidden=(400, 20), n_classes=5,
                  run_index=0, run_config=None):
    cfg.validate()
    split.validate()
    model = EarlyFusionMlp(input_dims, hidden=hidden, n_classes=n_classes,
                           rng=rng_for(cfg.seed, TAG_INIT, run_index))
    optimizer = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return BaselineState(model, optimizer, split, cfg,
                         rng_for(cfg.seed, TAG_SHUFFLE, run_index),
                         run_index, run_config or {})


def train_baseline(state, ds, cfg=None, track_validation=True, select_best=True):
    from .metrics import multiclass_auroc

    cfg = cfg or state.cfg
    complete = impute_means(ds, state.split.train_ids)
    history = []
    best_auc = -np.inf
    best_params = None
    track = track_validation and len(state.split.val_ids) > 0
    for epoch in range(cfg.epochs):
        batch_losses = []
        for batch_ids in _minibatches(state.rng, state.split.train_ids, cfg.batch_size):
            logits = state.model.forward(complete.features(batch_ids))
            loss = cross_entropy(logits, complete.labels_for(batch_ids))
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise TrainingAbort("non-finite baseline loss",
                                    snapshot={"epoch": epoch, "loss": value})
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
            val_logits = predict_baseline(state, ds, state.split.val_ids)
            roc = multiclass_auroc(val_logits, complete.labels_for(state.split.val_ids),
                                   n_classes=state.model.n_classes)
            row["val_weighted_auc"] = roc.weighted_auc
            if select_best and roc.weighted_auc > best_auc:
                best_auc = roc.weighted_auc
                best_params = {p.name: p.value.copy() for p in state.model.parameters()}
        history.append(row)
    if best_params is not None:
        for p in state.model.parameters():
            p.value = best_params[p.name]
    state.epoch += cfg.epochs
    return history


def predict_baseline(state, ds, ids):
    complete = impute_means(ds, state.split.train_ids)
    if not list(ids):
        return np.zeros((0, state.model.n_classes))
    return state.model.forward(complete.features(list(ids))).value.copy()


def save_baseline_checkpoint(state, path):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "early_fusion",
        "model_dims": {
            "input_dims": state.model.input_dims,
            "hidden": list(state.model.hidden),
            "n_classes": state.model.n_classes,
            "slope": state.model.slope,
        },
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
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_baseline_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != "early_fusion":
        raise ConfigError(f"checkpoint {path} holds a {payload.get('kind')!r} model")
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
    md = payload["model_dims"]
    state = init_baseline(md["input_dims"], cfg, split, hidden=tuple(md["hidden"]),
                          n_classes=md["n_classes"],
                          run_index=payload.get("run_index", 0),
                          run_config=payload.get("run_config", {}))
    for p in state.model.parameters():
        p.value = _decode(payload["params"][p.name])
    state.optimizer.load_state_dict({
        "t": payload["optimizer"]["t"],
        "m": {k: _decode(v) for k, v in payload["optimizer"]["m"].items()},
        "v": {k: _decode(v) for k, v in payload["optimizer"]["v"].items()},
    })
    state.rng.bit_generator.state = payload["rng_state"]
    state.epoch = payload["epoch"]
    return state
