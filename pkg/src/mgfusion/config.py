"""Run configuration: a YAML file with data/model/train/eval sections.

Validation is strict — unknown keys are rejected before any work starts.
The resolved config is echoed verbatim into checkpoints so a run can be
reproduced from its artifacts alone.
"""

import copy
from dataclasses import dataclass, field

import yaml

from .data import SyntheticSpec
from .errors import ConfigError
from .trainer import TrainConfig

_DATA_KEYS = {"path", "synthetic"}
_SYNTH_KEYS = {
    "n_patients", "n_modalities", "feature_dims", "n_classes",
    "latent_dim", "noise_sigma", "missing_rate", "seed",
}
_MODEL_KEYS = {"kind", "d_p", "hidden_widths", "mgnn_depth", "baseline_hidden",
               "n_classes"}
_TRAIN_KEYS = {"lambda", "lr", "weight_decay", "epochs", "pretrain_epochs",
               "batch_size", "mgnn_depth", "seed"}
_EVAL_KEYS = {"n_splits", "ratios", "report_path"}
_TOP_KEYS = {"data", "model", "train", "eval"}

MODEL_KINDS = ("mgnn", "early_fusion")


@dataclass
class DataConfig:
    path: str = None
    synthetic: SyntheticSpec = None


@dataclass
class ModelConfig:
    kind: str = "mgnn"
    d_p: int = 64
    hidden_widths: tuple = (32, 32)
    mgnn_depth: int = 2
    baseline_hidden: tuple = (400, 20)
    n_classes: int = 5


@dataclass
class EvalConfig:
    n_splits: int = 1
    ratios: tuple = (0.7, 0.1, 0.2)
    report_path: str = "report.tsv"


@dataclass
class RunConfig:
    data: DataConfig
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig
    raw: dict = field(default_factory=dict)


def _require_mapping(obj, name):
    if not isinstance(obj, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return obj


def _check_keys(section, allowed, name):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")


def _parse_data(section):
    _check_keys(section, _DATA_KEYS, "data")
    path = section.get("path")
    synth = section.get("synthetic")
    if (path is None) == (synth is None):
        raise ConfigError("data section needs exactly one of 'path' or 'synthetic'")
    spec = None
    if synth is not None:
        _require_mapping(synth, "data.synthetic")
        _check_keys(synth, _SYNTH_KEYS, "data.synthetic")
        kwargs = dict(synth)
        if "feature_dims" in kwargs:
            kwargs["feature_dims"] = tuple(int(d) for d in kwargs["feature_dims"])
        spec = SyntheticSpec(**kwargs)
        spec.validate()
    return DataConfig(path=path, synthetic=spec)


def _parse_model(section):
    _check_keys(section, _MODEL_KEYS, "model")
    cfg = ModelConfig()
    if "kind" in section:
        if section["kind"] not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
        cfg.kind = section["kind"]
    if "d_p" in section:
        cfg.d_p = int(section["d_p"])
    if "hidden_widths" in section:
        cfg.hidden_widths = tuple(int(w) for w in section["hidden_widths"])
    if "mgnn_depth" in section:
        cfg.mgnn_depth = int(section["mgnn_depth"])
    if "baseline_hidden" in section:
        cfg.baseline_hidden = tuple(int(w) for w in section["baseline_hidden"])
    if "n_classes" in section:
        cfg.n_classes = int(section["n_classes"])
    if cfg.d_p < 1 or cfg.mgnn_depth < 1:
        raise ConfigError("model widths and depth must be positive")
    return cfg


def _parse_train(section, model_depth):
    _check_keys(section, _TRAIN_KEYS, "train")
    cfg = TrainConfig()
    if "lambda" in section:
        cfg.lam = float(section["lambda"])
    if "lr" in section:
        cfg.lr = float(section["lr"])
    if "weight_decay" in section:
        cfg.weight_decay = float(section["weight_decay"])
    if "epochs" in section:
        cfg.epochs = int(section["epochs"])
    if "pretrain_epochs" in section:
        cfg.pretrain_epochs = int(section["pretrain_epochs"])
    if "batch_size" in section:
        cfg.batch_size = int(section["batch_size"])
    if "seed" in section:
        cfg.seed = int(section["seed"])
    if "mgnn_depth" in section:
        depth = int(section["mgnn_depth"])
        if model_depth is not None and depth != model_depth:
            raise ConfigError(
                "mgnn_depth set in both model and train sections with different values"
            )
        cfg.mgnn_depth = depth
    elif model_depth is not None:
        cfg.mgnn_depth = model_depth
    cfg.validate()
    return cfg


def _parse_eval(section):
    _check_keys(section, _EVAL_KEYS, "eval")
    cfg = EvalConfig()
    if "n_splits" in section:
        cfg.n_splits = int(section["n_splits"])
        if cfg.n_splits < 1:
            raise ConfigError("eval.n_splits must be >= 1")
    if "ratios" in section:
        ratios = tuple(float(r) for r in section["ratios"])
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError("eval.ratios must be three values summing to 1")
        cfg.ratios = ratios
    if "report_path" in section:
        cfg.report_path = str(section["report_path"])
    return cfg


def parse_config(raw):
    _require_mapping(raw, "config")
    _check_keys(raw, _TOP_KEYS, "config")
    if "data" not in raw:
        raise ConfigError("config needs a 'data' section")
    data = _parse_data(_require_mapping(raw["data"], "data"))
    model = _parse_model(_require_mapping(raw.get("model", {}) or {}, "model"))
    model_depth = int(raw["model"]["mgnn_depth"]) if (
        isinstance(raw.get("model"), dict) and "mgnn_depth" in raw["model"]
    ) else None
    train = _parse_train(_require_mapping(raw.get("train", {}) or {}, "train"),
                         model_depth)
    model.mgnn_depth = train.mgnn_depth
    eval_cfg = _parse_eval(_require_mapping(raw.get("eval", {}) or {}, "eval"))
    return RunConfig(data=data, model=model, train=train, eval=eval_cfg,
                     raw=copy.deepcopy(raw))


def load_config(path, seed_override=None):
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    if seed_override is not None:
        raw.setdefault("train", {})
        raw["train"]["seed"] = int(seed_override)
    return parse_config(raw)
