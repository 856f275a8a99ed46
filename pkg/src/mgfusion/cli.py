"""Command-line surface: synth, train, eval, compare, export-graph.

Every command takes --config and is deterministic given the config
(seed included) and input files. Exit codes: 0 success, 1 validation
error, 2 runtime abort.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import trainer as tr
from .config import load_config
from .data import generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, DataError, TrainingAbort
from .metrics import (
    delong_per_class,
    multiclass_auroc,
    write_delong_report,
    write_roc_report,
)
from .multigraph import write_edge_list
from .projections import project_with_means

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _dataset_for(run_cfg):
    if run_cfg.data.path is not None:
        return load_dataset(run_cfg.data.path)
    return generate_synthetic(run_cfg.data.synthetic)


def _write_history(path, rows):
    lines = ["epoch\ttrain_loss\tval_weighted_auc"]
    for row in rows:
        lines.append(
            f"{row['epoch']}\t{row['train_loss']!r}\t{row['val_weighted_auc']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _checkpoint_name(run_index, n_splits):
    return "checkpoint.json" if n_splits == 1 else f"checkpoint_{run_index:02d}.json"


def _history_name(run_index, n_splits):
    return "history.tsv" if n_splits == 1 else f"history_{run_index:02d}.tsv"


def cmd_synth(args):
    run_cfg = load_config(args.config, seed_override=args.seed)
    if run_cfg.data.synthetic is None:
        raise ConfigError("synth needs a data.synthetic config block")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"{out} is not empty (use --force to overwrite)")
    ds = generate_synthetic(run_cfg.data.synthetic)
    save_dataset(ds, out)
    missing = sum(int(np.isnan(t).sum()) for t in ds.tables)
    cells = sum(t.size for t in ds.tables)
    counts = np.bincount(ds.labels, minlength=len(ds.class_names))
    print(f"wrote {ds.n_modalities} modality files + labels to {out}")
    print(f"patients={ds.n_patients} dims={ds.input_dims} "
          f"classes={counts.tolist()} missing={missing / cells:.4f}")
    return EXIT_OK


def _train_one(run_cfg, ds, run_index):
    split = tr.make_split(ds.patient_ids, run_cfg.eval.ratios,
                          run_cfg.train.seed, run_index)
    if run_cfg.model.kind == "early_fusion":
        state = bl.init_baseline(
            ds.input_dims, run_cfg.train, split,
            hidden=run_cfg.model.baseline_hidden,
            n_classes=run_cfg.model.n_classes,
            run_index=run_index, run_config=run_cfg.raw,
        )
        history = bl.train_baseline(state, ds)
        return state, history, bl.save_baseline_checkpoint
    dims = tr.ModelDims(
        input_dims=ds.input_dims,
        proj_dim=run_cfg.model.d_p,
        hidden=run_cfg.model.hidden_widths,
        depth=run_cfg.model.mgnn_depth,
        n_classes=run_cfg.model.n_classes,
    )
    state = tr.init_state(dims, run_cfg.train, split, run_index=run_index,
                          run_config=run_cfg.raw)
    tr.pretrain(state, ds)
    history = tr.train(state, ds)
    return state, history, tr.save_checkpoint


def cmd_train(args):
    run_cfg = load_config(args.config, seed_override=args.seed)
    ds = _dataset_for(run_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_splits = run_cfg.eval.n_splits
    for run_index in range(n_splits):
        try:
            state, history, saver = _train_one(run_cfg, ds, run_index)
        except TrainingAbort as abort:
            diag = out / f"abort_{run_index:02d}.json"
            diag.write_text(json.dumps(abort.snapshot, sort_keys=True, indent=2),
                            encoding="utf-8")
            print(f"aborted: {abort} (diagnostic in {diag})", file=sys.stderr)
            raise
        saver(state, out / _checkpoint_name(run_index, n_splits))
        _write_history(out / _history_name(run_index, n_splits), history)
        tail = history[-1] if history else {"train_loss": float("nan"),
                                            "val_weighted_auc": float("nan")}
        print(f"split {run_index}: {len(history)} epochs, "
              f"final train loss {tail['train_loss']:.6g}, "
              f"val weighted AUROC {tail['val_weighted_auc']:.4g}")
    return EXIT_OK


def _load_any(path):
    kind = tr.read_checkpoint_kind(path)
    if kind == "early_fusion":
        return bl.load_baseline_checkpoint(path), kind
    return tr.load_checkpoint(path), kind


def _checkpoint_paths(arg, n_splits):
    p = Path(arg)
    if p.is_dir():
        return [p / _checkpoint_name(j, n_splits) for j in range(n_splits)]
    return [p]


def _check_dims(state, ds, kind):
    dims = state.model.dims.input_dims if kind == "mgnn" else state.model.input_dims
    if list(dims) != list(ds.input_dims):
        raise ConfigError(
            f"checkpoint input dims {list(dims)} do not match dataset "
            f"feature matrices {list(ds.input_dims)}"
        )


def _predict_eval(state, kind, ds, on_train):
    if kind == "early_fusion":
        ids = state.split.train_ids if on_train else state.split.test_ids
        return bl.predict_baseline(state, ds, ids), ids
    if on_train:
        return tr.predict_on_train(state, ds), state.split.train_ids
    return tr.predict_inductive(state, ds, state.split.test_ids), state.split.test_ids


def cmd_eval(args):
    run_cfg = load_config(args.config, seed_override=args.seed)
    ds = _dataset_for(run_cfg)
    paths = _checkpoint_paths(args.checkpoint, run_cfg.eval.n_splits)
    rows = []
    for run_index, path in enumerate(paths):
        if not Path(path).exists():
            raise ConfigError(f"missing checkpoint {path}")
        state, kind = _load_any(path)
        _check_dims(state, ds, kind)
        logits, ids = _predict_eval(state, kind, ds, args.on_train)
        labels = ds.labels_for(ids)
        roc = multiclass_auroc(logits, labels, n_classes=run_cfg.model.n_classes)
        rows.append((run_index, len(ids), roc))
    write_roc_report(run_cfg.eval.report_path, rows, run_cfg.model.n_classes)
    which = "train" if args.on_train else "test"
    for run_index, n_eval, roc in rows:
        print(f"split {run_index} ({which}, n={n_eval}): "
              f"weighted AUROC {roc.weighted_auc:.4f}")
    print(f"report written to {run_cfg.eval.report_path}")
    return EXIT_OK


def cmd_compare(args):
    run_cfg = load_config(args.config, seed_override=args.seed)
    ds = _dataset_for(run_cfg)
    state_a, kind_a = _load_any(args.checkpoint_a)
    state_b, kind_b = _load_any(args.checkpoint_b)
    for state, kind in ((state_a, kind_a), (state_b, kind_b)):
        _check_dims(state, ds, kind)
    same_split = (
        list(state_a.split.train_ids) == list(state_b.split.train_ids)
        and list(state_a.split.test_ids) == list(state_b.split.test_ids)
    )
    if not same_split:
        raise ConfigError("checkpoints were trained on different splits")
    logits_a, ids = _predict_eval(state_a, kind_a, ds, on_train=False)
    logits_b, _ = _predict_eval(state_b, kind_b, ds, on_train=False)
    labels = ds.labels_for(ids)
    results = delong_per_class(logits_a, logits_b, labels,
                               n_classes=run_cfg.model.n_classes)
    write_delong_report(args.out, results, args.checkpoint_a, args.checkpoint_b)
    significant = [c for c, r in enumerate(results)
                   if r is not None and r.p_value < 0.01]
    print(f"comparison written to {args.out}; classes with p<0.01: "
          f"{significant if significant else 'none'}")
    return EXIT_OK


def cmd_export_graph(args):
    run_cfg = load_config(args.config, seed_override=args.seed)
    ds = _dataset_for(run_cfg)
    state, kind = _load_any(args.checkpoint)
    if kind != "mgnn":
        raise ConfigError("export-graph needs a multigraph checkpoint")
    _check_dims(state, ds, kind)
    from .data import impute_means
    from .multigraph import build_multigraph

    complete = impute_means(ds, state.split.train_ids)
    xs = complete.features(state.split.train_ids)
    means = state.train_means
    if means is None:
        means = tr.compute_train_means(state, ds)
    pb = project_with_means(state.model.bank, xs, means)
    graph = build_multigraph(pb, state.model.sthresh,
                             patient_ids=state.split.train_ids,
                             threshold_offset=args.threshold_offset)
    thresholds = state.model.sthresh.normalized().value + args.threshold_offset
    count = write_edge_list(graph, args.out, thresholds=thresholds)
    print(f"wrote {count} edges over {len(state.split.train_ids)} patients "
          f"x {graph.n_modalities} planes to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mgfusion",
        description="Multimodal fusion via learned patient-modality multigraphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override train.seed from the config")

    p_synth = sub.add_parser("synth", help="write a synthetic dataset to disk")
    common(p_synth)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--force", action="store_true",
                         help="overwrite a non-empty output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="pretrain + train, write checkpoints")
    common(p_train)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints on held-out splits")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True,
                        help="checkpoint file, or the train output directory")
    p_eval.add_argument("--on-train", action="store_true",
                        help="evaluate on the training split (sanity check)")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="paired AUC test between two checkpoints")
    common(p_cmp)
    p_cmp.add_argument("--checkpoint-a", required=True)
    p_cmp.add_argument("--checkpoint-b", required=True)
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_exp = sub.add_parser("export-graph",
                           help="dump the learned training-split edge list")
    common(p_exp)
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--threshold-offset", type=float, default=0.0,
                       help="debug: raise every learned threshold by this much")
    p_exp.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
