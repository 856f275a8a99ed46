"""One-vs-rest ROC statistics and the paired test for correlated AUCs.

AUROC follows the rank-statistic definition (ties count one half). The
paired comparison uses the fast midrank decomposition of the covariance
of two correlated AUC estimates on the same sample; p-values are
two-sided normal.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

SIGNIFICANCE_LEVEL = 0.01


def _check_binary(labels):
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"auroc needs both classes present (got {n_pos} pos / {n_neg} neg)"
        )
    return pos, n_pos, n_neg


def auroc(scores, labels):
    """Rank-based AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos, n_pos, n_neg = _check_binary(labels)
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def softmax_probs(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class RocResult:
    per_class_auc: np.ndarray  # NaN for classes undefined in the sample
    weighted_auc: float
    n_pos: np.ndarray
    n_neg: np.ndarray
    undefined_classes: list = field(default_factory=list)


def multiclass_auroc(logits, labels, n_classes=None):
    """Per-class one-vs-rest AUC from softmax probabilities.

    The weighted average uses empirical class frequencies; classes with
    no positives or no negatives are reported NaN, flagged, and dropped
    from the average with the remaining weights renormalized.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = logits.shape[1]
    probs = softmax_probs(logits)
    n = len(labels)
    aucs = np.full(n_classes, np.nan)
    n_pos = np.zeros(n_classes, dtype=int)
    n_neg = np.zeros(n_classes, dtype=int)
    undefined = []
    for c in range(n_classes):
        binary = (labels == c).astype(int)
        n_pos[c] = binary.sum()
        n_neg[c] = n - n_pos[c]
        if n_pos[c] == 0 or n_neg[c] == 0:
            undefined.append(c)
            continue
        aucs[c] = auroc(probs[:, c], binary)
    freqs = n_pos / n
    defined = ~np.isnan(aucs)
    weight_mass = freqs[defined].sum()
    if weight_mass == 0:
        raise ValueError("no class has both positives and negatives")
    weighted = float((freqs[defined] * aucs[defined]).sum() / weight_mass)
    return RocResult(
        per_class_auc=aucs,
        weighted_auc=weighted,
        n_pos=n_pos,
        n_neg=n_neg,
        undefined_classes=undefined,
    )


# ---------------------------------------------------------------------------
# paired AUC comparison


def _structural_components(scores, pos):
    """Midrank components (v01 over positives, v10 over negatives)."""
    x, y = scores[pos], scores[~pos]
    m, n = len(x), len(y)
    tz = rankdata(np.concatenate([x, y]), method="average")
    tx = rankdata(x, method="average")
    ty = rankdata(y, method="average")
    v01 = (tz[:m] - tx) / n
    v10 = 1.0 - (tz[m:] - ty) / m
    auc = float((tz[:m].sum() - m * (m + 1) / 2.0) / (m * n))
    return auc, v01, v10


@dataclass
class DeLongResult:
    auc_a: float
    auc_b: float
    auc_diff: float
    variance: float
    z_stat: float
    p_value: float
    degenerate: bool = False


def delong_test(scores_a, scores_b, labels):
    """Two-sided test for the AUC difference of two correlated scores.

    Scores must be on the same labeled sample with at least two
    positives and two negatives. Identical score vectors have zero
    variance and are flagged degenerate with p = 1.
    """
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    if scores_a.shape != scores_b.shape:
        raise ValueError("score vectors must align")
    labels = np.asarray(labels)
    pos = labels == 1
    m, n = int(pos.sum()), int((~pos).sum())
    if m < 2 or n < 2:
        raise ValueError(f"delong_test needs >=2 of each class (got {m} pos / {n} neg)")
    auc_a, v01_a, v10_a = _structural_components(scores_a, pos)
    auc_b, v01_b, v10_b = _structural_components(scores_b, pos)
    s01 = np.cov(np.stack([v01_a, v01_b]), ddof=1)
    s10 = np.cov(np.stack([v10_a, v10_b]), ddof=1)
    variance = float(
        (s01[0, 0] + s01[1, 1] - 2 * s01[0, 1]) / m
        + (s10[0, 0] + s10[1, 1] - 2 * s10[0, 1]) / n
    )
    diff = auc_a - auc_b
    if variance <= 1e-300:
        # zero estimated variance: identical scores (diff 0) are a wash,
        # any nonzero difference is maximally significant
        if diff == 0.0:
            return DeLongResult(auc_a, auc_b, diff, max(variance, 0.0), 0.0, 1.0,
                                degenerate=True)
        z = math.inf if diff > 0 else -math.inf
        return DeLongResult(auc_a, auc_b, diff, max(variance, 0.0), z, 0.0,
                            degenerate=True)
    z = diff / math.sqrt(variance)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return DeLongResult(auc_a, auc_b, diff, variance, z, p)


def delong_per_class(logits_a, logits_b, labels, n_classes=None):
    """Class-wise paired comparisons from two logit matrices.

    Classes without at least two positives and two negatives on the
    sample are skipped (None entry).
    """
    logits_a = np.asarray(logits_a, dtype=np.float64)
    logits_b = np.asarray(logits_b, dtype=np.float64)
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = logits_a.shape[1]
    probs_a = softmax_probs(logits_a)
    probs_b = softmax_probs(logits_b)
    results = []
    for c in range(n_classes):
        binary = (labels == c).astype(int)
        if binary.sum() < 2 or (1 - binary).sum() < 2:
            results.append(None)
            continue
        results.append(delong_test(probs_a[:, c], probs_b[:, c], binary))
    return results


# ---------------------------------------------------------------------------
# delimited reports


def write_roc_report(path, rows, class_count):
    """Per-split ROC rows plus mean/standard-error summary lines.

    ``rows`` is a list of (split_index, n_eval, RocResult). Scores are
    softmax probabilities per class (noted in the header).
    """
    header = ["split", "n_eval"]
    header += [f"auc_class{c}" for c in range(class_count)]
    header += ["weighted_auc", "undefined_classes"]
    lines = ["# one-vs-rest AUROC on softmax probabilities", "\t".join(header)]
    for split_idx, n_eval, result in rows:
        cells = [str(split_idx), str(n_eval)]
        cells += [f"{a:.9g}" for a in result.per_class_auc]
        cells.append(f"{result.weighted_auc:.9g}")
        cells.append(";".join(str(c) for c in result.undefined_classes))
        lines.append("\t".join(cells))
    if len(rows) > 1:
        stacked = np.array(
            [list(r.per_class_auc) + [r.weighted_auc] for _, _, r in rows]
        )
        mean = np.full(stacked.shape[1], np.nan)
        stderr = np.full(stacked.shape[1], np.nan)
        for j in range(stacked.shape[1]):
            col = stacked[:, j][~np.isnan(stacked[:, j])]
            if col.size:
                mean[j] = col.mean()
            if col.size >= 2:
                stderr[j] = col.std(ddof=1) / np.sqrt(col.size)
        lines.append("\t".join(["mean", ""] + [f"{v:.9g}" for v in mean] + [""]))
        lines.append("\t".join(["stderr", ""] + [f"{v:.9g}" for v in stderr] + [""]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_delong_report(path, results, name_a, name_b):
    """Class-wise paired-test rows; significance flag at p < 0.01."""
    lines = [
        f"# paired AUC comparison: a={name_a} b={name_b}",
        "class\tauc_a\tauc_b\tauc_diff\tvariance\tz\tp_value\tsignificant\tdegenerate",
    ]
    for c, res in enumerate(results):
        if res is None:
            lines.append(f"{c}\tnan\tnan\tnan\tnan\tnan\tnan\t\t")
            continue
        sig = "yes" if res.p_value < SIGNIFICANCE_LEVEL else "no"
        lines.append(
            f"{c}\t{res.auc_a:.9g}\t{res.auc_b:.9g}\t{res.auc_diff:.9g}"
            f"\t{res.variance:.9g}\t{res.z_stat:.9g}\t{res.p_value:.9g}"
            f"\t{sig}\t{'yes' if res.degenerate else 'no'}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
