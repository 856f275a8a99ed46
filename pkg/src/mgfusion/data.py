"""Dataset files, training-cohort mean imputation, synthetic generation.

On-disk layout: one UTF-8 comma-delimited file per modality plus
``labels.csv`` in a directory. Modality files carry a header row of
feature names and a first column of patient ids; an empty cell marks a
missing value. The labels file maps patient id to an integer class.
Every modality file must list exactly the patient ids of the labels
file (any row order).
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

N_CLASSES = 5
LABELS_FILENAME = "labels.csv"

# synthetic generator internals (calibrated, not part of SyntheticSpec)
CLASS_MEAN_SCALE = 0.65
LATENT_NOISE = 0.5


@dataclass
class Dataset:
    patient_ids: list
    tables: list  # K arrays, P x D_k, float64 with NaN for missing
    labels: np.ndarray  # P ints in {0..n_classes-1}
    modality_names: list
    feature_names: list  # K lists of column names
    class_names: list

    @property
    def n_patients(self):
        return len(self.patient_ids)

    @property
    def n_modalities(self):
        return len(self.tables)

    @property
    def input_dims(self):
        return [t.shape[1] for t in self.tables]

    def positions(self, ids):
        index = {pid: i for i, pid in enumerate(self.patient_ids)}
        try:
            return [index[pid] for pid in ids]
        except KeyError as missing:
            raise DataError(f"unknown patient id {missing.args[0]!r}") from None

    def features(self, ids):
        """Per-modality feature rows for the given patient ids."""
        rows = self.positions(ids)
        return [t[rows, :] for t in self.tables]

    def labels_for(self, ids):
        return self.labels[self.positions(ids)]


def _parse_cell(text, path, line_no):
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{line_no}: malformed numeric cell {text!r}") from None


def _read_labels(path):
    ids, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty labels file")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{line_no}: expected 'patient_id,label'")
            pid, raw = row[0].strip(), row[1].strip()
            try:
                label = int(raw)
            except ValueError:
                raise DataError(f"{path}:{line_no}: malformed label {raw!r}") from None
            ids.append(pid)
            labels.append(label)
    if not ids:
        raise DataError(f"{path}: no labeled patients")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate patient ids")
    return ids, np.asarray(labels, dtype=np.int64)


def _read_modality(path, known_ids):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise DataError(f"{path}: modality file needs an id column and features")
        feature_names = [h.strip() for h in header[1:]]
        rows = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            pid = row[0].strip()
            if pid not in known_ids:
                raise DataError(f"{path}:{line_no}: patient id {pid!r} absent from labels")
            if pid in rows:
                raise DataError(f"{path}:{line_no}: duplicate patient id {pid!r}")
            if len(row) != len(feature_names) + 1:
                raise DataError(
                    f"{path}:{line_no}: expected {len(feature_names)} features, "
                    f"got {len(row) - 1}"
                )
            rows[pid] = [_parse_cell(c, path, line_no) for c in row[1:]]
    if not rows:
        raise DataError(f"{path}: modality file has no data rows")
    return feature_names, rows


def load_dataset(path):
    """Parse a dataset directory; missing markers are preserved as NaN."""
    root = Path(path)
    labels_path = root / LABELS_FILENAME
    if not labels_path.exists():
        raise DataError(f"{root}: missing {LABELS_FILENAME}")
    ids, labels = _read_labels(labels_path)
    id_set = set(ids)
    modality_paths = sorted(
        p for p in root.glob("*.csv") if p.name != LABELS_FILENAME
    )
    if not modality_paths:
        raise DataError(f"{root}: no modality files")
    tables, names, feature_names = [], [], []
    for mpath in modality_paths:
        feats, rows = _read_modality(mpath, id_set)
        if set(rows) != id_set:
            missing = sorted(id_set - set(rows))[:3]
            raise DataError(f"{mpath}: row count mismatch; missing ids {missing}")
        table = np.array([rows[pid] for pid in ids], dtype=np.float64)
        tables.append(table)
        names.append(mpath.stem)
        feature_names.append(feats)
    n_classes = max(int(labels.max()) + 1, N_CLASSES)
    return Dataset(
        patient_ids=ids,
        tables=tables,
        labels=labels,
        modality_names=names,
        feature_names=feature_names,
        class_names=[f"class_{c}" for c in range(n_classes)],
    )


def save_dataset(ds, out_dir):
    """Write the delimited files (deterministic bytes for equal content)."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / LABELS_FILENAME, "w", encoding="utf-8", newline="") as fh:
        fh.write("patient_id,label\n")
        for pid, label in zip(ds.patient_ids, ds.labels):
            fh.write(f"{pid},{int(label)}\n")
    for name, feats, table in zip(ds.modality_names, ds.feature_names, ds.tables):
        with open(root / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("patient_id," + ",".join(feats) + "\n")
            for pid, row in zip(ds.patient_ids, table):
                cells = ["" if np.isnan(v) else repr(float(v)) for v in row]
                fh.write(pid + "," + ",".join(cells) + "\n")


def impute_means(ds, train_ids):
    """Replace missing cells with training-cohort feature means.

    Train and eval rows get the same training means; observed cells are
    never altered, so the operation is idempotent.
    """
    train_rows = ds.positions(train_ids)
    new_tables = []
    for k, table in enumerate(ds.tables):
        cohort = table[train_rows, :]
        observed = ~np.isnan(cohort)
        counts = observed.sum(axis=0)
        if np.any(counts == 0):
            j = int(np.argmin(counts))
            feature = ds.feature_names[k][j]
            raise DataError(
                f"feature {feature!r} of modality {ds.modality_names[k]!r} "
                "has no observed training value"
            )
        means = np.nansum(cohort, axis=0) / counts
        filled = table.copy()
        mask = np.isnan(filled)
        filled[mask] = np.broadcast_to(means, filled.shape)[mask]
        new_tables.append(filled)
    return replace(ds, tables=new_tables)


@dataclass
class SyntheticSpec:
    n_patients: int = 200
    n_modalities: int = 3
    feature_dims: tuple = (20, 30, 25)
    n_classes: int = 5
    latent_dim: int = 8
    noise_sigma: float = 0.5
    missing_rate: float = 0.0
    seed: int = 0

    def validate(self):
        if self.latent_dim > min(self.feature_dims):
            raise DataError("latent_dim must not exceed the smallest feature dim")
        if not 0.0 <= self.missing_rate < 1.0:
            raise DataError("missing_rate must be in [0, 1)")
        if len(self.feature_dims) != self.n_modalities:
            raise DataError("feature_dims length must equal n_modalities")


def generate_synthetic(spec):
    """Latent-factor multimodal generator.

    Per patient: a class is drawn, a latent is drawn around that class
    mean, and every modality observes a fixed random linear image of the
    latent plus isotropic noise — so cross-modal dependence flows only
    through the shared latent. Deterministic for a fixed seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    class_means = CLASS_MEAN_SCALE * rng.normal(
        size=(spec.n_classes, spec.latent_dim)
    )
    mixers = [
        rng.normal(scale=1.0 / np.sqrt(spec.latent_dim), size=(spec.latent_dim, d))
        for d in spec.feature_dims
    ]
    labels = rng.integers(0, spec.n_classes, size=spec.n_patients)
    latents = class_means[labels] + LATENT_NOISE * rng.normal(
        size=(spec.n_patients, spec.latent_dim)
    )
    tables = []
    for mixer, d in zip(mixers, spec.feature_dims):
        clean = latents @ mixer
        noisy = clean + spec.noise_sigma * rng.normal(size=(spec.n_patients, d))
        tables.append(noisy)
    if spec.missing_rate > 0.0:
        for table in tables:
            mask = rng.random(size=table.shape) < spec.missing_rate
            table[mask] = np.nan
    ids = [f"p{i:04d}" for i in range(spec.n_patients)]
    return Dataset(
        patient_ids=ids,
        tables=tables,
        labels=labels.astype(np.int64),
        modality_names=[f"modality_{k}" for k in range(spec.n_modalities)],
        feature_names=[
            [f"f{k}_{j}" for j in range(d)] for k, d in enumerate(spec.feature_dims)
        ],
        class_names=[f"class_{c}" for c in range(spec.n_classes)],
    )
