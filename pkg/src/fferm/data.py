"""Dataset container, synthetic data, CSV ingestion, splitting, group flipping."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import (
    EmptyGroup,
    MissingColumn,
    NonBinaryGroup,
    NonNumericFeature,
    UnsatisfiableSplit,
)

__all__ = [
    "Dataset",
    "load_csv",
    "write_csv",
    "synth_biased",
    "flip_sensitive",
    "split",
    "standardize",
]

SIGMA_FLOOR = 1e-12


@dataclass
class Dataset:
    """Tabular classification data with a sensitive-group column.

    features: (n, d) float matrix; labels: (n,) ints < m; groups: (n,) ints < k.
    Construction validates the positivity assumptions (every group and every
    label occurs at least once); batch views taken with subset() skip that
    check, since a minibatch may legitimately miss a group.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    m: int
    k: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.groups[idx], self.m, self.k)

    def validate(self) -> "Dataset":
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels.shape != (self.n,) or self.groups.shape != (self.n,):
            raise ValueError("labels/groups must be one value per row")
        for k in range(self.k):
            if not np.any(self.groups == k):
                raise EmptyGroup(k)
        if np.any((self.groups < 0) | (self.groups >= self.k)):
            raise ValueError("group index out of range")
        for c in range(self.m):
            if not np.any(self.labels == c):
                raise ValueError(f"label class {c} has no samples")
        if np.any((self.labels < 0) | (self.labels >= self.m)):
            raise ValueError("label index out of range")
        return self


def make_dataset(features, labels, groups, m=None, k=None) -> Dataset:
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    groups = np.asarray(groups, dtype=int)
    if m is None:
        m = int(labels.max()) + 1
    if k is None:
        k = int(groups.max()) + 1
    return Dataset(features, labels, groups, m, k).validate()


# -- synthetic data -------------------------------------------------------------

_GROUP_SHIFT = 1.0  # separation of the group-revealing feature, in std units
_LABEL_NOISE = 0.05


def synth_biased(seed: int, n: int, d: int, bias: float) -> Dataset:
    """Two balanced groups; label = sign of a group-shifted linear score.

    Feature 0 carries the group (means +-_GROUP_SHIFT); the remaining
    coordinates carry an independent latent score.  The label thresholds
    latent + c*(2s-1) + noise where c is calibrated so that an unconstrained
    classifier shows a demographic-parity gap of about `bias`, while a
    classifier that ignores feature 0 is fair.
    """
    if n < 100:
        raise ValueError("synth_biased needs n >= 100")
    if d < 2:
        raise ValueError("synth_biased needs d >= 2")
    if not 0.0 <= bias <= 1.0:
        raise ValueError("bias must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    s = np.zeros(n, dtype=int)
    s[n // 2 :] = 1
    rng.shuffle(s)
    x = rng.standard_normal((n, d))
    x[:, 0] += _GROUP_SHIFT * (2.0 * s - 1.0)
    beta = np.ones(d - 1) / np.sqrt(d - 1)
    latent = x[:, 1:] @ beta
    # c solves 2*Phi(c) - 1 = bias, so the biased optimum has DPV ~ bias
    c = float(ndtri(0.5 * (1.0 + bias))) if bias > 0 else 0.0
    score = latent + c * (2.0 * s - 1.0) + _LABEL_NOISE * rng.standard_normal(n)
    y = (score > 0).astype(int)
    return Dataset(x, y, s, 2, 2).validate()


def flip_sensitive(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Flip the group bit of exactly round(fraction * n) uniformly chosen rows."""
    if data.k != 2:
        raise NonBinaryGroup(f"flip_sensitive needs binary groups, got k={data.k}")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n_flip = int(round(fraction * data.n))
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.n, size=n_flip, replace=False)
    groups = data.groups.copy()
    groups[idx] = 1 - groups[idx]
    return Dataset(data.features.copy(), data.labels.copy(), groups, data.m, data.k).validate()


def split(data: Dataset, test_fraction: float, seed: int):
    """Deterministic disjoint split keeping every group and label on both sides."""
    n_test = int(round(test_fraction * data.n))
    if not 1 <= n_test <= data.n - 1:
        raise UnsatisfiableSplit(
            f"test_fraction={test_fraction} leaves an empty side for n={data.n}"
        )
    rng = np.random.default_rng(seed)
    for _ in range(100):
        perm = rng.permutation(data.n)
        test_idx = np.sort(perm[:n_test])
        train_idx = np.sort(perm[n_test:])
        train = data.subset(train_idx)
        test = data.subset(test_idx)
        try:
            train.validate()
            test.validate()
        except (EmptyGroup, ValueError):
            continue
        return train, test
    raise UnsatisfiableSplit("no permutation kept every group and label on both sides")


def standardize(train: Dataset, test: Dataset | None = None):
    """Z-score features using statistics of the train split only."""
    mean = train.features.mean(axis=0)
    std = np.maximum(train.features.std(axis=0), SIGMA_FLOOR)
    out_train = Dataset(
        (train.features - mean) / std, train.labels, train.groups, train.m, train.k
    )
    if test is None:
        return out_train
    out_test = Dataset((test.features - mean) / std, test.labels, test.groups, test.m, test.k)
    return out_train, out_test


# -- CSV ------------------------------------------------------------------------


def load_csv(
    path,
    feature_cols: list[str],
    label_col: str,
    group_cols: list[str],
    standardize_features: bool = True,
) -> Dataset:
    """Read a header CSV into a Dataset.

    Categorical label/group columns are encoded by lexicographic value order.
    Multiple group columns are combined into a single index by cross product
    (column order major).  Features are z-scored per column unless disabled.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MissingColumn(f"{path}: no header row")
        fields = set(reader.fieldnames)
        for col in [*feature_cols, label_col, *group_cols]:
            if col not in fields:
                raise MissingColumn(f"{path}: column {col!r} not in header")
        rows = list(reader)
    if not rows:
        raise MissingColumn(f"{path}: no data rows")

    n = len(rows)
    features = np.empty((n, len(feature_cols)))
    raw_labels: list[str] = []
    raw_groups: list[tuple[str, ...]] = []
    for i, row in enumerate(rows):
        rownum = i + 1
        for j, col in enumerate(feature_cols):
            cell = row[col]
            if cell is None or cell.strip() == "":
                raise MissingColumn(f"{path}: empty value in column {col!r} at row {rownum}")
            try:
                features[i, j] = float(cell)
            except ValueError as exc:
                raise NonNumericFeature(
                    f"{path}: column {col!r} at row {rownum}: {cell!r} is not numeric"
                ) from exc
        label = row[label_col]
        if label is None or label.strip() == "":
            raise MissingColumn(f"{path}: empty value in column {label_col!r} at row {rownum}")
        raw_labels.append(label.strip())
        cells = []
        for col in group_cols:
            cell = row[col]
            if cell is None or cell.strip() == "":
                raise MissingColumn(f"{path}: empty value in column {col!r} at row {rownum}")
            cells.append(cell.strip())
        raw_groups.append(tuple(cells))

    label_cats = sorted(set(raw_labels))
    label_index = {v: i for i, v in enumerate(label_cats)}
    labels = np.array([label_index[v] for v in raw_labels], dtype=int)

    group_cats = [sorted({g[c] for g in raw_groups}) for c in range(len(group_cols))]
    cards = [len(cats) for cats in group_cats]
    group_index = [{v: i for i, v in enumerate(cats)} for cats in group_cats]
    groups = np.zeros(n, dtype=int)
    for c in range(len(group_cols)):
        groups = groups * cards[c] + np.array([group_index[c][g[c]] for g in raw_groups])
    k = int(np.prod(cards))

    if standardize_features:
        mean = features.mean(axis=0)
        std = np.maximum(features.std(axis=0), SIGMA_FLOOR)
        features = (features - mean) / std

    return Dataset(features, labels, groups, len(label_cats), k).validate()


def write_csv(data: Dataset, path) -> None:
    """Inverse of load_csv (with standardization disabled on reload).

    Label/group values are zero-padded so lexicographic category order on
    reload matches numeric order.
    """
    width_m = len(str(max(data.m - 1, 1)))
    width_k = len(str(max(data.k - 1, 1)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(data.d)] + ["label", "group"])
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row.append(str(data.labels[i]).zfill(width_m))
            row.append(str(data.groups[i]).zfill(width_k))
            writer.writerow(row)
