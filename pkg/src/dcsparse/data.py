"""Dataset container, sparse text loaders, splits and synthetic generators.

All random generation uses numpy's counter-based Philox bit generator with a
64-bit seed, so identical (spec, seed) pairs reproduce byte-identical
datasets within this implementation.
"""

from __future__ import annotations

import csv as _csv
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DataFormatError",
    "SplitError",
    "Dataset",
    "SplitSpec",
    "Scaler",
    "load_sparse_text",
    "write_sparse_text",
    "generate_sim1",
    "generate_sim2",
    "generate_sim3",
    "generate",
    "parse_generator_spec",
    "split",
    "standardize",
    "DATASET_SOURCES",
]

# Source manifest for the real benchmark datasets; downloads are out of band,
# the loader only reads local files.
DATASET_SOURCES = {
    "covertype": "https://archive.ics.uci.edu/ml/datasets/Covertype",
    "madelon": "https://archive.ics.uci.edu/ml/datasets/Madelon",
    "miniboone": "https://archive.ics.uci.edu/ml/datasets/MiniBooNE+particle+identification",
    "protein": "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/multiclass.html",
    "sensit": "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/multiclass.html",
    "sensorless": "https://archive.ics.uci.edu/ml/datasets/Dataset+for+Sensorless+Drive+Diagnosis",
}


class DataFormatError(ValueError):
    """Malformed dataset file."""


class SplitError(ValueError):
    """A split would starve some class."""


def is_sparse(X) -> bool:
    return sp.issparse(X)


def row_sq_norms(X) -> np.ndarray:
    """Squared euclidean norm of every row, dense or sparse."""
    if is_sparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


@dataclass
class Dataset:
    """n observation rows (dense array or CSR matrix), labels in {1..Q}.

    Instances are treated as immutable once constructed and may be shared
    freely across threads.
    """

    X: object                     # (n, d) ndarray or csr_matrix
    y: np.ndarray                 # (n,) int labels in {1..Q}
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"{self.X.shape[0]} rows but {self.y.shape[0]} labels")
        if self.n < 1:
            raise ValueError("dataset is empty")
        if is_sparse(self.X):
            self.X = self.X.tocsr()
            self.X.sort_indices()
            if not np.all(np.isfinite(self.X.data)):
                raise ValueError("non-finite feature value")
        else:
            self.X = np.asarray(self.X, dtype=float)
            if not np.all(np.isfinite(self.X)):
                raise ValueError("non-finite feature value")
        if self.y.min() < 1:
            bad = int(np.argmin(self.y))
            raise ValueError(f"label {self.y[bad]} at row {bad} is below 1")
        present = np.unique(self.y)
        expected = np.arange(1, self.Q + 1)
        if present.size != self.Q or not np.array_equal(present, expected):
            missing = sorted(set(expected.tolist()) - set(present.tolist()))
            raise ValueError(f"classes {missing} have no samples")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def Q(self) -> int:
        return int(self.y.max())

    def subset(self, idx, note: str = "") -> "Dataset":
        prov = dict(self.provenance)
        if note:
            prov["subset"] = note
        return Dataset(self.X[idx], self.y[idx], prov)

    def densified(self) -> np.ndarray:
        return self.X.toarray() if is_sparse(self.X) else self.X


# ---------------------------------------------------------------------------
# loaders / writers


def _remap_labels(raw: np.ndarray) -> Tuple[np.ndarray, dict]:
    values = sorted(set(raw.tolist()))
    mapping = {v: k + 1 for k, v in enumerate(values)}
    return np.array([mapping[v] for v in raw.tolist()], dtype=int), mapping


def _parse_libsvm(path) -> Tuple[list, list, int]:
    rows, labels, d = [], [], 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad label {tokens[0]!r}")
            entries = []
            seen = set()
            for tok in tokens[1:]:
                try:
                    idx_s, val_s = tok.split(":")
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: bad entry {tok!r}")
                if idx < 1:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature index {idx} is not 1-based")
                if idx in seen:
                    raise DataFormatError(
                        f"{path}:{lineno}: duplicate feature index {idx}")
                seen.add(idx)
                entries.append((idx - 1, val))
            entries.sort()
            d = max(d, (entries[-1][0] + 1) if entries else 0)
            rows.append(entries)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return rows, labels, d


def _parse_csv(path, label_column: str) -> Tuple[list, list, int]:
    with open(path, "r", newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file")
        if label_column not in header:
            raise DataFormatError(
                f"{path}: no column named {label_column!r} in header")
        label_pos = header.index(label_column)
        feat_pos = [j for j in range(len(header)) if j != label_pos]
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                labels.append(float(rec[label_pos]))
                vals = [float(rec[j]) for j in feat_pos]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field")
            rows.append([(j, v) for j, v in enumerate(vals) if v != 0.0])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return rows, labels, len(feat_pos)


def load_sparse_text(path, format: str = "libsvm",
                     label_column: str = "label") -> Dataset:
    """Load a labeled dataset from sparse libsvm text or headed CSV.

    Labels are remapped to contiguous {1..Q} (mapping recorded in the
    provenance); duplicate feature indices within a libsvm row and malformed
    lines are rejected with the offending line number.
    """
    if format == "libsvm":
        rows, raw_labels, d = _parse_libsvm(path)
    elif format == "csv":
        rows, raw_labels, d = _parse_csv(path, label_column)
    else:
        raise ValueError(f"unknown format {format!r}")
    y, mapping = _remap_labels(np.asarray(raw_labels))
    indptr = [0]
    indices, values = [], []
    for entries in rows:
        for j, v in entries:
            indices.append(j)
            values.append(v)
        indptr.append(len(indices))
    X = sp.csr_matrix((np.asarray(values, dtype=float),
                       np.asarray(indices, dtype=np.int64),
                       np.asarray(indptr, dtype=np.int64)),
                      shape=(len(rows), d))
    prov = {"source": str(path), "format": format,
            "label_mapping": {repr(k): v for k, v in mapping.items()}}
    return Dataset(X, y, prov)


def write_sparse_text(dataset: Dataset, path, format: str = "libsvm",
                      label_column: str = "label") -> None:
    """Write a dataset back to disk; round-trips through the loader."""
    if format == "libsvm":
        X = dataset.X.tocsr() if is_sparse(dataset.X) else sp.csr_matrix(dataset.X)
        with open(path, "w") as fh:
            for i in range(dataset.n):
                lo, hi = X.indptr[i], X.indptr[i + 1]
                parts = [str(int(dataset.y[i]))]
                parts += [f"{j + 1}:{v:.17g}"
                          for j, v in zip(X.indices[lo:hi], X.data[lo:hi])]
                fh.write(" ".join(parts) + "\n")
    elif format == "csv":
        dense = dataset.densified()
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow([label_column] + [f"f{j}" for j in range(dataset.d)])
            for i in range(dataset.n):
                writer.writerow([int(dataset.y[i])]
                                + [f"{v:.17g}" for v in dense[i]])
    else:
        raise ValueError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# synthetic generators


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def generate_sim1(n: int = 250_000, seed: int = 0) -> Dataset:
    """Four equiprobable spherical gaussian classes in 50 dimensions.

    Class k has mean 0.5 on its own band of ten features (features 1-10 for
    class 1 up to 31-40 for class 4) and 0 elsewhere; features 41-50 carry
    no signal.
    """
    if n < 4:
        raise ValueError("need at least 4 samples")
    d, Q = 50, 4
    rng = _rng(seed)
    y = rng.integers(1, Q + 1, size=n)
    X = rng.standard_normal((n, d))
    for k in range(1, Q + 1):
        lo, hi = 10 * (k - 1), 10 * k
        X[y == k, lo:hi] += 0.5
    prov = {"generator": "sim1", "n": n, "d": d, "seed": seed}
    return Dataset(X, y, prov)


def generate_sim2(n: int = 150_000, seed: int = 0) -> Dataset:
    """Three correlated gaussian classes in 50 dimensions.

    Shared covariance is block diagonal with five 10x10 blocks whose (j, j')
    entry is 0.6^|j-j'|; class means are 0, 0.4 and 0.8 on the first forty
    features.  Sampling goes through a per-block Cholesky factor.
    """
    if n < 3:
        raise ValueError("need at least 3 samples")
    d, Q, bs = 50, 3, 10
    rng = _rng(seed)
    y = rng.integers(1, Q + 1, size=n)
    jj = np.arange(bs)
    block = 0.6 ** np.abs(jj[:, None] - jj[None, :])
    chol = np.linalg.cholesky(block)
    X = np.empty((n, d))
    for b in range(d // bs):
        z = rng.standard_normal((n, bs))
        X[:, b * bs:(b + 1) * bs] = z @ chol.T
    means = np.zeros((Q + 1, d))
    means[2, :40] = 0.4
    means[3, :40] = 0.8
    X += means[y]
    prov = {"generator": "sim2", "n": n, "d": d, "seed": seed}
    return Dataset(X, y, prov)


def generate_sim3(n_per_class: int = 62_500, d: int = 500, seed: int = 0) -> Dataset:
    """Four gaussian classes: the first 100 features have class mean
    (k-1)/3, the remaining d-100 are pure standard normal noise."""
    if d <= 100:
        raise ValueError(f"d must exceed 100, got {d}")
    if n_per_class < 1:
        raise ValueError("need at least one sample per class")
    Q = 4
    rng = _rng(seed)
    n = n_per_class * Q
    y = np.repeat(np.arange(1, Q + 1), n_per_class)
    X = rng.standard_normal((n, d))
    for k in range(1, Q + 1):
        X[y == k, :100] += (k - 1) / 3.0
    perm = rng.permutation(n)
    prov = {"generator": "sim3", "n_per_class": n_per_class, "d": d, "seed": seed}
    return Dataset(X[perm], y[perm], prov)


_GENERATORS = {"sim1": generate_sim1, "sim2": generate_sim2, "sim3": generate_sim3}


def generate(kind: str, seed: int = 0, n: Optional[int] = None,
             d: Optional[int] = None, n_per_class: Optional[int] = None) -> Dataset:
    """Run one of the named generators from keyword parameters."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown generator {kind!r}; known: {sorted(_GENERATORS)}")
    if kind == "sim3":
        kwargs = {"seed": seed}
        if n_per_class is not None:
            kwargs["n_per_class"] = int(n_per_class)
        elif n is not None:
            kwargs["n_per_class"] = int(n) // 4
        if d is not None:
            kwargs["d"] = int(d)
        return generate_sim3(**kwargs)
    kwargs = {"seed": seed}
    if n is not None:
        kwargs["n"] = int(n)
    if d is not None:
        raise ValueError(f"{kind} has a fixed dimension")
    return _GENERATORS[kind](**kwargs)


def parse_generator_spec(path) -> dict:
    """Read a key=value generator spec file (kind, n, d, n_per_class, seed)."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    if "kind" not in out:
        raise DataFormatError(f"{path}: generator spec needs a 'kind' entry")
    for key in ("n", "d", "n_per_class", "seed"):
        if key in out:
            out[key] = int(out[key])
    return out


# ---------------------------------------------------------------------------
# splits and standardization


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_fraction: float = 0.2   # share of the training part
    seed: int = 0


def split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Stratified (train, validation, test) split, deterministic under seed.

    The test part takes 1 - train_fraction of every class; the validation
    part is carved out of the training part.  Raises :class:`SplitError`
    naming the first class that would end up empty somewhere.
    """
    rng = _rng(spec.seed)
    tr_idx, va_idx, te_idx = [], [], []
    for cls in range(1, dataset.Q + 1):
        idx = np.nonzero(dataset.y == cls)[0]
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(idx.size * (1.0 - spec.train_fraction)))
        n_val = int(round((idx.size - n_test) * spec.validation_fraction))
        n_core = idx.size - n_test - n_val
        if min(n_test, n_val, n_core) < 1:
            raise SplitError(f"class {cls} would have an empty part "
                             f"(test={n_test}, val={n_val}, train={n_core})")
        te_idx.append(idx[:n_test])
        va_idx.append(idx[n_test:n_test + n_val])
        tr_idx.append(idx[n_test + n_val:])
    tr = np.sort(np.concatenate(tr_idx))
    va = np.sort(np.concatenate(va_idx))
    te = np.sort(np.concatenate(te_idx))
    return (dataset.subset(tr, "train"), dataset.subset(va, "validation"),
            dataset.subset(te, "test"))


@dataclass
class Scaler:
    """Per-feature affine transform fit on training data only.

    Features whose training variance is at or below the floor are passed
    through unchanged.
    """

    mean: np.ndarray
    scale: np.ndarray
    variance_floor: float = 1e-12

    @classmethod
    def fit(cls, X, variance_floor: float = 1e-12) -> "Scaler":
        dense = X.toarray() if is_sparse(X) else np.asarray(X, dtype=float)
        mean = dense.mean(axis=0)
        var = dense.var(axis=0)
        constant = var <= variance_floor
        mean[constant] = 0.0
        scale = np.sqrt(var)
        scale[constant] = 1.0
        return cls(mean, scale, variance_floor)

    def transform(self, X) -> np.ndarray:
        dense = X.toarray() if is_sparse(X) else np.asarray(X, dtype=float)
        return (dense - self.mean) / self.scale

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(),
                           "scale": self.scale.tolist(),
                           "variance_floor": self.variance_floor})

    @classmethod
    def from_json(cls, text: str) -> "Scaler":
        obj = json.loads(text)
        return cls(np.asarray(obj["mean"], dtype=float),
                   np.asarray(obj["scale"], dtype=float),
                   float(obj.get("variance_floor", 1e-12)))


def standardize(train: Dataset, *others: Dataset) -> Tuple[Tuple[Dataset, ...], Scaler]:
    """Center/scale every part with statistics computed on ``train`` only."""
    scaler = Scaler.fit(train.X)
    parts = []
    for part in (train,) + others:
        prov = dict(part.provenance)
        prov["standardized"] = True
        parts.append(Dataset(scaler.transform(part.X), part.y, prov))
    return tuple(parts), scaler
