"""Synthetic Gaussian data generation, CSV ingestion, and run persistence.

All randomness flows through explicit seeds into a counter-based generator
(Philox), so every draw is reproducible across platforms and processes; the
generator choice is recorded in dataset manifests.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import ClassSamples, ConfigurationError, make_generator as _generator
from .transfer import TransferData


@dataclass(frozen=True)
class GaussianSpec:
    """Diagonal-covariance Gaussian sampling plan for one (class, domain) set."""

    mean: np.ndarray
    cov_diag: np.ndarray
    n: int
    seed: object

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_1d(np.asarray(self.cov_diag, dtype=float))
        if mean.shape != cov.shape:
            raise ConfigurationError("mean and cov_diag must share a shape")
        if np.any(cov <= 0):
            raise ConfigurationError("cov_diag entries must be positive")
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_diag", cov)


def add_intercept(features: np.ndarray) -> np.ndarray:
    """Append the constant-1 feature column used for intercept handling."""
    features = np.asarray(features, dtype=float)
    return np.hstack([features, np.ones((features.shape[0], 1))])


def gen_gaussian(
    spec: GaussianSpec,
    class_label: int,
    domain_label: str,
    intercept: bool = False,
) -> ClassSamples:
    """Draw spec.n i.i.d. rows from the diagonal Gaussian."""
    rng = _generator(spec.seed)
    d = spec.mean.shape[0]
    x = rng.standard_normal((spec.n, d)) * np.sqrt(spec.cov_diag) + spec.mean
    if intercept:
        x = add_intercept(x)
    return ClassSamples(x, class_label, domain_label)


def subsample(samples: ClassSamples, n: int, seed) -> ClassSamples:
    """Uniform without-replacement subsample, deterministic under the seed."""
    if n < 1:
        raise ConfigurationError("subsample size must be >= 1")
    if n > samples.n:
        raise ConfigurationError(f"subsample size {n} exceeds available {samples.n}")
    rng = _generator(seed)
    idx = rng.permutation(samples.n)[:n]
    return ClassSamples(samples.features[idx], samples.class_label, samples.domain_label)


@dataclass(frozen=True)
class DatasetBundle:
    """Training sets for both domains plus held-out target test sets."""

    source0: ClassSamples
    source1: ClassSamples
    target0: ClassSamples
    target1: ClassSamples
    test0: ClassSamples
    test1: ClassSamples
    manifest: dict

    def __post_init__(self):
        dims = {
            s.dim
            for s in (self.source0, self.source1, self.target0, self.target1, self.test0, self.test1)
        }
        if len(dims) != 1:
            raise ConfigurationError("all bundle sets must share one feature dimension")

    def training(self) -> TransferData:
        return TransferData(self.source0, self.source1, self.target0, self.target1)


def make_gaussian_bundle(
    target_mu0,
    target_mu1,
    source_mu0,
    source_mu1,
    n_target: int,
    n_source: int,
    n_test: int,
    seed: int,
    var0: float = 1.0,
    var1: float = 1.0,
    intercept: bool = True,
) -> DatasetBundle:
    """Gaussian bundle: isotropic per-class covariances shared across domains,
    different mean vectors (scalars are treated as one-dimensional means).

    Train and test draws come from disjoint seed streams, so the held-out
    sets never overlap training data by construction.
    """
    mus = [np.atleast_1d(np.asarray(m, dtype=float))
           for m in (target_mu0, target_mu1, source_mu0, source_mu1)]
    if len({m.shape[0] for m in mus}) != 1:
        raise ConfigurationError("all mean vectors must share one dimension")
    t_mu0, t_mu1, s_mu0, s_mu1 = mus
    d = t_mu0.shape[0]

    def draw(mu, var, n, stream, cls, dom):
        spec = GaussianSpec(mu, np.full(d, var), n, (seed, stream))
        return gen_gaussian(spec, cls, dom, intercept=intercept)

    bundle = DatasetBundle(
        source0=draw(s_mu0, var0, n_source, 0, 0, "S"),
        source1=draw(s_mu1, var1, n_source, 1, 1, "S"),
        target0=draw(t_mu0, var0, n_target, 2, 0, "T"),
        target1=draw(t_mu1, var1, n_target, 3, 1, "T"),
        test0=draw(t_mu0, var0, n_test, 4, 0, "T"),
        test1=draw(t_mu1, var1, n_test, 5, 1, "T"),
        manifest={
            "kind": f"gaussian-{d}d",
            "rng": "philox",
            "seed": seed,
            "var0": var0,
            "var1": var1,
            "intercept": intercept,
            "means": {
                "target_mu0": t_mu0.tolist(),
                "target_mu1": t_mu1.tolist(),
                "source_mu0": s_mu0.tolist(),
                "source_mu1": s_mu1.tolist(),
            },
            "sizes": {"n_target": n_target, "n_source": n_source, "n_test": n_test},
        },
    )
    return bundle


def load_csv(path, label_column: str, feature_columns, domain: str):
    """Read one CSV into (class-0 samples, class-1 samples) for a domain.

    The schema is explicit: a header row is required, the label column must
    hold 0 or 1, and the listed feature columns are parsed as plain decimal
    reals.  Row order is preserved within each class.
    """
    feature_columns = list(feature_columns)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file, header row required") from None
        try:
            label_idx = header.index(label_column)
            feat_idx = [header.index(c) for c in feature_columns]
        except ValueError as exc:
            raise ConfigurationError(f"{path}: missing column in header: {exc}") from None
        rows0, rows1 = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) <= max([label_idx, *feat_idx]):
                raise ConfigurationError(f"{path}: line {lineno}: too few fields")
            label = row[label_idx].strip()
            if label not in ("0", "1"):
                raise ConfigurationError(
                    f"{path}: line {lineno}: label must be 0 or 1, got {label!r}"
                )
            try:
                feats = [float(row[i]) for i in feat_idx]
            except ValueError as exc:
                raise ConfigurationError(f"{path}: line {lineno}: {exc}") from None
            (rows0 if label == "0" else rows1).append(feats)
    if not rows0 and not rows1:
        raise ConfigurationError(f"{path}: no data rows")
    if not rows0 or not rows1:
        raise ConfigurationError(f"{path}: need rows from both classes")
    return (
        ClassSamples(np.asarray(rows0, dtype=float), 0, domain),
        ClassSamples(np.asarray(rows1, dtype=float), 1, domain),
    )


def write_csv(path, samples0: ClassSamples, samples1: ClassSamples,
              label_column: str = "label", feature_prefix: str = "x"):
    """Write two sample sets as one labeled CSV (inverse of load_csv)."""
    d = samples0.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([label_column, *[f"{feature_prefix}{j}" for j in range(d)]])
        for row in samples0.features:
            writer.writerow(["0", *[repr(float(v)) for v in row]])
        for row in samples1.features:
            writer.writerow(["1", *[repr(float(v)) for v in row]])


def standardize_columns(train_sets, apply_sets):
    """Per-column standardization with statistics from the training sets only."""
    stacked = np.vstack([s.features for s in train_sets])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    out = []
    for s in apply_sets:
        out.append(ClassSamples((s.features - mean) / std, s.class_label, s.domain_label))
    return out, (mean, std)


def _flatten_record(record: dict, prefix: str = ""):
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten_record(value, prefix=f"{name}.")
        else:
            yield name, value


def persist_run(record: dict, path) -> None:
    """Write a run record as line-delimited key=value text (UTF-8).

    Nested dictionaries flatten into dotted keys; values are JSON-encoded so
    a read-back parse is field-identical.
    """
    lines = []
    for key, value in _flatten_record(record):
        if isinstance(value, np.ndarray):
            value = value.tolist()
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        lines.append(f"{key}={json.dumps(value)}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def load_run(path) -> dict:
    """Parse a persisted run record back into a flat {dotted key: value} dict."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, raw = line.partition("=")
            out[key] = json.loads(raw)
    return out
