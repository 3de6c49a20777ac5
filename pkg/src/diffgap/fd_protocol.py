"""Comparable Fréchet-distance protocol: class-prior-matched subsets,
multi-subset averaging, and split-mismatch baselines.

Feature sets come from the toy pipeline or from externally extracted
per-sample feature files (binary ``FGL1`` layout or the dataset CSV layout).
"""

import csv
import hashlib
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import as_points, check_positive_int
from .metrics import fit_gaussian, frechet_distance

_MAGIC = b"FGL1"


class InfeasiblePlanError(ValueError):
    """A subset plan requests more samples of a class than the pool holds."""


@dataclass
class FeatureSet:
    """A labeled (or unlabeled) cloud of feature vectors.

    ``id`` is a content hash over the canonical binary encoding, so equal
    data always hashes equal regardless of origin.
    """

    vectors: np.ndarray
    labels: np.ndarray | None = None
    origin: str = "toy"
    id: str = ""

    def __post_init__(self):
        self.vectors = as_points(self.vectors, "vectors")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.vectors):
                raise ValueError("labels must cover every vector")
            present = np.unique(self.labels)
            if len(present) and not np.array_equal(present, np.arange(len(present))):
                raise ValueError(f"label set must be contiguous from 0, got {present.tolist()}")
        if not self.id:
            self.id = hashlib.sha256(_encode(self)).hexdigest()

    def __len__(self):
        return len(self.vectors)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def take(self, indices, origin=None):
        labels = self.labels[indices] if self.labels is not None else None
        return FeatureSet(self.vectors[indices], labels,
                          origin=origin or self.origin)


def _encode(fs: FeatureSet) -> bytes:
    vec = np.ascontiguousarray(fs.vectors, dtype="<f4")
    label_flag = 1 if fs.labels is not None else 0
    parts = [_MAGIC, struct.pack("<III", len(fs.vectors), fs.dim, label_flag), vec.tobytes()]
    if label_flag:
        parts.append(np.ascontiguousarray(fs.labels, dtype="<u4").tobytes())
    return b"".join(parts)


def save_features(fs: FeatureSet, path):
    """Write the binary layout: magic FGL1, u32 n/d/label_flag, f32 rows, u32 labels."""
    with open(path, "wb") as fh:
        fh.write(_encode(fs))


def load_features(path, origin="external-file"):
    """Read a FGL1 binary file, or fall back to the dataset CSV layout."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != _MAGIC:
            return _load_features_csv(path, origin)
        n, d, label_flag = struct.unpack("<III", fh.read(12))
        vec = np.frombuffer(fh.read(4 * n * d), dtype="<f4").reshape(n, d)
        labels = None
        if label_flag:
            labels = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
    return FeatureSet(vec.astype(np.float64), labels, origin=origin)


def _load_features_csv(path, origin):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_label = "label" in header
        d = header.index("label") if has_label else len(header)
        vec, labels = [], []
        for row in reader:
            vec.append([float(v) for v in row[:d]])
            if has_label:
                labels.append(int(row[d]))
    return FeatureSet(np.array(vec), np.array(labels) if has_label else None, origin=origin)


@dataclass
class SubsetPlan:
    """How many subsets to draw, their size, and the per-class counts."""

    n_subsets: int
    subset_size: int
    class_prior: dict
    seed: int

    def __post_init__(self):
        self.class_prior = {int(c): int(m) for c, m in self.class_prior.items()}
        if sum(self.class_prior.values()) != self.subset_size:
            raise ValueError("class prior counts must sum to subset_size")
        if any(m < 0 for m in self.class_prior.values()):
            raise ValueError("class counts must be non-negative")


def match_prior(reference: FeatureSet):
    """Exact per-class counts of a labeled reference set."""
    if reference.labels is None:
        raise ValueError("reference set is unlabeled; cannot match a class prior")
    classes, counts = np.unique(reference.labels, return_counts=True)
    return {int(c): int(m) for c, m in zip(classes, counts)}


def _scale_prior(prior, size):
    """Shrink/grow per-class counts to sum to ``size`` (largest remainder rule)."""
    total = sum(prior.values())
    raw = {c: m * size / total for c, m in prior.items()}
    counts = {c: int(np.floor(v)) for c, v in raw.items()}
    leftover = size - sum(counts.values())
    by_frac = sorted(prior, key=lambda c: (-(raw[c] - counts[c]), c))
    for c in by_frac[:leftover]:
        counts[c] += 1
    return counts


def make_plan(reference: FeatureSet, n_subsets, seed=0, subset_size=None, uniform=False):
    """Plan prior-matched subsets shaped like the reference set.

    By default the subset size and per-class counts are exactly those of the
    reference; a larger requested size is clamped to the reference size with
    a warning. ``uniform=True`` spreads counts evenly over the classes
    instead (for runs where priors cannot be matched across conditions).
    """
    n_subsets = check_positive_int(n_subsets, "n_subsets")
    if subset_size is None:
        subset_size = len(reference)
    subset_size = check_positive_int(subset_size, "subset_size")
    if subset_size > len(reference):
        warnings.warn(f"subset_size {subset_size} exceeds the {len(reference)}-sample "
                      "reference; clamping to the reference size", stacklevel=2)
        subset_size = len(reference)
    prior = match_prior(reference)
    if uniform:
        prior = {c: 1 for c in prior}
    counts = _scale_prior(prior, subset_size) if (uniform or subset_size != len(reference)) \
        else prior
    return SubsetPlan(n_subsets, subset_size, counts, int(seed))


def draw_subsets(pool: FeatureSet, plan: SubsetPlan):
    """Draw ``n_subsets`` prior-matched subsets from the pool.

    Each subset samples without replacement within itself; different subsets
    may overlap. Deterministic per (pool, plan).
    """
    if pool.labels is None:
        raise ValueError("pool must be labeled to honor a class prior")
    class_rows = {int(c): np.flatnonzero(pool.labels == c) for c in np.unique(pool.labels)}
    for c, m in plan.class_prior.items():
        have = len(class_rows.get(c, ()))
        if m > have:
            raise InfeasiblePlanError(
                f"class {c}: plan wants {m} samples but the pool holds {have}")
    rng = np.random.default_rng(plan.seed)
    subsets = []
    for _ in range(plan.n_subsets):
        chosen = [rng.choice(class_rows[c], size=m, replace=False)
                  for c, m in sorted(plan.class_prior.items()) if m > 0]
        subsets.append(pool.take(np.concatenate(chosen), origin=pool.origin))
    return subsets


@dataclass
class ProtocolReport:
    mean_fd: float
    per_reference: list

    def to_dict(self):
        return {"mean_fd": self.mean_fd, "per_reference": list(self.per_reference)}


def protocol_fd(generated: FeatureSet, references):
    """FD of the generated set against every reference, plus the mean."""
    references = list(references)
    if not references:
        raise ValueError("need at least one reference set")
    gen_fit = fit_gaussian(generated.vectors)
    fds = []
    for ref in references:
        if ref.dim != generated.dim:
            raise ValueError(f"reference dim {ref.dim} != generated dim {generated.dim}")
        fds.append(frechet_distance(gen_fit, fit_gaussian(ref.vectors)))
    return ProtocolReport(float(np.mean(fds)), fds)


@dataclass
class BaselineReport:
    train_vs_train: float
    train_vs_val: float
    train_pairs: list
    val_pairs: list

    def to_dict(self):
        return {"train_vs_train": self.train_vs_train, "train_vs_val": self.train_vs_val,
                "train_pairs": list(self.train_pairs), "val_pairs": list(self.val_pairs)}


def baseline_mismatch(train_pool: FeatureSet, val_set: FeatureSet, plan: SubsetPlan):
    """Split-mismatch floor: subset-vs-subset FDs next to subset-vs-val FDs.

    The first number says how far apart two same-distribution subsets sit
    (limited-sample bias); gap claims below that floor are meaningless.
    """
    if plan.n_subsets < 2:
        raise ValueError("need at least 2 subsets for the train-vs-train baseline")
    subsets = draw_subsets(train_pool, plan)
    fits = [fit_gaussian(s.vectors) for s in subsets]
    val_fit = fit_gaussian(val_set.vectors)
    train_pairs = [frechet_distance(fits[i], fits[j])
                   for i in range(len(fits)) for j in range(i + 1, len(fits))]
    val_pairs = [frechet_distance(f, val_fit) for f in fits]
    return BaselineReport(float(np.mean(train_pairs)), float(np.mean(val_pairs)),
                          train_pairs, val_pairs)
