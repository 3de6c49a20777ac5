"""Datasets on circles, class partitions, and noise-level schedules.

Circle datasets carry paired train/validation splits that interleave along
the circle; schedules follow the EDM power-law discretization with an
appended terminal level of exactly 0.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_points, check_positive_int

TRAIN = "train"
VAL = "val"

# snap angles sitting within this many radians below a sector boundary up to
# the boundary's sector (atan2 roundoff puts exact-boundary points 1 ulp low)
_SECTOR_EPS = 1e-9


class DegeneratePartitionError(ValueError):
    """A class ended up empty on the train split."""


@dataclass
class PointDataset:
    """Labeled points with a train/val split.

    points : (n, dim) float64
    labels : (n,) int64 class ids
    split  : (n,) array of "train"/"val" tags
    seed   : seed used at construction (None for imported data)
    radius : circle radius when generated by :func:`make_circle_dataset`
    paired : True when every class must appear in both splits (alternating circles)
    """

    points: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    seed: int | None = None
    radius: float | None = None
    paired: bool = False

    def __post_init__(self):
        self.points = as_points(self.points, "points")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype="U5")
        n = len(self.points)
        if len(self.labels) != n or len(self.split) != n:
            raise ValueError("points, labels and split must have equal length")
        bad = set(self.split) - {TRAIN, VAL}
        if bad:
            raise ValueError(f"unknown split tags: {sorted(bad)}")

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def train_mask(self):
        return self.split == TRAIN

    @property
    def train_points(self):
        return self.points[self.train_mask]

    @property
    def val_points(self):
        return self.points[~self.train_mask]

    @property
    def train_labels(self):
        return self.labels[self.train_mask]

    @property
    def val_labels(self):
        return self.labels[~self.train_mask]

    @property
    def n_train(self):
        return int(self.train_mask.sum())

    @property
    def n_val(self):
        return int((~self.train_mask).sum())

    def with_labels(self, labels):
        """Return a copy carrying new per-point class ids.

        For paired datasets every class must appear in both splits; a class
        missing from either split raises :class:`DegeneratePartitionError`.
        """
        labels = np.asarray(labels, dtype=np.int64)
        if len(labels) != len(self.points):
            raise ValueError("labels must cover every point")
        ds = PointDataset(self.points.copy(), labels, self.split.copy(),
                          seed=self.seed, radius=self.radius, paired=self.paired)
        k = labels.max() + 1 if len(labels) else 0
        if self.paired and k > 1:
            for c in range(int(k)):
                if not np.any(ds.train_labels == c) or not np.any(ds.val_labels == c):
                    raise DegeneratePartitionError(f"class {c} missing from one split")
        return ds

    def subset(self, mask):
        """Restrict to the rows selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        return PointDataset(self.points[mask], self.labels[mask], self.split[mask],
                            seed=self.seed, radius=self.radius, paired=False)


def make_circle_dataset(n_per_split, radius=12.0, mode="symmetric", seed=0):
    """Place ``n_per_split`` train and ``n_per_split`` val points on a circle.

    Symmetric mode puts train points at angles 2*pi*i/n and val points
    halfway between neighbors; random mode draws all 2n angles uniformly and
    alternates the split tags in sorted-angle order. Rows are stored train
    block first, then val block, each in ascending angle.
    """
    n = check_positive_int(n_per_split, "n_per_split", minimum=2)
    radius = float(radius)
    if not np.isfinite(radius) or radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if mode not in ("symmetric", "random"):
        raise ValueError(f"mode must be 'symmetric' or 'random', got {mode!r}")

    if mode == "symmetric":
        train_angles = 2.0 * np.pi * np.arange(n) / n
        val_angles = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    else:
        rng = np.random.default_rng(seed)
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=2 * n))
        train_angles = angles[0::2]
        val_angles = angles[1::2]

    angles = np.concatenate([train_angles, val_angles])
    points = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    split = np.array([TRAIN] * n + [VAL] * n, dtype="U5")
    labels = np.zeros(2 * n, dtype=np.int64)
    return PointDataset(points, labels, split, seed=seed, radius=radius, paired=True)


@dataclass
class NoiseSchedule:
    """Descending noise levels sigma_0 > ... > sigma_{n-1} plus a terminal 0.

    ``levels`` has ``n_steps + 1`` entries; the last is exactly 0 and is only
    ever consumed by the sampler's final Euler step.
    """

    sigma_min: float
    sigma_max: float
    rho: float
    n_steps: int
    levels: np.ndarray = field(repr=False)

    @property
    def sigmas(self):
        """The positive levels (terminal 0 excluded)."""
        return self.levels[:-1]


def make_schedule(sigma_min=0.002, sigma_max=28.0, rho=7.0, n_steps=32):
    """EDM power-law discretization of the noise range.

    sigma_i = (sigma_max^(1/rho) + i/(n_steps-1) * (sigma_min^(1/rho) -
    sigma_max^(1/rho)))^rho, with the two endpoints pinned exactly and a
    terminal 0 appended.
    """
    sigma_min = float(sigma_min)
    sigma_max = float(sigma_max)
    rho = float(rho)
    n_steps = check_positive_int(n_steps, "n_steps", minimum=2)
    if not (0 < sigma_min < sigma_max) or not np.isfinite(sigma_max):
        raise ValueError(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    if not np.isfinite(rho) or rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")

    i = np.arange(n_steps, dtype=np.float64)
    ramp = sigma_max ** (1.0 / rho) + i / (n_steps - 1) * (
        sigma_min ** (1.0 / rho) - sigma_max ** (1.0 / rho))
    sigmas = ramp ** rho
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    levels = np.append(sigmas, 0.0)
    if np.any(np.diff(levels) >= 0):
        raise ValueError("schedule is not strictly decreasing; check parameters")
    return NoiseSchedule(sigma_min, sigma_max, rho, n_steps, levels)


@dataclass
class ClassPartition:
    """Assignment of every dataset row to one of k classes."""

    k: int
    assignment: np.ndarray
    method: str

    def labels_for(self, ds: PointDataset):
        if len(self.assignment) != len(ds.points):
            raise ValueError("partition does not cover this dataset")
        return self.assignment


def _angles(points):
    return np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)


def _lloyd(train, k, seed, max_iter=200):
    rng = np.random.default_rng(seed)
    centroids = train[rng.choice(len(train), size=k, replace=False)]
    assign = np.full(len(train), -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = np.sum((train[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
        new_assign = np.argmin(d2, axis=1)  # argmin ties resolve to lowest id
        for c in range(k):
            members = train[new_assign == c]
            if len(members) == 0:
                # re-seed from the point farthest from its assigned centroid
                far = np.argmax(d2[np.arange(len(train)), new_assign])
                centroids[c] = train[far]
                new_assign[far] = c
            else:
                centroids[c] = members.mean(axis=0)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centroids


def partition_classes(ds: PointDataset, k, method="angular-sector", seed=0):
    """Split the dataset into k classes by angular sector or by k-means.

    Angular sectors slice [0, 2*pi) into k equal arcs over point angles;
    k-means runs Lloyd iterations on the train coordinates and assigns val
    points to the nearest centroid.
    """
    k = check_positive_int(k, "k", minimum=1)
    if k > ds.n_train:
        raise ValueError(f"k={k} exceeds the {ds.n_train} train points")
    if method == "angular-sector":
        if ds.dim != 2:
            raise ValueError("angular-sector partitioning requires 2D points")
        arc = 2.0 * np.pi / k
        assignment = np.minimum((_angles(ds.points) / arc + _SECTOR_EPS).astype(np.int64), k - 1)
    elif method == "k-means":
        train_assign, centroids = _lloyd(ds.train_points, k, seed)
        assignment = np.empty(len(ds.points), dtype=np.int64)
        assignment[ds.train_mask] = train_assign
        val = ds.val_points
        d2 = np.sum((val[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
        assignment[~ds.train_mask] = np.argmin(d2, axis=1)
    else:
        raise ValueError(f"unknown partition method {method!r}")

    train_assign = assignment[ds.train_mask]
    for c in range(k):
        if not np.any(train_assign == c):
            raise DegeneratePartitionError(f"class {c} is empty on the train split")
    return ClassPartition(k, assignment, method)


def save_csv(ds: PointDataset, path):
    """Write ``x0,...,x{d-1},label,split`` rows in stored order (train block first)."""
    d = ds.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(d)] + ["label", "split"])
        order = np.concatenate([np.flatnonzero(ds.train_mask), np.flatnonzero(~ds.train_mask)])
        for i in order:
            writer.writerow([repr(float(v)) for v in ds.points[i]]
                            + [int(ds.labels[i]), ds.split[i]])


def load_csv(path):
    """Read a dataset written by :func:`save_csv` (round-trips exactly)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 3 or header[-2:] != ["label", "split"]:
            raise ValueError(f"unexpected dataset header: {header}")
        d = len(header) - 2
        pts, labels, split = [], [], []
        for row in reader:
            pts.append([float(v) for v in row[:d]])
            labels.append(int(row[d]))
            split.append(row[d + 1])
    return PointDataset(np.array(pts), np.array(labels), np.array(split))
