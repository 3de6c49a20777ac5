"""Reconstruction errors, generalization-gap curves and grids, and
Gaussian-fit Fréchet distances.

The ladder of metrics moves in single design steps from a pixel-space mean
squared reconstruction error (rL2_pix) through feature space (rL2_feat) and
a distribution-level distance (rFD) to the Fréchet distance on full
sampling-trajectory endpoints (tFD).
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_points, check_positive_int, check_sigma
from .sampling import noise_draws, sample_endpoints

LADDER_KINDS = ("rL2_pix", "rL2_feat", "rFD", "tFD")


class InvalidCovarianceError(ValueError):
    """Covariance is not positive semidefinite beyond the clamping tolerance."""


# --------------------------------------------------------------------------
# Gaussian summaries and the Fréchet distance


@dataclass
class GaussianSummary:
    """Sample mean and (unbiased, symmetrized) covariance of a point cloud."""

    mean: np.ndarray
    cov: np.ndarray
    n: int


def fit_gaussian(points):
    points = as_points(points, "points")
    n = len(points)
    if n < 2:
        raise ValueError(f"need at least 2 points to fit a Gaussian, got {n}")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianSummary(mean, cov, n)


def _psd_sqrt(mat, tol_scale):
    """Matrix square root via symmetric eigendecomposition.

    Eigenvalues in [-tol, 0) clamp to 0; anything below -tol raises
    InvalidCovarianceError. ``tol_scale`` is the trace-based scale of the
    matrices involved.
    """
    mat = 0.5 * (mat + mat.T)
    eigval, eigvec = np.linalg.eigh(mat)
    tol = 1e-10 * max(tol_scale, 1e-300)
    if eigval.min() < -tol:
        raise InvalidCovarianceError(
            f"eigenvalue {eigval.min():.3e} below -{tol:.3e}; matrix is not PSD")
    eigval = np.clip(eigval, 0.0, None)
    return (eigvec * np.sqrt(eigval)) @ eigvec.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary):
    """Squared Wasserstein-2 distance between two Gaussian fits.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2), with the
    cross term computed through the symmetric product so that every
    eigendecomposition sees a PSD matrix.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("summaries have mismatched dimensions")
    scale = float(np.trace(a.cov) + np.trace(b.cov))
    b_half = _psd_sqrt(b.cov, scale)
    cross = _psd_sqrt(b_half @ a.cov @ b_half, scale * scale)
    dmu = a.mean - b.mean
    fd = float(dmu @ dmu + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    # exact-zero distances round slightly negative; the noise floor scales
    # with the trace (worse for near-singular covariances)
    return max(fd, 0.0) if fd > -1e-8 * max(scale, 1.0) else _raise_negative(fd)


def _raise_negative(fd):
    raise InvalidCovarianceError(f"Fréchet distance evaluated to {fd}")


# --------------------------------------------------------------------------
# Feature maps (transformer-style)


class IdentityFeatures(BaseEstimator, TransformerMixin):
    """Coordinate space itself; rL2_feat with this map equals rL2_pix."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return as_points(X, "X")


class RandomLinearFeatures(BaseEstimator, TransformerMixin):
    """Fixed seeded random linear projection to ``out_dim`` features."""

    def __init__(self, out_dim=8, seed=0):
        self.out_dim = out_dim
        self.seed = seed

    def fit(self, X, y=None):
        X = as_points(X, "X")
        rng = np.random.default_rng(self.seed)
        self.weights_ = rng.standard_normal((X.shape[1], self.out_dim)) / np.sqrt(X.shape[1])
        return self

    def transform(self, X):
        X = as_points(X, "X")
        if X.shape[1] != self.weights_.shape[0]:
            raise ValueError("input dim does not match the fitted projection")
        return X @ self.weights_


class ExternalFeatures(BaseEstimator, TransformerMixin):
    """Row-aligned replay of externally computed per-point feature vectors.

    The map is defined only for the exact point set it was built for; it
    pairs input row i with stored feature row i and cannot embed novel
    points (feature extraction happens outside this package).
    """

    def __init__(self, vectors):
        self.vectors = vectors

    def fit(self, X=None, y=None):
        self.vectors_ = as_points(self.vectors, "vectors")
        return self

    def transform(self, X):
        X = as_points(X, "X")
        if len(X) != len(self.vectors_):
            raise ValueError(
                f"external features cover exactly {len(self.vectors_)} points, got {len(X)} rows")
        return self.vectors_.copy()


# --------------------------------------------------------------------------
# Reconstruction error and gap curves


def _reconstructions(denoiser, Y, sigma, n_noise_draws, seed, antithetic=True):
    """Denoised versions of sigma-noised copies of Y, shape (n, draws, dim)."""
    Y = as_points(Y, "Y")
    sigma = check_sigma(sigma)
    m = check_positive_int(n_noise_draws, "n_noise_draws")
    eta = noise_draws(len(Y), m, Y.shape[1], seed, antithetic=antithetic)
    noisy = (Y[:, None, :] + sigma * eta).reshape(-1, Y.shape[1])
    return denoiser.predict(noisy, sigma).reshape(len(Y), m, Y.shape[1])


def recon_error_per_point(denoiser, Y, sigma, n_noise_draws=64, seed=0, antithetic=True):
    """Per-point mean squared reconstruction error at one noise level."""
    Y = as_points(Y, "Y")
    if len(Y) == 0:
        raise ValueError("Y must be non-empty")
    recon = _reconstructions(denoiser, Y, sigma, n_noise_draws, seed, antithetic)
    return np.sum((Y[:, None, :] - recon) ** 2, axis=-1).mean(axis=1)


def recon_error(denoiser, Y, sigma, n_noise_draws=64, seed=0, antithetic=True, feature=None):
    """Mean squared reconstruction error, optionally after a feature map."""
    if feature is None or isinstance(feature, IdentityFeatures):
        return float(recon_error_per_point(denoiser, Y, sigma, n_noise_draws,
                                           seed, antithetic).mean())
    Y = as_points(Y, "Y")
    recon = _reconstructions(denoiser, Y, sigma, n_noise_draws, seed, antithetic)
    fy = feature.transform(Y)
    frec = feature.transform(recon.reshape(-1, Y.shape[1])).reshape(len(Y), -1, fy.shape[1])
    return float(np.sum((fy[:, None, :] - frec) ** 2, axis=-1).mean())


@dataclass
class GapCurve:
    """Per-sigma split errors and their relative gap.

    gap[i] = (e_val[i] - e_train[i]) / denominator[i], NaN where the
    denominator vanishes (flagged, not fatal).
    """

    sigmas: np.ndarray
    e_train: np.ndarray
    e_val: np.ndarray
    gap: np.ndarray
    denominator: str = "train"

    @property
    def peak_gap(self):
        return float(np.nanmax(self.gap))

    @property
    def peak_sigma(self):
        return float(self.sigmas[np.nanargmax(self.gap)])

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma", "e_train", "e_val", "gap"])
            for row in zip(self.sigmas, self.e_train, self.e_val, self.gap):
                writer.writerow([repr(float(v)) for v in row])


def relative_gap(e_train, e_val, denominator):
    if denominator not in ("train", "val"):
        raise ValueError(f"denominator must be 'train' or 'val', got {denominator!r}")
    denom = e_train if denominator == "train" else e_val
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(denom > 0, (e_val - e_train) / denom, np.nan)
    return gap


def _sigma_list(sigmas_or_schedule):
    sigmas = getattr(sigmas_or_schedule, "sigmas", sigmas_or_schedule)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.ndim != 1 or len(sigmas) == 0 or np.any(sigmas <= 0):
        raise ValueError("need a non-empty list of positive sigma values")
    return sigmas


def gap_curve(denoiser, dataset, sigmas_or_schedule, n_noise_draws=64, seed=0,
              denominator="train", antithetic=True):
    """Relative generalization gap of the denoiser over a sigma grid.

    Both splits are evaluated with the same per-sigma noise block (common
    random numbers), which cancels most of the Monte-Carlo error out of the
    gap when the splits are the same size.
    """
    sigmas = _sigma_list(sigmas_or_schedule)
    children = np.random.SeedSequence(seed).spawn(len(sigmas))
    e_train = np.empty(len(sigmas))
    e_val = np.empty(len(sigmas))
    for i, sigma in enumerate(sigmas):
        e_train[i] = recon_error(denoiser, dataset.train_points, sigma,
                                 n_noise_draws, children[i], antithetic)
        e_val[i] = recon_error(denoiser, dataset.val_points, sigma,
                               n_noise_draws, children[i], antithetic)
    return GapCurve(sigmas, e_train, e_val,
                    relative_gap(e_train, e_val, denominator), denominator)


@dataclass
class GapGrid:
    """Relative gap of every grid cell against the train-split error."""

    bounds: tuple
    resolution: int
    sigma: float
    e_train: float
    gap: np.ndarray = field(repr=False)
    area_le_half: float = 0.0

    def cell_centers(self):
        (x0, x1), (y0, y1) = self.bounds
        cx = x0 + (np.arange(self.resolution) + 0.5) * (x1 - x0) / self.resolution
        cy = y0 + (np.arange(self.resolution) + 0.5) * (y1 - y0) / self.resolution
        return cx, cy

    def area_fraction(self, threshold=0.5):
        return float(np.mean(self.gap <= threshold))

    def save_csv(self, path):
        cx, cy = self.cell_centers()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x0", "x1", "gap"])
            for i in range(self.resolution):
                for j in range(self.resolution):
                    writer.writerow([repr(float(cx[i])), repr(float(cy[j])),
                                     repr(float(self.gap[i, j]))])


def gap_grid(denoiser, dataset, sigma, bounds, resolution, n_noise_draws=64, seed=0):
    """Per-cell relative gap at a fixed sigma, each cell its own validation set.

    Also reports the area fraction where the gap is at most 0.5.
    """
    resolution = check_positive_int(resolution, "resolution", minimum=2)
    (x0, x1), (y0, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"empty grid bounds {bounds}")
    root = np.random.SeedSequence(seed)
    train_seed, cell_seed = root.spawn(2)
    e_train = recon_error(denoiser, dataset.train_points, sigma, n_noise_draws, train_seed)
    if e_train <= 0:
        raise ValueError("train reconstruction error vanished; gap undefined")
    cx = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    cy = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    cells = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
    per_cell = recon_error_per_point(denoiser, cells, sigma, n_noise_draws, cell_seed)
    gap = ((per_cell - e_train) / e_train).reshape(resolution, resolution)
    grid = GapGrid(((x0, x1), (y0, y1)), resolution, float(sigma), float(e_train), gap)
    grid.area_le_half = grid.area_fraction(0.5)
    return grid


# --------------------------------------------------------------------------
# The metric ladder


@dataclass
class LadderResult:
    kind: str
    m_train: float
    m_val: float
    gap: float
    denominator: str


def _split_gap(m_train, m_val, denominator):
    denom = m_train if denominator == "train" else m_val
    return (m_val - m_train) / denom if denom > 0 else float("nan")


def ladder_metric(kind, denoiser, dataset, feature=None, sigma=None, schedule=None,
                  n=64, seed=0, denominator="train"):
    """One row of the metric ladder evaluated on both splits.

    rL2_pix/rL2_feat/rFD need ``sigma`` (one-step reconstruction); tFD needs
    ``schedule`` and generates ``n`` trajectory endpoints compared against
    each split. ``n`` doubles as the per-point noise-draw count for the
    reconstruction metrics.
    """
    if kind not in LADDER_KINDS:
        raise ValueError(f"kind must be one of {LADDER_KINDS}, got {kind!r}")
    if feature is None:
        feature = IdentityFeatures().fit(dataset.points)
    if isinstance(feature, ExternalFeatures) and kind != "rL2_pix":
        raise ValueError(
            "external feature files cannot embed model outputs; ingest "
            "externally computed feature clouds through the FD protocol instead")
    if kind in ("rL2_pix", "rL2_feat", "rFD"):
        if sigma is None:
            raise ValueError(f"{kind} requires sigma")
        sigma = check_sigma(sigma)
    if kind == "tFD" and schedule is None:
        raise ValueError("tFD requires a schedule")

    root = np.random.SeedSequence(seed)
    shared = root.spawn(1)[0]

    if kind == "rL2_pix":
        m_train = recon_error(denoiser, dataset.train_points, sigma, n, shared)
        m_val = recon_error(denoiser, dataset.val_points, sigma, n, shared)
    elif kind == "rL2_feat":
        m_train = recon_error(denoiser, dataset.train_points, sigma, n, shared, feature=feature)
        m_val = recon_error(denoiser, dataset.val_points, sigma, n, shared, feature=feature)
    elif kind == "rFD":
        m_train = _rfd_one_split(denoiser, dataset.train_points, sigma, n, shared, feature)
        m_val = _rfd_one_split(denoiser, dataset.val_points, sigma, n, shared, feature)
    else:
        ends = sample_endpoints(denoiser, schedule, seed + np.arange(int(n)), dim=dataset.dim)
        gen = fit_gaussian(feature.transform(ends))
        m_train = frechet_distance(gen, fit_gaussian(feature.transform(dataset.train_points)))
        m_val = frechet_distance(gen, fit_gaussian(feature.transform(dataset.val_points)))
    return LadderResult(kind, float(m_train), float(m_val),
                        _split_gap(float(m_train), float(m_val), denominator), denominator)


def _rfd_one_split(denoiser, Y, sigma, n, seed, feature):
    recon = _reconstructions(denoiser, Y, sigma, n, seed).reshape(-1, Y.shape[1])
    return frechet_distance(fit_gaussian(feature.transform(recon)),
                            fit_gaussian(feature.transform(as_points(Y))))


# --------------------------------------------------------------------------
# Truncated-inference study


@dataclass
class TruncationRow:
    sigma: float
    truncated_m_train: float
    truncated_m_val: float
    truncated_gap: float
    rfd_m_train: float
    rfd_m_val: float
    rfd_gap: float


def truncated_gap_comparison(denoiser, dataset, schedule, stop_sigmas, n=256, seed=0,
                             feature=None, denominator="train"):
    """FD gap of truncated-inference clouds next to the rFD gap, per stop level.

    Truncated inference integrates random trajectories down to the stop
    sigma and forces a one-step prediction; rFD reconstructs forward-noised
    split points at the same sigma. The two differ only in where the noisy
    inputs come from.
    """
    from .sampling import snap_stop_sigma, truncated_endpoints

    if feature is None:
        feature = IdentityFeatures().fit(dataset.points)
    if isinstance(feature, ExternalFeatures):
        raise ValueError(
            "external feature files cannot embed model outputs; ingest "
            "externally computed feature clouds through the FD protocol instead")
    fit_train = fit_gaussian(feature.transform(dataset.train_points))
    fit_val = fit_gaussian(feature.transform(dataset.val_points))
    rows = []
    for j, stop in enumerate(stop_sigmas):
        _, sigma = snap_stop_sigma(schedule, stop)
        ends = truncated_endpoints(denoiser, schedule, seed + np.arange(int(n)), sigma,
                                   dim=dataset.dim)
        gen = fit_gaussian(feature.transform(ends))
        t_train = frechet_distance(gen, fit_train)
        t_val = frechet_distance(gen, fit_val)
        r = ladder_metric("rFD", denoiser, dataset, feature=feature, sigma=sigma,
                          n=max(2, int(np.ceil(n / len(dataset.train_points)))),
                          seed=seed + j, denominator=denominator)
        rows.append(TruncationRow(float(sigma), t_train, t_val,
                                  _split_gap(t_train, t_val, denominator),
                                  r.m_train, r.m_val, r.gap))
    return rows


def save_truncation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "truncated_m_train", "truncated_m_val", "truncated_gap",
                         "rfd_m_train", "rfd_m_val", "rfd_gap"])
        for r in rows:
            writer.writerow([repr(float(v)) for v in (
                r.sigma, r.truncated_m_train, r.truncated_m_val, r.truncated_gap,
                r.rfd_m_train, r.rfd_m_val, r.rfd_gap)])
