"""Closed-form denoisers over a finite training set.

The optimal denoiser is the posterior mean of the training points under an
isotropic Gaussian noise kernel; the error-prone variant blurs the training
set by delta before averaging, which blends the posterior mean with the
identity. Conditional denoisers restrict the average to one class, guided
denoisers extrapolate a primary prediction away from an auxiliary one.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_points, check_nonnegative, check_sigma

# rows per evaluation chunk; keeps the (chunk, n_points, dim) temporaries small
_CHUNK = 8192


def _posterior_mean_chunk(X, sigma, points):
    # overflow of d2 (inputs beyond ~1e154) yields nan rows, which the
    # sampler reports as numeric divergence
    with np.errstate(over="ignore", invalid="ignore"):
        diff = X[:, None, :] - points[None, :, :]
        d2 = np.sum(diff * diff, axis=-1)
        logw = d2 / (-2.0 * sigma * sigma)
        # max-subtracted exponents: the top weight is exp(0)=1, so the softmax
        # is finite for every sigma > 0 and collapses exactly to the nearest
        # point once the runner-up underflows
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        return np.sum(w[:, :, None] * points[None, :, :], axis=1)


def posterior_mean(x, sigma, points):
    """Softmax-weighted average of ``points`` around ``x`` at noise level sigma.

    Returns an array matching the dimensionality of ``x`` (single point in,
    single point out). Raises ValueError for sigma <= 0 or an empty point set.
    """
    sigma = check_sigma(sigma)
    points = as_points(points, "points")
    if len(points) == 0:
        raise ValueError("points must be non-empty")
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = as_points(X, "x")
    if X.shape[1] != points.shape[1]:
        raise ValueError(f"x has dim {X.shape[1]} but points have dim {points.shape[1]}")
    out = np.empty_like(X)
    for lo in range(0, len(X), _CHUNK):
        out[lo:lo + _CHUNK] = _posterior_mean_chunk(X[lo:lo + _CHUNK], sigma, points)
    return out[0] if single else out


def error_prone_predict(x, sigma, delta, points):
    """Posterior mean under a delta-blurred training set.

    Evaluates the optimal prediction at the inflated level
    sigma_tilde = sqrt(sigma^2 + delta^2) and blends it with the input:
    (delta^2 * x + sigma^2 * y*) / (sigma^2 + delta^2). delta=0 falls back to
    the plain posterior mean, bit for bit.
    """
    delta = check_nonnegative(delta, "delta")
    if delta == 0.0:
        return posterior_mean(x, sigma, points)
    sigma = check_sigma(sigma)
    s2 = sigma * sigma
    d2 = delta * delta
    sigma_tilde = np.sqrt(s2 + d2)
    ystar = posterior_mean(x, sigma_tilde, points)
    X = np.asarray(x, dtype=np.float64)
    return (d2 * X + s2 * ystar) / (s2 + d2)


def decomposition_residual(x, sigma, delta, points):
    """Gap between the error-prone prediction offset and its two-factor form.

    The prediction error splits into a geometry term, the optimal offset at
    the inflated noise level, scaled by the dynamics factor
    sigma^2/(sigma^2+delta^2); this returns the norm of the difference
    between both evaluations (an identity up to roundoff).
    """
    sigma = check_sigma(sigma)
    delta = check_nonnegative(delta, "delta")
    X = np.asarray(x, dtype=np.float64)
    y_delta = error_prone_predict(x, sigma, delta, points)
    s2 = sigma * sigma
    d2 = delta * delta
    sigma_tilde = np.sqrt(s2 + d2) if delta > 0.0 else sigma
    ystar = posterior_mean(x, sigma_tilde, points)
    resid = (y_delta - X) - (s2 / (s2 + d2)) * (ystar - X)
    return np.linalg.norm(resid, axis=-1)


def _check_fitted(est):
    if getattr(est, "points_", None) is None:
        raise NotFittedError(f"{type(est).__name__} must be fitted before predicting")


class ErrorProneDenoiser(BaseEstimator):
    """Denoiser with tunable model error ``delta`` (0 = Bayes-optimal).

    fit() stores the training points; predict(X, sigma) returns one denoised
    row per input row.
    """

    def __init__(self, delta=0.0):
        self.delta = delta

    def fit(self, X, y=None):
        check_nonnegative(self.delta, "delta")
        self.points_ = as_points(X, "X")
        return self

    def predict(self, X, sigma):
        _check_fitted(self)
        return error_prone_predict(X, sigma, self.delta, self.points_)


class OptimalDenoiser(ErrorProneDenoiser):
    """The Bayes-optimal denoiser (posterior mean of the training points)."""

    def __init__(self):
        super().__init__(delta=0.0)


class ConditionalDenoiser(BaseEstimator):
    """Denoiser restricted to the training points of one class."""

    def __init__(self, class_id, delta=0.0):
        self.class_id = class_id
        self.delta = delta

    def fit(self, X, y):
        check_nonnegative(self.delta, "delta")
        X = as_points(X, "X")
        if y is None:
            raise ValueError("ConditionalDenoiser.fit requires class labels")
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ValueError("labels must cover every training point")
        mask = y == int(self.class_id)
        if not np.any(mask):
            raise ValueError(f"class {self.class_id} has no training points")
        self.points_ = X[mask]
        return self

    def predict(self, X, sigma):
        _check_fitted(self)
        return error_prone_predict(X, sigma, self.delta, self.points_)


class GuidedDenoiser(BaseEstimator):
    """Affine extrapolation of a primary prediction away from an auxiliary one.

    predict = primary + weight * (primary - auxiliary); weight 0 returns the
    primary prediction untouched. The auxiliary is typically a worse model
    (larger delta) or, CFG style, the unconditional counterpart of a
    conditional primary.
    """

    def __init__(self, primary, auxiliary, weight=0.0):
        self.primary = primary
        self.auxiliary = auxiliary
        self.weight = weight

    def fit(self, X, y=None):
        check_nonnegative(self.weight, "weight")
        self.primary.fit(X, y)
        self.auxiliary.fit(X, y)
        self.points_ = getattr(self.primary, "points_", None)
        return self

    def predict(self, X, sigma):
        check_nonnegative(self.weight, "weight")
        p = self.primary.predict(X, sigma)
        if self.weight == 0.0:
            return p
        a = self.auxiliary.predict(X, sigma)
        return p + self.weight * (p - a)


@dataclass
class PredictorSpec:
    """Serializable description of a denoiser configuration.

    kind is one of optimal, error_prone, conditional, guided. For guided
    specs, delta/class_id describe the primary model and ``auxiliary`` nests
    the auxiliary spec (which may itself be guided, forming a finite chain).
    """

    kind: str = "optimal"
    delta: float = 0.0
    class_id: int | None = None
    weight: float = 0.0
    auxiliary: "PredictorSpec | None" = field(default=None)

    KINDS = ("optimal", "error_prone", "conditional", "guided")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        check_nonnegative(self.delta, "delta")
        check_nonnegative(self.weight, "weight")
        if self.kind == "conditional" and self.class_id is None:
            raise ValueError("conditional specs need a class_id")
        if self.kind == "guided" and self.auxiliary is None:
            raise ValueError("guided specs need an auxiliary spec")

    def to_dict(self):
        doc = {"kind": self.kind}
        if self.kind != "optimal":
            doc["delta"] = self.delta
        if self.class_id is not None:
            doc["class_id"] = int(self.class_id)
        if self.kind == "guided":
            doc["weight"] = self.weight
            doc["auxiliary"] = self.auxiliary.to_dict()
        return doc

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc):
        aux = doc.get("auxiliary")
        return cls(kind=doc.get("kind", "optimal"),
                   delta=float(doc.get("delta", 0.0)),
                   class_id=doc.get("class_id"),
                   weight=float(doc.get("weight", 0.0)),
                   auxiliary=cls.from_dict(aux) if aux is not None else None)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def build(self, dataset, partition=None, _depth=0):
        """Construct and fit the denoiser this spec describes.

        Training data is the dataset's train split; conditional specs take
        class ids from the partition when given, else from the dataset labels.
        """
        if _depth > 32:
            raise ValueError("guided spec chain too deep (cycle?)")
        train = dataset.train_points
        if self.kind == "optimal":
            return OptimalDenoiser().fit(train)
        if self.kind == "error_prone":
            return ErrorProneDenoiser(self.delta).fit(train)
        labels = (partition.labels_for(dataset) if partition is not None
                  else dataset.labels)[dataset.train_mask]
        if self.kind == "conditional":
            return ConditionalDenoiser(self.class_id, self.delta).fit(train, labels)
        primary_spec = PredictorSpec(
            kind="conditional" if self.class_id is not None else "error_prone",
            delta=self.delta, class_id=self.class_id)
        primary = primary_spec.build(dataset, partition)
        auxiliary = self.auxiliary.build(dataset, partition, _depth=_depth + 1)
        guided = GuidedDenoiser(primary, auxiliary, self.weight)
        guided.points_ = getattr(primary, "points_", None)
        return guided
