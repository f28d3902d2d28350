"""Two-dimensional Gaussian mixture models for quality-space classification.

Every adaptation option verified at runtime yields one point in the
(packet loss %, energy mC) plane.  The classes the managing loop reasons
about are components of a Gaussian mixture over that plane.  This module
owns the mixture machinery: EM fitting, BIC scoring, elbow-based count
selection, point classification, outlier testing and model merging.

Everything is deterministic given an explicit seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

COV_EPSILON = 1e-6
EM_MAX_ITER = 300
EM_REL_TOL = 1e-6
DEFAULT_OUTLIER_THRESHOLD = 1e-3
KNEEDLE_SENSITIVITY = 1.0
ELBOW_ADVANCE_FRACTION = 0.08

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianComponent:
    """One mixture component, i.e. one class in quality space.

    mean is a length-2 vector (packet loss %, energy mC), covariance a
    2x2 symmetric positive definite matrix.  support_count records how
    many points the component absorbed when it was fitted; merged models
    use it to renormalize weights.
    """

    mean: np.ndarray
    covariance: np.ndarray
    weight: float
    support_count: int
    class_id: int

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(2, 2)


@dataclass
class GmmModel:
    """Ordered set of components plus the outlier threshold.

    The threshold is the minimum membership probability for a point to
    count as belonging to a known class.  The default of 0.001 is the
    two-dimensional analog of a three-sigma rule: exp(-d^2 / 2) drops
    below 0.001 once the Mahalanobis distance d exceeds about 3.717.
    """

    components: list[GaussianComponent]
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD

    def class_ids(self) -> list[int]:
        return [c.class_id for c in self.components]

    def component_by_class(self, class_id: int) -> GaussianComponent:
        for c in self.components:
            if c.class_id == class_id:
                return c
        raise InvalidInputError(f"unknown class id {class_id}")

    def validate(self) -> None:
        if not self.components:
            raise InvalidInputError("model has no components")
        ids = self.class_ids()
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate class ids: {ids}")
        total = 0.0
        for c in self.components:
            if c.weight <= 0.0:
                raise InvalidInputError(f"non-positive weight on class {c.class_id}")
            np.linalg.cholesky(c.covariance)
            if not np.allclose(c.covariance, c.covariance.T):
                raise InvalidInputError("covariance not symmetric")
            total += c.weight
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"weights sum to {total}, expected 1")


@dataclass
class BicCurve:
    """BIC score per candidate component count, for elbow inspection."""

    component_counts: list[int]
    scores: list[float]


@dataclass
class Classification:
    """Result of classifying one point: the chosen class and how well
    the point fits it (chi-square survival of the squared distance)."""

    class_id: int
    membership: float


# ---------------------------------------------------------------------------
# density helpers (closed-form 2x2, vectorized over points and components)

def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"expected points of shape (n, 2), got {arr.shape}")
    return arr


def _pack(model: GmmModel):
    means = np.stack([c.mean for c in model.components])
    covs = np.stack([c.covariance for c in model.components])
    weights = np.array([c.weight for c in model.components])
    return means, covs, weights


def mahalanobis_sq(model: GmmModel, points) -> np.ndarray:
    """Squared Mahalanobis distance of each point to each component.

    Returns an (n_points, n_components) array.
    """
    pts = _as_points(points)
    means, covs, _ = _pack(model)
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    c = covs[:, 1, 1]
    det = a * c - b * b
    dx = pts[:, None, 0] - means[None, :, 0]
    dy = pts[:, None, 1] - means[None, :, 1]
    return (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det


def _log_densities(points: np.ndarray, means, covs) -> np.ndarray:
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    c = covs[:, 1, 1]
    det = a * c - b * b
    dx = points[:, None, 0] - means[None, :, 0]
    dy = points[:, None, 1] - means[None, :, 1]
    maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -_LOG_2PI - 0.5 * np.log(det)[None, :] - 0.5 * maha


def _log_likelihood(points: np.ndarray, means, covs, weights) -> float:
    a = _log_densities(points, means, covs) + np.log(weights)[None, :]
    m = a.max(axis=1)
    return float(np.sum(m + np.log(np.exp(a - m[:, None]).sum(axis=1))))


# ---------------------------------------------------------------------------
# fitting

def _kmeanspp_means(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        diff = points[:, None, :] - points[chosen][None, :, :]
        d2 = np.min(np.sum(diff * diff, axis=2), axis=1)
        total = d2.sum()
        if total <= 0.0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    return points[chosen].copy()


def fit_gmm(points, k: int, seed: int, with_trace: bool = False) -> GmmModel:
    """Fit a k-component mixture to 2-d points with EM.

    Initialization seeds the means kmeans++ style from the given seed,
    starts every component at the pooled data covariance and uniform
    weights, then iterates EM until the relative log-likelihood change
    falls below 1e-6 or 300 iterations pass.  Covariances carry a
    COV_EPSILON * I floor so degenerate clusters stay positive definite.

    Args:
        points: array-like of shape (n, 2), n >= k.
        k: number of components, >= 1.
        seed: RNG seed; identical inputs and seed give identical output.
        with_trace: when true, also return the per-iteration
            log-likelihood trace (used by convergence tests).

    Returns:
        GmmModel with components labeled 0..k-1, or (model, trace).

    Raises:
        InvalidInputError: on empty input, k < 1 or fewer points than k.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n == 0:
        raise InvalidInputError("cannot fit a mixture to zero points")
    if k < 1:
        raise InvalidInputError(f"component count must be >= 1, got {k}")
    if n < k:
        raise InvalidInputError(f"need at least {k} points to fit {k} components, got {n}")

    rng = np.random.default_rng(seed)
    eye = np.eye(2)
    means = _kmeanspp_means(pts, k, rng)
    pooled = np.cov(pts.T) if n > 1 else np.zeros((2, 2))
    pooled = np.atleast_2d(pooled) + COV_EPSILON * eye
    covs = np.stack([pooled.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)

    trace: list[float] = []
    resp = None
    prev_ll = -np.inf
    for _ in range(EM_MAX_ITER):
        log_dens = _log_densities(pts, means, covs) + np.log(weights)[None, :]
        m = log_dens.max(axis=1)
        lse = m + np.log(np.exp(log_dens - m[:, None]).sum(axis=1))
        ll = float(lse.sum())
        trace.append(ll)
        resp = np.exp(log_dens - lse[:, None])

        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= EM_REL_TOL * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll

        nk = np.maximum(resp.sum(axis=0), 1e-12)
        weights = nk / nk.sum()
        means = (resp.T @ pts) / nk[:, None]
        for j in range(k):
            diff = pts - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + COV_EPSILON * eye

    support = np.rint(resp.sum(axis=0)).astype(int)
    comps = [
        GaussianComponent(
            mean=means[j],
            covariance=covs[j],
            weight=float(weights[j]),
            support_count=int(support[j]),
            class_id=j,
        )
        for j in range(k)
    ]
    model = GmmModel(components=comps)
    model.validate()
    if with_trace:
        return model, trace
    return model


def bic_score(model: GmmModel, points) -> float:
    """Bayesian information criterion: p * ln(n) - 2 * ln(L).

    A free 2-d component has 2 mean + 3 covariance parameters, and k
    components carry k - 1 free weights, so p = 6k - 1.  Lower is better.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n == 0:
        raise InvalidInputError("bic_score needs at least one point")
    means, covs, weights = _pack(model)
    ll = _log_likelihood(pts, means, covs, weights)
    p = 6 * len(model.components) - 1
    return p * math.log(n) - 2.0 * ll


def kneedle_elbow(xs: Sequence[float], ys: Sequence[float],
                  sensitivity: float = KNEEDLE_SENSITIVITY) -> int:
    """Index of the elbow of a decreasing curve, Kneedle style.

    Both axes are min-max normalized, the difference curve
    (1 - x_norm) - y_norm is computed (the flipped-y form appropriate
    for decreasing curves), and a local maximum of that difference is
    declared the knee once the curve afterwards drops more than
    sensitivity * (mean x spacing) below it.  When no candidate confirms,
    the difference curve's maximum stands in; flat and exactly linear
    curves have an all-zero difference curve and so yield index 0.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("xs and ys must be equal-length 1-d sequences")
    n = x.size
    if n < 3:
        return 0
    if np.any(np.diff(x) <= 0):
        raise InvalidInputError("xs must be strictly increasing")

    x_norm = (x - x[0]) / (x[-1] - x[0])
    y_range = y.max() - y.min()
    if y_range == 0.0:
        return 0
    y_norm = (y - y.min()) / y_range
    diff = (1.0 - x_norm) - y_norm
    step = sensitivity * float(np.mean(np.diff(x_norm)))

    maxima = [
        i for i in range(n)
        if (i == 0 or diff[i] >= diff[i - 1]) and (i == n - 1 or diff[i] >= diff[i + 1])
    ]
    for pos, lm in enumerate(maxima):
        threshold = diff[lm] - step
        limit = maxima[pos + 1] if pos + 1 < len(maxima) else n
        for j in range(lm + 1, limit):
            if diff[j] < threshold:
                return lm
    return int(np.argmax(diff))


def select_component_count(points, k_max: int = 5, seed: int = 0,
                           with_curve: bool = False):
    """Pick a component count in 1..k_max via the BIC curve's elbow.

    Fits one mixture per candidate count with the same seed, scores each
    with BIC and starts from the Kneedle elbow of the score curve.  The
    pick then advances past the elbow while each further step still
    drops the score by at least ELBOW_ADVANCE_FRACTION of the curve's
    total descent: on equal-mass well-separated clusters the descent is
    near linear up to the true count, which parks the normalised elbow
    mid-slope, and the endpoint can never be the elbow at all.  Returns
    the count (plus the curve itself when with_curve is set).
    """
    pts = _as_points(points)
    if k_max < 1:
        raise InvalidInputError(f"k_max must be >= 1, got {k_max}")
    if pts.shape[0] < k_max:
        raise InvalidInputError(
            f"need at least k_max={k_max} points, got {pts.shape[0]}")
    counts = list(range(1, k_max + 1))
    scores = [bic_score(fit_gmm(pts, k, seed), pts) for k in counts]
    curve = BicCurve(component_counts=counts, scores=scores)
    idx = kneedle_elbow(counts, scores)
    span = scores[0] - min(scores)
    if span > 0.0:
        # steps past the true count raise BIC, so a positive threshold
        # never overshoots
        while (idx + 1 < len(counts)
               and scores[idx] - scores[idx + 1] >= ELBOW_ADVANCE_FRACTION * span):
            idx += 1
    k = counts[idx]
    logger.debug("component count %d selected from BIC curve %s", k, scores)
    if with_curve:
        return k, curve
    return k


# ---------------------------------------------------------------------------
# classification

def classify(model: GmmModel, point) -> Classification:
    """Assign a point to the highest weight * density component.

    Ties go to the lowest component index.  Membership is
    exp(-d^2 / 2) of the squared Mahalanobis distance to the chosen
    component, the survival probability of a chi-square with 2 degrees
    of freedom, which is how "how well does this point still fit its
    class" is quantified throughout the system.
    """
    pts = _as_points(point)
    means, covs, weights = _pack(model)
    scores = _log_densities(pts, means, covs) + np.log(weights)[None, :]
    idx = int(np.argmax(scores[0]))
    d2 = float(mahalanobis_sq(model, pts)[0, idx])
    return Classification(
        class_id=model.components[idx].class_id,
        membership=math.exp(-0.5 * d2),
    )


def classify_batch(model: GmmModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized classify: returns (class_ids, memberships) arrays."""
    pts = _as_points(points)
    means, covs, weights = _pack(model)
    scores = _log_densities(pts, means, covs) + np.log(weights)[None, :]
    idx = np.argmax(scores, axis=1)
    maha = mahalanobis_sq(model, pts)
    d2 = maha[np.arange(pts.shape[0]), idx]
    ids = np.array(model.class_ids())[idx]
    return ids, np.exp(-0.5 * d2)


def is_out_of_class(model: GmmModel, point) -> bool:
    """True when the point is an outlier to every component.

    Implemented as: the best membership over all components, i.e.
    exp(-min_d^2 / 2), falls below model.outlier_threshold.  At the
    default threshold this is exactly "minimum Mahalanobis distance
    over components exceeds sqrt(-2 ln 0.001) ~ 3.717".
    """
    return bool(out_of_class_mask(model, point)[0])


def out_of_class_mask(model: GmmModel, points) -> np.ndarray:
    """Vectorized is_out_of_class over an (n, 2) array."""
    d2 = mahalanobis_sq(model, points).min(axis=1)
    return d2 > -2.0 * math.log(model.outlier_threshold)


# ---------------------------------------------------------------------------
# merging and serialization

def merge_models(base: GmmModel, addition: GmmModel | None) -> GmmModel:
    """Extend a model with freshly fitted components.

    Component parameters are taken over unchanged; only the weights are
    recomputed, proportional to each component's support count, so the
    merged mixture reflects how much evidence each class has.  Addition
    class ids must not collide with base ids.  Merging an empty or None
    addition returns the base as-is.
    """
    if addition is None or not addition.components:
        return base
    base_ids = set(base.class_ids())
    collisions = base_ids.intersection(addition.class_ids())
    if collisions:
        raise InvalidInputError(f"class ids already in use: {sorted(collisions)}")
    comps = []
    total = 0.0
    for c in list(base.components) + list(addition.components):
        total += max(c.support_count, 0)
    if total <= 0:
        raise InvalidInputError("cannot renormalize weights: zero total support")
    for c in list(base.components) + list(addition.components):
        comps.append(
            GaussianComponent(
                mean=c.mean.copy(),
                covariance=c.covariance.copy(),
                weight=max(c.support_count, 0) / total,
                support_count=c.support_count,
                class_id=c.class_id,
            )
        )
    merged = GmmModel(components=comps, outlier_threshold=base.outlier_threshold)
    merged.validate()
    return merged


def model_to_dict(model: GmmModel) -> dict:
    return {
        "components": [
            {
                "mean": [float(c.mean[0]), float(c.mean[1])],
                "cov": [[float(c.covariance[0, 0]), float(c.covariance[0, 1])],
                        [float(c.covariance[1, 0]), float(c.covariance[1, 1])]],
                "weight": float(c.weight),
                "support_count": int(c.support_count),
                "class_id": int(c.class_id),
            }
            for c in model.components
        ],
        "outlier_threshold": float(model.outlier_threshold),
    }


def model_from_dict(data: dict) -> GmmModel:
    try:
        comps = [
            GaussianComponent(
                mean=np.array(c["mean"], dtype=float),
                covariance=np.array(c["cov"], dtype=float),
                weight=float(c["weight"]),
                support_count=int(c["support_count"]),
                class_id=int(c["class_id"]),
            )
            for c in data["components"]
        ]
        model = GmmModel(components=comps,
                         outlier_threshold=float(data["outlier_threshold"]))
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed model payload: {exc}") from exc
    model.validate()
    return model


def model_to_json(model: GmmModel) -> str:
    return json.dumps(model_to_dict(model))


def model_from_json(text: str) -> GmmModel:
    return model_from_dict(json.loads(text))
