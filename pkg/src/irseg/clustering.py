"""Unsupervised pixel clustering: K-means and Gaussian mixtures fit by EM.

The fitted Gaussian mixture doubles as the likelihood model for the
random-field segmenters, so both clusterers record the feature channel
names they were trained on and refuse stacks whose channels differ.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import (
    ChannelMismatchError,
    DegenerateComponentError,
    DimensionMismatchError,
    TooFewPointsError,
)
from .image import LabelMap

_LOG_2PI = float(np.log(2.0 * np.pi))
_MIN_COMPONENT_MASS = 1e-8

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KMeansModel:
    """Cluster centroids plus the final within-cluster sum of squares."""

    centroids: np.ndarray
    channel_names: tuple
    wcss: float
    wcss_history: tuple = ()  # per-iteration objective, not serialized

    def __post_init__(self):
        c = np.array(self.centroids, dtype=float)
        if c.ndim != 2:
            raise DimensionMismatchError("centroids must be a (k, dims) array")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        if self.wcss < 0:
            raise ValueError("wcss must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "wcss_history", tuple(float(w) for w in self.wcss_history))

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def dims(self):
        return self.centroids.shape[1]

    def to_json(self):
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "kind": "kmeans",
            "k": self.k,
            "dims": self.dims,
            "channel_names": list(self.channel_names),
            "centroids": self.centroids.tolist(),
            "wcss": self.wcss,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("kind") != "kmeans":
            raise ValueError(f"not a kmeans model document: kind={doc.get('kind')}")
        return cls(
            centroids=np.array(doc["centroids"], dtype=float),
            channel_names=tuple(doc["channel_names"]),
            wcss=float(doc["wcss"]),
        )


@dataclass(frozen=True)
class GmmModel:
    """Gaussian mixture: component weights, means, and full covariance matrices."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    channel_names: tuple
    log_likelihood: float = float("nan")
    log_likelihood_history: tuple = ()  # per-iteration objective, not serialized

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        m = np.array(self.means, dtype=float)
        c = np.array(self.covariances, dtype=float)
        if w.ndim != 1 or m.ndim != 2 or c.ndim != 3:
            raise DimensionMismatchError("weights (k,), means (k,d), covariances (k,d,d) expected")
        k, d = m.shape
        if w.shape != (k,) or c.shape != (k, d, d):
            raise DimensionMismatchError("weights/means/covariances disagree on k or dims")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        for j in range(k):
            if not np.allclose(c[j], c[j].T, atol=1e-10):
                raise ValueError(f"covariance {j} is not symmetric")
            try:
                np.linalg.cholesky(c[j])
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance {j} is not positive definite") from None
        for arr in (w, m, c):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "log_likelihood_history", tuple(float(v) for v in self.log_likelihood_history))

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def dims(self):
        return self.means.shape[1]

    def to_json(self):
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "kind": "gmm",
            "k": self.k,
            "dims": self.dims,
            "channel_names": list(self.channel_names),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": [cov.ravel().tolist() for cov in self.covariances],
            "log_likelihood": self.log_likelihood,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("kind") != "gmm":
            raise ValueError(f"not a gmm model document: kind={doc.get('kind')}")
        k, d = int(doc["k"]), int(doc["dims"])
        covs = np.array(doc["covariances"], dtype=float).reshape(k, d, d)
        return cls(
            weights=np.array(doc["weights"], dtype=float),
            means=np.array(doc["means"], dtype=float),
            covariances=covs,
            channel_names=tuple(doc["channel_names"]),
            log_likelihood=float(doc["log_likelihood"]),
        )


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component probabilities per pixel, rows summing to 1."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.ndim != 2:
            raise DimensionMismatchError("gamma must be (n, k)")
        if np.any(g < -1e-12) or np.any(g > 1.0 + 1e-12):
            raise ValueError("gamma entries must lie in [0, 1]")
        if not np.allclose(g.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("gamma rows must sum to 1")
        g.flags.writeable = False
        object.__setattr__(self, "gamma", g)

    @property
    def n(self):
        return self.gamma.shape[0]

    @property
    def k(self):
        return self.gamma.shape[1]


def _check_channels(model_names, stack):
    if model_names and stack.channel_names != tuple(model_names):
        raise ChannelMismatchError(
            f"stack channels {stack.channel_names} != model channels {tuple(model_names)}"
        )


def _sq_distances(points, centroids):
    # (n, k) squared Euclidean distances.
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _reseed_empty(points, centroids, d2, labels):
    # Move each empty centroid onto the point currently farthest from its
    # assigned centroid, then re-assign. Strictly lowers the objective.
    k = centroids.shape[0]
    point_cost = d2[np.arange(points.shape[0]), labels]
    used = set()
    for _ in range(k):
        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size == 0:
            break
        order = np.argsort(-point_cost, kind="stable")
        far = next(i for i in order if i not in used)
        used.add(far)
        centroids[empties[0]] = points[far]
        d2 = _sq_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        point_cost = d2[np.arange(points.shape[0]), labels]
    return centroids, d2, labels


def kmeans_fit(stack, k, seed=0, max_iters=100, tol=1e-6):
    """Fit k-means with seeded k-means++ initialization.

    Alternates nearest-centroid assignment with mean updates; stops when
    no label changes, when |dWCSS| < tol, or at max_iters. Empty clusters
    are re-seeded onto the point farthest from its centroid. Returns
    (model, labelmap); the model carries the per-iteration WCSS history.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    points = stack.pixels()
    n = points.shape[0]
    if n < k:
        raise TooFewPointsError(f"{n} pixels for k={k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    history = []
    prev_labels = None
    prev_wcss = None
    labels = None
    wcss = 0.0
    for it in range(max_iters):
        d2 = _sq_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        centroids, d2, labels = _reseed_empty(points, centroids, d2, labels)
        wcss = float(d2[np.arange(n), labels].sum())
        history.append(wcss)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        if prev_wcss is not None and abs(prev_wcss - wcss) < tol:
            break
        if it == max_iters - 1:
            break
        prev_labels, prev_wcss = labels, wcss
        for j in range(k):
            centroids[j] = points[labels == j].mean(axis=0)
    model = KMeansModel(
        centroids=centroids,
        channel_names=stack.channel_names,
        wcss=wcss,
        wcss_history=tuple(history),
    )
    return model, LabelMap(labels.reshape(stack.height, stack.width), k)


def kmeans_assign(model, stack):
    """Label each pixel by its nearest centroid; ties go to the lowest index."""
    if stack.dims != model.dims:
        raise DimensionMismatchError(f"stack has {stack.dims} dims, model has {model.dims}")
    _check_channels(model.channel_names, stack)
    d2 = _sq_distances(stack.pixels(), model.centroids)
    labels = np.argmin(d2, axis=1)
    return LabelMap(labels.reshape(stack.height, stack.width), model.k)


def gaussian_log_densities(points, means, covariances):
    """(n, k) log-density matrix of multivariate normals, via Cholesky factors."""
    n, d = points.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        chol = np.linalg.cholesky(covariances[j])
        diff = (points - means[j]).T
        sol = solve_triangular(chol, diff, lower=True)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -0.5 * (maha + logdet + d * _LOG_2PI)
    return out


def _log_joint(model, points):
    # log pi_k + log N_k(x), the unnormalized log posterior.
    return np.log(model.weights)[None, :] + gaussian_log_densities(
        points, model.means, model.covariances
    )


def gmm_e_step(model, stack):
    """Posterior component probabilities for every pixel (log-space, stable)."""
    if stack.dims != model.dims:
        raise DimensionMismatchError(f"stack has {stack.dims} dims, model has {model.dims}")
    _check_channels(model.channel_names, stack)
    logj = _log_joint(model, stack.pixels())
    gamma = np.exp(logj - logsumexp(logj, axis=1, keepdims=True))
    return Responsibilities(gamma)


def gmm_m_step(stack, resp, reg=1e-6):
    """Re-estimate weights, means, and covariances from responsibilities.

    Covariances are full matrices with ``reg`` added to the diagonal;
    a component whose responsibility mass vanishes raises
    DegenerateComponentError.
    """
    if reg <= 0:
        raise ValueError("reg must be positive")
    points = stack.pixels()
    gamma = resp.gamma
    if gamma.shape[0] != points.shape[0]:
        raise DimensionMismatchError("responsibilities do not match the stack's pixel count")
    n, d = points.shape
    k = gamma.shape[1]
    mass = gamma.sum(axis=0)
    if np.any(mass < _MIN_COMPONENT_MASS):
        dead = int(np.argmin(mass))
        raise DegenerateComponentError(f"component {dead} has responsibility mass {mass[dead]:.3g}")
    weights = mass / n
    means = (gamma.T @ points) / mass[:, None]
    covs = np.empty((k, d, d))
    for j in range(k):
        diff = points - means[j]
        cov = (gamma[:, j][:, None] * diff).T @ diff / mass[j]
        cov = 0.5 * (cov + cov.T) + reg * np.eye(d)
        covs[j] = cov
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        channel_names=stack.channel_names,
    )


def gmm_log_likelihood(model, stack):
    """Total data log-likelihood under the mixture (log-sum-exp over components)."""
    if stack.dims != model.dims:
        raise DimensionMismatchError(f"stack has {stack.dims} dims, model has {model.dims}")
    _check_channels(model.channel_names, stack)
    return float(np.sum(logsumexp(_log_joint(model, stack.pixels()), axis=1)))


def _hard_responsibilities(labels, k):
    n = labels.size
    gamma = np.zeros((n, k))
    gamma[np.arange(n), labels.ravel()] = 1.0
    return Responsibilities(gamma)


def _reseed_component(model, stack, reg):
    # Replace the weakest component with one centered on the worst-fit point.
    points = stack.pixels()
    per_point = logsumexp(_log_joint(model, points), axis=1)
    worst = int(np.argmin(per_point))
    dead = int(np.argmin(model.weights))
    n, d = points.shape
    weights = model.weights.copy()
    weights[dead] = 1.0 / n
    weights /= weights.sum()
    means = model.means.copy()
    means[dead] = points[worst]
    covs = model.covariances.copy()
    covs[dead] = np.cov(points, rowvar=False).reshape(d, d) + reg * np.eye(d)
    return GmmModel(weights, means, covs, model.channel_names)


def gmm_fit(stack, k, seed=0, max_iters=100, tol=1e-5, reg=1e-6):
    """Fit a k-component Gaussian mixture by EM.

    Initialization comes from kmeans_fit with the same seed. Iterates
    E/M steps until |d log-likelihood| < tol or max_iters; the returned
    label map is the per-pixel argmax responsibility. A collapsed
    component is re-seeded from the worst-fit point once; if it collapses
    again the error propagates. The model carries the log-likelihood
    history (restarted if a re-seed occurred).
    """
    points = stack.pixels()
    n, d = points.shape
    if n < k * (d + 1):
        raise TooFewPointsError(f"{n} pixels cannot support k={k} components in {d}-D")
    _, km_labels = kmeans_fit(stack, k, seed=seed)
    model = gmm_m_step(stack, _hard_responsibilities(km_labels.labels, k), reg=reg)
    ll = gmm_log_likelihood(model, stack)
    history = [ll]
    reseeded = False
    for _ in range(max_iters):
        resp = gmm_e_step(model, stack)
        try:
            model = gmm_m_step(stack, resp, reg=reg)
        except DegenerateComponentError:
            if reseeded:
                raise
            reseeded = True
            model = _reseed_component(model, stack, reg)
            ll = gmm_log_likelihood(model, stack)
            history = [ll]
            continue
        new_ll = gmm_log_likelihood(model, stack)
        history.append(new_ll)
        done = abs(new_ll - ll) < tol
        ll = new_ll
        if done:
            break
    resp = gmm_e_step(model, stack)
    labels = np.argmax(resp.gamma, axis=1)
    final = GmmModel(
        weights=model.weights,
        means=model.means,
        covariances=model.covariances,
        channel_names=model.channel_names,
        log_likelihood=ll,
        log_likelihood_history=tuple(history),
    )
    return final, LabelMap(labels.reshape(stack.height, stack.width), k)


def gmm_map_labels(model, stack):
    """Per-pixel argmax-posterior labeling under a fitted mixture."""
    resp = gmm_e_step(model, stack)
    labels = np.argmax(resp.gamma, axis=1)
    return LabelMap(labels.reshape(stack.height, stack.width), model.k)
