"""1-D intensity clustering: Lloyd K-means and Gaussian-mixture EM.

Both algorithms operate on the raw pixel intensities of a slice. K-means
gives a hard assignment; EM fits a Gaussian mixture and yields per-pixel
posterior probabilities that are hard-assigned downstream. ``segment_slice``
turns either result into a label map whose classes are ranked by mean
intensity, so for k=5 the brightest class is label 5.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .volume import Slice

DEFAULT_SEED = 2015

METHOD_EM = "em"
METHOD_KMEANS = "kmeans"

INIT_QUANTILE_SPREAD = "quantile-spread"
INIT_RANDOM_FROM_DATA = "random-from-data"

# Lower bound on mixture variances (normalised-intensity units squared);
# keeps components from collapsing onto repeated values.
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 5
    max_iter: int = 200
    tol: float = 1e-6  # relative log-likelihood change for EM convergence
    seed: int = DEFAULT_SEED
    n_restarts: int = 5
    init: str = INIT_QUANTILE_SPREAD

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol <= 0:
            raise ValidationError(f"tol must be > 0, got {self.tol}")
        if self.n_restarts < 1:
            raise ValidationError(f"n_restarts must be >= 1, got {self.n_restarts}")
        if self.init not in (INIT_QUANTILE_SPREAD, INIT_RANDOM_FROM_DATA):
            raise ValidationError(f"unknown init strategy: {self.init!r}")


@dataclass(frozen=True)
class GmmModel:
    """Fitted 1-D Gaussian mixture. Components are in fit order, not sorted."""

    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    objective_trace: list[float] = field(default_factory=list)
    n_iter: int = 0
    degenerate: bool = False
    best_restart: int = 0


@dataclass
class EmResult:
    model: GmmModel
    posteriors: np.ndarray
    log_likelihood_trace: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    best_restart: int = 0


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class labels in {0} | {1..k}; 0 marks excluded background.

    Classes are ranked by mean intensity of their pixels, ascending, so for
    k=5 the brightest class carries label 5.
    """

    labels: np.ndarray
    k: int
    slice_index: int = 0
    degenerate: bool = False

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def _quantile_centers(values: np.ndarray, k: int) -> np.ndarray:
    # Centers at the (2i-1)/(2k) quantiles: deterministic and well spread
    # for the unimodal-plus-bump histograms MR slices produce.
    qs = (2 * np.arange(1, k + 1) - 1) / (2 * k)
    return np.quantile(values, qs)


def _initial_centers(values: np.ndarray, k: int, strategy: str, rng: np.random.Generator) -> np.ndarray:
    if strategy == INIT_QUANTILE_SPREAD:
        return _quantile_centers(values, k)
    idx = rng.choice(values.size, size=k, replace=values.size < k)
    return values[idx].astype(np.float64)


def _sse(values: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    return float(np.sum((values - centroids[assign]) ** 2))


def _lloyd(values: np.ndarray, centers: np.ndarray, max_iter: int):
    """One Lloyd run; returns (centroids, assignment, objective trace, iters)."""
    k = centers.size
    centers = centers.astype(np.float64).copy()
    prev_assign = None
    trace: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        dist = np.abs(values[:, None] - centers[None, :])
        assign = np.argmin(dist, axis=1)  # ties go to the lower centroid index
        # Repair empty clusters: move each onto the value currently farthest
        # from its assigned centroid, then re-assign.
        while True:
            occupied = np.bincount(assign, minlength=k) > 0
            if occupied.all():
                break
            empty = int(np.flatnonzero(~occupied)[0])
            farthest = int(np.argmax(np.abs(values - centers[assign])))
            centers[empty] = values[farthest]
            dist = np.abs(values[:, None] - centers[None, :])
            assign = np.argmin(dist, axis=1)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        sums = np.bincount(assign, weights=values, minlength=k)
        counts = np.bincount(assign, minlength=k)
        centers = sums / counts
        trace.append(_sse(values, centers, assign))
        prev_assign = assign
    return centers, prev_assign, trace, iterations


def kmeans_1d(values, cfg: ClusterConfig | None = None) -> KMeansResult:
    """Best-of-restarts Lloyd K-means on 1-D data.

    Restart 0 uses the configured initialisation (quantile spread by
    default); further restarts draw random data points, honouring the random
    start while keeping the default run deterministic. With fewer distinct
    values than k the distinct values become centroids, the remainder are
    duplicates, and the result is flagged degenerate.
    """
    cfg = cfg or ClusterConfig()
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValidationError("kmeans_1d needs at least one value")

    distinct = np.unique(values)
    if distinct.size < cfg.k:
        centroids = np.concatenate(
            [distinct, np.full(cfg.k - distinct.size, distinct[-1])]
        )
        dist = np.abs(values[:, None] - centroids[None, :])
        assign = np.argmin(dist, axis=1)
        return KMeansResult(
            centroids=centroids,
            assignment=assign,
            objective=0.0,
            objective_trace=[0.0],
            n_iter=0,
            degenerate=True,
        )

    rng = np.random.default_rng(cfg.seed)
    best: KMeansResult | None = None
    for restart in range(cfg.n_restarts):
        strategy = cfg.init if restart == 0 else INIT_RANDOM_FROM_DATA
        centers0 = _initial_centers(values, cfg.k, strategy, rng)
        centroids, assign, trace, iterations = _lloyd(values, centers0, cfg.max_iter)
        objective = trace[-1] if trace else _sse(values, centroids, assign)
        if best is None or objective < best.objective:
            best = KMeansResult(
                centroids=centroids,
                assignment=assign,
                objective=objective,
                objective_trace=trace,
                n_iter=iterations,
                degenerate=False,
                best_restart=restart,
            )
    return best


def _log_pdf_matrix(values, weights, means, variances, squares=None):
    """Row i, column j: log(w_j * N(x_i | mu_j, var_j))."""
    # Expanded quadratic keeps this to one (n, k) temporary.
    if squares is None:
        squares = values * values
    inv2 = -0.5 / variances
    logp = squares[:, None] * inv2[None, :]
    logp += values[:, None] * (-2.0 * means * inv2)[None, :]
    logp += (means * means * inv2 - 0.5 * np.log(2.0 * np.pi * variances) + np.log(weights))[None, :]
    return logp


def _e_step(values, weights, means, variances, squares=None):
    logp = _log_pdf_matrix(values, weights, means, variances, squares)
    top = logp.max(axis=1, keepdims=True)
    np.subtract(logp, top, out=logp)
    np.exp(logp, out=logp)
    denom = logp.sum(axis=1, keepdims=True)
    ll = float((top + np.log(denom)).sum())
    np.divide(logp, denom, out=logp)
    return ll, logp


def _em_run(
    values: np.ndarray,
    k: int,
    means0: np.ndarray,
    max_iter: int,
    tol: float,
    weights0: np.ndarray | None = None,
    variances0: np.ndarray | None = None,
):
    n = values.size
    weights = np.full(k, 1.0 / k) if weights0 is None else weights0.astype(np.float64).copy()
    means = means0.astype(np.float64).copy()
    if variances0 is None:
        variances = np.full(k, max(float(np.var(values)), VARIANCE_FLOOR))
    else:
        variances = np.maximum(variances0.astype(np.float64), VARIANCE_FLOOR)

    squares = values * values
    trace: list[float] = []
    converged = False
    ll = -np.inf
    posteriors = np.full((n, k), 1.0 / k)
    for _ in range(max_iter):
        ll_new, posteriors = _e_step(values, weights, means, variances, squares)
        trace.append(ll_new)
        if np.isfinite(ll) and abs(ll_new - ll) <= tol * max(1.0, abs(ll)):
            ll = ll_new
            converged = True
            break
        ll = ll_new
        # M-step; moments via one pass over the posterior matrix.
        resp_sums = posteriors.sum(axis=0)
        safe = np.maximum(resp_sums, 1e-12)
        weights = resp_sums / n
        new_means = (values @ posteriors) / safe
        new_vars = (squares @ posteriors) / safe - new_means * new_means
        means = np.where(resp_sums > 1e-12, new_means, means)
        variances = np.where(resp_sums > 1e-12, new_vars, variances)
        variances = np.maximum(variances, VARIANCE_FLOOR)
    else:
        # Ran out of iterations after an M-step: sync posteriors with the
        # final parameters so the returned pieces are mutually consistent.
        ll, posteriors = _e_step(values, weights, means, variances, squares)
        trace.append(ll)

    model = GmmModel(
        k=k,
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=ll,
    )
    return model, posteriors, trace, converged


def em_gmm_1d(values, cfg: ClusterConfig | None = None) -> EmResult:
    """Fit a k-component 1-D Gaussian mixture by EM, best restart wins.

    The log-likelihood is non-decreasing over iterations (up to a variance
    floor that in practice never binds on continuous data); posterior rows
    always sum to one. k=1 short-circuits to the closed-form fit.
    """
    cfg = cfg or ClusterConfig()
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValidationError("em_gmm_1d needs at least one value")

    if cfg.k == 1:
        mean = float(values.mean())
        var = max(float(np.var(values)), VARIANCE_FLOOR)
        ll = float(
            -0.5 * np.sum((values - mean) ** 2) / var
            - 0.5 * values.size * math.log(2.0 * math.pi * var)
        )
        model = GmmModel(
            k=1,
            weights=np.ones(1),
            means=np.array([mean]),
            variances=np.array([var]),
            log_likelihood=ll,
        )
        return EmResult(
            model=model,
            posteriors=np.ones((values.size, 1)),
            log_likelihood_trace=[ll],
            n_iter=0,
            converged=True,
        )

    rng = np.random.default_rng(cfg.seed)
    best: EmResult | None = None

    def consider(restart, model, posteriors, trace, converged):
        nonlocal best
        if best is None or model.log_likelihood > best.model.log_likelihood:
            best = EmResult(
                model=model,
                posteriors=posteriors,
                log_likelihood_trace=trace,
                n_iter=len(trace),
                converged=converged,
                best_restart=restart,
            )

    # Warm start from the K-means partition under the same config. Quantile
    # or random means routinely merge a small far-out intensity mode (e.g. a
    # bright tumor class) into a wide component and EM cannot split it
    # afterwards; seeding means, weights and variances per K-means cluster
    # avoids that local optimum. Counted as restart -1; best likelihood
    # still decides.
    km = kmeans_1d(values, cfg)
    assign = km.assignment
    counts = np.bincount(assign, minlength=cfg.k).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    km_weights = np.maximum(counts, 1.0) / float(values.size)
    km_weights = km_weights / km_weights.sum()
    km_vars = np.bincount(assign, weights=(values - km.centroids[assign]) ** 2, minlength=cfg.k) / safe
    model, posteriors, trace, converged = _em_run(
        values, cfg.k, km.centroids, cfg.max_iter, cfg.tol,
        weights0=km_weights, variances0=km_vars,
    )
    consider(-1, model, posteriors, trace, converged)

    for restart in range(cfg.n_restarts):
        strategy = cfg.init if restart == 0 else INIT_RANDOM_FROM_DATA
        means0 = _initial_centers(values, cfg.k, strategy, rng)
        model, posteriors, trace, converged = _em_run(
            values, cfg.k, means0, cfg.max_iter, cfg.tol
        )
        consider(restart, model, posteriors, trace, converged)
    return best


def hard_assign(posteriors) -> np.ndarray:
    """Map posterior rows to 1-based component labels by argmax.

    Ties break toward the lower component index.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2:
        raise ValidationError("posteriors must be a 2-D array")
    sums = posteriors.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValidationError("posterior rows must sum to 1")
    return np.argmax(posteriors, axis=1) + 1


def _rank_by_mean(raw_labels: np.ndarray, values: np.ndarray, k: int, fallback_means: np.ndarray) -> np.ndarray:
    """Relabel clusters 1..k so empirical mean intensity ascends with label.

    Empty clusters are placed by the model/centroid mean, which cannot break
    the ordering invariant since they have no pixels.
    """
    keys = fallback_means.astype(np.float64).copy()
    for j in range(k):
        members = values[raw_labels == j]
        if members.size:
            keys[j] = members.mean()
    order = np.argsort(keys, kind="stable")
    rank = np.empty(k, dtype=np.int32)
    rank[order] = np.arange(1, k + 1)
    return rank


def segment_slice(
    slc: Slice,
    method: str = METHOD_EM,
    cfg: ClusterConfig | None = None,
    include_background: bool = False,
) -> LabelMap:
    """Cluster a slice's intensities into k classes ranked by brightness.

    Zero-intensity background pixels are excluded (label 0) unless
    ``include_background`` is set; excluding the black area keeps it from
    consuming one of the k classes. An all-zero slice yields an all-zero map flagged degenerate.
    """
    cfg = cfg or ClusterConfig()
    if method not in (METHOD_EM, METHOD_KMEANS):
        raise ValidationError(f"unknown segmentation method: {method!r}")

    data = slc.data
    mask = np.ones(data.shape, dtype=bool) if include_background else data > 0
    values = data[mask]
    labels = np.zeros(data.shape, dtype=np.int32)
    if values.size == 0:
        return LabelMap(labels=labels, k=cfg.k, slice_index=slc.index, degenerate=True)

    if method == METHOD_KMEANS:
        result = kmeans_1d(values, cfg)
        raw = result.assignment
        fallback_means = result.centroids
        degenerate = result.degenerate
    else:
        result = em_gmm_1d(values, cfg)
        raw = hard_assign(result.posteriors) - 1
        fallback_means = result.model.means
        degenerate = False

    rank = _rank_by_mean(raw, values, cfg.k, fallback_means)
    labels[mask] = rank[raw]
    return LabelMap(labels=labels, k=cfg.k, slice_index=slc.index, degenerate=degenerate)
