"""Loss-based clustering of posterior surface draws.

The partition reported is the minimizer of the posterior expected K-means
loss sum_k sum_{i in C_k} E[(theta_i - c_k)^2]. Since the expectation
decomposes into the squared distance of the posterior mean plus a
label-independent variance term, the optimal labels coincide with ordinary
K-means run on the posterior means; that equivalence is what
`expected_kmeans_loss` exists to verify.

Because each surface value is a scalar, the K-means step is solved exactly:
optimal squared-loss clusters of scalars are contiguous once sorted, so a
dynamic program over split points finds the global minimum (Lloyd-style
restarts can stall in local optima even at small q). Assignment uncertainty
is summarized by the fraction of posterior draws each location lands
nearest to each (fixed) center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalError


@dataclass(frozen=True)
class ClusterResult:
    """Labels are 1-based and consistent with ascending sorted centers."""

    labels: np.ndarray
    centers: np.ndarray
    assignment_probs: np.ndarray
    loss_on_means: float
    expected_loss: float

    @property
    def K(self) -> int:
        return self.centers.shape[0]


def _optimal_split_ids(values: np.ndarray, K: int) -> np.ndarray:
    """Exact 1-D K-means on ascending values; returns 0-based cluster ids.

    cost[k, j] is the minimal within-cluster sum of squares for values
    0..j split into k+1 contiguous blocks; block sums of squares come from
    prefix sums. Backtracking recovers the block boundaries.
    """
    q = values.shape[0]
    s1 = np.concatenate(([0.0], np.cumsum(values)))
    s2 = np.concatenate(([0.0], np.cumsum(values * values)))

    def block_sse(i, j):
        # i, j inclusive 0-based; i may be an array
        n = j - i + 1
        tot = s1[j + 1] - s1[i]
        return (s2[j + 1] - s2[i]) - tot * tot / n

    cost = np.full((K, q), np.inf)
    first = np.zeros((K, q), dtype=int)
    cost[0] = block_sse(np.zeros(q, dtype=int), np.arange(q))
    for k in range(1, K):
        for j in range(k, q):
            starts = np.arange(k, j + 1)
            totals = cost[k - 1, starts - 1] + block_sse(starts, j)
            pick = int(np.argmin(totals))
            cost[k, j] = totals[pick]
            first[k, j] = starts[pick]
    ids = np.empty(q, dtype=int)
    j = q - 1
    for k in range(K - 1, 0, -1):
        i = first[k, j]
        ids[i : j + 1] = k
        j = i - 1
    ids[: j + 1] = 0
    return ids


def cluster_surface(
    draws: np.ndarray, K: int, restarts: int = 50, seed: int = 0
) -> ClusterResult:
    """Cluster locations by their posterior means, exactly.

    draws has shape (S, q): S posterior draws of a surface at q locations.
    Centers are reported ascending with labels renumbered to match. The
    scalar K-means problem is solved by exhaustive split-point search, so
    the reported partition is the global loss minimizer; `restarts` and
    `seed` are retained for interface stability but have no effect.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    S, q = draws.shape
    if S < 2:
        raise InvalidArgumentError("need at least 2 draws")
    if not 1 <= K <= q:
        raise InvalidArgumentError(f"K must lie in 1..{q}, got {K}")
    if restarts < 1:
        raise InvalidArgumentError("restarts must be >= 1")
    means = draws.mean(axis=0)
    if np.unique(means).shape[0] < K:
        raise NumericalError(
            f"means have fewer than {K} distinct values; clusters would collapse"
        )

    order = np.argsort(means, kind="stable")
    ids_sorted = _optimal_split_ids(means[order], K)
    labels = np.empty(q, dtype=int)
    labels[order] = ids_sorted + 1
    # centers recomputed in original site order so equal partitions yield
    # bitwise-equal losses regardless of how they were found
    centers = np.array([means[labels == k].mean() for k in range(1, K + 1)])
    loss = float(((means - centers[labels - 1]) ** 2).sum())
    probs = assignment_probability(draws, centers)
    expected = expected_kmeans_loss(draws, labels, centers)
    return ClusterResult(
        labels=labels,
        centers=centers,
        assignment_probs=probs,
        loss_on_means=loss,
        expected_loss=expected,
    )


def assignment_probability(draws: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Fraction of draws each location falls nearest to each center.

    Ties in the nearest-center distance go to the lower center index, so
    rows are deterministic and sum to exactly 1.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 1 or np.unique(centers).shape[0] != centers.shape[0]:
        raise InvalidArgumentError("centers must be distinct scalars")
    d2 = (draws[:, :, None] - centers[None, None, :]) ** 2
    nearest = np.argmin(d2, axis=2)  # argmin takes the lowest index on ties
    S, q = draws.shape
    probs = np.zeros((q, centers.shape[0]))
    for k in range(centers.shape[0]):
        probs[:, k] = (nearest == k).sum(axis=0)
    return probs / S


def expected_kmeans_loss(draws: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    """Posterior expected K-means loss of a labeling with fixed centers.

    labels are 1-based against ascending centers, matching ClusterResult.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    labels = np.asarray(labels, dtype=int)
    centers = np.asarray(centers, dtype=float)
    if labels.shape[0] != draws.shape[1]:
        raise InvalidArgumentError("one label per location required")
    if np.any(labels < 1) or np.any(labels > centers.shape[0]):
        raise InvalidArgumentError("labels must index centers (1-based)")
    assigned = centers[labels - 1]
    return float(((draws - assigned[None, :]) ** 2).mean(axis=0).sum())
