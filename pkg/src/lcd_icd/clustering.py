"""k-means partitioning of the reference set and the per-cluster AE ensemble."""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .autoencoder import (
    BASELINE_SIDE,
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    AeModel,
    train_ae,
)
from .console import info
from .errors import UnknownReferenceError, UsageError

DEFAULT_K = 10
DEFAULT_MAX_ITERS = 100


@dataclass(frozen=True)
class KMeansResult:
    labels: npt.NDArray[np.int64]
    centroids: npt.NDArray[np.float64]
    sse_history: tuple[float, ...]
    n_iter: int
    repairs: int


def _assign(points: npt.NDArray, centroids: npt.NDArray) -> npt.NDArray[np.int64]:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


def _sse(points: npt.NDArray, labels: npt.NDArray, centroids: npt.NDArray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _repair_empty(points, labels, centroids, k) -> int:
    """Move the farthest point of the largest cluster into each empty cluster.

    Mutates labels and centroids in place; returns how many clusters were reseeded.
    """
    repairs = 0
    for c in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[c] > 0:
            continue
        largest = int(np.argmax(sizes))
        members = np.flatnonzero(labels == largest)
        d2 = ((points[members] - centroids[largest]) ** 2).sum(axis=1)
        far = members[int(np.argmax(d2))]
        labels[far] = c
        centroids[c] = points[far]
        repairs += 1
    return repairs


def kmeans(
    features: Sequence[npt.ArrayLike],
    k: int,
    rng_seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    *,
    initial_centroids: npt.ArrayLike | None = None,
) -> KMeansResult:
    """Lloyd's algorithm with seeded initialization.

    Initial centroids are k distinct input points picked by a seeded generator
    unless ``initial_centroids`` is given. Stops when assignments no longer
    change or after ``max_iters`` rounds. A cluster left empty after an
    assignment step is reseeded from the farthest point of the largest cluster.

    Raises:
        UsageError: k <= 0 or k greater than the number of points.
    """
    n = len(features)
    if k <= 0 or k > n:
        raise UsageError(f"k={k} invalid for {n} points")
    points = np.vstack([np.asarray(f, dtype=np.float64).reshape(-1) for f in features])

    if initial_centroids is None:
        rng = np.random.default_rng(rng_seed)
        centroids = points[rng.choice(n, size=k, replace=False)].copy()
    else:
        centroids = np.array(initial_centroids, dtype=np.float64).reshape(k, points.shape[1])

    labels = None
    history = []
    repairs = 0
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        new_labels = _assign(points, centroids)
        repairs += _repair_empty(points, new_labels, centroids, k)
        # compare before the centroid update
        converged = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
        history.append(_sse(points, labels, centroids))
        if converged:
            break
    return KMeansResult(labels, centroids, tuple(history), n_iter, repairs)


@dataclass(frozen=True)
class AeEnsemble:
    """k autoencoders, each the background model of one reference cluster."""

    k: int
    models: tuple[AeModel, ...]
    assignment: Mapping[str, int]

    def model_for(self, reference_id: str) -> AeModel:
        try:
            return self.models[self.assignment[reference_id]]
        except KeyError:
            raise UnknownReferenceError(f"reference {reference_id!r} not in ensemble") from None


def train_ensemble(
    images: Mapping[str, npt.ArrayLike],
    features: Mapping[str, npt.ArrayLike],
    k: int = DEFAULT_K,
    seed: int = 0,
    *,
    input_side: int = BASELINE_SIDE,
    epochs: int = DEFAULT_EPOCHS,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    verbose: bool = False,
) -> AeEnsemble:
    """Cluster the references by their full-image features and train one AE per cluster.

    Args:
        images: Reference id -> flattened pixels at ``input_side`` squared.
        features: Reference id -> full-image feature; k-means runs on these.
        k: Number of clusters / models.
        seed: Seeds clustering and every model.
        input_side: Side of each model's square input.
        epochs: Training epochs per model.
        learning_rate: SGD step size.
        verbose: Show progress.
    """
    ids = list(images)
    missing = [i for i in ids if i not in features]
    if missing:
        raise UnknownReferenceError(f"no full-image feature for reference {missing[0]!r}")
    vectors = [features[i] for i in ids]
    result = kmeans(vectors, k, rng_seed=seed)
    assignment = {image_id: int(label) for image_id, label in zip(ids, result.labels)}

    models = []
    for c in range(k):
        members = [images[i] for i in ids if assignment[i] == c]
        if verbose:
            info(f"Training AE {c + 1}/{k} on {len(members)} references...")
        models.append(
            train_ae(
                members,
                epochs=epochs,
                learning_rate=learning_rate,
                rng_seed=seed + 1 + c,
                input_side=input_side,
                verbose=verbose,
            )
        )
    return AeEnsemble(k, tuple(models), assignment)
