"""Group formation over user features: k-means, group ratings, 2-D export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import ConfigError


@dataclass
class GroupAssignment:
    """Cluster labels plus the final centroids and within-cluster objective."""

    labels: np.ndarray
    centroids: np.ndarray
    k: int
    objective: float
    n_iter: int
    objective_history: list[float]


def _sq_dists(X, C):
    d2 = (
        (X * X).sum(axis=1)[:, None]
        - 2.0 * (X @ C.T)
        + (C * C).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _seed_centroids(X, k, rng):
    """kmeans++: first centroid uniform, the rest proportional to squared distance."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    min_d2 = _sq_dists(X, centroids[:1])[:, 0]
    for c in range(1, k):
        total = min_d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=min_d2 / total))
        centroids[c] = X[idx]
        np.minimum(min_d2, _sq_dists(X, centroids[c : c + 1])[:, 0], out=min_d2)
    return centroids


def kmeans(features, k, seed=42, max_iter=100):
    """Lloyd iterations from kmeans++ seeding.

    Stops when labels stop changing or max_iter is reached.  Empty clusters
    are re-seeded to the point farthest from its current centroid.  The
    per-iteration objective is checked to be non-increasing.
    """
    X = features.values if hasattr(features, "values") else np.asarray(features, float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k={k} must be in [1, {n}]")
    if max_iter < 1:
        raise ConfigError(f"max_iter={max_iter} must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(X, k, rng)
    labels = None
    history: list[float] = []
    for it in range(max_iter):
        d2 = _sq_dists(X, centroids)
        new_labels = d2.argmin(axis=1)
        # re-seed any emptied cluster at the globally farthest point
        for c in range(k):
            if not (new_labels == c).any():
                far = int(d2[np.arange(n), new_labels].argmax())
                centroids[c] = X[far]
                d2[:, c] = _sq_dists(X, centroids[c : c + 1])[:, 0]
                new_labels = d2.argmin(axis=1)
                new_labels[far] = c
        objective = float(d2[np.arange(n), new_labels].sum())
        if history and objective > history[-1] + 1e-9:
            raise AssertionError(
                f"k-means objective increased at iteration {it}: "
                f"{history[-1]} -> {objective}"
            )
        history.append(objective)
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = X[labels == c].mean(axis=0)
    # final centroids are exact member means; objective measured against them
    for c in range(k):
        centroids[c] = X[labels == c].mean(axis=0)
    d2 = _sq_dists(X, centroids)
    objective = float(d2[np.arange(n), labels].sum())
    return GroupAssignment(labels, centroids, k, objective, len(history), history)


@dataclass(frozen=True)
class GroupRating:
    """One observed group-level rating with its contributing members."""

    group: int
    item: int
    rating: float
    count: int
    members: tuple[int, ...]


@dataclass
class GroupRatingsTable:
    """Group-item ratings derived from one split; entries sorted by (group, item)."""

    entries: list[GroupRating]
    n_groups: int
    scale: tuple[float, float]

    def by_group(self):
        out: dict[int, list[GroupRating]] = {}
        for e in self.entries:
            out.setdefault(e.group, []).append(e)
        return out


def aggregate_group_ratings(table, assignment):
    """Group rating = arithmetic mean of the member ratings present in `table`.

    A (group, item) entry exists only if at least one member rated the item;
    the contributing member indices are kept for training."""
    u, i, r = table.arrays()
    if len(assignment.labels) != table.n_users:
        raise ConfigError(
            f"assignment covers {len(assignment.labels)} users, table has {table.n_users}"
        )
    acc: dict[tuple[int, int], list] = {}
    for uu, ii, rr in zip(u.tolist(), i.tolist(), r.tolist()):
        key = (int(assignment.labels[uu]), ii)
        slot = acc.get(key)
        if slot is None:
            acc[key] = [rr, [uu]]
        else:
            slot[0] += rr
            slot[1].append(uu)
    entries = [
        GroupRating(g, it, total / len(members), len(members), tuple(sorted(members)))
        for (g, it), (total, members) in sorted(acc.items())
    ]
    return GroupRatingsTable(entries, assignment.k, table.scale)


def project_2d(features):
    """Top-2 principal components of the mean-centered features.

    Component signs are fixed so the largest-magnitude loading is positive,
    which makes the export deterministic."""
    X = features.values if hasattr(features, "values") else np.asarray(features, float)
    if X.shape[0] < 2:
        raise ConfigError("projection needs at least 2 entities")
    if X.shape[1] < 2:
        raise ConfigError("projection needs feature dim >= 2")
    Xc = X - X.mean(axis=0)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    coords = U[:, :2] * S[:2]
    for j in range(2):
        lead = Vt[j, np.abs(Vt[j]).argmax()]
        if lead < 0:
            coords[:, j] = -coords[:, j]
    return coords


def write_projection_csv(path, entity_ids, labels, coords):
    """CSV export `user_id,group,x,y` for external plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id,group,x,y\n")
        for eid, lab, (x, y) in zip(entity_ids, labels, coords):
            fh.write(f"{eid},{int(lab)},{float(x)!r},{float(y)!r}\n")
