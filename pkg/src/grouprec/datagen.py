"""Deterministic synthetic rating datasets shaped like the benchmark tables.

The generators plant the kind of structure collaborative filters feed on:

  - latent user communities with community-specific item tastes (a sparse,
    thresholded taste table: most community/item pairs are neutral, some are
    strongly liked or disliked),
  - per-user and per-item rating biases,
  - popularity-skewed exposure with two community tilts: a preference tilt
    toward liked items (exposure_bias) and an engagement tilt toward items
    the community feels strongly about, loved or hated alike
    (engagement_bias),
  - integer ratings on [1, 5] with observation noise.

Counts, scale and sparsity match the published dataset statistics exactly;
user and item ids mimic the originals (1-based integers).
"""

from __future__ import annotations

import numpy as np


def _community_of_users(n_users, n_communities, rng):
    perm = rng.permutation(n_users)
    comm = np.empty(n_users, dtype=np.intp)
    comm[perm] = np.arange(n_users) % n_communities
    return comm


def _ratings_per_user(n_users, n_items, n_ratings, min_per_user, rng):
    share = rng.lognormal(mean=0.0, sigma=0.6, size=n_users)
    counts = np.maximum(min_per_user, np.round(share / share.sum() * n_ratings)).astype(int)
    counts = np.minimum(counts, n_items)
    # nudge the largest/smallest counts until the total is exact
    diff = n_ratings - counts.sum()
    order = np.argsort(-counts)
    j = 0
    while diff != 0:
        u = order[j % n_users]
        if diff > 0 and counts[u] < n_items:
            counts[u] += 1
            diff -= 1
        elif diff < 0 and counts[u] > min_per_user:
            counts[u] -= 1
            diff += 1
        j += 1
    return counts


def _taste_table(n_communities, n_items, strength, threshold, rng):
    s = rng.normal(size=(n_communities, n_items))
    return strength * (np.maximum(s - threshold, 0.0) - np.maximum(-s - threshold, 0.0))


def synth_interactions(
    n_users,
    n_items,
    n_ratings,
    n_communities=20,
    seed=1234,
    base=3.4,
    user_bias_sd=0.3,
    item_bias_sd=0.25,
    taste_strength=1.5,
    taste_threshold=0.8,
    exposure_bias=0.6,
    engagement_bias=0.0,
    popularity_sigma=1.1,
    noise_sd=0.7,
    min_per_user=None,
):
    """Return (user_ids, item_ids, ratings, timestamps) as aligned arrays."""
    if n_ratings > n_users * n_items:
        raise ValueError("more ratings requested than user-item cells")
    rng = np.random.default_rng(seed)
    min_per_user = min_per_user or max(1, min(20, n_ratings // n_users))
    comm = _community_of_users(n_users, n_communities, rng)
    b_u = rng.normal(0.0, user_bias_sd, n_users)
    q_i = rng.normal(0.0, item_bias_sd, n_items)
    popularity = rng.lognormal(0.0, popularity_sigma, n_items)
    taste = _taste_table(n_communities, n_items, taste_strength, taste_threshold, rng)
    counts = _ratings_per_user(n_users, n_items, n_ratings, min_per_user, rng)

    log_pop = np.log(popularity)
    chosen = []
    for u in range(n_users):
        # Gumbel top-k: sample counts[u] items without replacement with
        # probability ~ popularity * exp(preference tilt + engagement tilt)
        t = taste[comm[u]]
        keys = log_pop + exposure_bias * t + engagement_bias * np.abs(t)
        keys += rng.gumbel(size=n_items)
        top = np.argpartition(-keys, counts[u] - 1)[: counts[u]]
        chosen.append(np.sort(top))

    # repair coverage so every item is rated at least once
    item_count = np.bincount(np.concatenate(chosen), minlength=n_items)
    missing = np.flatnonzero(item_count == 0)
    donors = np.argsort(-counts)
    j = 0
    for item in missing:
        while True:
            u = donors[j % n_users]
            j += 1
            mine = chosen[u]
            replaceable = mine[item_count[mine] > 1]
            if replaceable.size:
                drop = replaceable[np.argmax(item_count[replaceable])]
                item_count[drop] -= 1
                item_count[item] += 1
                mine = mine[mine != drop]
                chosen[u] = np.sort(np.append(mine, item))
                break

    users = np.repeat(np.arange(n_users), [len(c) for c in chosen])
    items = np.concatenate(chosen)
    mean = base + b_u[users] + q_i[items] + taste[comm[users], items]
    raw = mean + rng.normal(0.0, noise_sd, size=items.size)
    ratings = np.clip(np.round(raw), 1, 5).astype(int)
    timestamps = rng.integers(874_000_000, 893_000_000, size=items.size)
    order = rng.permutation(items.size)
    return users[order], items[order], ratings[order], timestamps[order], comm


def write_movielens_like(path, seed=1234, **kwargs):
    """Tab-separated stand-in with MovieLens-100K's exact shape:
    943 users, 1682 items, 100000 ratings on [1, 5]."""
    users, items, ratings, ts, _ = synth_interactions(
        943, 1682, 100_000, seed=seed, **kwargs
    )
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r, t in zip(users, items, ratings, ts):
            fh.write(f"{u + 1}\t{i + 1}\t{r}\t{t}\n")
    return {"users": 943, "items": 1682, "ratings": 100_000}


def write_itm_like(path, seed=4321, **kwargs):
    """CSV stand-in with the ITM dataset's exact shape:
    454 users, 70 items, 5230 ratings on [1, 5]."""
    users, items, ratings, ts, _ = synth_interactions(
        454, 70, 5230, n_communities=20, seed=seed, **kwargs
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user,item,rating,timestamp\n")
        for u, i, r, t in zip(users, items, ratings, ts):
            fh.write(f"{u + 1},{i + 1},{r},{t}\n")
    return {"users": 454, "items": 70, "ratings": 5230}
