"""The nine comparison recommenders, sharing one fit/predict surface.

Formulations and default hyperparameters follow the de facto recommender
library conventions: ALS-fitted user/item biases; k-NN over co-rated cosine
similarity (plain and mean-centered, user- and item-based); SGD matrix
factorization with biases (and an implicit-feedback term for the ++ variant);
non-negative factorization via regularized multiplicative updates; and the
pairwise item-deviation predictor.

Entities with no ratings in the fitted table are treated as unknown at
predict time: their learned terms are dropped and the prediction falls back
toward the target-entity mean, then the global mean.  All predictions are
clipped to the rating scale.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .dataio import ConfigError

VARIANTS = (
    ("bias", "Baseline"),
    ("knn_basic_user", "KNNBasic (User-Based)"),
    ("knn_means_user", "KNNWithMeans (User-Based)"),
    ("knn_basic_item", "KNNBasic (Item-Based)"),
    ("knn_means_item", "KNNWithMeans (Item-Based)"),
    ("svd", "SVD"),
    ("svdpp", "SVD++"),
    ("nmf", "NMF"),
    ("slope_one", "Slope One"),
)

DISPLAY_NAMES = dict(VARIANTS)


class FitDivergenceError(RuntimeError):
    """A factorization fit produced non-finite parameters."""


class BaselineModel:
    """Learned state for one variant plus a uniform predict surface."""

    def __init__(self, variant, scale, global_mean, n_users, n_items, state):
        self.variant = variant
        self.scale = scale
        self.global_mean = float(global_mean)
        self.n_users = n_users
        self.n_items = n_items
        self.state = state

    def _clip(self, est):
        return np.clip(est, self.scale[0], self.scale[1])

    def predict(self, u, i):
        """Predicted rating for one (user, item) pair; None means unknown entity."""
        us = np.array([-1 if u is None else u], dtype=np.intp)
        is_ = np.array([-1 if i is None else i], dtype=np.intp)
        return float(self.predict_many(us, is_)[0])

    def predict_many(self, users, items):
        """Vectorized predictions; index -1 marks an unknown entity."""
        users = np.asarray(users, dtype=np.intp)
        items = np.asarray(items, dtype=np.intp)
        est = _PREDICTORS[self.variant](self, users, items)
        return self._clip(est)


def _prep(train):
    u, i, r = train.arrays()
    if len(r) == 0:
        raise ConfigError("cannot fit on an empty table")
    n_u, n_i = train.n_users, train.n_items
    mu = float(r.mean())
    cnt_u = np.bincount(u, minlength=n_u).astype(np.float64)
    cnt_i = np.bincount(i, minlength=n_i).astype(np.float64)
    sum_u = np.bincount(u, weights=r, minlength=n_u)
    sum_i = np.bincount(i, weights=r, minlength=n_i)
    mean_u = np.where(cnt_u > 0, sum_u / np.maximum(cnt_u, 1), mu)
    mean_i = np.where(cnt_i > 0, sum_i / np.maximum(cnt_i, 1), mu)
    return u, i, r, n_u, n_i, mu, cnt_u, cnt_i, mean_u, mean_i


# ---------------------------------------------------------------- bias


def fit_bias(train, reg_user=15.0, reg_item=10.0, epochs=10):
    """mu + b_u + b_i via alternating least squares with L2 shrinkage."""
    u, i, r, n_u, n_i, mu, cnt_u, cnt_i, _, _ = _prep(train)
    bu = np.zeros(n_u)
    bi = np.zeros(n_i)
    for _ in range(epochs):
        bi = np.bincount(i, weights=r - mu - bu[u], minlength=n_i) / (reg_item + cnt_i)
        bu = np.bincount(u, weights=r - mu - bi[i], minlength=n_u) / (reg_user + cnt_u)
    state = {"bu": bu, "bi": bi, "known_u": cnt_u > 0, "known_i": cnt_i > 0}
    return BaselineModel("bias", train.scale, mu, n_u, n_i, state)


def _predict_bias(m, users, items):
    s = m.state
    ku = (users >= 0) & s["known_u"][np.clip(users, 0, m.n_users - 1)]
    ki = (items >= 0) & s["known_i"][np.clip(items, 0, m.n_items - 1)]
    est = np.full(users.shape, m.global_mean)
    est += np.where(ku, s["bu"][np.clip(users, 0, m.n_users - 1)], 0.0)
    est += np.where(ki, s["bi"][np.clip(items, 0, m.n_items - 1)], 0.0)
    return est


# ---------------------------------------------------------------- knn


def _co_rated_cosine(R, mask, min_support):
    """Cosine over co-rated entries only; zero where support < min_support."""
    prod = R @ R.T
    sq = R * R
    co_sq = sq @ mask.T          # sum of x's squares over co-rated columns
    denom = np.sqrt(co_sq * co_sq.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, prod / np.where(denom > 0, denom, 1.0), 0.0)
    support = mask.astype(np.float64) @ mask.T.astype(np.float64)
    sim[support < min_support] = 0.0
    return sim


def fit_knn(train, user_based=True, with_means=False, k_neighbors=40, min_support=1):
    """k-NN over co-rated cosine similarity.

    The plain variant predicts a similarity-weighted mean of neighbor ratings;
    the with-means variant predicts the target's mean plus weighted neighbor
    deviations.  Item-based transposes the roles."""
    if k_neighbors < 1:
        raise ConfigError(f"k_neighbors must be >= 1, got {k_neighbors}")
    u, i, r, n_u, n_i, mu, cnt_u, cnt_i, mean_u, mean_i = _prep(train)
    if user_based:
        n_t, n_o, t_idx, o_idx = n_u, n_i, u, i
        t_means = mean_u
    else:
        n_t, n_o, t_idx, o_idx = n_i, n_u, i, u
        t_means = mean_i
    R = np.zeros((n_t, n_o))
    R[t_idx, o_idx] = r
    mask = np.zeros((n_t, n_o), dtype=bool)
    mask[t_idx, o_idx] = True
    sim = _co_rated_cosine(R, mask, min_support)
    variant = ("knn_means_" if with_means else "knn_basic_") + ("user" if user_based else "item")
    state = {
        "sim": sim,
        "R": R,
        "mask": mask,
        "t_means": t_means,
        "k": np.asarray(k_neighbors),
        "user_based": np.asarray(user_based),
        "with_means": np.asarray(with_means),
    }
    return BaselineModel(variant, train.scale, mu, n_u, n_i, state)


def _knn_estimate(m, targets, col):
    """Predictions for target entities against one column (item or user)."""
    s = m.state
    k = int(s["k"])
    raters = np.flatnonzero(s["mask"][:, col])
    t_means = s["t_means"]
    fallback = np.where(targets >= 0, t_means[np.clip(targets, 0, len(t_means) - 1)],
                        m.global_mean)
    if raters.size == 0:
        return fallback
    sims = np.where(targets[:, None] >= 0,
                    s["sim"][np.clip(targets, 0, len(t_means) - 1)][:, raters], 0.0)
    if raters.size > k:
        keep = np.argpartition(-sims, k - 1, axis=1)[:, :k]
        topsim = np.take_along_axis(sims, keep, axis=1)
        top_raters = raters[keep]
    else:
        topsim = sims
        top_raters = np.broadcast_to(raters, sims.shape)
    pos = topsim > 0
    wsum = np.where(pos, topsim, 0.0).sum(axis=1)
    ratings = s["R"][top_raters, col]
    if bool(s["with_means"]):
        dev = ratings - t_means[top_raters]
        num = np.where(pos, topsim * dev, 0.0).sum(axis=1)
        est = fallback + np.divide(num, wsum, out=np.zeros_like(num), where=wsum > 0)
        return np.where(wsum > 0, est, fallback)
    num = np.where(pos, topsim * ratings, 0.0).sum(axis=1)
    est = np.divide(num, wsum, out=np.zeros_like(num), where=wsum > 0)
    return np.where(wsum > 0, est, fallback)


def _predict_knn(m, users, items):
    if bool(m.state["user_based"]):
        targets, cols = users, items
    else:
        targets, cols = items, users
    est = np.empty(targets.shape)
    for col in np.unique(cols):
        pick = cols == col
        if col < 0:
            t_means = m.state["t_means"]
            t = targets[pick]
            est[pick] = np.where(t >= 0, t_means[np.clip(t, 0, len(t_means) - 1)],
                                 m.global_mean)
        else:
            est[pick] = _knn_estimate(m, targets[pick], int(col))
    return est


# ---------------------------------------------------------------- svd / svd++


def fit_svd(train, factors=100, epochs=20, lr=0.005, reg=0.02, seed=0, init_std=0.1):
    """Biased MF: mu + b_u + b_i + p_u . q_i, trained by per-rating SGD."""
    if factors < 1:
        raise ConfigError(f"factors must be >= 1, got {factors}")
    u, i, r, n_u, n_i, mu, cnt_u, cnt_i, _, _ = _prep(train)
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, init_std, (n_u, factors))
    Q = rng.normal(0.0, init_std, (n_i, factors))
    bu = np.zeros(n_u)
    bi = np.zeros(n_i)
    kernels.svd_sgd(u, i, r, mu, bu, bi, P, Q, int(epochs), float(lr), float(reg))
    if not (np.isfinite(bu).all() and np.isfinite(P).all() and np.isfinite(Q).all()):
        raise FitDivergenceError(f"svd fit diverged at learning rate {lr}")
    state = {"bu": bu, "bi": bi, "P": P, "Q": Q,
             "known_u": cnt_u > 0, "known_i": cnt_i > 0}
    return BaselineModel("svd", train.scale, mu, n_u, n_i, state)


def _predict_factor(m, users, items):
    s = m.state
    uc = np.clip(users, 0, m.n_users - 1)
    ic = np.clip(items, 0, m.n_items - 1)
    ku = (users >= 0) & s["known_u"][uc]
    ki = (items >= 0) & s["known_i"][ic]
    est = np.full(users.shape, m.global_mean)
    est += np.where(ku, s["bu"][uc], 0.0)
    est += np.where(ki, s["bi"][ic], 0.0)
    user_vecs = s.get("U_impl", s["P"])
    dots = np.einsum("kf,kf->k", user_vecs[uc], s["Q"][ic])
    est += np.where(ku & ki, dots, 0.0)
    return est


def user_item_lists(train):
    """Each user's rated item indices, ascending, as (flat, offsets)."""
    u, i, _ = train.arrays()
    order = np.lexsort((i, u))
    flat = i[order].astype(np.int32)
    counts = np.bincount(u, minlength=train.n_users)
    offsets = np.zeros(train.n_users + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return flat, offsets


def fit_svdpp(train, factors=20, epochs=20, lr=0.007, reg=0.02, seed=0, init_std=0.1):
    """SVD plus implicit feedback: q_i . (p_u + |N(u)|^-1/2 sum_{j in N(u)} y_j)."""
    if factors < 1:
        raise ConfigError(f"factors must be >= 1, got {factors}")
    u, i, r, n_u, n_i, mu, cnt_u, cnt_i, _, _ = _prep(train)
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, init_std, (n_u, factors))
    Q = rng.normal(0.0, init_std, (n_i, factors))
    Y = rng.normal(0.0, init_std, (n_i, factors))
    bu = np.zeros(n_u)
    bi = np.zeros(n_i)
    flat, offsets = user_item_lists(train)
    kernels.svdpp_sgd(u, i, r, mu, bu, bi, P, Q, Y, flat, offsets,
                      int(epochs), float(lr), float(reg))
    if not (np.isfinite(P).all() and np.isfinite(Q).all() and np.isfinite(Y).all()):
        raise FitDivergenceError(f"svdpp fit diverged at learning rate {lr}")
    # fold the implicit term into per-user vectors for prediction
    U_impl = P.copy()
    for uu in range(n_u):
        items = flat[offsets[uu] : offsets[uu + 1]]
        if items.size:
            U_impl[uu] += Y[items].sum(axis=0) / np.sqrt(items.size)
    state = {"bu": bu, "bi": bi, "P": P, "Q": Q, "Y": Y, "U_impl": U_impl,
             "known_u": cnt_u > 0, "known_i": cnt_i > 0}
    return BaselineModel("svdpp", train.scale, mu, n_u, n_i, state)


# ---------------------------------------------------------------- nmf


def fit_nmf(train, factors=15, epochs=50, reg_pu=0.06, reg_qi=0.06, seed=0):
    """Non-negative MF via regularized multiplicative updates; r_hat = p_u . q_i."""
    if factors < 1:
        raise ConfigError(f"factors must be >= 1, got {factors}")
    u, i, r, n_u, n_i, mu, cnt_u, cnt_i, _, _ = _prep(train)
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.0, 1.0, (n_u, factors))
    Q = rng.uniform(0.0, 1.0, (n_i, factors))
    kernels.nmf_epochs(u, i, r, P, Q, cnt_u, cnt_i, int(epochs),
                       float(reg_pu), float(reg_qi))
    if (P < 0).any() or (Q < 0).any():
        raise AssertionError("nmf factors went negative")
    state = {"P": P, "Q": Q, "known_u": cnt_u > 0, "known_i": cnt_i > 0}
    return BaselineModel("nmf", train.scale, mu, n_u, n_i, state)


def _predict_nmf(m, users, items):
    s = m.state
    uc = np.clip(users, 0, m.n_users - 1)
    ic = np.clip(items, 0, m.n_items - 1)
    known = (users >= 0) & (items >= 0) & s["known_u"][uc] & s["known_i"][ic]
    dots = np.einsum("kf,kf->k", s["P"][uc], s["Q"][ic])
    return np.where(known, dots, m.global_mean)


# ---------------------------------------------------------------- slope one


def fit_slope_one(train):
    """Average pairwise item deviations over co-raters."""
    u, i, r, n_u, n_i, mu, cnt_u, cnt_i, mean_u, _ = _prep(train)
    R = np.zeros((n_u, n_i))
    R[u, i] = r
    mask = np.zeros((n_u, n_i), dtype=bool)
    mask[u, i] = True
    maskf = mask.astype(np.float64)
    co = maskf.T @ maskf                      # co-rater counts per item pair
    A = R.T @ maskf                           # sum over co-raters of r_ui
    with np.errstate(invalid="ignore", divide="ignore"):
        dev = np.where(co > 0, (A - A.T) / np.where(co > 0, co, 1.0), 0.0)
    state = {"dev": dev, "co": co, "R": R, "mask": mask, "user_means": mean_u,
             "known_u": cnt_u > 0}
    return BaselineModel("slope_one", train.scale, mu, n_u, n_i, state)


def _predict_slope_one(m, users, items):
    s = m.state
    est = np.empty(users.shape)
    for uu in np.unique(users):
        pick = users == uu
        if uu < 0 or not s["known_u"][uu]:
            est[pick] = m.global_mean
            continue
        rated = np.flatnonzero(s["mask"][uu])
        ratings = s["R"][uu, rated]
        cols = items[pick]
        valid = cols >= 0
        cc = np.clip(cols, 0, m.n_items - 1)
        usable = (s["co"][cc][:, rated] > 0) & (cc[:, None] != rated[None, :]) & valid[:, None]
        num = np.where(usable, s["dev"][cc][:, rated] + ratings[None, :], 0.0).sum(axis=1)
        cnt = usable.sum(axis=1)
        out = np.divide(num, cnt, out=np.full(cnt.shape, s["user_means"][uu]),
                        where=cnt > 0)
        est[pick] = out
    return est


_PREDICTORS = {
    "bias": _predict_bias,
    "knn_basic_user": _predict_knn,
    "knn_means_user": _predict_knn,
    "knn_basic_item": _predict_knn,
    "knn_means_item": _predict_knn,
    "svd": _predict_factor,
    "svdpp": _predict_factor,
    "nmf": _predict_nmf,
    "slope_one": _predict_slope_one,
}


def fit_all(train, seed=42, knn_k=40):
    """Fit the nine variants with their library-default hyperparameters."""
    seeds = np.random.SeedSequence(seed).generate_state(3)
    return {
        "bias": fit_bias(train),
        "knn_basic_user": fit_knn(train, user_based=True, with_means=False, k_neighbors=knn_k),
        "knn_means_user": fit_knn(train, user_based=True, with_means=True, k_neighbors=knn_k),
        "knn_basic_item": fit_knn(train, user_based=False, with_means=False, k_neighbors=knn_k),
        "knn_means_item": fit_knn(train, user_based=False, with_means=True, k_neighbors=knn_k),
        "svd": fit_svd(train, seed=int(seeds[0])),
        "svdpp": fit_svdpp(train, seed=int(seeds[1])),
        "nmf": fit_nmf(train, seed=int(seeds[2])),
        "slope_one": fit_slope_one(train),
    }


def predict_group(model, members, item):
    """Group prediction = mean of member-level predictions, clipped to scale."""
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise ConfigError("predict_group: empty group")
    preds = model.predict_many(members, np.full(members.shape, item, dtype=np.intp))
    return float(np.clip(preds.mean(), model.scale[0], model.scale[1]))


def save_model(path, model):
    """Flat npz dump of one fitted baseline."""
    meta = {
        "variant": np.array(model.variant),
        "scale": np.array(model.scale),
        "global_mean": np.array(model.global_mean),
        "shape": np.array([model.n_users, model.n_items]),
    }
    np.savez(path, **meta, **{f"state_{k}": v for k, v in model.state.items()})


def load_model(path):
    with np.load(path) as data:
        state = {
            k[len("state_"):]: data[k] for k in data.files if k.startswith("state_")
        }
        return BaselineModel(
            str(data["variant"].item()),
            tuple(data["scale"]),
            float(data["global_mean"]),
            int(data["shape"][0]),
            int(data["shape"][1]),
            state,
        )
