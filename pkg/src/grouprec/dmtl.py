"""Joint group-profiling + recommendation network.

Forward pass per user-item pair:

    h_u        = ReLU(W_u x_u + b_u)
    h_i        = ReLU(W_i x_i + b_i)
    h_concat   = W_concat h_u + W_concat h_i + b_concat
    h_attn     = ReLU(W_attn h_concat + b_attn)
    alpha      = Softmax(W_score h_attn + b_score)
    h_attn_item = alpha * h_i                      (elementwise)
    h_combined = h_u + h_attn_item
    z          = ReLU(W_shared h_combined + b_shared)
    logits     = W_profile z + b_profile           (profiling head)
    r_hat      = w_rec . logits + w_item . h_i + b_rec

A group's prediction mean-pools member z vectors before the heads; because
both heads are affine and h_i is shared across members of a pair batch, this
equals averaging per-member head outputs (asserted, not assumed).

Training minimizes  mse(r_hat, r) + lam * cross_entropy(logits, group label)
over observed (group, item, rating) tuples with Adam.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nm
from .dataio import ConfigError
from .numerics import (
    DomainError,
    Param,
    add,
    affine,
    cross_entropy_loss,
    gather,
    mse_loss,
    multiply,
    relu,
    rowdot,
    scale,
    segment_mean,
    softmax,
)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class TrainingError(RuntimeError):
    """Training finished without reducing the loss."""


@dataclass(frozen=True)
class DmtlConfig:
    h1: int = 64
    h_attn: int = 32
    h2: int = 64
    n_classes: int = 20
    lam: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    seed: int = 42
    # which members feed a training tuple: every group member ("all", matching
    # how groups are scored), or only the raters behind the observed rating
    member_mode: str = "all"


_PARAM_NAMES = (
    "W_u", "b_u", "W_i", "b_i", "W_concat", "b_concat", "W_attn", "b_attn",
    "W_score", "b_score", "W_shared", "b_shared", "W_profile", "b_profile",
    "w_rec", "w_item", "b_rec",
)


@dataclass
class DmtlParams:
    W_u: np.ndarray
    b_u: np.ndarray
    W_i: np.ndarray
    b_i: np.ndarray
    W_concat: np.ndarray
    b_concat: np.ndarray
    W_attn: np.ndarray
    b_attn: np.ndarray
    W_score: np.ndarray
    b_score: np.ndarray
    W_shared: np.ndarray
    b_shared: np.ndarray
    W_profile: np.ndarray
    b_profile: np.ndarray
    w_rec: np.ndarray
    w_item: np.ndarray
    b_rec: np.ndarray

    @classmethod
    def initialize(cls, d_u, d_i, config, rng=None):
        """He-style init throughout.

        The two input layers are rescaled by sqrt(dim): the feature rows are
        L2-normalized (unit norm, not unit per-coordinate variance), so plain
        variance-2/fan_in would start pre-activations at the 1/sqrt(dim)
        scale; the correction restores He's intended unit activation scale.
        """
        if min(d_u, d_i) < 1:
            raise ConfigError(f"feature dims must be positive, got d_u={d_u}, d_i={d_i}")
        rng = np.random.default_rng(config.seed) if rng is None else rng
        h1, ha, h2, C = config.h1, config.h_attn, config.h2, config.n_classes
        return cls(
            W_u=nm.he_weights(rng, h1, d_u) * np.sqrt(d_u),
            b_u=nm.zero_bias(h1),
            W_i=nm.he_weights(rng, h1, d_i) * np.sqrt(d_i),
            b_i=nm.zero_bias(h1),
            W_concat=nm.he_weights(rng, h1, h1),
            b_concat=nm.zero_bias(h1),
            W_attn=nm.he_weights(rng, ha, h1),
            b_attn=nm.zero_bias(ha),
            W_score=nm.he_weights(rng, h1, ha),
            b_score=nm.zero_bias(h1),
            W_shared=nm.he_weights(rng, h2, h1),
            b_shared=nm.zero_bias(h2),
            W_profile=nm.he_weights(rng, C, h2),
            b_profile=nm.zero_bias(C),
            w_rec=rng.normal(0.0, np.sqrt(2.0 / C), size=C),
            w_item=rng.normal(0.0, np.sqrt(2.0 / h1), size=h1),
            b_rec=np.zeros(()),
        )

    def to_dict(self):
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: np.asarray(d[name], dtype=np.float64) for name in _PARAM_NAMES})


@dataclass
class ForwardTrace:
    h_u: np.ndarray
    h_i: np.ndarray
    h_concat: np.ndarray
    h_attn: np.ndarray
    alpha: np.ndarray
    h_attn_item: np.ndarray
    h_combined: np.ndarray
    z: np.ndarray
    logits: np.ndarray
    r_hat: np.ndarray


def _embed_user(p, x_u):
    return relu(affine(p["W_u"], x_u, p["b_u"]))


def _embed_item(p, x_i):
    return relu(affine(p["W_i"], x_i, p["b_i"]))


def _interact(p, h_u, h_i):
    """Pair-level attention path from the two embeddings up to z."""
    h_concat = affine(p["W_concat"], add(h_u, h_i), p["b_concat"])
    h_attn = relu(affine(p["W_attn"], h_concat, p["b_attn"]))
    alpha = softmax(affine(p["W_score"], h_attn, p["b_score"]))
    h_attn_item = multiply(alpha, h_i)
    h_combined = add(h_u, h_attn_item)
    z = relu(affine(p["W_shared"], h_combined, p["b_shared"]))
    return h_concat, h_attn, alpha, h_attn_item, h_combined, z


def _profile_head(p, z):
    return affine(p["W_profile"], z, p["b_profile"])


def _rec_head(p, logits, h_i):
    return add(add(rowdot(logits, p["w_rec"]), rowdot(h_i, p["w_item"])), p["b_rec"])


def forward(params, x_u, x_i):
    """Full forward pass; accepts one pair (1-D inputs) or a row batch (2-D)."""
    p = params.to_dict() if isinstance(params, DmtlParams) else params
    h_u = _embed_user(p, x_u)
    h_i = _embed_item(p, x_i)
    h_concat, h_attn, alpha, h_attn_item, h_combined, z = _interact(p, h_u, h_i)
    logits = _profile_head(p, z)
    r_hat = _rec_head(p, logits, h_i)
    return ForwardTrace(h_u, h_i, h_concat, h_attn, alpha, h_attn_item, h_combined, z, logits, r_hat)


def aggregate_group(params, traces):
    """Group outputs: mean-pool member z vectors, then apply both heads once.

    The affine heads make this identical to averaging per-member outputs;
    that equivalence is asserted on every call."""
    if not traces:
        raise DomainError("aggregate_group: empty group")
    p = params.to_dict() if isinstance(params, DmtlParams) else params
    z_mean = np.mean([t.z for t in traces], axis=0)
    logits = _profile_head(p, z_mean)
    r_hat = _rec_head(p, logits, traces[0].h_i)
    avg_logits = np.mean([t.logits for t in traces], axis=0)
    avg_r = np.mean([t.r_hat for t in traces], axis=0)
    if np.abs(logits - avg_logits).max() > 1e-9 or abs(float(r_hat) - float(avg_r)) > 1e-9:
        raise AssertionError("pooled head outputs diverged from per-member averaging")
    return logits, float(r_hat)


@dataclass
class GroupBatch:
    """Index-based view of a batch of (group, item, rating, label) tuples.

    Feature rows are embedded once per unique user/item in the batch and
    gathered per member slot, which keeps the all-members mode affordable."""

    user_features: object         # FeatureMatrix
    item_features: object
    member_users: np.ndarray      # (B_m,) user index of each member slot
    segments: np.ndarray          # (B_m,) tuple id of each member slot
    items: np.ndarray             # (B_t,) item index per tuple
    targets: np.ndarray           # (B_t,)
    labels: np.ndarray            # (B_t,) int class = group label
    n_tuples: int


def build_batch(entries, user_features, item_features, member_lists=None):
    """Index a list of group-rating entries for the loss graph.

    member_lists overrides each entry's contributing members (used for the
    all-members training mode)."""
    if not entries:
        raise DomainError("build_batch: empty batch")
    members = []
    segments = []
    for t, e in enumerate(entries):
        ms = member_lists[e.group] if member_lists is not None else e.members
        members.extend(ms)
        segments.extend([t] * len(ms))
    return GroupBatch(
        user_features=user_features,
        item_features=item_features,
        member_users=np.asarray(members, dtype=np.intp),
        segments=np.asarray(segments, dtype=np.intp),
        items=np.asarray([e.item for e in entries], dtype=np.intp),
        targets=np.asarray([e.rating for e in entries]),
        labels=np.asarray([e.group for e in entries], dtype=np.intp),
        n_tuples=len(entries),
    )


def _graph_loss(p, batch, lam):
    """Joint loss over a GroupBatch; records the graph when p holds Params."""
    uniq_u, inv_u = np.unique(batch.member_users, return_inverse=True)
    uniq_i, inv_i = np.unique(batch.items, return_inverse=True)
    H_u = _embed_user(p, batch.user_features.values[uniq_u])
    H_i = _embed_item(p, batch.item_features.values[uniq_i])
    h_u = gather(H_u, inv_u)
    h_i = gather(H_i, inv_i[batch.segments])
    z = _interact(p, h_u, h_i)[-1]
    z_mean = segment_mean(z, batch.segments, batch.n_tuples)
    logits = _profile_head(p, z_mean)
    h_i_tuple = gather(H_i, inv_i)
    r_hat = _rec_head(p, logits, h_i_tuple)
    l_rec = mse_loss(r_hat, batch.targets)
    l_prof = cross_entropy_loss(logits, batch.labels)
    return add(l_rec, scale(l_prof, lam)), l_rec, l_prof


def loss(params, batch, lam):
    """Joint loss value: mean squared rating error + lam * profiling cross-entropy."""
    if lam < 0:
        raise ConfigError(f"lam must be non-negative, got {lam}")
    p = params.to_dict() if isinstance(params, DmtlParams) else params
    total, _, _ = _graph_loss(p, batch, lam)
    return float(total.value if isinstance(total, nm.Node) else total)


def train(config, group_table, user_features, item_features):
    """Minibatch Adam on the joint loss; deterministic per config.seed.

    In the default all-members mode every tuple of a group is fed the same
    member set: the union of the group's contributors, i.e. every member the
    split left with at least one rating.  Returns the trained parameters and
    a per-epoch loss log.  Raises DivergenceError on a non-finite loss and
    TrainingError if the final epoch's loss is not below the first's."""
    entries = group_table.entries
    if not entries:
        raise DomainError("train: no training tuples")
    if config.lam < 0:
        raise ConfigError(f"lam must be non-negative, got {config.lam}")
    if any(e.group >= config.n_classes for e in entries):
        raise IndexError("group label out of range for the configured class count")

    member_lists = None
    if config.member_mode == "all":
        union: dict[int, set] = {}
        for e in entries:
            union.setdefault(e.group, set()).update(e.members)
        member_lists = {g: tuple(sorted(ms)) for g, ms in union.items()}
    elif config.member_mode != "raters":
        raise ConfigError(f"unknown member_mode {config.member_mode!r}")

    seq = np.random.SeedSequence(config.seed)
    rng_init, rng_shuffle = (np.random.default_rng(s) for s in seq.spawn(2))
    params = DmtlParams.initialize(
        user_features.dim, item_features.dim, config, rng=rng_init
    )
    nodes = {name: Param(arr, name) for name, arr in params.to_dict().items()}
    opt = nm.Adam(list(nodes.values()), lr=config.learning_rate)

    n = len(entries)
    history = []
    for epoch in range(config.epochs):
        order = rng_shuffle.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            chunk = [entries[j] for j in order[start : start + config.batch_size]]
            batch = build_batch(chunk, user_features, item_features, member_lists)
            opt.zero_grad()
            total, l_rec, l_prof = _graph_loss(nodes, batch, config.lam)
            if not np.isfinite(total.value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} (learning rate {config.learning_rate})"
                )
            nm.backward(total)
            opt.step()
            w = len(chunk)
            sums += w * np.array([float(total.value), float(l_rec.value), float(l_prof.value)])
        history.append(
            {
                "epoch": epoch,
                "loss": sums[0] / n,
                "rec_loss": sums[1] / n,
                "profile_loss": sums[2] / n,
            }
        )
    if len(history) > 1 and not history[-1]["loss"] < history[0]["loss"]:
        raise TrainingError(
            f"loss did not improve: first epoch {history[0]['loss']:.6f}, "
            f"last epoch {history[-1]['loss']:.6f}"
        )
    trained = DmtlParams.from_dict({name: node.value for name, node in nodes.items()})
    return trained, history


def embed_all(params, user_features, item_features):
    """Embed every user and item once; reuse across many pair evaluations."""
    p = params.to_dict()
    return _embed_user(p, user_features.values), _embed_item(p, item_features.values)


def pair_outputs(params, h_u_rows, h_i_rows):
    """(logits, r_hat) for pre-embedded pair rows."""
    p = params.to_dict() if isinstance(params, DmtlParams) else params
    z = _interact(p, h_u_rows, h_i_rows)[-1]
    logits = _profile_head(p, z)
    r_hat = _rec_head(p, logits, h_i_rows)
    return logits, r_hat


def score_group_items(params, member_idx, item_idx, user_features, item_features,
                      chunk_rows=200_000):
    """Mean member-level predicted rating for each candidate item."""
    member_idx = np.asarray(member_idx, dtype=np.intp)
    item_idx = np.asarray(item_idx, dtype=np.intp)
    if member_idx.size == 0:
        raise DomainError("score_group_items: empty group")
    p = params.to_dict()
    H_u = _embed_user(p, user_features.values[member_idx])
    scores = np.empty(item_idx.size)
    m = member_idx.size
    items_per_chunk = max(1, chunk_rows // m)
    for start in range(0, item_idx.size, items_per_chunk):
        block = item_idx[start : start + items_per_chunk]
        H_i = _embed_item(p, item_features.values[block])
        hu = np.repeat(H_u, block.size, axis=0)
        hi = np.tile(H_i, (m, 1))
        _, r_hat = pair_outputs(p, hu, hi)
        scores[start : start + items_per_chunk] = r_hat.reshape(m, block.size).mean(axis=0)
    return scores


def recommend_top_k(params, member_idx, candidate_items, k, user_features, item_features):
    """Candidates sorted by predicted group rating, ties broken by item index."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    candidates = np.asarray(candidate_items, dtype=np.intp)
    if candidates.size == 0:
        raise DomainError("recommend_top_k: no candidates")
    scores = score_group_items(params, member_idx, candidates, user_features, item_features)
    order = np.lexsort((candidates, -scores))
    return candidates[order][: min(k, candidates.size)]


def save_checkpoint(path, config, params):
    """Single .npz holding the config as JSON plus every named tensor."""
    meta = json.dumps(asdict(config), sort_keys=True)
    np.savez(path, __config__=np.array(meta), **params.to_dict())


def load_checkpoint(path):
    with np.load(path) as data:
        config = DmtlConfig(**json.loads(str(data["__config__"].item())))
        params = DmtlParams.from_dict({name: data[name] for name in _PARAM_NAMES})
    return config, params
