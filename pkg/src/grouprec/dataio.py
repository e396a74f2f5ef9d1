"""Rating-dataset ingestion: parsers, index maps, splits, feature vectors.

A `RatingsTable` deduplicates (user, item) pairs keeping the last occurrence
and assigns contiguous indices in first-appearance order, so re-parsing the
same file reproduces the maps exactly.  Split tables share the parent's index
maps; feature matrices are therefore always sized by the full entity sets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    """Malformed input line."""


class SchemaError(ValueError):
    """CSV header is missing a required column."""


class ValidationError(ValueError):
    """Record violates a declared constraint (e.g. rating outside scale)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class RatingRecord:
    user_id: str
    item_id: str
    rating: float
    timestamp: int | None = None


class RatingsTable:
    """Deduplicated interaction store with contiguous user/item index maps."""

    def __init__(self, records, scale, user_index, item_index, n_duplicates=0):
        self.records: list[RatingRecord] = records
        self.scale: tuple[float, float] = scale
        self.user_index: dict[str, int] = user_index
        self.item_index: dict[str, int] = item_index
        self.n_duplicates = n_duplicates
        self._arrays = None

    @classmethod
    def from_records(cls, records, scale=(1.0, 5.0)):
        lo, hi = scale
        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        dedup: dict[tuple[str, str], RatingRecord] = {}
        n_duplicates = 0
        for rec in records:
            if not (lo <= rec.rating <= hi):
                raise ValidationError(
                    f"rating {rec.rating} for ({rec.user_id}, {rec.item_id}) "
                    f"outside scale [{lo}, {hi}]"
                )
            if rec.user_id not in user_index:
                user_index[rec.user_id] = len(user_index)
            if rec.item_id not in item_index:
                item_index[rec.item_id] = len(item_index)
            key = (rec.user_id, rec.item_id)
            if key in dedup:
                n_duplicates += 1
            dedup[key] = rec
        return cls(list(dedup.values()), scale, user_index, item_index, n_duplicates)

    @property
    def n_users(self):
        return len(self.user_index)

    @property
    def n_items(self):
        return len(self.item_index)

    @property
    def n_ratings(self):
        return len(self.records)

    def sparsity(self):
        cells = self.n_users * self.n_items
        if cells == 0:
            return 0.0
        return 1.0 - self.n_ratings / cells

    def global_mean(self):
        if not self.records:
            return 0.0
        return float(np.mean([r.rating for r in self.records]))

    def arrays(self):
        """(user_idx, item_idx, rating) as aligned numpy arrays."""
        if self._arrays is None:
            u = np.array([self.user_index[r.user_id] for r in self.records], dtype=np.int32)
            i = np.array([self.item_index[r.item_id] for r in self.records], dtype=np.int32)
            r = np.array([r.rating for r in self.records], dtype=np.float64)
            self._arrays = (u, i, r)
        return self._arrays

    def subset(self, positions):
        """New table over a subset of record positions, sharing the index maps."""
        recs = [self.records[p] for p in sorted(positions)]
        return RatingsTable(recs, self.scale, self.user_index, self.item_index)


def parse_movielens(path, scale=(1.0, 5.0)):
    """Parse tab-separated `user item rating [timestamp]` lines."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(f"line {lineno}: expected 3 or 4 tab-separated fields")
            try:
                rating = float(parts[2])
                ts = int(parts[3]) if len(parts) == 4 else None
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            records.append(RatingRecord(parts[0], parts[1], rating, ts))
    return RatingsTable.from_records(records, scale)


def serialize_movielens(table, path):
    """Inverse of parse_movielens; writes records in table order."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in table.records:
            rating = int(rec.rating) if float(rec.rating).is_integer() else rec.rating
            if rec.timestamp is None:
                fh.write(f"{rec.user_id}\t{rec.item_id}\t{rating}\n")
            else:
                fh.write(f"{rec.user_id}\t{rec.item_id}\t{rating}\t{rec.timestamp}\n")


def parse_generic_csv(
    path,
    user_col="user",
    item_col="item",
    rating_col="rating",
    timestamp_col=None,
    scale=(1.0, 5.0),
):
    """Parse a comma-separated file with a header row naming the columns."""
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [user_col, item_col, rating_col]
        if timestamp_col:
            needed.append(timestamp_col)
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"missing column(s) {missing} in header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rating = float(row[rating_col])
                ts = int(row[timestamp_col]) if timestamp_col else None
            except (TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            records.append(RatingRecord(row[user_col], row[item_col], rating, ts))
    return RatingsTable.from_records(records, scale)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 42
    per_user: bool = True


def split(table, spec):
    """Seeded disjoint train/test partition of the records.

    With per_user set, each user's records are split separately and a user
    with at least one record always keeps at least one in train.
    """
    if not 0.0 < spec.train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {spec.train_fraction}")
    if not table.records:
        raise ConfigError("cannot split an empty table")
    rng = np.random.default_rng(spec.seed)
    train_pos: list[int] = []
    test_pos: list[int] = []
    if spec.per_user:
        by_user: dict[str, list[int]] = {uid: [] for uid in table.user_index}
        for pos, rec in enumerate(table.records):
            by_user[rec.user_id].append(pos)
        for uid in table.user_index:
            positions = by_user[uid]
            if not positions:
                continue
            order = rng.permutation(len(positions))
            n_train = max(1, int(round(len(positions) * spec.train_fraction)))
            for j, k in enumerate(order):
                (train_pos if j < n_train else test_pos).append(positions[k])
    else:
        order = rng.permutation(len(table.records))
        n_train = int(round(len(table.records) * spec.train_fraction))
        train_pos = list(order[:n_train])
        test_pos = list(order[n_train:])
    return table.subset(train_pos), table.subset(test_pos)


@dataclass
class FeatureMatrix:
    """Dense per-entity feature rows; every row has L2 norm 0 or 1."""

    values: np.ndarray

    @property
    def entity_count(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


def _interaction_features(n_rows, n_cols, row_idx, col_idx, ratings):
    M = np.zeros((n_rows, n_cols))
    M[row_idx, col_idx] = ratings
    rated = np.zeros((n_rows, n_cols), dtype=bool)
    rated[row_idx, col_idx] = True
    counts = rated.sum(axis=1)
    sums = M.sum(axis=1)
    means = np.divide(sums, counts, out=np.zeros(n_rows), where=counts > 0)
    # boolean indexing flattens row-major, matching np.repeat's output order
    M[rated] -= np.repeat(means, counts.astype(np.intp))
    norms = np.linalg.norm(M, axis=1)
    nz = norms > 1e-12
    M[nz] /= norms[nz, None]
    if not np.isfinite(M).all():
        raise ValidationError("non-finite feature value produced")
    return FeatureMatrix(M)


def build_user_features(train):
    """Per-user dense rating vector over all items, mean-centered on rated
    entries, then L2-normalized.  Depends only on the given (train) table."""
    u, i, r = train.arrays()
    return _interaction_features(train.n_users, train.n_items, u, i, r)


def build_item_features(train):
    """Mirror of build_user_features with user/item roles swapped."""
    u, i, r = train.arrays()
    return _interaction_features(train.n_items, train.n_users, i, u, r)
