"""Ingestion, preprocessing filters, train/val/test splits, and synthetic data.

The on-disk container for sparse binary matrices is a little-endian CSR
layout: magic ``PIA1``, three u64 counts (users, items, nnz), the row
offset array ((n_users + 1) * u64) and the column index array (nnz * u64).
External ids live in a sidecar ``idmap.tsv``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, ParseError, SpecError, SplitError

CSR_MAGIC = b"PIA1"


@dataclass(frozen=True)
class InteractionMatrix:
    """Sparse binary user-item matrix in CSR form with external-id maps.

    Every stored entry is implicitly 1; item indices inside each row are
    strictly increasing.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        if indptr.shape != (self.n_users + 1,):
            raise ValueError("indptr length must be n_users + 1")
        if indptr[0] != 0 or indptr[-1] != indices.size:
            raise ValueError("indptr must start at 0 and end at nnz")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if indices.size and (indices.min() < 0 or indices.max() >= self.n_items):
            raise ValueError("item index out of range")
        for u in range(self.n_users):
            row = indices[indptr[u]:indptr[u + 1]]
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise ValueError(f"row {u} not strictly increasing")
        if len(self.user_ids) != self.n_users or len(self.item_ids) != self.n_items:
            raise ValueError("id maps must cover every dense index")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    def dense_rows(self, users: np.ndarray | list[int]) -> np.ndarray:
        """Dense 0/1 float64 matrix for the given user indices."""
        users = np.asarray(users, dtype=np.int64)
        out = np.zeros((users.size, self.n_items), dtype=np.float64)
        for k, u in enumerate(users):
            out[k, self.row(int(u))] = 1.0
        return out


def matrix_from_rows(rows: list[np.ndarray], n_items: int,
                     user_ids: list[str] | None = None,
                     item_ids: list[str] | None = None) -> InteractionMatrix:
    """Build an InteractionMatrix from per-user item-index arrays."""
    sorted_rows = [np.unique(np.asarray(r, dtype=np.int64)) for r in rows]
    indptr = np.zeros(len(sorted_rows) + 1, dtype=np.int64)
    for u, r in enumerate(sorted_rows):
        indptr[u + 1] = indptr[u] + r.size
    indices = (np.concatenate(sorted_rows) if sorted_rows
               else np.zeros(0, dtype=np.int64))
    if user_ids is None:
        user_ids = [str(u) for u in range(len(sorted_rows))]
    if item_ids is None:
        item_ids = [str(i) for i in range(n_items)]
    return InteractionMatrix(
        n_users=len(sorted_rows),
        n_items=n_items,
        indptr=indptr,
        indices=indices.astype(np.int64),
        user_ids=tuple(user_ids),
        item_ids=tuple(item_ids),
    )


@dataclass(frozen=True)
class SplitDataset:
    """Disjoint train/val/test user populations over a shared item set.

    Validation and test matrices come in fold-in/holdout pairs over the
    same users; per user the two parts are disjoint and their union is
    that user's full row.
    """

    train: InteractionMatrix
    val_fold_in: InteractionMatrix
    val_holdout: InteractionMatrix
    test_fold_in: InteractionMatrix
    test_holdout: InteractionMatrix
    seed: int

    @property
    def n_items(self) -> int:
        return self.train.n_items


@dataclass(frozen=True)
class SynthSpec:
    """Planted nested-cohort generator settings.

    cohort_support_sizes must be strictly increasing; support k is a
    subset of support k+1, so light users are strict-subset neighbors of
    heavier ones.
    """

    cohort_sizes: tuple[int, ...]
    cohort_support_sizes: tuple[int, ...]
    n_items: int
    noise_rate: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "cohort_sizes", tuple(int(c) for c in self.cohort_sizes))
        object.__setattr__(self, "cohort_support_sizes",
                           tuple(int(s) for s in self.cohort_support_sizes))
        if len(self.cohort_sizes) != len(self.cohort_support_sizes):
            raise SpecError("cohort_sizes and cohort_support_sizes must align")
        if not self.cohort_sizes:
            raise SpecError("at least one cohort required")
        sizes = self.cohort_support_sizes
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise SpecError("cohort_support_sizes must be strictly increasing")
        if any(c < 1 for c in self.cohort_sizes):
            raise SpecError("cohort sizes must be positive")
        if sizes[0] < 1:
            raise SpecError("supports must be nonempty")
        if not 0.0 <= self.noise_rate < 1.0:
            raise SpecError("noise_rate must be in [0, 1)")


def ingest_events(path: str | Path, min_user_interactions: int,
                  min_item_users: int, rating_threshold: float) -> InteractionMatrix:
    """Read `user,item,rating` CSV events and build the binary matrix.

    Ratings >= rating_threshold become positives. Items with fewer than
    min_item_users distinct users and users with fewer than
    min_user_interactions items are dropped alternately until both
    constraints hold at once (the result is a fixed point, so the final
    matrix does not depend on filter order).
    """
    if min_user_interactions < 0 or min_item_users < 0:
        raise ValueError("min counts must be >= 0")
    path = Path(path)
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "missing header") from None
        if len(header) < 3:
            raise ParseError(1, "header must have user,item,rating columns")
        for line_no, fields in enumerate(reader, start=2):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != 3:
                raise ParseError(line_no, f"expected 3 fields, got {len(fields)}")
            user, item, rating_text = (f.strip() for f in fields)
            if not user or not item:
                raise ParseError(line_no, "empty user or item id")
            try:
                rating = float(rating_text)
            except ValueError:
                raise ParseError(line_no, f"bad rating {rating_text!r}") from None
            if rating >= rating_threshold:
                key = (user, item)
                if key not in seen:
                    seen.add(key)
                    pairs.append(key)

    user_items: dict[str, set[str]] = {}
    item_users: dict[str, set[str]] = {}
    for user, item in pairs:
        user_items.setdefault(user, set()).add(item)
        item_users.setdefault(item, set()).add(user)

    # Alternate the two filters until neither removes anything.
    while True:
        bad_items = [i for i, us in item_users.items() if len(us) < min_item_users]
        for i in bad_items:
            for u in item_users.pop(i):
                user_items[u].discard(i)
        bad_users = [u for u, its in user_items.items()
                     if len(its) < min_user_interactions]
        for u in bad_users:
            for i in user_items.pop(u):
                item_users[i].discard(u)
        item_users = {i: us for i, us in item_users.items() if us}
        if not bad_items and not bad_users:
            break

    kept_users = set(user_items)
    kept_items = set(item_users)
    if not kept_users or not kept_items:
        raise EmptyDatasetError("no interactions survived the count filters")

    # Dense indices in first-seen file order for determinism.
    user_order: list[str] = []
    item_order: list[str] = []
    user_idx: dict[str, int] = {}
    item_idx: dict[str, int] = {}
    for user, item in pairs:
        if user in kept_users and user not in user_idx:
            user_idx[user] = len(user_order)
            user_order.append(user)
        if item in kept_items and item not in item_idx:
            item_idx[item] = len(item_order)
            item_order.append(item)

    rows: list[list[int]] = [[] for _ in user_order]
    for user, item in pairs:
        if user in user_idx and item in item_idx:
            rows[user_idx[user]].append(item_idx[item])
    return matrix_from_rows(
        [np.array(r, dtype=np.int64) for r in rows],
        n_items=len(item_order),
        user_ids=user_order,
        item_ids=item_order,
    )


def _submatrix(m: InteractionMatrix, users: np.ndarray) -> InteractionMatrix:
    rows = [m.row(int(u)) for u in users]
    ids = [m.user_ids[int(u)] for u in users]
    return matrix_from_rows(rows, m.n_items, user_ids=ids,
                            item_ids=list(m.item_ids))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(m: InteractionMatrix, n_val_users: int, n_test_users: int,
                  fold_in_fraction: float, seed: int) -> SplitDataset:
    """Sample disjoint val/test user sets and partition their rows.

    Each held-out user's items go round_half_up(fraction * |row|) into the
    fold-in part (clamped so both parts stay nonempty) and the rest into
    the holdout. Deterministic given the seed.
    """
    if not 0.0 < fold_in_fraction < 1.0:
        raise SplitError("fold_in_fraction must lie strictly between 0 and 1")
    n_held = n_val_users + n_test_users
    if n_val_users < 0 or n_test_users < 0 or n_held >= m.n_users:
        raise SplitError(
            f"cannot hold out {n_held} users from a {m.n_users}-user matrix"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m.n_users)
    val_users = np.sort(perm[:n_val_users])
    test_users = np.sort(perm[n_val_users:n_held])
    train_users = np.sort(perm[n_held:])

    for u in np.concatenate([val_users, test_users]):
        if m.row(int(u)).size < 2:
            raise SplitError(
                f"held-out user {m.user_ids[int(u)]} has fewer than 2 interactions"
            )

    def partition(users: np.ndarray) -> tuple[InteractionMatrix, InteractionMatrix]:
        fold_rows, hold_rows, ids = [], [], []
        for u in users:
            row = m.row(int(u))
            k = _round_half_up(fold_in_fraction * row.size)
            k = min(max(k, 1), row.size - 1)
            shuffled = rng.permutation(row)
            fold_rows.append(np.sort(shuffled[:k]))
            hold_rows.append(np.sort(shuffled[k:]))
            ids.append(m.user_ids[int(u)])
        fold = matrix_from_rows(fold_rows, m.n_items, user_ids=ids,
                                item_ids=list(m.item_ids))
        hold = matrix_from_rows(hold_rows, m.n_items, user_ids=ids,
                                item_ids=list(m.item_ids))
        return fold, hold

    val_fold, val_hold = partition(val_users)
    test_fold, test_hold = partition(test_users)
    return SplitDataset(
        train=_submatrix(m, train_users),
        val_fold_in=val_fold,
        val_holdout=val_hold,
        test_fold_in=test_fold,
        test_holdout=test_hold,
        seed=seed,
    )


def synth_block_dataset(spec: SynthSpec) -> InteractionMatrix:
    """Generate users over nested item supports plus Bernoulli noise.

    Support k is the first cohort_support_sizes[k] items of a seeded item
    permutation, so smaller supports are subsets of larger ones. A cohort-k
    user covers all of support k-1 plus a random nonempty subset of the
    remaining support-k items; cohort-0 users cover a random nonempty
    subset of support 0. With zero noise this plants strict-subset
    relations between cohorts: any lighter-cohort row is contained in any
    heavier-cohort row while their l1 distance stays large.
    """
    if spec.cohort_support_sizes[-1] > spec.n_items:
        raise SpecError("largest support exceeds n_items")
    rng = np.random.default_rng(spec.seed)
    item_perm = rng.permutation(spec.n_items)
    coverage = 0.8  # per-item keep probability inside the fresh support slice

    rows: list[np.ndarray] = []
    for k, (n_users, support_size) in enumerate(
            zip(spec.cohort_sizes, spec.cohort_support_sizes)):
        base_size = spec.cohort_support_sizes[k - 1] if k > 0 else 0
        base = item_perm[:base_size]
        fresh = item_perm[base_size:support_size]
        for _ in range(n_users):
            keep = rng.random(fresh.size) < coverage
            if not keep.any():
                keep[int(rng.integers(fresh.size))] = True
            items = np.concatenate([base, fresh[keep]])
            if spec.noise_rate > 0.0:
                extra = np.flatnonzero(rng.random(spec.n_items) < spec.noise_rate)
                items = np.union1d(items, extra)
            rows.append(np.sort(items))
    return matrix_from_rows(rows, spec.n_items)


# ---------------------------------------------------------------------------
# On-disk container
# ---------------------------------------------------------------------------

def write_csr(m: InteractionMatrix, path: str | Path) -> None:
    """Serialize the matrix to the PIA1 little-endian CSR container."""
    with open(path, "wb") as fh:
        fh.write(CSR_MAGIC)
        fh.write(struct.pack("<QQQ", m.n_users, m.n_items, m.nnz))
        fh.write(m.indptr.astype("<u8").tobytes())
        fh.write(m.indices.astype("<u8").tobytes())


def read_csr(path: str | Path, user_ids: list[str] | None = None,
             item_ids: list[str] | None = None) -> InteractionMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CSR_MAGIC:
            raise ParseError(1, f"bad magic {magic!r} in {path}")
        n_users, n_items, nnz = struct.unpack("<QQQ", fh.read(24))
        indptr = np.frombuffer(fh.read(8 * (n_users + 1)), dtype="<u8")
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<u8")
    return InteractionMatrix(
        n_users=int(n_users),
        n_items=int(n_items),
        indptr=indptr.astype(np.int64),
        indices=indices.astype(np.int64),
        user_ids=tuple(user_ids) if user_ids else tuple(str(u) for u in range(n_users)),
        item_ids=tuple(item_ids) if item_ids else tuple(str(i) for i in range(n_items)),
    )


def write_idmap(path: str | Path, user_ids: dict[str, list[str]],
                item_ids: list[str]) -> None:
    """Write `kind<TAB>dense_index<TAB>external_id` lines.

    User rows carry the split part in the kind column (user:train,
    user:val, user:test) since the parts index users independently.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for part, ids in user_ids.items():
            for idx, ext in enumerate(ids):
                fh.write(f"user:{part}\t{idx}\t{ext}\n")
        for idx, ext in enumerate(item_ids):
            fh.write(f"item\t{idx}\t{ext}\n")


def read_idmap(path: str | Path) -> tuple[dict[str, list[str]], list[str]]:
    users: dict[str, list[str]] = {}
    items: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(line_no, "idmap rows need 3 tab-separated fields")
            kind, _, ext = parts
            if kind == "item":
                items.append(ext)
            elif kind.startswith("user:"):
                users.setdefault(kind.split(":", 1)[1], []).append(ext)
            else:
                raise ParseError(line_no, f"unknown idmap kind {kind!r}")
    return users, items


SPLIT_FILES = {
    "train": "train.csr",
    "val_fold_in": "val_fold.csr",
    "val_holdout": "val_hold.csr",
    "test_fold_in": "test_fold.csr",
    "test_holdout": "test_hold.csr",
}


def save_split(split: SplitDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for attr, fname in SPLIT_FILES.items():
        write_csr(getattr(split, attr), out / fname)
    write_idmap(
        out / "idmap.tsv",
        user_ids={
            "train": list(split.train.user_ids),
            "val": list(split.val_fold_in.user_ids),
            "test": list(split.test_fold_in.user_ids),
        },
        item_ids=list(split.train.item_ids),
    )
    (out / "seed.txt").write_text(f"{split.seed}\n", encoding="utf-8")


def load_split(data_dir: str | Path) -> SplitDataset:
    data = Path(data_dir)
    users, items = read_idmap(data / "idmap.tsv")
    part_of = {
        "train": "train", "val_fold_in": "val", "val_holdout": "val",
        "test_fold_in": "test", "test_holdout": "test",
    }
    matrices = {
        attr: read_csr(data / fname, user_ids=users.get(part_of[attr], None),
                       item_ids=items)
        for attr, fname in SPLIT_FILES.items()
    }
    seed_file = data / "seed.txt"
    seed = int(seed_file.read_text().strip()) if seed_file.exists() else 0
    return SplitDataset(seed=seed, **matrices)
