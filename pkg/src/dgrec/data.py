"""Datasets: TSV parsing/writing, publicized subsets, splits, synthetic data.

Ids are interned: users, items and tags are strings on disk and dense
integers (sorted-name order) in memory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    users: list[str]
    items: list[str]
    tags: list[str]
    interactions: list[tuple[int, int]]
    user_edges: list[tuple[int, int]]
    item_tags: dict[int, frozenset]
    publicized: dict[int, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        self.interactions = sorted(set(self.interactions))
        self.user_edges = sorted({(min(a, b), max(a, b)) for a, b in self.user_edges})
        by_user = self.items_by_user()
        for u, pub in self.publicized.items():
            if not set(pub) <= set(by_user.get(u, ())):
                raise DataError(f"user {self.users[u]!r} publicizes items it never interacted with")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def items_by_user(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {u: [] for u in range(self.n_users)}
        for u, i in self.interactions:
            out[u].append(i)
        return out

    @property
    def sparsity(self) -> float:
        return 1.0 - len(self.interactions) / (self.n_users * self.n_items)

    def summary(self) -> dict:
        return {
            "users": self.n_users,
            "items": self.n_items,
            "tags": len(self.tags),
            "interactions": len(self.interactions),
            "user_edges": len(self.user_edges),
            "sparsity": self.sparsity,
        }


def _read_pairs(path: Path) -> list[tuple[str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected two tab-separated fields, got {line!r}")
            rows.append((parts[0], parts[1]))
    return rows


def parse_tsv(directory) -> Dataset:
    """Load ``edges.tsv``, ``interactions.tsv``, ``item_tags.tsv`` and the
    optional ``publicized.tsv`` from ``directory``."""
    d = Path(directory)
    for name in ("edges.tsv", "interactions.tsv", "item_tags.tsv"):
        if not (d / name).is_file():
            raise DataError(f"missing {d / name}")
    inter = sorted(set(_read_pairs(d / "interactions.tsv")))
    if not inter:
        raise DataError(f"{d / 'interactions.tsv'}: no interactions, nothing to train on")
    edges = _read_pairs(d / "edges.tsv")
    tag_rows = sorted(set(_read_pairs(d / "item_tags.tsv")))

    users = sorted({u for u, _ in inter})
    items = sorted({i for _, i in inter} | {i for i, _ in tag_rows})
    tags = sorted({t for _, t in tag_rows})
    uid = {u: k for k, u in enumerate(users)}
    iid = {i: k for k, i in enumerate(items)}
    tid = {t: k for k, t in enumerate(tags)}

    user_edges = []
    for a, b in edges:
        for x in (a, b):
            if x not in uid:
                raise DataError(f"edges.tsv: user {x!r} has no interactions (dangling id)")
        if a == b:
            raise DataError(f"edges.tsv: self-loop on {a!r}")
        user_edges.append((uid[a], uid[b]))

    item_tags: dict[int, set] = {}
    for i, t in tag_rows:
        item_tags.setdefault(iid[i], set()).add(tid[t])

    publicized: dict[int, set] = {}
    pub_path = d / "publicized.tsv"
    if pub_path.is_file():
        known = set(inter)
        for u, i in _read_pairs(pub_path):
            if (u, i) not in known:
                raise DataError(f"publicized.tsv: ({u!r}, {i!r}) is not an interaction (dangling id)")
            publicized.setdefault(uid[u], set()).add(iid[i])

    return Dataset(
        users=users,
        items=items,
        tags=tags,
        interactions=[(uid[u], iid[i]) for u, i in inter],
        user_edges=user_edges,
        item_tags={i: frozenset(ts) for i, ts in item_tags.items()},
        publicized={u: frozenset(s) for u, s in publicized.items()},
    )


def write_tsv(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    U, I, T = ds.users, ds.items, ds.tags
    with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
        fh.write("# user\tuser\n")
        for a, b in ds.user_edges:
            fh.write(f"{U[a]}\t{U[b]}\n")
    with open(d / "interactions.tsv", "w", encoding="utf-8") as fh:
        fh.write("# user\titem\n")
        for u, i in ds.interactions:
            fh.write(f"{U[u]}\t{I[i]}\n")
    with open(d / "item_tags.tsv", "w", encoding="utf-8") as fh:
        fh.write("# item\ttag\n")
        for i in sorted(ds.item_tags):
            for t in sorted(ds.item_tags[i]):
                fh.write(f"{I[i]}\t{T[t]}\n")
    if ds.publicized:
        with open(d / "publicized.tsv", "w", encoding="utf-8") as fh:
            fh.write("# user\titem\n")
            for u in sorted(ds.publicized):
                for i in sorted(ds.publicized[u]):
                    fh.write(f"{U[u]}\t{I[i]}\n")


def apply_publicized_ratio(ds: Dataset, ratio: float, rng: np.random.Generator) -> Dataset:
    """Mark floor(ratio * |I_u|) of each user's interactions as public."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    pub = {}
    for u, items in ds.items_by_user().items():
        k = math.floor(ratio * len(items))
        chosen = rng.choice(len(items), size=k, replace=False) if k else []
        pub[u] = frozenset(items[j] for j in chosen)
    return Dataset(ds.users, ds.items, ds.tags, ds.interactions, ds.user_edges, ds.item_tags, pub)


def filter_min_interactions(ds: Dataset, min_count: int) -> Dataset:
    """Iteratively drop users and items with fewer than ``min_count`` interactions."""
    inter = set(ds.interactions)
    while True:
        uc: dict[int, int] = {}
        ic: dict[int, int] = {}
        for u, i in inter:
            uc[u] = uc.get(u, 0) + 1
            ic[i] = ic.get(i, 0) + 1
        keep = {(u, i) for u, i in inter if uc[u] >= min_count and ic[i] >= min_count}
        if keep == inter:
            break
        inter = keep
    users = sorted({u for u, _ in inter})
    items = sorted({i for _, i in inter})
    umap = {u: k for k, u in enumerate(users)}
    imap = {i: k for k, i in enumerate(items)}
    return Dataset(
        users=[ds.users[u] for u in users],
        items=[ds.items[i] for i in items],
        tags=ds.tags,
        interactions=[(umap[u], imap[i]) for u, i in inter],
        user_edges=[(umap[a], umap[b]) for a, b in ds.user_edges if a in umap and b in umap],
        item_tags={imap[i]: ts for i, ts in ds.item_tags.items() if i in imap},
        publicized={
            umap[u]: frozenset(imap[i] for i in s if (u, i) in inter) for u, s in ds.publicized.items() if u in umap
        },
    )


@dataclass
class SplitDataset:
    train: dict[int, list[int]]
    validation: dict[int, list[int]]
    test: dict[int, list[int]]
    seed: int | None = None

    def train_pool(self, u) -> list[int]:
        return sorted(self.train[u] + self.validation[u])


def split(ds: Dataset, rng: np.random.Generator, train_frac: float = 0.8, val_frac: float = 0.1, seed=None) -> SplitDataset:
    """Per-user random 80/20 train/test, then 10% of train held out for validation.

    Train-pool size is ``floor(train_frac * n)`` (at least one test item);
    validation size is ``round(val_frac * pool)`` with halves rounded up.
    Users with a single interaction keep it in train.
    """
    train, val, test = {}, {}, {}
    for u, items in ds.items_by_user().items():
        items = sorted(items)
        n = len(items)
        if n < 2:
            if n:
                log.warning("user %r has %d interaction(s); all kept for training", ds.users[u], n)
            train[u], val[u], test[u] = items, [], []
            continue
        order = rng.permutation(n)
        pool_n = min(math.floor(train_frac * n), n - 1)
        n_val = math.floor(val_frac * pool_n + 0.5)
        if pool_n - n_val < 1:
            n_val = 0
        shuffled = [items[k] for k in order]
        pool, test[u] = shuffled[:pool_n], sorted(shuffled[pool_n:])
        val[u] = sorted(pool[:n_val])
        train[u] = sorted(pool[n_val:])
    return SplitDataset(train, val, test, seed)


def synth_generate(
    n_users: int,
    n_items: int,
    n_tags: int,
    interactions_per_user: int,
    edges_per_user: int,
    clusters: int,
    rng: np.random.Generator,
    purity: float = 0.9,
    edge_purity: float = 0.9,
    tags_per_item: int = 2,
    popularity_skew: float = 1.0,
) -> Dataset:
    """Cluster-structured synthetic dataset.

    Users, items and tags are split round-robin into ``clusters`` groups.
    A user draws a ``purity`` fraction of its interactions from its own
    cluster's items (Zipf-like popularity with exponent ``popularity_skew``)
    and the rest uniformly from other clusters; user edges stay inside the
    cluster with probability ``edge_purity``; items carry tags of their own
    cluster.
    """
    for name, val in (("n_users", n_users), ("n_items", n_items), ("n_tags", n_tags), ("clusters", clusters)):
        if val < 1:
            raise ValueError(f"{name} must be positive")
    if interactions_per_user < 1 or interactions_per_user > n_items:
        raise ValueError("interactions_per_user must lie in [1, n_items]")

    ucl = np.arange(n_users) % clusters
    icl = np.arange(n_items) % clusters
    tcl = np.arange(n_tags) % clusters
    items_of = [np.flatnonzero(icl == c) for c in range(clusters)]
    tags_of = [np.flatnonzero(tcl == c) for c in range(clusters)]

    # popularity rank inside each cluster is a fixed random permutation
    weight = np.empty(n_items)
    for c in range(clusters):
        ranks = rng.permutation(len(items_of[c])) + 1
        weight[items_of[c]] = ranks ** (-popularity_skew)

    interactions = []
    for u in range(n_users):
        if clusters == 1:
            p = np.full(n_items, 1.0 / n_items)
        else:
            own = icl == ucl[u]
            p = np.where(own, purity * weight / weight[own].sum(), (1 - purity) / (~own).sum())
        chosen = rng.choice(n_items, size=interactions_per_user, replace=False, p=p)
        interactions += [(u, int(i)) for i in chosen]

    edges = set()
    for u in range(n_users):
        same = np.flatnonzero((ucl == ucl[u]) & (np.arange(n_users) != u))
        other = np.flatnonzero(ucl != ucl[u])
        for _ in range(edges_per_user):
            pool = same if (rng.random() < edge_purity or other.size == 0) else other
            if pool.size == 0:
                continue
            v = int(rng.choice(pool))
            edges.add((min(u, v), max(u, v)))

    item_tags = {}
    for i in range(n_items):
        pool = tags_of[icl[i]] if tags_of[icl[i]].size else np.arange(n_tags)
        k = min(tags_per_item, pool.size)
        item_tags[i] = frozenset(int(t) for t in rng.choice(pool, size=k, replace=False))

    width = lambda n: len(str(max(n - 1, 0)))  # noqa: E731
    return Dataset(
        users=[f"u{k:0{width(n_users)}d}" for k in range(n_users)],
        items=[f"i{k:0{width(n_items)}d}" for k in range(n_items)],
        tags=[f"t{k:0{width(n_tags)}d}" for k in range(n_tags)],
        interactions=interactions,
        user_edges=sorted(edges),
        item_tags=item_tags,
        publicized={},
    )


def cluster_of(ds: Dataset, clusters: int) -> tuple[np.ndarray, np.ndarray]:
    """Cluster labels of users and items for a dataset from :func:`synth_generate`."""
    return np.arange(ds.n_users) % clusters, np.arange(ds.n_items) % clusters
