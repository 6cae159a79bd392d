"""User graph and per-user item hypergraphs.

The inter-user graph is the gossip backbone; each user additionally owns a
hypergraph whose nodes are items (their own plus their neighbours'
publicized items) and whose hyperedges are tags.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

import numpy as np
from scipy import sparse

# Hypergraphs with fewer items than this keep a dense incidence copy.
DENSE_THRESHOLD = 2048


class GraphError(ValueError):
    """Invalid graph input (self-loops, zero degrees, bad ids)."""


@dataclass(frozen=True)
class InterUserGraph:
    users: frozenset
    adjacency: Mapping[Hashable, tuple]

    def neighbors(self, user) -> tuple:
        try:
            return self.adjacency[user]
        except KeyError:
            raise GraphError(f"unknown user {user!r}") from None

    def degree(self, user) -> int:
        return len(self.neighbors(user))

    def edges(self) -> list[tuple]:
        out = []
        for u in sorted(self.users):
            for v in self.adjacency[u]:
                if u < v:
                    out.append((u, v))
        return out

    def __contains__(self, user) -> bool:
        return user in self.users

    def __len__(self) -> int:
        return len(self.users)


def build_inter_user_graph(edges: Iterable[tuple], users: Iterable | None = None) -> InterUserGraph:
    """Build a symmetric, loop-free user graph.

    ``users`` may list isolated users that appear in no edge. Duplicate and
    reversed edges collapse to one undirected edge.
    """
    nbrs: dict = {}
    for u in users or ():
        nbrs.setdefault(u, set())
    for pair in edges:
        u, v = pair
        if u == v:
            raise GraphError(f"self-loop edge {pair!r}")
        nbrs.setdefault(u, set()).add(v)
        nbrs.setdefault(v, set()).add(u)
    adjacency = {u: tuple(sorted(vs)) for u, vs in nbrs.items()}
    return InterUserGraph(users=frozenset(adjacency), adjacency=adjacency)


def self_tag(item: int) -> int:
    """Tag id reserved for the singleton hyperedge of a tagless item.

    Real tag ids are non-negative, so self-tags live on the negative axis.
    """
    return -1 - int(item)


@dataclass(frozen=True, eq=False)
class ItemHypergraph:
    owner: Hashable
    items: tuple
    tags: tuple
    incidence_csr: sparse.csr_matrix
    own_items: tuple = ()
    flagged_items: tuple = ()
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def incidence(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        return self.incidence_csr.toarray()

    @property
    def item_degrees(self) -> np.ndarray:
        return np.asarray(self.incidence_csr.sum(axis=1)).ravel()

    @property
    def tag_degrees(self) -> np.ndarray:
        return np.asarray(self.incidence_csr.sum(axis=0)).ravel()

    @property
    def n_items(self) -> int:
        return len(self.items)

    def index_of(self, item) -> int:
        return self.items.index(item)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ItemHypergraph):
            return NotImplemented
        return (
            self.owner == other.owner
            and self.items == other.items
            and self.tags == other.tags
            and self.own_items == other.own_items
            and np.array_equal(self.incidence, other.incidence)
        )


def hypergraph_from_incidence(owner, items, tags, incidence, own_items=()) -> ItemHypergraph:
    """Wrap an explicit 0/1 incidence matrix (rows=items, cols=tags)."""
    inc = np.asarray(incidence, dtype=np.float64)
    if inc.shape != (len(items), len(tags)):
        raise GraphError(f"incidence shape {inc.shape} != ({len(items)}, {len(tags)})")
    if not np.isin(inc, (0.0, 1.0)).all():
        raise GraphError("incidence entries must be 0 or 1")
    csr = sparse.csr_matrix(inc)
    dense = inc if len(items) < DENSE_THRESHOLD else None
    return ItemHypergraph(owner, tuple(items), tuple(tags), csr, tuple(own_items), (), dense)


def build_item_hypergraph(
    owner,
    own_items: Iterable,
    neighbor_public: Mapping | None,
    item_tags: Mapping,
) -> ItemHypergraph:
    """Hypergraph over the owner's items plus neighbours' public items.

    Items and tags are sorted by id. Columns are restricted to tags that
    occur on at least one node; a tagless item gets its own ``self_tag``
    hyperedge and is reported in ``flagged_items``.
    """
    own = sorted(set(own_items))
    pool = set(own)
    for pub in (neighbor_public or {}).values():
        pool.update(pub)
    items = tuple(sorted(pool))

    row_tags = []
    flagged = []
    for i in items:
        ts = set(item_tags.get(i, ()))
        if not ts:
            flagged.append(i)
            ts = {self_tag(i)}
        row_tags.append(ts)
    tags = tuple(sorted(set().union(*row_tags))) if row_tags else ()
    col = {t: k for k, t in enumerate(tags)}

    rows, cols = [], []
    for r, ts in enumerate(row_tags):
        for t in ts:
            rows.append(r)
            cols.append(col[t])
    data = np.ones(len(rows))
    csr = sparse.csr_matrix((data, (rows, cols)), shape=(len(items), len(tags)))
    csr.sort_indices()
    dense = csr.toarray() if len(items) < DENSE_THRESHOLD else None
    return ItemHypergraph(owner, items, tags, csr, tuple(own), tuple(flagged), dense)


def normalized_adjacency(h: ItemHypergraph) -> np.ndarray:
    """Dv^-1/2 A Dt^-1 A^T Dv^-1/2 as a dense item-by-item matrix."""
    dv = h.item_degrees
    dt = h.tag_degrees
    if (dv <= 0).any():
        bad = [h.items[k] for k in np.flatnonzero(dv <= 0)]
        raise GraphError(f"zero-degree item(s): {bad}")
    if (dt <= 0).any():
        bad = [h.tags[k] for k in np.flatnonzero(dt <= 0)]
        raise GraphError(f"zero-degree tag(s): {bad}")
    inc = h.incidence_csr
    left = sparse.diags(dv ** -0.5) @ inc
    adj = (left @ sparse.diags(1.0 / dt) @ left.T).toarray()
    # exact symmetry; the sparse product can differ in the last ulp
    return 0.5 * (adj + adj.T)
