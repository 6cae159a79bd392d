"""Per-user preference model on an item hypergraph.

Pipeline for one user::

    hypergraph conv  ->  soft assignment to interests  ->  condensed interest
    graph  ->  interest attention  ->  user vector  ->  MLP(user || item)

Losses are pairwise BPR, a Pearson decorrelation penalty on the interest
embeddings and an L2 term. Gradients are accumulated by hand in reverse
order through the fixed graph; ``tests/test_model_gradients.py`` checks them
against central finite differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, softmax

from .graphs import ItemHypergraph, normalized_adjacency


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class ZeroVarianceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_items: int
    d: int = 16
    d_i: int = 8
    n_i: int = 4
    h: int | None = None  # MLP hidden width; defaults to d
    lam: float = 1e-3
    squared_l2: bool = False
    eps_var: float = 1e-8
    init_scale: float = 0.1
    use_item_graph: bool = True
    use_attention: bool = True
    use_pearson: bool = True

    @property
    def hidden(self) -> int:
        return self.d if self.h is None else self.h

    @property
    def user_dim(self) -> int:
        # without the item graph the user vector is a mean item embedding
        return self.d_i if self.use_item_graph else self.d

    def block_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        d, di, ni, h = self.d, self.d_i, self.n_i, self.hidden
        return [
            ("E", (self.n_items, d)),
            ("W1", (d, di)),
            ("W2", (d, ni)),
            ("W3", (di, 1)),
            ("W4", (di, 1)),
            ("W5", (di, 1)),
            ("M1", (self.user_dim + d, h)),
            ("b1", (h,)),
            ("M2", (h, 1)),
            ("b2", (1,)),
        ]

    def layout(self) -> dict[str, tuple[slice, tuple[int, ...]]]:
        out, start = {}, 0
        for name, shape in self.block_shapes():
            size = int(np.prod(shape))
            out[name] = (slice(start, start + size), shape)
            start += size
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.block_shapes())


class LocalModel:
    """Parameters of one user's model, stored as a single flat float64 vector.

    Named blocks (``model.E``, ``model.W1`` ...) are writable views into
    ``theta``.
    """

    def __init__(self, config: ModelConfig, theta: np.ndarray | None = None):
        self.config = config
        self._layout = config.layout()
        if theta is None:
            theta = np.zeros(config.n_params)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (config.n_params,):
            raise ShapeError(f"flat vector has shape {theta.shape}, expected ({config.n_params},)")
        self.theta = theta

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "LocalModel":
        s = config.init_scale
        return cls(config, rng.uniform(-s, s, size=config.n_params))

    def block(self, name: str) -> np.ndarray:
        sl, shape = self._layout[name]
        return self.theta[sl].reshape(shape)

    def __getattr__(self, name):
        layout = self.__dict__.get("_layout")
        if layout is not None and name in layout:
            return self.block(name)
        raise AttributeError(name)

    def flatten(self) -> np.ndarray:
        return self.theta.copy()

    @classmethod
    def unflatten(cls, config: ModelConfig, vec: np.ndarray) -> "LocalModel":
        return cls(config, vec)

    def copy(self) -> "LocalModel":
        return LocalModel(self.config, self.theta.copy())

    def mlp(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.M1, self.b1, self.M2, self.b2

    def block_mask(self, names) -> np.ndarray:
        mask = np.zeros(self.config.n_params, dtype=bool)
        for n in names:
            mask[self._layout[n][0]] = True
        return mask

    def row_mask(self, items) -> np.ndarray:
        """Mask selecting rows ``items`` of the embedding table."""
        mask = np.zeros(self.config.n_params, dtype=bool)
        d = self.config.d
        start = self._layout["E"][0].start
        for i in items:
            mask[start + i * d : start + (i + 1) * d] = True
        return mask

    def __repr__(self) -> str:
        return f"LocalModel(n_params={self.config.n_params}, config={self.config})"


@dataclass
class CondensedInterestGraph:
    interest_embeddings: np.ndarray
    interest_adjacency: np.ndarray
    assignment: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    bpr: float
    pearson: float
    l2: float
    total: float


@dataclass(frozen=True)
class Batch:
    """Aligned (positive, negative) global item ids for one user."""

    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=np.int64)
        neg = np.asarray(self.neg, dtype=np.int64)
        if pos.shape != neg.shape or pos.ndim != 1:
            raise ShapeError(f"pos/neg must be aligned 1-d arrays, got {pos.shape} and {neg.shape}")
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)

    def __len__(self) -> int:
        return len(self.pos)


def _check(name, arr, shape):
    if arr.shape != tuple(shape):
        raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")


def aggregate_and_assign(adj, E_u, W1, W2):
    """Hypergraph convolution to interest features and soft assignment.

    Returns ``(E', S)`` with ``E' = adj E_u W1`` and ``S`` the row-softmax of
    ``adj E_u W2``.
    """
    adj, E_u = np.asarray(adj), np.asarray(E_u)
    m = adj.shape[0]
    _check("adjacency", adj, (m, m))
    _check("E_u", E_u, (m, W1.shape[0]))
    _check("W2", W2, (W1.shape[0], W2.shape[1]))
    ax = adj @ E_u
    return ax @ W1, softmax(ax @ W2, axis=1)


def condense(S, E_prime, adj) -> CondensedInterestGraph:
    """Pool item features and adjacency into the interest graph (S^T E', S^T adj S)."""
    m, n = S.shape
    _check("E'", E_prime, (m, E_prime.shape[1]))
    _check("adjacency", adj, (m, m))
    return CondensedInterestGraph(S.T @ E_prime, S.T @ adj @ S, S)


def _pearson_normalize(Ev, eps_var):
    centered = Ev - Ev.mean(axis=1, keepdims=True)
    var = (centered**2).mean(axis=1)
    floored = var < eps_var
    if floored.any():
        warnings.warn(
            f"{int(floored.sum())} interest row(s) with variance below {eps_var:g}; floored",
            ZeroVarianceWarning,
            stacklevel=3,
        )
    norm = np.sqrt(Ev.shape[1] * np.maximum(var, eps_var))
    return centered / norm[:, None], norm, floored


def pearson_loss(Ev, eps_var: float = 1e-8) -> float:
    """Mean pairwise Pearson correlation between interest rows, diagonal included."""
    Ev = np.asarray(Ev, dtype=np.float64)
    n = Ev.shape[0]
    u, _, _ = _pearson_normalize(Ev, eps_var)
    total = u.sum(axis=0)
    return float(total @ total) / n**2


def _pearson_grad(Ev, eps_var):
    n = Ev.shape[0]
    u, norm, floored = _pearson_normalize(Ev, eps_var)
    g_u = np.broadcast_to(2.0 / n**2 * u.sum(axis=0), u.shape)
    radial = np.where(floored, 0.0, (g_u * u).sum(axis=1))
    g_c = (g_u - radial[:, None] * u) / norm[:, None]
    return g_c - g_c.mean(axis=1, keepdims=True)


def _attention_logits(Ev, Av, W3, W4, W5, use_graph=True):
    q3 = (Ev @ W3).ravel()
    if not use_graph:
        return q3, None
    off = Av * (1.0 - np.eye(Av.shape[0]))
    q4 = (Ev @ W4).ravel()
    q5 = (Ev @ W5).ravel()
    return q3 + off.sum(axis=1) * q4 - off @ q5, (off, q4, q5)


def interest_attention(cg: CondensedInterestGraph, W3, W4, W5, use_graph: bool = True) -> np.ndarray:
    """Pool interests into the user vector with graph-aware attention.

    An interest's logit is ``E_i W3 + sum_j A(i,j) (E_i W4 - E_j W5)`` over
    its neighbours j != i. ``use_graph=False`` keeps only ``E_i W3``.
    """
    Ev, Av = cg.interest_embeddings, cg.interest_adjacency
    n, di = Ev.shape
    _check("interest adjacency", Av, (n, n))
    for name, w in (("W3", W3), ("W4", W4), ("W5", W5)):
        _check(name, w, (di, 1))
    logits, _ = _attention_logits(Ev, Av, W3, W4, W5, use_graph)
    return softmax(logits) @ Ev


def _mlp_forward(X, M1, b1, M2, b2):
    pre = X @ M1 + b1
    hidden = np.maximum(pre, 0.0)
    return (hidden @ M2).ravel() + b2[0], pre, hidden


def predict(e_u, e_i, mlp) -> float:
    """MLP score for the concatenation ``e_u || e_i``."""
    M1, b1, M2, b2 = mlp
    x = np.concatenate([np.ravel(e_u), np.ravel(e_i)])
    if x.shape[0] != M1.shape[0]:
        raise ShapeError(f"mlp input: expected {M1.shape[0]} features, got {x.shape[0]}")
    y, _, _ = _mlp_forward(x[None, :], M1, b1, M2, b2)
    return float(y[0])


def bpr_loss(pos_scores, neg_scores, n_pos: int | None = None) -> float:
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ShapeError(f"pos/neg score shapes differ: {pos.shape} vs {neg.shape}")
    n_pos = len(pos) if n_pos is None else n_pos
    if n_pos <= 0 or len(pos) == 0:
        raise ValueError("no positive interactions: user has no training signal")
    # -ln sigmoid(x) == log(1 + exp(-x))
    return float(np.logaddexp(0.0, -(pos - neg)).sum() / n_pos)


def l2_term(theta, lam: float, squared: bool = False) -> float:
    sq = float(theta @ theta)
    return lam * (sq if squared else np.sqrt(sq))


def local_loss(bpr: float, pearson: float, lam: float, theta, squared: bool = False) -> LossBreakdown:
    if lam < 0:
        raise ValueError("lam must be >= 0")
    l2 = l2_term(np.ravel(theta), lam, squared)
    return LossBreakdown(bpr, pearson, l2, bpr + pearson + l2)


# --- full pipeline -----------------------------------------------------------


@dataclass
class ForwardCache:
    rows: np.ndarray  # global ids of hypergraph items
    adj: np.ndarray | None
    eu: np.ndarray
    scored: np.ndarray  # global ids, positives then negatives
    X: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    diff: np.ndarray
    active: np.ndarray
    graph: dict = field(default_factory=dict)


def active_mask(model: LocalModel, hg: ItemHypergraph, batch: Batch) -> np.ndarray:
    """Parameters that the loss for this (hypergraph, batch) actually touches."""
    cfg = model.config
    blocks = ["M1", "b1", "M2", "b2"]
    if cfg.use_item_graph:
        blocks += ["W1", "W2", "W3"]
        if cfg.use_attention:
            blocks += ["W4", "W5"]
        rows = set(hg.items)
    else:
        rows = set(hg.own_items)
    rows.update(batch.pos.tolist())
    rows.update(batch.neg.tolist())
    return model.block_mask(blocks) | model.row_mask(sorted(rows))


def _user_vector(model: LocalModel, hg: ItemHypergraph, adj):
    cfg = model.config
    if not cfg.use_item_graph:
        own = np.asarray(hg.own_items, dtype=np.int64)
        if own.size == 0:
            raise ValueError(f"user {hg.owner!r} has no own items to average")
        return model.E[own].mean(axis=0), {"own": own}, 0.0
    rows = np.asarray(hg.items, dtype=np.int64)
    E_u = model.E[rows]
    ax = adj @ E_u
    E1 = ax @ model.W1
    S = softmax(ax @ model.W2, axis=1)
    Ev = S.T @ E1
    Av = S.T @ adj @ S
    pear = pearson_loss(Ev, cfg.eps_var) if cfg.use_pearson else 0.0
    logits, extra = _attention_logits(Ev, Av, model.W3, model.W4, model.W5, cfg.use_attention)
    a = softmax(logits)
    g = dict(ax=ax, E1=E1, S=S, Ev=Ev, Av=Av, a=a, extra=extra)
    return a @ Ev, g, pear


def user_embedding(model: LocalModel, hg: ItemHypergraph, adj=None) -> np.ndarray:
    if adj is None and model.config.use_item_graph:
        adj = normalized_adjacency(hg)
    eu, _, _ = _user_vector(model, hg, adj)
    return eu


def score_items(model: LocalModel, eu: np.ndarray, items) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    X = np.hstack([np.broadcast_to(eu, (len(items), eu.shape[0])), model.E[items]])
    y, _, _ = _mlp_forward(X, *model.mlp())
    return y


def forward(model: LocalModel, hg: ItemHypergraph, batch: Batch, adj=None):
    """Run the full pipeline; returns ``(LossBreakdown, ForwardCache)``."""
    cfg = model.config
    n_items = cfg.n_items
    if len(batch) == 0:
        raise ValueError(f"user {hg.owner!r}: empty batch, no training signal")
    for ids in (batch.pos, batch.neg):
        if ids.min() < 0 or ids.max() >= n_items:
            raise ValueError("batch item outside the model's item vocabulary")
    if cfg.use_item_graph and adj is None:
        adj = normalized_adjacency(hg)

    eu, g, pear = _user_vector(model, hg, adj)
    scored = np.concatenate([batch.pos, batch.neg])
    X = np.hstack([np.broadcast_to(eu, (len(scored), eu.shape[0])), model.E[scored]])
    y, pre, hidden = _mlp_forward(X, *model.mlp())
    k = len(batch)
    bpr = bpr_loss(y[:k], y[k:], k)

    act = active_mask(model, hg, batch)
    theta_act = model.theta[act]
    loss = local_loss(bpr, pear, cfg.lam, theta_act, cfg.squared_l2)
    cache = ForwardCache(
        rows=np.asarray(hg.items, dtype=np.int64),
        adj=adj,
        eu=eu,
        scored=scored,
        X=X,
        pre=pre,
        hidden=hidden,
        diff=y[:k] - y[k:],
        active=act,
        graph=g,
    )
    return loss, cache


def backward(model: LocalModel, cache: ForwardCache) -> np.ndarray:
    cfg = model.config
    grad = LocalModel(cfg)
    G = {name: grad.block(name) for name, _ in cfg.block_shapes()}
    k = len(cache.diff)

    # BPR -> scores
    d_diff = -expit(-cache.diff) / k
    d_y = np.concatenate([d_diff, -d_diff])

    # MLP
    M1, _, M2, _ = model.mlp()
    G["M2"][:] = cache.hidden.T @ d_y[:, None]
    G["b2"][:] = d_y.sum()
    d_pre = (d_y[:, None] * M2.T) * (cache.pre > 0)
    G["M1"][:] = cache.X.T @ d_pre
    G["b1"][:] = d_pre.sum(axis=0)
    d_X = d_pre @ M1.T
    ud = cfg.user_dim
    np.add.at(G["E"], cache.scored, d_X[:, ud:])
    d_eu = d_X[:, :ud].sum(axis=0)

    if not cfg.use_item_graph:
        own = cache.graph["own"]
        G["E"][own] += d_eu / len(own)
    else:
        _backward_graph(model, cache, G, d_eu)

    # regularizer over the active parameters only
    act = cache.active
    theta_act = model.theta[act]
    if cfg.squared_l2:
        grad.theta[act] += 2.0 * cfg.lam * theta_act
    else:
        nrm = np.sqrt(theta_act @ theta_act)
        if nrm > 0:
            grad.theta[act] += cfg.lam * theta_act / nrm

    for name, _ in cfg.block_shapes():
        if not np.isfinite(G[name]).all():
            raise NonFiniteGradientError(f"non-finite gradient in block {name}")
    return grad.theta


def _backward_graph(model, cache, G, d_eu):
    cfg = model.config
    g = cache.graph
    Ev, Av, S, E1, ax, a = g["Ev"], g["Av"], g["S"], g["E1"], g["ax"], g["a"]
    adj = cache.adj

    # e_u = a @ Ev
    d_Ev = np.outer(a, d_eu)
    d_a = Ev @ d_eu
    d_P = a * (d_a - a @ d_a)

    W3, W4, W5 = model.W3, model.W4, model.W5
    G["W3"][:] = Ev.T @ d_P[:, None]
    d_Ev += np.outer(d_P, W3.ravel())
    d_Av = np.zeros_like(Av)
    if g["extra"] is not None:
        off, q4, q5 = g["extra"]
        r = off.sum(axis=1)
        d_q4 = d_P * r
        d_r = d_P * q4
        d_q5 = -(off.T @ d_P)
        d_off = -np.outer(d_P, q5) + d_r[:, None]
        G["W4"][:] = Ev.T @ d_q4[:, None]
        G["W5"][:] = Ev.T @ d_q5[:, None]
        d_Ev += np.outer(d_q4, W4.ravel()) + np.outer(d_q5, W5.ravel())
        d_Av = d_off * (1.0 - np.eye(Av.shape[0]))

    if cfg.use_pearson:
        d_Ev += _pearson_grad(Ev, cfg.eps_var)

    # Ev = S^T E1 ; Av = S^T adj S
    d_S = E1 @ d_Ev.T + adj @ S @ d_Av.T + adj.T @ S @ d_Av
    d_E1 = S @ d_Ev
    d_Z = S * (d_S - (d_S * S).sum(axis=1, keepdims=True))

    G["W1"][:] = ax.T @ d_E1
    G["W2"][:] = ax.T @ d_Z
    d_ax = d_E1 @ model.W1.T + d_Z @ model.W2.T
    G["E"][cache.rows] += adj.T @ d_ax


def compute_local_gradients(model: LocalModel, hg: ItemHypergraph, batch: Batch, adj=None) -> np.ndarray:
    """Flat gradient of the local loss with respect to ``model.theta``."""
    _, cache = forward(model, hg, batch, adj)
    return backward(model, cache)


def loss_and_gradient(model: LocalModel, hg: ItemHypergraph, batch: Batch, adj=None):
    loss, cache = forward(model, hg, batch, adj)
    return loss, backward(model, cache)


def with_options(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)
