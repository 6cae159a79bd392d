"""Decentralized training: neighbourhood sampling, gossip propagation, SGD.

One training round, started by an initiator ``u``:

1. sample an H-hop neighbourhood around ``u``, favouring neighbours with high
   recent loss and few past rounds;
2. every participant computes its local gradient on its own model;
3. gradients are 1-bit encoded and flooded through the sampled subgraph for
   2H synchronous rounds over an in-process message bus;
4. every participant decodes what it collected and takes one SGD step.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .graphs import InterUserGraph, ItemHypergraph
from .model import Batch, LocalModel, loss_and_gradient
from .privacy import HEADER, LdpConfig, PrivacyAccountant, clip, decode, encode, laplace_share

log = logging.getLogger(__name__)

PRIOR_LOSS = math.log(2.0)

# substream purposes
SAMPLE, NEGATIVES, ENCODE, LAPLACE, INIT, EVAL = range(6)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


class ProtocolError(RuntimeError):
    pass


@dataclass
class SampledNeighborhood:
    initiator: int
    sampled: dict = field(default_factory=dict)  # user -> set of users

    @property
    def participants(self) -> list:
        users = sorted(v for v, ws in self.sampled.items() if ws)
        return users or [self.initiator]

    def neighbors(self, user) -> list:
        return sorted(self.sampled.get(user, ()))

    def add_edge(self, v, w) -> None:
        self.sampled.setdefault(v, set()).add(w)
        self.sampled.setdefault(w, set()).add(v)

    @classmethod
    def from_edges(cls, initiator, edges) -> "SampledNeighborhood":
        nb = cls(initiator)
        for v, w in edges:
            nb.add_edge(v, w)
        return nb


@dataclass
class UserData:
    """What a user holds locally: hypergraph, its adjacency, training items."""

    hypergraph: ItemHypergraph
    adj: np.ndarray | None
    train_items: np.ndarray
    negative_pool: np.ndarray


@dataclass
class TrainingState:
    models: dict
    users: dict  # user -> UserData
    seed: int = 0
    last_loss: dict = field(default_factory=dict)
    train_count: dict = field(default_factory=lambda: defaultdict(int))
    round: int = 0
    prior_loss: float = PRIOR_LOSS

    def loss_of(self, v) -> float:
        return self.last_loss.get(v, self.prior_loss)


@dataclass(frozen=True)
class ProtocolConfig:
    H: int = 4
    n_u: int = 3
    lr: float = 0.01
    sharing: str = "secure"  # secure | laplace | plain
    laplace_scale: float = 0.1
    reclip_decoded: bool = False
    d_r: int = 64
    workers: int = 1

    def __post_init__(self):
        if self.H < 1 or self.n_u < 1:
            raise ValueError("H and n_u must be >= 1")
        if self.sharing not in ("secure", "laplace", "plain"):
            raise ValueError(f"unknown sharing mode {self.sharing!r}")


def sample_probabilities(neighbors) -> np.ndarray:
    """Sampling weights loss / (ln(cnt + 1) + 1), normalized.

    ``neighbors`` is a sequence of ``(loss, count)`` pairs. All-zero weights
    fall back to uniform.
    """
    arr = np.asarray(neighbors, dtype=np.float64).reshape(-1, 2)
    loss, cnt = arr[:, 0], arr[:, 1]
    if (loss < 0).any():
        raise ValueError("losses must be non-negative")
    w = loss / (np.log(cnt + 1.0) + 1.0)
    total = w.sum()
    if total <= 0:
        log.warning("all sampling weights are zero; using uniform probabilities")
        return np.full(len(w), 1.0 / len(w))
    return w / total


def _draw(nbrs, probs, k, rng) -> list:
    if k >= len(nbrs):
        return list(nbrs)
    nonzero = int((probs > 0).sum())
    if nonzero >= k:
        idx = rng.choice(len(nbrs), size=k, replace=False, p=probs)
        return [nbrs[i] for i in idx]
    # not enough positive-weight neighbours: take them all, fill uniformly
    keep = [nbrs[i] for i in np.flatnonzero(probs > 0)]
    rest = [nbrs[i] for i in np.flatnonzero(probs == 0)]
    fill = rng.choice(len(rest), size=k - len(keep), replace=False)
    return keep + [rest[i] for i in fill]


def neighbor_sampling(graph: InterUserGraph, state: TrainingState, u, H: int, n_u: int, rng) -> SampledNeighborhood:
    """Breadth-first, loss-weighted sampling of an H-hop training neighbourhood."""
    if u not in graph:
        raise ProtocolError(f"initiator {u!r} not in the user graph")
    if H < 1 or n_u < 1:
        raise ValueError("H and n_u must be >= 1")
    nb = SampledNeighborhood(u)
    q = deque([u])
    for _ in range(H):
        for _ in range(len(q)):
            v = q.popleft()
            nbrs = graph.neighbors(v)
            if not nbrs:
                continue
            probs = sample_probabilities([(state.loss_of(w), state.train_count[w]) for w in nbrs])
            for w in _draw(nbrs, probs, n_u, rng):
                q.append(w)
                nb.add_edge(v, w)
    if not nb.sampled:
        log.warning("user %r is isolated; round degenerates to local training", u)
    return nb


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    nbytes: int
    round: int
    payload_bits: int


@dataclass(frozen=True, eq=False)
class RealGradient:
    """Uncompressed gradient on the wire (d_r bits per coordinate)."""

    values: np.ndarray
    origin: int
    round: int = 0
    d_r: int = 64

    @property
    def n_s(self) -> int:
        return self.values.shape[0]

    @property
    def payload_bits(self) -> int:
        return self.n_s * self.d_r

    @property
    def wire_size(self) -> int:
        return HEADER.size + (self.payload_bits + 7) // 8


def _payload_bits(item) -> int:
    return getattr(item, "payload_bits", item.n_s)


class CostMeter:
    """Per-user communication counters fed by the message bus."""

    def __init__(self, scheme: str = "dgrec", d_r: int = 64):
        self.scheme = scheme
        self.d_r = d_r
        self.bits_sent = defaultdict(int)
        self.payload_bits_sent = defaultdict(int)

    def add(self, msg: Message) -> None:
        self.bits_sent[msg.sender] += 8 * msg.nbytes
        self.payload_bits_sent[msg.sender] += msg.payload_bits

    @property
    def total_bits(self) -> int:
        return sum(self.bits_sent.values())

    @property
    def total_payload_bits(self) -> int:
        return sum(self.payload_bits_sent.values())


class MessageBus:
    """Records every simulated send; optionally feeds a :class:`CostMeter`."""

    def __init__(self, meter: CostMeter | None = None):
        self.meter = meter
        self.trace: list[Message] = []

    def send(self, sender, receiver, items, round_id: int) -> None:
        nbytes = sum(it.wire_size for it in items)
        msg = Message(sender, receiver, nbytes, round_id, sum(_payload_bits(it) for it in items))
        self.trace.append(msg)
        if self.meter is not None:
            self.meter.add(msg)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "sender", "receiver", "bytes", "payload_bits"])
            for m in self.trace:
                w.writerow([m.round, m.sender, m.receiver, m.nbytes, m.payload_bits])

    @property
    def total_bytes(self) -> int:
        return sum(m.nbytes for m in self.trace)


def propagate(encoded: Mapping, nbhd: SampledNeighborhood, H: int, bus: MessageBus | None = None, round_id: int = 0) -> dict:
    """Flood encodings through the sampled subgraph for 2H synchronous rounds.

    In every round each participant sends its current collection to each of
    its sampled neighbours inside the participant set; receivers merge after
    the barrier, deduplicating by origin. Returns participant -> tuple of
    encodings sorted by origin.
    """
    U = nbhd.participants
    missing = [u for u in U if u not in encoded]
    if missing:
        raise ProtocolError(f"no encoding supplied for participant(s) {missing}")
    members = set(U)
    held = {u: {encoded[u].origin: encoded[u]} for u in U}
    links = {u: [v for v in nbhd.neighbors(u) if v in members] for u in U}
    for step in range(2 * H):
        incoming = {u: {} for u in U}
        for u in U:
            outgoing = [held[u][o] for o in sorted(held[u])]
            for v in links[u]:
                if bus is not None:
                    bus.send(u, v, outgoing, round_id * 2 * H + step)
                incoming[v].update(held[u])
        for u in U:
            held[u].update(incoming[u])
    return {u: tuple(held[u][o] for o in sorted(held[u])) for u in U}


def geometric_count(H: int, n_u: int) -> int:
    """(1 - n_u^H) / (1 - n_u), equal to H when n_u == 1."""
    if H < 1 or n_u < 1:
        raise ValueError("H and n_u must be >= 1")
    if n_u == 1:
        return H
    return (n_u**H - 1) // (n_u - 1)


def communication_cost(scheme: str, H: int, n_u: int, n_s: int, d_r: int = 64) -> int:
    """Worst-case per-user bits per training round for each sharing scheme."""
    s = geometric_count(H, n_u)
    if scheme == "dgrec":
        return 2 * H * n_s * s
    if scheme in ("federated", "decentralized"):
        return d_r * n_s * s
    raise ValueError(f"unknown scheme {scheme!r}")


def sample_batch(user: UserData, rng: np.random.Generator) -> Batch:
    """Every training positive paired with one uniformly drawn unobserved item."""
    pos = np.asarray(user.train_items, dtype=np.int64)
    neg = rng.choice(user.negative_pool, size=len(pos), replace=True)
    return Batch(pos, neg)


@dataclass
class RoundReport:
    round: int
    initiator: int
    participants: list
    losses: dict
    bpr: dict


def _local_step(state: TrainingState, v):
    data = state.users[v]
    batch = sample_batch(data, substream(state.seed, NEGATIVES, v, state.round))
    return loss_and_gradient(state.models[v], data.hypergraph, batch, data.adj)


def training_round(
    state: TrainingState,
    graph: InterUserGraph,
    initiator,
    hp: ProtocolConfig,
    ldp: LdpConfig,
    accountant: PrivacyAccountant | None = None,
    bus: MessageBus | None = None,
) -> RoundReport:
    """Run one sample / compute / share / update round in place."""
    rnd = state.round
    nbhd = neighbor_sampling(graph, state, initiator, hp.H, hp.n_u, substream(state.seed, SAMPLE, rnd))
    U = nbhd.participants

    if hp.workers > 1 and len(U) > 1:
        with ThreadPoolExecutor(hp.workers) as pool:
            results = list(pool.map(lambda v: _local_step(state, v), U))
    else:
        results = [_local_step(state, v) for v in U]
    losses = {v: r[0] for v, r in zip(U, results)}
    grads = {v: r[1] for v, r in zip(U, results)}

    if len(U) == 1 and not nbhd.sampled:
        updates = {U[0]: grads[U[0]]}
    elif hp.sharing == "secure":
        enc = {v: encode(grads[v], ldp, substream(state.seed, ENCODE, v, rnd), v, rnd) for v in U}
        got = propagate(enc, nbhd, hp.H, bus, rnd)
        updates = {v: decode(got[v], ldp) for v in U}
        if accountant is not None:
            accountant.record(U)
    else:
        if hp.sharing == "laplace":
            shared = {
                v: laplace_share(grads[v], ldp, hp.laplace_scale, substream(state.seed, LAPLACE, v, rnd)) for v in U
            }
        else:
            shared = {v: clip(grads[v], ldp.delta) for v in U}
        msgs = {v: RealGradient(shared[v], v, rnd, hp.d_r) for v in U}
        got = propagate(msgs, nbhd, hp.H, bus, rnd)
        updates = {v: np.mean([m.values for m in got[v]], axis=0) for v in U}

    for v in U:
        step = updates[v]
        if hp.reclip_decoded:
            step = clip(step, ldp.delta)
        state.models[v].theta -= hp.lr * step
        state.last_loss[v] = losses[v].total
        state.train_count[v] += 1
    state.round += 1
    return RoundReport(
        rnd,
        initiator,
        U,
        {v: losses[v].total for v in U},
        {v: losses[v].bpr for v in U},
    )


def init_models(users, config, seed: int) -> dict:
    """Identical initial parameters for every user (one shared draw)."""
    base = LocalModel.init(config, substream(seed, INIT))
    return {u: base.copy() for u in users}
