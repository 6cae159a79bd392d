"""Experiment driver: config, dataset -> graphs -> training rounds -> reports."""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import Dataset, apply_publicized_ratio, filter_min_interactions, parse_tsv, split, synth_generate
from .graphs import build_inter_user_graph, build_item_hypergraph, normalized_adjacency
from .metrics import evaluate, random_scorer
from .model import ModelConfig, forward, score_items, user_embedding
from .privacy import LdpConfig, PrivacyAccountant
from .protocol import (
    EVAL,
    CostMeter,
    MessageBus,
    ProtocolConfig,
    TrainingState,
    UserData,
    communication_cost,
    init_models,
    sample_batch,
    substream,
    training_round,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

ABLATIONS = ("no_item_graph", "no_neighbor", "no_attention", "no_pearson", "laplace_sharing")

# dataset-level substreams, disjoint from the protocol's purposes
_SYNTH, _PUBLIC, _SPLIT, _RANDOM = 100, 101, 102, 103


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass
class ExperimentConfig:
    # data
    dataset: str | None = None
    n_users: int = 50
    n_items: int = 100
    n_tags: int = 10
    interactions_per_user: int = 20
    edges_per_user: int = 3
    clusters: int = 2
    purity: float = 0.9
    edge_purity: float = 0.9
    popularity_skew: float = 1.0
    publicized_ratio: float = 1.0
    min_interactions: int = 0
    # model
    d: int = 16
    d_i: int = 8
    n_i: int = 4
    h: int = 0  # 0 -> same as d
    lam: float = 1e-3
    squared_l2: bool = False
    init_scale: float = 0.1
    # training
    lr: float = 0.01
    rounds: int = 50
    H: int = 4
    n_u: int = 3
    workers: int = 1
    reclip_decoded: bool = False
    # privacy
    delta: float = 0.1
    beta: float = 1.0
    log_base: str = "e"
    gamma: float = 1e-5
    d_r: int = 64
    # evaluation
    eval_every: int = 1
    k: int = 20
    random_repeats: int = 10
    # ablations
    no_item_graph: bool = False
    no_neighbor: bool = False
    no_attention: bool = False
    no_pearson: bool = False
    laplace_sharing: bool = False
    laplace_scale: float = 0.1
    seed: int = 0

    SECTIONS = {
        "data": (
            "dataset n_users n_items n_tags interactions_per_user edges_per_user clusters purity "
            "edge_purity popularity_skew publicized_ratio min_interactions"
        ).split(),
        "model": "d d_i n_i h lam squared_l2 init_scale".split(),
        "train": "lr rounds H n_u workers reclip_decoded".split(),
        "privacy": "delta beta log_base gamma d_r".split(),
        "eval": "eval_every k random_repeats".split(),
        "ablation": list(ABLATIONS) + ["laplace_scale"],
    }

    def validate(self) -> "ExperimentConfig":
        problems = []
        positive = "n_users n_items n_tags interactions_per_user clusters d d_i n_i H n_u k workers eval_every random_repeats d_r".split()
        for name in positive:
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        for name in ("edges_per_user", "rounds", "min_interactions", "h"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0 (got {getattr(self, name)})")
        for name in ("lr", "delta", "beta", "init_scale"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0 (got {getattr(self, name)})")
        for name in ("lam", "laplace_scale", "popularity_skew"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0 (got {getattr(self, name)})")
        for name in ("purity", "edge_purity", "publicized_ratio"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1] (got {getattr(self, name)})")
        if not 0 < self.gamma <= 1:
            problems.append(f"gamma must lie in (0, 1] (got {self.gamma})")
        if self.log_base not in ("e", "10"):
            problems.append(f"log_base must be 'e' or '10' (got {self.log_base!r})")
        if self.dataset is None and self.interactions_per_user > self.n_items:
            problems.append("interactions_per_user cannot exceed n_items")
        if self.dataset is not None and not Path(self.dataset).is_dir():
            problems.append(f"dataset directory {self.dataset!r} does not exist")
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def active_ablations(self) -> list[str]:
        return [a for a in ABLATIONS if getattr(self, a)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        flat, problems = {}, []
        for key, val in raw.items():
            if isinstance(val, dict):
                if key not in cls.SECTIONS:
                    problems.append(f"unknown section [{key}]")
                    continue
                for k2, v2 in val.items():
                    if k2 not in cls.SECTIONS[key]:
                        problems.append(f"unknown key {k2!r} in [{key}]")
                    else:
                        flat[k2] = v2
            elif key in known:
                flat[key] = val
            else:
                problems.append(f"unknown key {key!r}")
        for key, val in list(flat.items()):
            try:
                flat[key] = _coerce(known[key], val)
            except (TypeError, ValueError) as exc:
                problems.append(f"{key}: {exc}")
        if problems:
            raise ConfigError(problems)
        return cls(**flat)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(f: dataclasses.Field, val):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if f.name == "log_base":
        return str(val)
    if "None" in kind and val in (None, "", "none"):
        return None
    if kind.startswith("str"):
        return str(val)
    if kind == "bool":
        if isinstance(val, bool):
            return val
        if str(val).lower() in ("1", "true", "yes", "on"):
            return True
        if str(val).lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {val!r}")
    if kind == "int":
        if isinstance(val, bool) or (isinstance(val, float) and not val.is_integer()):
            raise ValueError(f"expected an integer, got {val!r}")
        return int(val)
    if kind == "float":
        if isinstance(val, bool):
            raise ValueError(f"expected a number, got {val!r}")
        return float(val)
    return val


@dataclass
class Setup:
    """Everything derived from the config before training starts."""

    dataset: Dataset
    splits: object
    graph: object
    users: dict
    model_config: ModelConfig
    protocol: ProtocolConfig
    ldp: LdpConfig
    exclusions: dict
    tests: dict
    eval_batches: dict = field(default_factory=dict)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset is not None:
        ds = parse_tsv(cfg.dataset)
    else:
        ds = synth_generate(
            cfg.n_users,
            cfg.n_items,
            cfg.n_tags,
            cfg.interactions_per_user,
            cfg.edges_per_user,
            cfg.clusters,
            substream(cfg.seed, _SYNTH),
            purity=cfg.purity,
            edge_purity=cfg.edge_purity,
            popularity_skew=cfg.popularity_skew,
        )
    if cfg.min_interactions:
        ds = filter_min_interactions(ds, cfg.min_interactions)
    if not ds.publicized:
        ds = apply_publicized_ratio(ds, cfg.publicized_ratio, substream(cfg.seed, _PUBLIC))
    return ds


def build_setup(cfg: ExperimentConfig) -> Setup:
    cfg.validate()
    ds = load_dataset(cfg)
    sp = split(ds, substream(cfg.seed, _SPLIT), seed=cfg.seed)
    graph = build_inter_user_graph(ds.user_edges, users=range(ds.n_users))
    mcfg = ModelConfig(
        n_items=ds.n_items,
        d=cfg.d,
        d_i=cfg.d_i,
        n_i=cfg.n_i,
        h=cfg.h or None,
        lam=cfg.lam,
        squared_l2=cfg.squared_l2,
        init_scale=cfg.init_scale,
        use_item_graph=not cfg.no_item_graph,
        use_attention=not cfg.no_attention,
        use_pearson=not cfg.no_pearson,
    )
    users = {}
    all_items = np.arange(ds.n_items)
    for u in range(ds.n_users):
        pool = set(sp.train_pool(u))
        nbr_pub = {}
        if not cfg.no_neighbor:
            # neighbours only share public items from their own training pool
            for v in graph.neighbors(u):
                nbr_pub[v] = set(ds.publicized.get(v, ())) & set(sp.train_pool(v))
        hg = build_item_hypergraph(u, sp.train[u], nbr_pub, ds.item_tags)
        adj = normalized_adjacency(hg) if mcfg.use_item_graph else None
        negatives = all_items[~np.isin(all_items, list(pool))]
        users[u] = UserData(hg, adj, np.asarray(sp.train[u], dtype=np.int64), negatives)
    proto = ProtocolConfig(
        H=cfg.H,
        n_u=cfg.n_u,
        lr=cfg.lr,
        sharing="laplace" if cfg.laplace_sharing else "secure",
        laplace_scale=cfg.laplace_scale,
        reclip_decoded=cfg.reclip_decoded,
        d_r=cfg.d_r,
        workers=cfg.workers,
    )
    setup = Setup(
        dataset=ds,
        splits=sp,
        graph=graph,
        users=users,
        model_config=mcfg,
        protocol=proto,
        ldp=LdpConfig(cfg.delta, cfg.beta),
        exclusions={u: set(sp.train_pool(u)) for u in range(ds.n_users)},
        tests={u: sp.test[u] for u in range(ds.n_users)},
    )
    for u, data in users.items():
        setup.eval_batches[u] = sample_batch(data, substream(cfg.seed, EVAL, u))
    return setup


def _evaluate_models(setup: Setup, state: TrainingState, k: int):
    def score(u):
        data = setup.users[u]
        m = state.models[u]
        return score_items(m, user_embedding(m, data.hypergraph, data.adj), np.arange(setup.dataset.n_items))

    res = evaluate(score, sorted(setup.users), setup.exclusions, setup.tests, k)
    losses = [forward(state.models[u], d.hypergraph, setup.eval_batches[u], d.adj)[0] for u, d in setup.users.items()]
    return res, float(np.mean([x.total for x in losses])), float(np.mean([x.bpr for x in losses]))


def random_baseline(setup: Setup, k: int, repeats: int, seed: int) -> tuple[float, float]:
    rng = substream(seed, _RANDOM)
    recalls, ndcgs = [], []
    for _ in range(repeats):
        res = evaluate(random_scorer(setup.dataset.n_items, rng), sorted(setup.users), setup.exclusions, setup.tests, k)
        recalls.append(res.mean_recall)
        ndcgs.append(res.mean_ndcg)
    return float(np.mean(recalls)), float(np.mean(ndcgs))


@dataclass
class ExperimentResult:
    records: list
    summary: dict
    privacy: dict
    bus: MessageBus
    state: TrainingState
    setup: Setup


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Train for ``cfg.rounds`` rounds, evaluating every ``cfg.eval_every``.

    With ``out_dir`` set, writes ``metrics.jsonl``, ``bus_trace.csv``,
    ``privacy.json``, ``summary.json`` and ``resolved_config.json``.
    """
    setup = build_setup(cfg)
    n_users = setup.dataset.n_users
    state = TrainingState(
        models=init_models(range(n_users), setup.model_config, cfg.seed),
        users=setup.users,
        seed=cfg.seed,
    )
    n_s = setup.model_config.n_params
    accountant = PrivacyAccountant(n_s, setup.ldp, cfg.log_base)
    meter = CostMeter("dgrec" if not cfg.laplace_sharing else "decentralized", cfg.d_r)
    bus = MessageBus(meter)
    rand_recall, rand_ndcg = random_baseline(setup, cfg.k, cfg.random_repeats, cfg.seed)
    K = cfg.k

    records = []

    def record(rnd, participants):
        res, mean_loss, mean_bpr = _evaluate_models(setup, state, K)
        rec = {
            "round": rnd,
            f"recall@{K}": res.mean_recall,
            f"ndcg@{K}": res.mean_ndcg,
            "mean_loss": mean_loss,
            "mean_bpr": mean_bpr,
            "cumulative_epsilon": accountant.cumulative_epsilon() if not cfg.laplace_sharing else None,
            "total_bits": meter.total_bits,
            "participants": participants,
            f"random_recall@{K}": rand_recall,
            f"random_ndcg@{K}": rand_ndcg,
        }
        records.append(rec)
        log.info("round %d recall@%d=%.4f ndcg@%d=%.4f bpr=%.4f", rnd, K, rec[f"recall@{K}"], K, rec[f"ndcg@{K}"], mean_bpr)

    record(0, 0)
    for r in range(1, cfg.rounds + 1):
        initiator = (r - 1) % n_users
        rep = training_round(state, setup.graph, initiator, setup.protocol, setup.ldp, accountant, bus)
        if r % cfg.eval_every == 0 or r == cfg.rounds:
            record(r, len(rep.participants))

    if cfg.laplace_sharing:
        privacy = {"mechanism": "laplace", "laplace_scale": cfg.laplace_scale, "rdp_accounting": None}
    else:
        privacy = {"mechanism": "secure-1bit", **accountant.report(cfg.gamma)}
    final = records[-1]
    summary = {
        "rounds": cfg.rounds,
        "n_s": n_s,
        "dataset": setup.dataset.summary(),
        "ablations": cfg.active_ablations,
        f"final_recall@{K}": final[f"recall@{K}"],
        f"final_ndcg@{K}": final[f"ndcg@{K}"],
        f"random_recall@{K}": rand_recall,
        f"random_ndcg@{K}": rand_ndcg,
        "final_mean_bpr": final["mean_bpr"],
        "per_round_epsilon": accountant.per_round_epsilon,
        "max_cumulative_epsilon": accountant.cumulative_epsilon(),
        "total_bits": meter.total_bits,
        "total_payload_bits": meter.total_payload_bits,
        "bus_bytes": bus.total_bytes,
        "worst_case_bits_per_user_round": communication_cost(
            "dgrec" if not cfg.laplace_sharing else "decentralized", cfg.H, cfg.n_u, n_s, cfg.d_r
        ),
        "config": cfg.to_dict(),
    }
    result = ExperimentResult(records, summary, privacy, bus, state, setup)
    if out_dir is not None:
        write_reports(result, out_dir)
    return result


def write_reports(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec) + "\n")
    result.bus.write_csv(out / "bus_trace.csv")
    (out / "privacy.json").write_text(json.dumps(result.privacy, indent=2) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2) + "\n")
    (out / "resolved_config.json").write_text(json.dumps(result.summary["config"], indent=2) + "\n")


def ablation(cfg: ExperimentConfig, variant: str, out_dir=None) -> ExperimentResult:
    """Run the pipeline with exactly one component swapped out."""
    if variant not in ABLATIONS:
        raise ValueError(f"unknown ablation {variant!r}; choose from {', '.join(ABLATIONS)}")
    others = [a for a in cfg.active_ablations if a != variant]
    if others:
        raise ConfigError([f"ablation {variant!r} conflicts with already enabled {', '.join(others)}"])
    return run_experiment(cfg.replace(**{variant: True}), out_dir)
