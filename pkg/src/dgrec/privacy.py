"""1-bit randomized gradient encoding and its Renyi-DP accounting.

Each coordinate is clipped to [-delta, delta] and mapped to +1 with
probability

    p(g) = 1/(e^b + 1) + (e^b - 1)(g + delta) / (2 (e^b + 1) delta)

so that ``delta (e^b+1)/(e^b-1) * E[bit] == g``; averaging decoded bits is an
unbiased estimate of the average clipped gradient.
"""

from __future__ import annotations

import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

ALPHA = 1.5
HEADER = struct.Struct("<QII")  # origin id, round, n_s

_LOGS = {"e": math.log, "10": math.log10}


def _log(base: str):
    try:
        return _LOGS[str(base)]
    except KeyError:
        raise ValueError(f"log base must be 'e' or '10', got {base!r}") from None


@dataclass(frozen=True)
class LdpConfig:
    delta: float = 0.1
    beta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"clip bound delta must be > 0, got {self.delta}")
        if not self.beta > 0:
            raise ValueError(f"perturbation strength beta must be > 0, got {self.beta}")

    @property
    def decode_scale(self) -> float:
        """delta (e^beta + 1) / (e^beta - 1); the magnitude of a decoded bit."""
        return self.delta / math.tanh(self.beta / 2.0)


@dataclass(frozen=True, eq=False)
class EncodedGradient:
    bits: np.ndarray  # int8 in {-1, +1}
    origin: int
    round: int = 0

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8)
        if bits.ndim != 1 or not np.isin(bits, (-1, 1)).all():
            raise ValueError("encoded gradient entries must be -1 or +1")
        object.__setattr__(self, "bits", bits)

    @property
    def n_s(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EncodedGradient):
            return NotImplemented
        return (self.origin, self.round) == (other.origin, other.round) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.origin, self.round, self.bits.tobytes()))

    def to_bytes(self) -> bytes:
        payload = np.packbits(self.bits > 0, bitorder="little")
        return HEADER.pack(self.origin, self.round, self.n_s) + payload.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "EncodedGradient":
        origin, rnd, n_s = HEADER.unpack_from(buf)
        payload = np.frombuffer(buf, dtype=np.uint8, offset=HEADER.size)
        if payload.size != (n_s + 7) // 8:
            raise ValueError(f"payload has {payload.size} bytes, expected {(n_s + 7) // 8}")
        on = np.unpackbits(payload, count=n_s, bitorder="little")
        return cls(on.astype(np.int8) * 2 - 1, origin, rnd)

    @property
    def wire_size(self) -> int:
        return HEADER.size + (self.n_s + 7) // 8


def clip(g, delta: float) -> np.ndarray:
    if not delta > 0:
        raise ValueError("delta must be > 0")
    return np.clip(np.asarray(g, dtype=np.float64), -delta, delta)


def plus_probability(g, cfg: LdpConfig) -> np.ndarray:
    """P[bit = +1] for each coordinate of ``g`` (clipped first)."""
    eb = math.exp(cfg.beta)
    c = clip(g, cfg.delta)
    return 1.0 / (eb + 1.0) + (eb - 1.0) * (c + cfg.delta) / (2.0 * (eb + 1.0) * cfg.delta)


def encode(g, cfg: LdpConfig, rng: np.random.Generator, origin: int = 0, round: int = 0) -> EncodedGradient:
    p = plus_probability(g, cfg)
    bits = np.where(rng.random(p.shape) < p, 1, -1).astype(np.int8)
    return EncodedGradient(bits, origin, round)


def decode(encodings: Iterable[EncodedGradient], cfg: LdpConfig) -> np.ndarray:
    """Unbiased estimate of the mean clipped gradient of the encoders."""
    encs = list(encodings)
    if not encs:
        raise ValueError("cannot decode an empty collection")
    n_s = encs[0].n_s
    if any(e.n_s != n_s for e in encs):
        raise ValueError("encodings have different lengths")
    origins = [e.origin for e in encs]
    if len(set(origins)) != len(origins):
        raise ValueError("collection contains several encodings from the same origin")
    total = np.zeros(n_s, dtype=np.int64)
    for e in encs:
        total += e.bits
    return cfg.decode_scale * total / len(encs)


def rdp_epsilon(n_s: int, delta: float, beta: float, log_base: str = "e") -> float:
    """Closed-form order-1.5 RDP budget of one encoding of an n_s-vector."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    LdpConfig(delta, beta)
    eb = math.exp(beta)
    inner = 1.5 * math.pi * delta * (eb + 1.0) / (2.0 * (eb - 1.0))
    inner += (math.exp(-0.5 * beta) + math.exp(1.5 * beta)) / (eb + 1.0)
    return 2.0 * n_s * _log(log_base)(inner)


def compose_to_dp(per_round_eps: float, rounds: int, gamma: float, log_base: str = "e", alpha: float = ALPHA) -> float:
    """epsilon' of the (epsilon', gamma)-DP guarantee after ``rounds`` compositions."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return per_round_eps * rounds + _log(log_base)(1.0 / gamma) / (alpha - 1.0)


def two_point_renyi(p: float, q: float, alpha: float = ALPHA, log_base: str = "e") -> float:
    """D_alpha between Bernoulli(p) and Bernoulli(q) on {+1, -1}."""
    s = p**alpha * q ** (1 - alpha) + (1 - p) ** alpha * (1 - q) ** (1 - alpha)
    return _log(log_base)(s) / (alpha - 1.0)


def exact_renyi_divergence(cfg: LdpConfig, g_a: float, g_b: float, log_base: str = "e") -> float:
    """Exact order-1.5 divergence between the output laws of encode(g_a) and encode(g_b)."""
    pa = float(plus_probability(g_a, cfg))
    pb = float(plus_probability(g_b, cfg))
    return two_point_renyi(pa, pb, ALPHA, log_base)


def empirical_renyi_divergence(
    cfg: LdpConfig,
    g_a: float,
    g_b: float,
    samples: int,
    rng: np.random.Generator,
    log_base: str = "e",
) -> float:
    """Monte-Carlo estimate of D_1.5(M(g_a) || M(g_b)).

    Draws outputs of M(g_b) and averages the likelihood ratio raised to
    alpha: ``D = log E_Q[(P/Q)^alpha] / (alpha - 1)``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pa = float(plus_probability(g_a, cfg))
    pb = float(plus_probability(g_b, cfg))
    plus = rng.random(samples) < pb
    ratio = np.where(plus, pa / pb, (1 - pa) / (1 - pb))
    return _log(log_base)(float(np.mean(ratio**ALPHA))) / (ALPHA - 1.0)


@dataclass
class PrivacyAccountant:
    """Per-user sequential composition of the per-round RDP budget at alpha = 1.5."""

    n_s: int
    ldp: LdpConfig
    log_base: str = "e"
    alpha: float = field(default=ALPHA, init=False)
    rounds: dict = field(default_factory=lambda: defaultdict(int))

    @property
    def per_round_epsilon(self) -> float:
        return rdp_epsilon(self.n_s, self.ldp.delta, self.ldp.beta, self.log_base)

    def record(self, users: Iterable[int]) -> None:
        for u in users:
            self.rounds[u] += 1

    def cumulative_epsilon(self, user=None) -> float:
        """Budget spent by ``user``, or the worst user when omitted."""
        if user is None:
            t = max(self.rounds.values(), default=0)
        else:
            t = self.rounds.get(user, 0)
        return self.per_round_epsilon * t

    def to_dp(self, gamma: float, user=None) -> float:
        t = self.rounds.get(user, 0) if user is not None else max(self.rounds.values(), default=0)
        return compose_to_dp(self.per_round_epsilon, t, gamma, self.log_base, self.alpha)

    def report(self, gamma: float) -> dict:
        users = sorted(self.rounds)
        return {
            "alpha": self.alpha,
            "log_base": self.log_base,
            "n_s": self.n_s,
            "delta": self.ldp.delta,
            "beta": self.ldp.beta,
            "per_round_epsilon": self.per_round_epsilon,
            "gamma": gamma,
            "max_cumulative_epsilon": self.cumulative_epsilon(),
            "max_dp_epsilon": self.to_dp(gamma) if users else None,
            "users": {
                str(u): {
                    "rounds": self.rounds[u],
                    "cumulative_epsilon": self.cumulative_epsilon(u),
                    "dp_epsilon": self.to_dp(gamma, u),
                }
                for u in users
            },
        }


def laplace_share(g, cfg: LdpConfig, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Clipped real-valued gradient plus zero-mean Laplace noise (ablation baseline)."""
    c = clip(g, cfg.delta)
    if scale == 0:
        return c
    return c + rng.laplace(0.0, scale, size=c.shape)
