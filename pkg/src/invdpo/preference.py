"""Multi-objective reward scoring, candidate pools and winner/loser pairing."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import mixture_modes
from .diffusion import sample
from .errors import FormatError, InvalidArgumentError, NumericDomainError
from .numerics import RngState, gaussian_sample, splitmix64

BEST_WORST = "best-worst"
ALL_ORDERED = "all-ordered"

RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class RewardSuite:
    """Named reward functions ``r(c, x0)``, vectorised over rows of ``x0``."""

    names: list[str]
    fns: list[RewardFn]

    def __post_init__(self):
        if len(self.names) == 0 or len(self.names) != len(self.fns):
            raise InvalidArgumentError("a reward suite needs at least one named reward")

    @property
    def N(self) -> int:
        return len(self.fns)


def toy_reward_suite(n_modes: int = 8, radius: float = 4.0, std: float = 0.3) -> RewardSuite:
    """Fidelity and structure rewards for the circle-of-modes mixture.

    ``fidelity = -||x0 - mode(c)||``; ``structure = -| ||x0 - mode(c)|| - r* |``
    where ``r* = std * sqrt(pi / 2)`` is the mean distance of a mode's own
    samples from its centre.
    """
    modes = mixture_modes(n_modes, radius)
    expected = std * np.sqrt(np.pi / 2.0)

    def dist(c, x0):
        return np.linalg.norm(np.atleast_2d(x0) - modes[np.asarray(c)], axis=-1)

    def fidelity(c, x0):
        return -dist(c, x0)

    def structure(c, x0):
        return -np.abs(dist(c, x0) - expected)

    return RewardSuite(["fidelity", "structure"], [fidelity, structure])


def aggregate_reward(suite: RewardSuite, c, x0):
    """Mean of the component rewards.

    Returns:
        ``(aggregate, components)`` where ``components`` maps reward name to
        its values. Scalars for a single point, arrays for a batch.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    batch = np.atleast_2d(x0)
    c = np.broadcast_to(np.asarray(c), (batch.shape[0],))
    comps = {}
    for name, fn in zip(suite.names, suite.fns):
        v = np.asarray(fn(c, batch), dtype=np.float64).reshape(batch.shape[0])
        if not np.all(np.isfinite(v)):
            raise NumericDomainError(f"reward {name!r} produced a non-finite value")
        comps[name] = v
    agg = sum(comps.values()) / suite.N
    if x0.ndim == 1:
        return float(agg[0]), {k: float(v[0]) for k, v in comps.items()}
    return agg, comps


@dataclass
class CandidatePool:
    condition: int
    samples: np.ndarray  # (K, d)
    scores: np.ndarray  # (K,)
    components: np.ndarray  # (K, N)
    names: list[str]
    pool_id: int = 0

    def __post_init__(self):
        if len(self.scores) < 2:
            raise InvalidArgumentError("a candidate pool needs K >= 2")

    @property
    def K(self) -> int:
        return len(self.scores)


@dataclass
class PreferencePair:
    condition: int
    winner: np.ndarray
    loser: np.ndarray
    winner_score: float
    loser_score: float
    winner_components: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loser_components: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pool_id: int = 0

    def __post_init__(self):
        if not self.winner_score > self.loser_score:
            raise InvalidArgumentError("winner score must strictly exceed loser score")

    def swapped(self) -> "PreferencePair":
        """Winner and loser exchanged. Skips the ordering check on purpose."""
        p = object.__new__(PreferencePair)
        p.__dict__.update(
            condition=self.condition,
            winner=self.loser,
            loser=self.winner,
            winner_score=self.loser_score,
            loser_score=self.winner_score,
            winner_components=self.loser_components,
            loser_components=self.winner_components,
            pool_id=self.pool_id,
        )
        return p


def build_pool(model, s, suite: RewardSuite, c: int, K: int, rng: RngState, pool_id: int = 0) -> CandidatePool:
    """Sample ``K`` candidates from fresh Gaussian x_T with the deterministic sampler and score them."""
    if K < 2:
        raise InvalidArgumentError(f"pool size K must be >= 2, got {K}")
    x_T = gaussian_sample(rng, (K, model.data_dim))
    x0 = sample(model, s, x_T, c).x0
    agg, comps = aggregate_reward(suite, np.full(K, c), x0)
    return CandidatePool(
        condition=int(c),
        samples=x0,
        scores=agg,
        components=np.stack([comps[n] for n in suite.names], axis=1),
        names=list(suite.names),
        pool_id=pool_id,
    )


def build_pools(model, s, suite, conditions: Sequence[int], pools_per_condition: int, K: int, rng: RngState):
    """Pools for every condition; pool ``(c, j)`` draws from ``rng.substream(c, j)``."""
    pools = []
    for c in conditions:
        for j in range(pools_per_condition):
            pools.append(build_pool(model, s, suite, c, K, rng.substream(c, j), pool_id=j))
    return pools


def dynamic_pairs(pool: CandidatePool, strategy: str = ALL_ORDERED, tie_tol: float = 0.0) -> list[PreferencePair]:
    """Winner/loser pairs from a scored pool.

    Two candidates whose scores differ by at most ``tie_tol`` count as tied
    and never form a pair. A fully tied pool yields an empty list.
    """
    sc = pool.scores

    def pair(i, j):
        return PreferencePair(
            condition=pool.condition,
            winner=pool.samples[i].copy(),
            loser=pool.samples[j].copy(),
            winner_score=float(sc[i]),
            loser_score=float(sc[j]),
            winner_components=pool.components[i].copy(),
            loser_components=pool.components[j].copy(),
            pool_id=pool.pool_id,
        )

    if strategy == BEST_WORST:
        i, j = int(np.argmax(sc)), int(np.argmin(sc))
        return [pair(i, j)] if sc[i] - sc[j] > tie_tol else []
    if strategy == ALL_ORDERED:
        return [pair(i, j) for i in range(pool.K) for j in range(pool.K) if sc[i] - sc[j] > tie_tol]
    raise InvalidArgumentError(f"unknown pairing strategy {strategy!r}")


def heldout_mask(pairs: Sequence[PreferencePair], fraction: float, seed: int) -> np.ndarray:
    """True for pairs whose (condition, pool) hash lands in the held-out bucket.

    All pairs from one pool fall on the same side of the split.
    """
    out = np.zeros(len(pairs), dtype=bool)
    cut = int(fraction * 2.0**64)
    for k, p in enumerate(pairs):
        h = splitmix64(splitmix64(int(seed)) ^ ((int(p.condition) << 32) | int(p.pool_id)))
        out[k] = h < cut
    return out


@dataclass
class PairBatch:
    """Column view of a list of pairs."""

    condition: np.ndarray
    winner: np.ndarray
    loser: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Sequence[PreferencePair]) -> "PairBatch":
        if len(pairs) == 0:
            raise InvalidArgumentError("empty pair batch")
        return cls(
            condition=np.array([p.condition for p in pairs], dtype=np.int64),
            winner=np.stack([np.asarray(p.winner, dtype=np.float64) for p in pairs]),
            loser=np.stack([np.asarray(p.loser, dtype=np.float64) for p in pairs]),
        )

    def __len__(self):
        return len(self.condition)

    def take(self, idx) -> "PairBatch":
        return PairBatch(self.condition[idx], self.winner[idx], self.loser[idx])


# Pair dataset file, little-endian:
#   b"IDPR", u32 version (1), u32 count, u32 dim, u32 n_components,
#   then per pair: u32 condition, u32 pool id, f64[dim] winner, f64[dim] loser,
#   f64 winner score, f64 loser score, f64[n] winner components, f64[n] loser components.
PAIR_MAGIC = b"IDPR"
PAIR_VERSION = 1


def pairs_bytes(pairs: Sequence[PreferencePair], dim: int | None = None) -> bytes:
    if dim is None:
        dim = len(pairs[0].winner) if pairs else 0
    ncomp = len(pairs[0].winner_components) if pairs else 0
    out = [PAIR_MAGIC, struct.pack("<4I", PAIR_VERSION, len(pairs), dim, ncomp)]
    for p in pairs:
        out.append(struct.pack("<2I", p.condition, p.pool_id))
        body = np.concatenate(
            [
                p.winner,
                p.loser,
                [p.winner_score, p.loser_score],
                p.winner_components,
                p.loser_components,
            ]
        )
        out.append(np.ascontiguousarray(body, dtype="<f8").tobytes())
    return b"".join(out)


def write_pairs(path, pairs: Sequence[PreferencePair], dim: int | None = None) -> None:
    Path(path).write_bytes(pairs_bytes(pairs, dim))


def parse_pairs(buf: bytes) -> list[PreferencePair]:
    if len(buf) < 4 or buf[:4] != PAIR_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {PAIR_MAGIC!r}", offset=0, section="magic")
    if len(buf) < 20:
        raise FormatError("truncated header", offset=len(buf), section="header")
    version, count, dim, ncomp = struct.unpack_from("<4I", buf, 4)
    if version != PAIR_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, section="version")
    rec = 8 + 8 * (2 * dim + 2 + 2 * ncomp)
    off = 20
    pairs = []
    for k in range(count):
        if off + rec > len(buf):
            raise FormatError(f"truncated at pair {k} of {count}", offset=off, section=f"pair[{k}]")
        cond, pool = struct.unpack_from("<2I", buf, off)
        v = np.frombuffer(buf, dtype="<f8", count=rec // 8 - 1, offset=off + 8).astype(np.float64)
        pairs.append(
            PreferencePair(
                condition=cond,
                winner=v[:dim].copy(),
                loser=v[dim:2 * dim].copy(),
                winner_score=float(v[2 * dim]),
                loser_score=float(v[2 * dim + 1]),
                winner_components=v[2 * dim + 2:2 * dim + 2 + ncomp].copy(),
                loser_components=v[2 * dim + 2 + ncomp:].copy(),
                pool_id=pool,
            )
        )
        off += rec
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", offset=off, section="trailer")
    return pairs


def read_pairs(path) -> list[PreferencePair]:
    return parse_pairs(Path(path).read_bytes())


def write_pool_csv(path, pools: Sequence[CandidatePool]) -> None:
    names = pools[0].names if pools else []
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "pool", "candidate", "aggregate"] + list(names))
        for pool in pools:
            for i in range(pool.K):
                w.writerow(
                    [pool.condition, pool.pool_id, i, repr(float(pool.scores[i]))]
                    + [repr(float(v)) for v in pool.components[i]]
                )
