"""Quicksort-driven pairwise-comparison ranking with 3-vote majority aggregation.

A ranking campaign starts with every item in one partition. All non-pivot
items are compared against the partition's pivot; each comparison collects
three judgments from distinct annotators and resolves by majority. Once a
pivot's comparisons all resolve, the partition splits into a higher-than-pivot
and a lower-than-pivot set, the pivot is placed at its final rank, and
sub-partitions of size >= 2 get a fresh seeded-random pivot. Rank 1 is the
highest value on the annotated dimension.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence


class Dimension(Enum):
    AROUSAL = "arousal"
    VALENCE = "valence"


class RankingError(Exception):
    """Invalid ranking operation or malformed input."""


@dataclass(frozen=True, slots=True, eq=False)
class ComparisonKey:
    """Order-normalized pair of clip ids: left is always the smaller id."""

    left: str
    right: str
    dimension: Dimension
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.left == self.right:
            raise RankingError(f"comparison of a clip with itself: {self.left}")
        if self.left > self.right:
            lo, hi = self.right, self.left
            object.__setattr__(self, "left", lo)
            object.__setattr__(self, "right", hi)
        # hashed on every scheduler dict hit; precompute once
        object.__setattr__(
            self, "_hash", hash((self.left, self.right, self.dimension.value))
        )

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return (
            isinstance(other, ComparisonKey)
            and self.left == other.left
            and self.right == other.right
            and self.dimension is other.dimension
        )

    def other(self, clip_id: str) -> str:
        return self.right if clip_id == self.left else self.left


@dataclass(frozen=True, slots=True)
class Judgment:
    key: ComparisonKey
    annotator: str
    winner: str
    timestamp: float = 0.0

    def __post_init__(self):
        if self.winner not in (self.key.left, self.key.right):
            raise RankingError(
                f"winner {self.winner!r} is not a member of the compared pair"
            )


@dataclass(frozen=True, slots=True)
class ReliabilityReport:
    unanimous_rate: float
    pairwise_rate: float
    alpha: float


JUDGMENTS_PER_KEY = 3


@dataclass(slots=True)
class _Partition:
    start: int  # 1-based rank of the partition's best possible position
    pivot: str
    higher: list[str] = field(default_factory=list)
    lower: list[str] = field(default_factory=list)
    unresolved: int = 0


@dataclass(slots=True)
class RankingState:
    """Mutable single-writer state of one ranking campaign."""

    dimension: Dimension
    items: list[str]
    seed: int
    judgments: dict[ComparisonKey, list[Judgment]] = field(default_factory=dict)
    resolved: dict[ComparisonKey, str] = field(default_factory=dict)
    placed: dict[str, int] = field(default_factory=dict)
    _pending: dict[ComparisonKey, _Partition] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.placed) == len(self.items)


def _partition_rng(seed: int, start: int, ids: Sequence[str]) -> random.Random:
    # str seeds hash stably across processes, unlike object hashes
    return random.Random(f"{seed}|{start}|{'|'.join(sorted(ids))}")


def _open_partition(state: RankingState, start: int, ids: Sequence[str]) -> None:
    if not ids:
        return
    if len(ids) == 1:
        state.placed[ids[0]] = start
        return
    ordered = sorted(ids)
    pivot = _partition_rng(state.seed, start, ordered).choice(ordered)
    part = _Partition(start=start, pivot=pivot)
    for member in ordered:
        if member == pivot:
            continue
        key = ComparisonKey(member, pivot, state.dimension)
        state._pending[key] = part
        part.unresolved += 1


def init_ranking(items: Sequence[str], dimension: Dimension, seed: int) -> RankingState:
    items = list(items)
    if not items:
        raise RankingError("cannot rank an empty item list")
    if len(set(items)) != len(items):
        raise RankingError("duplicate clip ids in ranking input")
    state = RankingState(dimension=dimension, items=items, seed=seed)
    _open_partition(state, 1, items)
    return state


def pending_comparisons(state: RankingState) -> set[ComparisonKey]:
    return set(state._pending)


def submit_judgment(state: RankingState, judgment: Judgment) -> RankingState:
    key = judgment.key
    pending = state._pending
    part = pending.get(key)
    if part is None:
        if key in state.resolved:
            raise RankingError(f"comparison already resolved: {key}")
        raise RankingError(f"unknown comparison: {key}")
    judgments = state.judgments
    votes = judgments.get(key)
    if votes is None:
        votes = judgments[key] = []
    annotator = judgment.annotator
    for prior in votes:
        if prior.annotator == annotator:
            raise RankingError(
                f"annotator {annotator!r} already judged this comparison"
            )
    votes.append(judgment)
    if len(votes) < JUDGMENTS_PER_KEY:
        return state

    left = key.left
    left_votes = sum(1 for v in votes if v.winner == left)
    winner = left if 2 * left_votes > JUDGMENTS_PER_KEY else key.right
    state.resolved[key] = winner
    del pending[key]

    pivot = part.pivot
    member = key.right if pivot == left else left
    if winner == member:
        part.higher.append(member)
    else:
        part.lower.append(member)
    part.unresolved -= 1
    if part.unresolved == 0:
        pivot_rank = part.start + len(part.higher)
        state.placed[part.pivot] = pivot_rank
        _open_partition(state, part.start, part.higher)
        _open_partition(state, pivot_rank + 1, part.lower)
    return state


def final_ranking(state: RankingState) -> list[str]:
    if not state.complete:
        raise RankingError("ranking is not complete")
    return sorted(state.placed, key=state.placed.__getitem__)


def rank_to_rating(rank: int, n: int) -> float:
    """Linear map of rank 1..n onto the rating interval [+1.0, -1.0]."""
    if not 1 <= rank <= n:
        raise RankingError(f"rank {rank} outside 1..{n}")
    if n == 1:
        return 0.0
    return 1.0 - 2.0 * (rank - 1) / (n - 1)


def reliability(judgments: Iterable[Judgment]) -> ReliabilityReport:
    """Percent agreement (unanimous and mean-pairwise) plus nominal-data
    Krippendorff's alpha over per-key winner labels ("left"/"right" under
    the canonical key orientation)."""
    by_key: dict[ComparisonKey, list[Judgment]] = {}
    for j in judgments:
        by_key.setdefault(j.key, []).append(j)
    if not by_key:
        raise RankingError("no judgments supplied")
    for key, votes in by_key.items():
        if len(votes) != JUDGMENTS_PER_KEY:
            raise RankingError(
                f"key {key} has {len(votes)} judgments, expected {JUDGMENTS_PER_KEY}"
            )

    unanimous = 0
    pair_sum = 0.0
    # coincidence matrix over labels {left, right}
    o = {("L", "L"): 0.0, ("L", "R"): 0.0, ("R", "L"): 0.0, ("R", "R"): 0.0}
    for key, votes in by_key.items():
        labels = ["L" if v.winner == key.left else "R" for v in votes]
        m = len(labels)
        counts = {"L": labels.count("L"), "R": labels.count("R")}
        if counts["L"] == m or counts["R"] == m:
            unanimous += 1
        agreeing_pairs = sum(c * (c - 1) // 2 for c in counts.values())
        pair_sum += agreeing_pairs / (m * (m - 1) / 2)
        for a in ("L", "R"):
            for b in ("L", "R"):
                if a == b:
                    o[a, b] += counts[a] * (counts[a] - 1) / (m - 1)
                else:
                    o[a, b] += counts[a] * counts[b] / (m - 1)

    n_total = sum(o.values())
    n_label = {c: o[c, "L"] + o[c, "R"] for c in ("L", "R")}
    d_obs = (o["L", "R"] + o["R", "L"]) / n_total
    d_exp = 2 * n_label["L"] * n_label["R"] / (n_total * (n_total - 1))
    alpha = 1.0 if d_obs == 0.0 else 1.0 - d_obs / d_exp
    return ReliabilityReport(
        unanimous_rate=unanimous / len(by_key),
        pairwise_rate=pair_sum / len(by_key),
        alpha=alpha,
    )


def simulate_campaign(
    true_values: Mapping[str, float],
    dimension: Dimension,
    seed: int,
    noise: float = 0.0,
    n_annotators: int = 3,
) -> RankingState:
    """Drive a full campaign with simulated annotators.

    Each annotator reports the item with the higher true value, flipping the
    answer independently with probability ``noise``. Returns the completed
    state; callers score it against the true order.
    """
    if n_annotators < JUDGMENTS_PER_KEY:
        raise RankingError(f"need at least {JUDGMENTS_PER_KEY} annotators")
    state = init_ranking(list(true_values), dimension, seed)
    rng = random.Random(seed ^ 0x5EED)
    annotators = [f"sim-{i}" for i in range(n_annotators)]
    while not state.complete:
        for key in list(state._pending):
            truth = key.left if true_values[key.left] > true_values[key.right] else key.right
            panel = annotators if n_annotators == JUDGMENTS_PER_KEY else rng.sample(
                annotators, JUDGMENTS_PER_KEY
            )
            for annotator in panel:
                winner = truth
                if noise > 0.0 and rng.random() < noise:
                    winner = key.other(truth)
                submit_judgment(state, Judgment(key, annotator, winner))
    return state
