"""Contrastive triple mining with controlled neighborhood sampling.

Positives come from a close rank band around the query, hard negatives
from a distant band, and the gap between the bands is a tunable margin
that keeps the two sample sets collision-free by construction. Easy
negatives come from (filtered or sorted) random corpus draws. Every
query's randomness is derived from the global seed and its external ID,
so mining is reproducible and order-independent.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ann import NeighborList, batch_neighbors, cosine_scores, range_by_rank
from .corpus import PaperId
from .errors import DataError, InsufficientNeighborsError, ValidationError
from .graph_embed import EmbeddingTable, score_edge

POS_STRATEGIES = ("knn", "sim")
HARD_STRATEGIES = ("knn", "sim")
EASY_STRATEGIES = ("random", "filtered_random", "sorted_random")


@dataclass(frozen=True)
class SamplingConfig:
    """All knobs of the triple sampler.

    ``k_pos``/``k_hard`` set the outer rank of the positive and
    hard-negative bands, ``c_pos``/``c_hard``/``c_easy`` the sample counts,
    ``t_pos``/``t_neg`` the similarity thresholds of the ``sim`` strategy.
    When both bands are rank-based, ``k_hard - c_hard >= k_pos`` keeps them
    disjoint.
    """

    k_pos: int = 25
    k_hard: int = 4000
    c_pos: int = 5
    c_hard: int = 2
    c_easy: int = 3
    t_pos: float = 0.8
    t_neg: float = 0.2
    pos_strategy: str = "knn"
    hard_strategy: str = "knn"
    easy_strategy: str = "filtered_random"
    sorted_random_candidates: int = 100
    seed: int = 0

    def validate(self) -> None:
        if min(self.c_pos, self.c_hard, self.c_easy) < 0:
            raise ValidationError("sample counts must be >= 0")
        if self.pos_strategy not in POS_STRATEGIES:
            raise ValidationError(f"pos_strategy must be in {POS_STRATEGIES}")
        if self.hard_strategy not in HARD_STRATEGIES:
            raise ValidationError(f"hard_strategy must be in {HARD_STRATEGIES}")
        if self.easy_strategy not in EASY_STRATEGIES:
            raise ValidationError(f"easy_strategy must be in {EASY_STRATEGIES}")
        if self.pos_strategy == "knn" and self.k_pos < self.c_pos:
            raise ValidationError(
                f"k_pos must be >= c_pos: k_pos={self.k_pos}, c_pos={self.c_pos}"
            )
        if self.hard_strategy == "knn" and self.k_hard < self.c_hard:
            raise ValidationError(
                f"k_hard must be >= c_hard: k_hard={self.k_hard}, c_hard={self.c_hard}"
            )
        if (
            self.pos_strategy == "knn"
            and self.hard_strategy == "knn"
            and self.c_hard > 0
            and self.k_hard - self.c_hard < self.k_pos
        ):
            raise ValidationError(
                "hard-negative band overlaps the positive band: "
                f"k_hard - c_hard = {self.k_hard - self.c_hard} < k_pos = {self.k_pos}"
            )
        if self.sorted_random_candidates < 1:
            raise ValidationError("sorted_random_candidates must be >= 1")

    def sampling_margin(self) -> int:
        """Ranks strictly between the positive and hard-negative bands."""
        return self.k_hard - self.c_hard - self.k_pos

    def neighbor_depth(self) -> int:
        """How deep the shared neighbor list must reach."""
        depth = 0
        if self.pos_strategy == "knn":
            depth = max(depth, self.k_pos)
        if self.hard_strategy == "knn":
            depth = max(depth, self.k_hard)
        if self.easy_strategy == "filtered_random":
            depth = max(self.k_pos, self.k_hard)
        return depth


@dataclass(frozen=True)
class Triple:
    """One (query, positive, negative) training example with provenance."""

    query: str
    positive: str
    negative: str
    negative_kind: str  # "hard" or "easy"
    strategy: str       # sampler that produced the negative

    def __post_init__(self):
        if len({self.query, self.positive, self.negative}) != 3:
            raise ValidationError(
                f"triple ids must be distinct: {self.query!r}, "
                f"{self.positive!r}, {self.negative!r}"
            )


@dataclass(frozen=True)
class TripleSet:
    """Ordered triples plus the config snapshot and mining audit trail."""

    triples: tuple[Triple, ...]
    config_snapshot: SamplingConfig
    skipped: tuple[tuple[str, str], ...] = ()   # (query_id, reason)
    partial: tuple[str, ...] = ()               # queries with fewer samples

    def __len__(self) -> int:
        return len(self.triples)

    def query_ids(self) -> list[str]:
        """Unique query ids in first-appearance order."""
        seen: dict[str, None] = {}
        for t in self.triples:
            seen.setdefault(t.query, None)
        return list(seen)


class MiningFailure(Exception):
    """A sampler could not fill its quota for one query.

    Inside :func:`mine_triples` this skips the query; standalone sampler
    callers see it directly.
    """

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def derive_seed(seed: int, *parts: str) -> int:
    """Stable per-query seed from the global seed and string labels."""
    digest = hashlib.sha256(
        ":".join([str(seed), *parts]).encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "little")


def sample_positives_knn(n: NeighborList, cfg: SamplingConfig) -> list[int]:
    """Positive band: neighbor ranks (k_pos - c_pos, k_pos]."""
    return range_by_rank(n, cfg.k_pos, cfg.c_pos) if cfg.c_pos else []


def sample_hard_negatives_knn(n: NeighborList, cfg: SamplingConfig) -> list[int]:
    """Hard-negative band: neighbor ranks (k_hard - c_hard, k_hard]."""
    return range_by_rank(n, cfg.k_hard, cfg.c_hard) if cfg.c_hard else []


def sample_by_similarity(
    scores: Sequence[tuple[int, float]], c: int, t: float, mode: str
) -> list[int]:
    """Threshold sampler over (index, cosine score) candidates.

    ``above`` keeps candidates scoring strictly above ``t`` (positives),
    ``below`` those strictly below (negatives); either way the c highest
    scoring qualifiers win, ties toward the smaller index. May return
    fewer than c when qualifiers run out; zero qualifiers is a failure.
    """
    if c < 1:
        raise ValueError(f"c must be >= 1: {c}")
    if mode == "above":
        qualified = [(i, s) for i, s in scores if s > t]
    elif mode == "below":
        qualified = [(i, s) for i, s in scores if s < t]
    else:
        raise ValueError(f"mode must be 'above' or 'below': {mode!r}")
    if not qualified:
        raise MiningFailure(f"no candidates {mode} threshold {t}")
    qualified.sort(key=lambda pair: (-pair[1], pair[0]))
    return [i for i, _ in qualified[:c]]


def sample_random(
    corpus: Sequence[int],
    c: int,
    exclude: set[int] | frozenset[int],
    seed: int,
) -> list[int]:
    """Seeded uniform sample without replacement from corpus minus exclude."""
    candidates = [i for i in corpus if i not in exclude]
    if len(candidates) < c:
        raise MiningFailure(
            f"random sampler needs {c} candidates, {len(candidates)} available"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(candidates), size=c, replace=False)
    return [candidates[int(i)] for i in picked]


def sample_filtered_random(
    corpus: Sequence[int],
    c: int,
    n: NeighborList,
    k_filter: int,
    seed: int,
    extra_exclude: set[int] | frozenset[int] = frozenset(),
) -> list[int]:
    """Random sample excluding the query's first ``k_filter`` neighbors."""
    exclude = {node for node, _ in n.entries[:k_filter]}
    exclude.add(n.query)
    exclude.update(extra_exclude)
    return sample_random(corpus, c, exclude, seed)


def sample_sorted_random(
    t: EmbeddingTable,
    query: int,
    corpus: Sequence[int],
    n_candidates: int,
    c: int,
    direction: str,
    seed: int,
    exclude: set[int] | frozenset[int] = frozenset(),
) -> list[int]:
    """Draw candidates uniformly, then keep the c closest or furthest.

    Closeness is the table's own measure against the query; ties break
    toward the smaller index.
    """
    if direction not in ("closest", "furthest"):
        raise ValueError(f"direction must be 'closest' or 'furthest': {direction!r}")
    if n_candidates < c:
        raise ValueError(f"n_candidates must be >= c: {n_candidates} < {c}")
    pool = [i for i in corpus if i != query and i not in exclude]
    if len(pool) < c:
        raise MiningFailure(
            f"sorted-random sampler needs {c} candidates, {len(pool)} available"
        )
    rng = np.random.default_rng(seed)
    take = min(n_candidates, len(pool))
    drawn = [pool[int(i)] for i in rng.choice(len(pool), size=take, replace=False)]
    scored = [(i, score_edge(t, query, i)) for i in drawn]
    if direction == "closest":
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
    else:
        scored.sort(key=lambda pair: (pair[1], pair[0]))
    return [i for i, _ in scored[:c]]


def _mine_one_query(
    query: PaperId,
    t: EmbeddingTable,
    corpus_idx: list[int],
    ext_of: Mapping[int, str],
    neighbors: NeighborList | None,
    cfg: SamplingConfig,
) -> tuple[list[Triple], bool]:
    """Sample one query's triples; returns (triples, was_partial)."""
    sim_cache: list[tuple[int, float]] | None = None

    def sim_scores() -> list[tuple[int, float]]:
        nonlocal sim_cache
        if sim_cache is None:
            sim_cache = cosine_scores(t, query.index)
        return sim_cache

    if cfg.c_pos == 0:
        positives: list[int] = []
    elif cfg.pos_strategy == "knn":
        assert neighbors is not None
        positives = sample_positives_knn(neighbors, cfg)
    else:
        positives = sample_by_similarity(sim_scores(), cfg.c_pos, cfg.t_pos, "above")

    if cfg.c_hard == 0:
        hard: list[int] = []
    elif cfg.hard_strategy == "knn":
        assert neighbors is not None
        hard = sample_hard_negatives_knn(neighbors, cfg)
    else:
        hard = sample_by_similarity(sim_scores(), cfg.c_hard, cfg.t_neg, "below")

    taken = {query.index, *positives, *hard}
    easy_seed = derive_seed(cfg.seed, "easy", query.external_id)
    if cfg.c_easy == 0:
        easy: list[int] = []
    elif cfg.easy_strategy == "random":
        easy = sample_random(corpus_idx, cfg.c_easy, taken, easy_seed)
    elif cfg.easy_strategy == "filtered_random":
        assert neighbors is not None
        easy = sample_filtered_random(
            corpus_idx,
            cfg.c_easy,
            neighbors,
            k_filter=max(cfg.k_pos, cfg.k_hard),
            seed=easy_seed,
            extra_exclude=taken,
        )
    else:
        easy = sample_sorted_random(
            t,
            query.index,
            corpus_idx,
            cfg.sorted_random_candidates,
            cfg.c_easy,
            direction="furthest",
            seed=easy_seed,
            exclude=taken,
        )

    negatives = [(i, "hard", cfg.hard_strategy) for i in hard]
    negatives += [(i, "easy", cfg.easy_strategy) for i in easy]
    if not positives or not negatives:
        raise MiningFailure("no positives or no negatives sampled")

    rng = np.random.default_rng(derive_seed(cfg.seed, "pair", query.external_id))
    shuffled = [negatives[int(i)] for i in rng.permutation(len(negatives))]

    def ext(index: int) -> str:
        try:
            return ext_of[index]
        except KeyError:
            raise DataError(f"node index {index} has no external id") from None

    n_emit = min(len(positives), len(shuffled))
    partial = n_emit < cfg.c_pos or len(shuffled) < cfg.c_hard + cfg.c_easy
    return [
        Triple(
            query=query.external_id,
            positive=ext(positives[j]),
            negative=ext(shuffled[j][0]),
            negative_kind=shuffled[j][1],
            strategy=shuffled[j][2],
        )
        for j in range(n_emit)
    ], partial


def mine_triples(
    queries: Sequence[PaperId],
    t: EmbeddingTable,
    corpus: Sequence[PaperId],
    cfg: SamplingConfig,
) -> TripleSet:
    """Mine (query, positive, negative) triples for every query paper.

    The neighbor list is scanned once per query at the maximum depth any
    strategy needs, then each band is a range selection in it. Queries
    whose samplers cannot fill a band are skipped and recorded; queries
    with partially filled bands emit fewer triples and are flagged.
    """
    cfg.validate()
    ext_of = {p.index: p.external_id for p in corpus}
    for q in queries:
        ext_of.setdefault(q.index, q.external_id)

    corpus_idx = [p.index for p in corpus]
    depth = cfg.neighbor_depth()

    triples: list[Triple] = []
    skipped: list[tuple[str, str]] = []
    partials: list[str] = []
    for query in queries:
        if not 0 <= query.index < t.rows:
            raise ValueError(
                f"query {query.external_id!r} index {query.index} not in table"
            )
        neighbors = None
        if depth:
            neighbors = batch_neighbors(t, [query.index], depth)[0]
        try:
            mined, partial = _mine_one_query(
                query, t, corpus_idx, ext_of, neighbors, cfg
            )
        except MiningFailure as skip:
            skipped.append((query.external_id, skip.reason))
            continue
        except InsufficientNeighborsError as err:
            skipped.append(
                (query.external_id, f"insufficient neighbors for k={err.k}")
            )
            continue
        triples.extend(mined)
        if partial:
            partials.append(query.external_id)

    return TripleSet(
        triples=tuple(triples),
        config_snapshot=cfg,
        skipped=tuple(skipped),
        partial=tuple(partials),
    )


def oracle_triples(
    labels: Mapping[str, str],
    per_label_cap: int,
    cfg: SamplingConfig,
) -> TripleSet:
    """Build triples from class labels instead of embedding neighborhoods.

    Same-label papers are positives, different-label papers negatives.
    Every labeled paper acts as a query; each label contributes at most
    ``per_label_cap`` triples so no class dominates the set.
    """
    cfg.validate()
    if per_label_cap < 1:
        raise ValueError(f"per_label_cap must be >= 1: {per_label_cap}")
    by_label: dict[str, list[str]] = {}
    for pid, label in labels.items():
        by_label.setdefault(label, []).append(pid)
    if len(by_label) < 2:
        raise ValueError("oracle triples need at least 2 distinct labels")
    for label, members in by_label.items():
        if len(members) < 2:
            raise ValueError(f"label {label!r} has fewer than 2 members")

    n_negatives = cfg.c_hard + cfg.c_easy
    emitted: dict[str, int] = {label: 0 for label in by_label}
    triples: list[Triple] = []
    partials: list[str] = []
    for pid, label in labels.items():
        budget = per_label_cap - emitted[label]
        if budget <= 0:
            continue
        same = [p for p in by_label[label] if p != pid]
        other = [p for other_label, members in by_label.items()
                 if other_label != label for p in members]
        rng = np.random.default_rng(derive_seed(cfg.seed, "oracle", pid))
        n_pos = min(cfg.c_pos, len(same), budget)
        n_neg = min(n_negatives, len(other))
        n_emit = min(n_pos, n_neg)
        if n_emit < 1:
            continue
        pos_pick = [same[int(i)] for i in rng.choice(len(same), n_pos, replace=False)]
        neg_pick = [other[int(i)] for i in rng.choice(len(other), n_neg, replace=False)]
        kinds = ["hard"] * cfg.c_hard + ["easy"] * cfg.c_easy
        for j in range(n_emit):
            triples.append(
                Triple(
                    query=pid,
                    positive=pos_pick[j],
                    negative=neg_pick[j],
                    negative_kind=kinds[j] if j < len(kinds) else "easy",
                    strategy="oracle",
                )
            )
        emitted[label] += n_emit
        if n_emit < cfg.c_pos:
            partials.append(pid)

    return TripleSet(
        triples=tuple(triples), config_snapshot=cfg, partial=tuple(partials)
    )


def subsample_triples(
    ts: TripleSet, fraction: float, by_query: bool, seed: int
) -> TripleSet:
    """Keep a seeded uniform fraction of triples, or of whole queries.

    The kept count is the floor of ``fraction * total``; original order is
    preserved.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1]: {fraction}")
    if fraction == 1.0:
        return ts
    rng = np.random.default_rng(seed)
    if by_query:
        queries = ts.query_ids()
        n_keep = int(np.floor(fraction * len(queries) + 1e-9))
        chosen = {queries[int(i)] for i in
                  rng.choice(len(queries), size=n_keep, replace=False)}
        kept = tuple(t for t in ts.triples if t.query in chosen)
    else:
        n_keep = int(np.floor(fraction * len(ts.triples) + 1e-9))
        picked = set(
            int(i) for i in rng.choice(len(ts.triples), size=n_keep, replace=False)
        )
        kept = tuple(t for i, t in enumerate(ts.triples) if i in picked)
    return replace(ts, triples=kept)


TRIPLE_HEADER = ["query_id", "positive_id", "negative_id", "negative_kind", "strategy"]


def save_triples(ts: TripleSet, path: str | Path) -> None:
    """Write triples as a headered TSV."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TRIPLE_HEADER)
        for t in ts.triples:
            writer.writerow([t.query, t.positive, t.negative,
                             t.negative_kind, t.strategy])


def load_triples(path: str | Path, cfg: SamplingConfig | None = None) -> TripleSet:
    """Read a triple TSV written by :func:`save_triples`."""
    path = Path(path)
    triples: list[Triple] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != TRIPLE_HEADER:
            raise DataError(f"{path}: bad triple header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(f"{path}: line {lineno}: expected 5 columns")
            triples.append(Triple(*row))
    return TripleSet(triples=tuple(triples), config_snapshot=cfg or SamplingConfig())
