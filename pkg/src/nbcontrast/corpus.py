"""Citation corpus ingestion: documents, edges, ID mappings, edge splits.

External IDs are opaque strings; all downstream math runs on dense 0-based
indices assigned at ingest time in first-appearance order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PaperId:
    """A paper's opaque external identifier plus its dense corpus index."""

    external_id: str
    index: int


@dataclass(frozen=True)
class Document:
    """Title and abstract of one paper, keyed by its external ID."""

    id: str
    title: str
    abstract: str = ""

    def __post_init__(self):
        if not self.title:
            raise DataError(f"document {self.id!r}: title must be nonempty")


@dataclass
class CitationGraph:
    """Directed edge set over dense node indices with an external-ID mapping.

    Instances are treated as immutable: every operation returns a new graph.
    ``edges`` is an ``(E, 2)`` int64 array of ``(src, dst)`` rows with no
    self-loops and no exact duplicates.
    """

    ids: tuple[str, ...]
    edges: np.ndarray
    directed: bool = True
    stats: Mapping[str, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def node_count(self) -> int:
        return len(self.ids)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def id_to_index(self) -> dict[str, int]:
        return {ext: i for i, ext in enumerate(self.ids)}

    def index_of(self, external_id: str) -> int:
        try:
            return self.id_to_index[external_id]
        except KeyError:
            raise DataError(f"unknown paper id {external_id!r}") from None

    def paper_id(self, index: int) -> PaperId:
        return PaperId(self.ids[index], index)

    def paper_ids(self) -> list[PaperId]:
        return [PaperId(ext, i) for i, ext in enumerate(self.ids)]


def _dedup_edges(edges: Iterable[tuple[int, int]]) -> tuple[np.ndarray, int, int]:
    """Drop self-loops and exact duplicates, preserving first-seen order."""
    seen: set[tuple[int, int]] = set()
    kept: list[tuple[int, int]] = []
    self_loops = 0
    duplicates = 0
    for src, dst in edges:
        if src == dst:
            self_loops += 1
            continue
        if (src, dst) in seen:
            duplicates += 1
            continue
        seen.add((src, dst))
        kept.append((src, dst))
    arr = np.asarray(kept, dtype=np.int64).reshape(-1, 2)
    return arr, duplicates, self_loops


def ingest_edges(path: str | Path) -> CitationGraph:
    """Read a ``src<TAB>dst`` edge file into a graph with dense indices.

    Indices are assigned in first-appearance order. Duplicate edges and
    self-loops are dropped and counted; counts land in ``graph.stats``.
    """
    path = Path(path)
    ids: list[str] = []
    index: dict[str, int] = {}
    raw_edges: list[tuple[int, int]] = []

    def intern(ext: str) -> int:
        if ext not in index:
            index[ext] = len(ids)
            ids.append(ext)
        return index[ext]

    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(
                    f"{path}: line {lineno}: expected 'src<TAB>dst', got {line!r}"
                )
            raw_edges.append((intern(parts[0]), intern(parts[1])))

    if not ids:
        raise DataError(f"{path}: empty edge file")

    edges, duplicates, self_loops = _dedup_edges(raw_edges)
    if duplicates or self_loops:
        logger.warning(
            "%s: dropped %d duplicate edges and %d self-loops",
            path, duplicates, self_loops,
        )
    stats = {"duplicate_edges_dropped": duplicates, "self_loops_dropped": self_loops}
    return CitationGraph(ids=tuple(ids), edges=edges, directed=True, stats=stats)


def filter_nodes(g: CitationGraph, exclude: set[str]) -> CitationGraph:
    """Remove the given external IDs and all incident edges, re-densifying.

    Surviving nodes keep their external IDs and their relative order.
    Unknown excluded IDs are ignored and counted.
    """
    known = set(g.ids)
    unknown = len(exclude - known)
    if unknown:
        logger.warning("filter_nodes: %d excluded ids not in graph", unknown)

    drop = {g.id_to_index[e] for e in exclude if e in known}
    keep_ids = tuple(ext for i, ext in enumerate(g.ids) if i not in drop)
    remap = {old: new for new, old in
             enumerate(i for i in range(g.node_count) if i not in drop)}

    kept_edges = [
        (remap[s], remap[d])
        for s, d in g.edges
        if s not in drop and d not in drop
    ]
    edges = np.asarray(kept_edges, dtype=np.int64).reshape(-1, 2)
    stats = {
        "nodes_removed": g.node_count - len(keep_ids),
        "edges_removed": g.edge_count - edges.shape[0],
        "unknown_excluded_ids": unknown,
    }
    return CitationGraph(ids=keep_ids, edges=edges, directed=g.directed, stats=stats)


def to_undirected(g: CitationGraph) -> CitationGraph:
    """Symmetrize the edge set: every (a, b) also yields (b, a).

    Idempotent; the reversed copies are deduplicated against existing edges.
    """
    augmented = list(map(tuple, g.edges)) + [(int(d), int(s)) for s, d in g.edges]
    edges, _, _ = _dedup_edges(augmented)
    return CitationGraph(ids=g.ids, edges=edges, directed=False)


def split_edges(
    g: CitationGraph, holdout_fraction: float, seed: int
) -> tuple[CitationGraph, np.ndarray]:
    """Partition edges into a training graph and a held-out edge array.

    The holdout is a seeded uniform sample without replacement of
    ``floor(holdout_fraction * |edges|)`` edges. Nodes and the ID mapping
    are unchanged.
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in [0, 1): {holdout_fraction}")
    n_edges = g.edge_count
    # floor of the exact product; the epsilon guards against binary
    # representation error in fraction * n_edges
    n_holdout = int(np.floor(holdout_fraction * n_edges + 1e-9))
    if holdout_fraction > 0.0 and n_holdout < 1:
        raise ValueError(
            f"holdout_fraction {holdout_fraction} selects no edges out of {n_edges}"
        )

    rng = np.random.default_rng(seed)
    holdout_pos = np.sort(rng.choice(n_edges, size=n_holdout, replace=False))
    mask = np.ones(n_edges, dtype=bool)
    mask[holdout_pos] = False

    train = CitationGraph(ids=g.ids, edges=g.edges[mask], directed=g.directed)
    holdout = g.edges[holdout_pos].copy()
    return train, holdout


def load_documents(path: str | Path) -> dict[str, Document]:
    """Read a JSON-lines document file with ``id``, ``title``, ``abstract``."""
    path = Path(path)
    docs: dict[str, Document] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            for key in ("id", "title"):
                if key not in record:
                    raise DataError(f"{path}: line {lineno}: missing field {key!r}")
            doc = Document(
                id=str(record["id"]),
                title=str(record["title"]),
                abstract=str(record.get("abstract", "")),
            )
            docs[doc.id] = doc
    if not docs:
        raise DataError(f"{path}: empty document file")
    return docs


def save_documents(docs: Sequence[Document], path: str | Path) -> None:
    """Write documents as JSON-lines, one object per line."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(
                {"id": doc.id, "title": doc.title, "abstract": doc.abstract},
                sort_keys=True,
            ))
            fh.write("\n")


def save_graph(g: CitationGraph, path: str | Path) -> None:
    """Serialize a graph (ids, edges, direction flag, counters) as JSON."""
    payload = {
        "ids": list(g.ids),
        "edges": [[int(s), int(d)] for s, d in g.edges],
        "directed": g.directed,
        "stats": dict(g.stats) if g.stats else {},
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_graph(path: str | Path) -> CitationGraph:
    """Load a graph serialized by :func:`save_graph`."""
    try:
        with Path(path).open("r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a graph snapshot: {exc}") from None
    edges = np.asarray(payload["edges"], dtype=np.int64).reshape(-1, 2)
    return CitationGraph(
        ids=tuple(payload["ids"]),
        edges=edges,
        directed=bool(payload["directed"]),
        stats=payload.get("stats") or None,
    )
