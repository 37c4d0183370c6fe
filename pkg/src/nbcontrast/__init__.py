"""Neighborhood-contrastive triple mining over citation-graph embeddings."""

from .ann import NeighborList, batch_neighbors, range_by_rank, top_k
from .corpus import (
    CitationGraph,
    Document,
    PaperId,
    filter_nodes,
    ingest_edges,
    split_edges,
    to_undirected,
)
from .encoder import EncoderParams, EncoderTrainConfig, encode, tokenize, triplet_loss
from .graph_embed import (
    EmbeddingTable,
    GraphTrainConfig,
    LinkPredMetrics,
    eval_link_prediction,
    init_embeddings,
    score_edge,
    train_epoch,
)
from .mining import (
    SamplingConfig,
    Triple,
    TripleSet,
    mine_triples,
    oracle_triples,
    subsample_triples,
)

__version__ = "0.1.0"

__all__ = [
    "CitationGraph",
    "Document",
    "EmbeddingTable",
    "EncoderParams",
    "EncoderTrainConfig",
    "GraphTrainConfig",
    "LinkPredMetrics",
    "NeighborList",
    "PaperId",
    "SamplingConfig",
    "Triple",
    "TripleSet",
    "batch_neighbors",
    "encode",
    "eval_link_prediction",
    "filter_nodes",
    "ingest_edges",
    "init_embeddings",
    "mine_triples",
    "oracle_triples",
    "range_by_rank",
    "score_edge",
    "split_edges",
    "subsample_triples",
    "to_undirected",
    "tokenize",
    "top_k",
    "train_epoch",
    "triplet_loss",
]
