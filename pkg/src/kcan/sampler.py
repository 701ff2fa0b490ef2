"""Attention-proportional K-hop subgraph sampling for user-item targets.

Each target pair starts a joint breadth-first expansion from ``{u, i}``.
Every newly reached node draws ``M`` out-edges with replacement from its
attention row; repeated draws collapse so that a node's sampled neighborhood
holds unique edges.  A node is expanded once, at the hop it is first reached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kagcn import AttentionCache


def sample_fixed_neighbors(v: int, m: int, cache: AttentionCache, rng):
    """``m`` draws of (relation, tail) from the attention row of ``v``."""
    if m <= 0 or cache.indptr[v + 1] == cache.indptr[v]:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    picks = kernels.sample_rows(cache.indptr, cache.cdf, np.array([v]), rng.random((1, m)))[0]
    return cache.relations[picks], cache.tails[picks]


@dataclass
class SubgraphBatch:
    """Disjoint union of sampled subgraphs, one per target.

    Local nodes are numbered across the whole batch.  Edges are grouped by
    local head (``indptr``) and reference unified-graph triples by index.
    """

    targets: np.ndarray  # (B, 2) entity ids (user, item)
    node_entity: np.ndarray
    node_sub: np.ndarray
    node_hop: np.ndarray
    target_local: np.ndarray  # (B, 2)
    edge_head: np.ndarray
    edge_tail: np.ndarray
    edge_id: np.ndarray
    edge_hop: np.ndarray
    hops: int

    @property
    def size(self):
        return len(self.targets)

    @property
    def node_count(self):
        return len(self.node_entity)

    @property
    def edge_sub(self):
        return self.node_sub[self.edge_head]

    def indptr(self, max_hop=None):
        """CSR offsets over local nodes, optionally keeping edges with hop <= max_hop."""
        heads = self.edge_head if max_hop is None else self.edge_head[self.edge_hop <= max_hop]
        return np.searchsorted(heads, np.arange(self.node_count + 1)).astype(np.int64)

    def edge_mask(self, max_hop):
        return self.edge_hop <= max_hop

    def subgraph(self, b: int) -> "TargetSubgraph":
        nodes = np.flatnonzero(self.node_sub == b)
        emask = self.node_sub[self.edge_head] == b
        return TargetSubgraph(self, b, nodes, np.flatnonzero(emask))


@dataclass
class TargetSubgraph:
    """View of one target's subgraph inside a :class:`SubgraphBatch`."""

    batch: SubgraphBatch
    index: int
    local_nodes: np.ndarray
    local_edges: np.ndarray

    @property
    def target(self):
        return tuple(int(x) for x in self.batch.targets[self.index])

    @property
    def nodes(self) -> np.ndarray:
        return self.batch.node_entity[self.local_nodes]

    def edges(self, hop=None):
        """(head, relation, tail) entity triples; ``hop`` filters by hop index."""
        e = self.local_edges
        if hop is not None:
            e = e[self.batch.edge_hop[e] == hop]
        return self.batch.edge_id[e], self.batch.edge_hop[e]

    def neighbor_lists(self, graph):
        """entity -> list of (relation, tail) sampled out-edges."""
        out = {}
        for eid in self.batch.edge_id[self.local_edges]:
            h, r, t = graph.triples[eid]
            out.setdefault(int(h), []).append((int(r), int(t)))
        return out


def sample_subgraphs(targets, hops: int, m: int, cache: AttentionCache, rng) -> SubgraphBatch:
    """Sample the receptive field of every (user, item) target in ``targets``."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, 2)
    if np.any(targets[:, 0] == targets[:, 1]):
        raise ValueError("target members must be distinct entities")
    nodes, edges = kernels.bfs_sample(
        cache.indptr, cache.cdf, cache.tails, targets.ravel(), cache.entity_count, hops, m, rng
    )
    node_entity, node_sub, node_hop = nodes
    edge_head, edge_tail, edge_id, edge_hop = edges
    return SubgraphBatch(
        targets=targets,
        node_entity=node_entity,
        node_sub=node_sub,
        node_hop=node_hop,
        target_local=np.arange(2 * len(targets)).reshape(-1, 2),
        edge_head=edge_head,
        edge_tail=edge_tail,
        edge_id=edge_id,
        edge_hop=edge_hop,
        hops=hops,
    )


def target_subgraph(target, hops: int, m: int, cache: AttentionCache, rng) -> TargetSubgraph:
    """Receptive field of a single (user, item) target."""
    return sample_subgraphs(np.asarray(target).reshape(1, 2), hops, m, cache, rng).subgraph(0)
