"""Loading, merging and indexing of the interaction graph and knowledge graph.

Users, items and knowledge-graph entities all become entities of one
:class:`UnifiedGraph`.  Interactions are a relation of their own (``click``)
and every relation gets a materialized inverse so that propagation along
outgoing edges reaches both directions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLICK = "click"
INVERSE_PREFIX = "~"
MAX_NEGATIVE_ATTEMPTS = 100


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NegativeSamplingError(RuntimeError):
    """No valid negative could be drawn within the attempt cap."""


def _read_rows(path, min_fields, max_fields=None):
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < min_fields or (max_fields and len(fields) > max_fields):
                raise DataError(f"{path}:{lineno}: expected {min_fields} tab-separated fields")
            if any(not f.strip() for f in fields[:min_fields]):
                raise DataError(f"{path}:{lineno}: empty field")
            rows.append([f.strip() for f in fields[:min_fields]])
    if not rows:
        raise DataError(f"{path}: no records")
    return rows


class IdMap:
    """Dense ids assigned in first-seen order."""

    def __init__(self, names=()):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        idx = self.index.get(name)
        if idx is None:
            idx = len(self.names)
            self.index[name] = idx
            self.names.append(name)
        return idx

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name):
        return self.index[name]

    def __contains__(self, name):
        return name in self.index


@dataclass
class InteractionGraph:
    user_ids: IdMap
    item_ids: IdMap
    edges: np.ndarray  # (n, 2) int64 user, item

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    def with_edges(self, edges) -> "InteractionGraph":
        return InteractionGraph(self.user_ids, self.item_ids, np.asarray(edges, dtype=np.int64).reshape(-1, 2))

    def items_by_user(self) -> list[np.ndarray]:
        order = np.lexsort((self.edges[:, 1], self.edges[:, 0]))
        sorted_edges = self.edges[order]
        bounds = np.searchsorted(sorted_edges[:, 0], np.arange(self.user_count + 1))
        return [sorted_edges[bounds[u]:bounds[u + 1], 1] for u in range(self.user_count)]


@dataclass
class KnowledgeTriples:
    entity_ids: IdMap
    relation_ids: IdMap
    triples: np.ndarray  # (n, 3) int64 head, relation, tail


def load_interactions(path) -> InteractionGraph:
    """Read ``user \\t item [\\t ignored...]`` lines; duplicates collapse."""
    rows = _read_rows(path, 2)
    users, items = IdMap(), IdMap()
    seen = set()
    edges = []
    for u_raw, i_raw in rows:
        pair = (users.add(u_raw), items.add(i_raw))
        if pair not in seen:
            seen.add(pair)
            edges.append(pair)
    return InteractionGraph(users, items, np.array(edges, dtype=np.int64))


def load_triples(path) -> KnowledgeTriples:
    rows = _read_rows(path, 3, 3)
    ents, rels = IdMap(), IdMap()
    seen = set()
    triples = []
    for h, r, t in rows:
        trip = (ents.add(h), rels.add(r), ents.add(t))
        if trip not in seen:
            seen.add(trip)
            triples.append(trip)
    return KnowledgeTriples(ents, rels, np.array(triples, dtype=np.int64).reshape(-1, 3))


def load_alignment(path) -> dict[str, str]:
    alignment = {}
    for item_raw, ent_raw in _read_rows(path, 2, 2):
        if alignment.get(item_raw, ent_raw) != ent_raw:
            raise DataError(f"{path}: item {item_raw!r} aligned to two entities")
        alignment[item_raw] = ent_raw
    return alignment


def empty_kg() -> KnowledgeTriples:
    return KnowledgeTriples(IdMap(), IdMap(), np.zeros((0, 3), dtype=np.int64))


@dataclass
class UnifiedGraph:
    """Entity graph sorted by head with CSR adjacency.

    ``triples[indptr[v]:indptr[v + 1]]`` are exactly the triples with head ``v``.
    """

    entity_names: list[str]
    relation_names: list[str]
    triples: np.ndarray
    indptr: np.ndarray
    inverse_of: np.ndarray
    click_relation: int
    user_entity: np.ndarray  # user id -> entity id
    item_entity: np.ndarray  # item id -> entity id
    _keys: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._keys is None:
            self._keys = np.sort(self.triple_keys(self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]))
        self.is_item = np.zeros(self.entity_count, dtype=bool)
        self.is_item[self.item_entity] = True
        self.entity_to_item = np.full(self.entity_count, -1, dtype=np.int64)
        self.entity_to_item[self.item_entity] = np.arange(len(self.item_entity))
        self.entity_to_user = np.full(self.entity_count, -1, dtype=np.int64)
        self.entity_to_user[self.user_entity] = np.arange(len(self.user_entity))

    @property
    def entity_count(self) -> int:
        return len(self.entity_names)

    @property
    def relation_count(self) -> int:
        return len(self.relation_names)

    @property
    def heads(self):
        return self.triples[:, 0]

    @property
    def relations(self):
        return self.triples[:, 1]

    @property
    def tails(self):
        return self.triples[:, 2]

    @property
    def degree(self):
        return np.diff(self.indptr)

    def adjacency(self, v: int):
        """(relations, tails) of the out-edges of ``v``."""
        sl = slice(self.indptr[v], self.indptr[v + 1])
        return self.triples[sl, 1], self.triples[sl, 2]

    def triple_keys(self, h, r, t):
        h, r, t = (np.asarray(a, dtype=np.int64) for a in (h, r, t))
        return (h * self.relation_count + r) * self.entity_count + t

    def contains(self, h, r, t):
        keys = self.triple_keys(h, r, t)
        if len(self._keys) == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        pos = np.minimum(np.searchsorted(self._keys, keys), len(self._keys) - 1)
        return self._keys[pos] == keys

    def user_items(self, user_entity: int) -> np.ndarray:
        rels, tails = self.adjacency(user_entity)
        return tails[rels == self.click_relation]

    def id_map_hash(self) -> str:
        h = hashlib.sha256()
        for name in self.entity_names:
            h.update(name.encode("utf-8") + b"\0")
        h.update(b"\1")
        for name in self.relation_names:
            h.update(name.encode("utf-8") + b"\0")
        return h.hexdigest()[:16]

    def export_id_map(self, path) -> None:
        """Write ``kind \\t dense_id \\t name`` lines."""
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for i, name in enumerate(self.entity_names):
                fh.write(f"entity\t{i}\t{name}\n")
            for i, name in enumerate(self.relation_names):
                fh.write(f"relation\t{i}\t{name}\n")


def read_id_map(path) -> tuple[list[str], list[str]]:
    entities, relations = {}, {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[0] not in ("entity", "relation"):
                raise DataError(f"{path}:{lineno}: bad id-map record")
            (entities if parts[0] == "entity" else relations)[int(parts[1])] = parts[2]
    return [entities[i] for i in range(len(entities))], [relations[i] for i in range(len(relations))]


def unify(inter: InteractionGraph, kg: KnowledgeTriples | None, alignment: dict[str, str] | None = None) -> UnifiedGraph:
    """Merge interactions and knowledge triples into one entity graph."""
    kg = kg if kg is not None else empty_kg()
    alignment = alignment or {}
    for item_raw in alignment:
        if item_raw not in inter.item_ids:
            raise DataError(f"alignment references unknown item {item_raw!r}")

    entities = IdMap(kg.entity_ids.names)
    item_entity = np.empty(inter.item_count, dtype=np.int64)
    for item, raw in enumerate(inter.item_ids.names):
        ent_raw = alignment.get(raw)
        item_entity[item] = entities.add(ent_raw if ent_raw is not None else f"item:{raw}")
    user_entity = np.array([entities.add(f"user:{raw}") for raw in inter.user_ids.names], dtype=np.int64)

    base = list(kg.relation_ids.names) + [CLICK]
    n_base = len(base)
    relation_names = base + [INVERSE_PREFIX + r for r in base]
    inverse_of = np.concatenate([np.arange(n_base) + n_base, np.arange(n_base)])
    click = n_base - 1

    forward = [kg.triples]
    if len(inter.edges):
        u = user_entity[inter.edges[:, 0]]
        i = item_entity[inter.edges[:, 1]]
        forward.append(np.stack([u, np.full_like(u, click), i], axis=1))
    forward = np.concatenate(forward).reshape(-1, 3)
    backward = np.stack([forward[:, 2], inverse_of[forward[:, 1]], forward[:, 0]], axis=1)
    triples = np.unique(np.concatenate([forward, backward]), axis=0)
    # np.unique sorts lexicographically: grouped by head, then relation, tail.
    indptr = np.searchsorted(triples[:, 0], np.arange(len(entities) + 1)).astype(np.int64)
    return UnifiedGraph(
        entity_names=list(entities.names),
        relation_names=relation_names,
        triples=triples.astype(np.int64),
        indptr=indptr,
        inverse_of=inverse_of.astype(np.int64),
        click_relation=click,
        user_entity=user_entity,
        item_entity=item_entity,
    )


@dataclass
class DataSplit:
    train_edges: np.ndarray
    test_edges: np.ndarray
    rng_seed: int


def split_leave_one_out(inter: InteractionGraph, seed: int) -> DataSplit:
    """Hold out one uniformly chosen interaction per user with >= 2 interactions."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for u, items in enumerate(inter.items_by_user()):
        if len(items) == 0:
            continue
        pairs = np.stack([np.full(len(items), u), items], axis=1)
        if len(items) < 2:
            train.append(pairs)
            continue
        k = rng.integers(len(items))
        test.append(pairs[k:k + 1])
        train.append(np.delete(pairs, k, axis=0))
    empty = np.zeros((0, 2), dtype=np.int64)
    return DataSplit(
        train_edges=np.concatenate(train).astype(np.int64) if train else empty,
        test_edges=np.concatenate(test).astype(np.int64) if test else empty,
        rng_seed=seed,
    )


def sample_corrupt_tail(g: UnifiedGraph, h: int, r: int, rng) -> int:
    """Uniform tail t' with (h, r, t') not in the graph."""
    if g.entity_count < 2:
        raise NegativeSamplingError("need at least two entities")
    for _ in range(MAX_NEGATIVE_ATTEMPTS):
        t = int(rng.integers(g.entity_count))
        if not g.contains(h, r, t):
            return t
    raise NegativeSamplingError(f"no corrupt tail found for ({h}, {r}, .) in {MAX_NEGATIVE_ATTEMPTS} attempts")


def sample_corrupt_tails(g: UnifiedGraph, heads, rels, rng) -> np.ndarray:
    """Vectorized ``sample_corrupt_tail``: each position retries up to the cap."""
    heads = np.asarray(heads, dtype=np.int64)
    rels = np.asarray(rels, dtype=np.int64)
    if g.entity_count < 2:
        raise NegativeSamplingError("need at least two entities")
    out = rng.integers(g.entity_count, size=len(heads))
    bad = g.contains(heads, rels, out)
    for _ in range(MAX_NEGATIVE_ATTEMPTS - 1):
        if not bad.any():
            return out
        idx = np.flatnonzero(bad)
        out[idx] = rng.integers(g.entity_count, size=len(idx))
        bad[idx] = g.contains(heads[idx], rels[idx], out[idx])
    if bad.any():
        raise NegativeSamplingError(f"{int(bad.sum())} corrupt tails unsampleable")
    return out


def sample_negative_item(g: UnifiedGraph, u: int, rng) -> int:
    """Uniform item entity not interacted with by user entity ``u``."""
    n_items = len(g.item_entity)
    if len(np.unique(g.user_items(u))) >= n_items:
        raise NegativeSamplingError(f"user entity {u} interacted with every item")
    for _ in range(MAX_NEGATIVE_ATTEMPTS):
        cand = int(g.item_entity[rng.integers(n_items)])
        if not g.contains(u, g.click_relation, cand):
            return cand
    raise NegativeSamplingError(f"no negative item for user entity {u} in {MAX_NEGATIVE_ATTEMPTS} attempts")


def sample_negative_items(g: UnifiedGraph, users, rng) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    n_items = len(g.item_entity)
    out = g.item_entity[rng.integers(n_items, size=len(users))]
    click = np.full(len(users), g.click_relation)
    bad = g.contains(users, click, out)
    for _ in range(MAX_NEGATIVE_ATTEMPTS - 1):
        if not bad.any():
            return out
        idx = np.flatnonzero(bad)
        out[idx] = g.item_entity[rng.integers(n_items, size=len(idx))]
        bad[idx] = g.contains(users[idx], click[idx], out[idx])
    if bad.any():
        raise NegativeSamplingError(f"{int(bad.sum())} negative items unsampleable")
    return out


def load_dataset(data_dir, seed: int):
    """Read ``interactions.tsv``, ``triples.tsv`` and ``alignment.tsv``.

    Returns the full interaction graph, its leave-one-out split and the unified
    graph built from the training interactions only.
    """
    data_dir = Path(data_dir)
    inter = load_interactions(data_dir / "interactions.tsv")
    kg_path = data_dir / "triples.tsv"
    kg = load_triples(kg_path) if kg_path.exists() and kg_path.stat().st_size else empty_kg()
    al_path = data_dir / "alignment.tsv"
    alignment = load_alignment(al_path) if al_path.exists() and al_path.stat().st_size else {}
    split = split_leave_one_out(inter, seed)
    graph = unify(inter.with_edges(split.train_edges), kg, alignment)
    return inter, split, graph
