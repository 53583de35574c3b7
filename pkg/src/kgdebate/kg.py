"""Knowledge-graph store: vocab, adjacency with inverse/self-loop edges,
train/test splits, and corrupted-triple negative sampling.

Relation id layout: base relations occupy [0, B) in first-seen order, the
inverse of base r is r + B (named "_" + name), and the self-loop relation
id is 2B. Entity and relation names are opaque strings; the only
normalization at load time is stripping the line terminator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SELF_LOOP_NAME = "<self_loop>"
GRAPH_FORMAT = "kgdebate-graph"
SPLIT_FORMAT = "kgdebate-split"
FORMAT_VERSION = 1


class KgError(RuntimeError):
    pass


class ParseError(KgError):
    pass


class VocabError(KgError):
    pass


class InvalidTripleError(KgError):
    pass


class ExhaustedNegativesError(KgError):
    """Every candidate object of a corruption is already a known fact."""


class EmptySplitError(KgError):
    pass


class Triple(NamedTuple):
    s: int
    p: int
    o: int


class LabeledQuery(NamedTuple):
    triple: Triple
    label: int


class Vocab:
    """Bidirectional entity/relation name maps with inverse relations."""

    def __init__(self, entity_names: list[str], base_relation_names: list[str]):
        seen = set()
        for name in base_relation_names:
            if name.startswith("_") or name == SELF_LOOP_NAME:
                raise VocabError(f"reserved relation name in input: {name!r}")
            if name in seen:
                raise VocabError(f"duplicate relation name: {name!r}")
            seen.add(name)
        if len(set(entity_names)) != len(entity_names):
            raise VocabError("duplicate entity name")
        self.entities = list(entity_names)
        self.n_base = len(base_relation_names)
        self.relations = (list(base_relation_names)
                          + ["_" + n for n in base_relation_names]
                          + [SELF_LOOP_NAME])
        self._entity_ids = {n: i for i, n in enumerate(self.entities)}
        self._relation_ids = {n: i for i, n in enumerate(self.relations)}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def self_loop(self) -> int:
        return 2 * self.n_base

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise VocabError(f"unknown entity: {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise VocabError(f"unknown relation: {name!r}") from None

    def entity_name(self, eid: int) -> str:
        return self.entities[eid]

    def relation_name(self, rid: int) -> str:
        return self.relations[rid]

    def has_entity(self, name: str) -> bool:
        return name in self._entity_ids

    def has_relation(self, name: str) -> bool:
        return name in self._relation_ids

    def is_inverse(self, rid: int) -> bool:
        return self.n_base <= rid < 2 * self.n_base

    def inverse(self, rid: int) -> int:
        """Partner relation: inverse(inverse(r)) == r; self-loop is its own."""
        if rid < self.n_base:
            return rid + self.n_base
        if rid < 2 * self.n_base:
            return rid - self.n_base
        if rid == self.self_loop:
            return rid
        raise VocabError(f"relation id out of range: {rid}")

    def base_of(self, rid: int) -> int:
        return rid - self.n_base if self.is_inverse(rid) else rid


def load_triples(path) -> tuple[Vocab, list[Triple]]:
    """Read a `subject<TAB>predicate<TAB>object` file into ids.

    Entity/relation ids are assigned in first-seen order; triples keep file
    order. Duplicate lines stay duplicated here (the index dedups).
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        text = f.read()
    entity_names: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_names: list[str] = []
    relation_ids: dict[str, int] = {}
    raw: list[tuple[int, int, int]] = []

    def eid(name):
        i = entity_ids.get(name)
        if i is None:
            i = len(entity_names)
            entity_ids[name] = i
            entity_names.append(name)
        return i

    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
        s, p, o = fields
        rid = relation_ids.get(p)
        if rid is None:
            rid = len(relation_names)
            relation_ids[p] = rid
            relation_names.append(p)
        raw.append((eid(s), rid, eid(o)))
    vocab = Vocab(entity_names, relation_names)
    return vocab, [Triple(*t) for t in raw]


class GraphIndex:
    """Immutable adjacency with inverse edges and one self-loop per entity.

    Action lists are deduplicated and ordered by (relation id, target id);
    all sampling and debate code relies on that deterministic order.
    """

    def __init__(self, vocab: Vocab, facts: list[Triple]):
        self.vocab = vocab
        adj: list[set[tuple[int, int]]] = [set() for _ in range(vocab.n_entities)]
        triples: set[Triple] = set()
        for t in facts:
            if not (0 <= t.s < vocab.n_entities and 0 <= t.o < vocab.n_entities
                    and 0 <= t.p < vocab.n_relations):
                raise InvalidTripleError(f"triple references unknown id: {t}")
            adj[t.s].add((t.p, t.o))
            adj[t.o].add((vocab.inverse(t.p), t.s))
            triples.add(t)
        loop = vocab.self_loop
        self._actions: list[tuple[tuple[int, int], ...]] = []
        self._rel_arrays: list[np.ndarray] = []
        self._tgt_arrays: list[np.ndarray] = []
        for e in range(vocab.n_entities):
            adj[e].add((loop, e))
            acts = tuple(sorted(adj[e]))
            self._actions.append(acts)
            self._rel_arrays.append(np.fromiter((a[0] for a in acts), dtype=np.int64, count=len(acts)))
            self._tgt_arrays.append(np.fromiter((a[1] for a in acts), dtype=np.int64, count=len(acts)))
        self.triples = frozenset(triples)

    def actions(self, entity: int) -> tuple[tuple[int, int], ...]:
        return self._actions[entity]

    def action_arrays(self, entity: int) -> tuple[np.ndarray, np.ndarray]:
        """(relation ids, target ids) in the same deterministic order."""
        return self._rel_arrays[entity], self._tgt_arrays[entity]

    def contains(self, s: int, p: int, o: int) -> bool:
        return Triple(s, p, o) in self.triples


def build_index(vocab: Vocab, facts: list[Triple]) -> GraphIndex:
    return GraphIndex(vocab, facts)


def corrupt_object(rng, positive: Triple, vocab: Vocab, known: set[Triple],
                   pool: np.ndarray | None = None) -> Triple:
    """Replace the object with a uniformly drawn entity that makes the triple
    unknown. `pool` optionally restricts candidate objects (e.g. to objects
    seen with the same relation); default is all entities.

    Rejection sampling keeps the draw uniform over eligible candidates; if a
    run of rejections suggests the pool is (nearly) exhausted we enumerate,
    which also detects the no-candidate case exactly.
    """
    s, p, o = positive
    candidates = pool if pool is not None else None
    n = vocab.n_entities if candidates is None else len(candidates)
    if n == 0:
        raise ExhaustedNegativesError(f"no corruption candidates for {positive}")
    for _ in range(64):
        pick = int(rng.integers(n))
        cand = pick if candidates is None else int(candidates[pick])
        if cand != o and Triple(s, p, cand) not in known:
            return Triple(s, p, cand)
    eligible = [int(c) for c in (range(vocab.n_entities) if candidates is None else candidates)
                if c != o and Triple(s, p, int(c)) not in known]
    if not eligible:
        raise ExhaustedNegativesError(f"all objects of ({s},{p},*) are known facts")
    return Triple(s, p, eligible[int(rng.integers(len(eligible)))])


@dataclass
class DatasetSplit:
    """Labeled train/test queries plus the facts the traversal graph keeps.

    Test positives are excluded from graph_facts so evaluation edges never
    leak; train positives stay walkable.
    """
    train: list[LabeledQuery]
    test: list[LabeledQuery]
    graph_facts: list[Triple] = field(repr=False)


def make_split(facts: list[Triple], target_relations: list[int], test_fraction: float,
               rng, vocab: Vocab, corrupt_mode: str = "uniform",
               exclude_target_edges: bool = False) -> DatasetSplit:
    """Build balanced labeled splits over the target relations.

    Every positive is paired with one corrupted negative; positives whose
    corruption is exhausted are dropped to keep the pairing exact.
    corrupt_mode "uniform" draws objects from all entities,
    "relation_objects" from objects observed with the triple's relation.
    By default only test positives leave the traversal graph (train query
    edges stay walkable); exclude_target_edges=True masks every
    target-relation edge so train-time arguments cannot shortcut through
    the query edge itself.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    if corrupt_mode not in ("uniform", "relation_objects"):
        raise ValueError(f"unknown corrupt_mode: {corrupt_mode!r}")
    targets = set(target_relations)
    seen: set[Triple] = set()
    positives = []
    for t in facts:
        if t.p in targets and t not in seen:
            positives.append(t)
            seen.add(t)
    if not positives:
        raise EmptySplitError("no triple matches the target relations")
    known = set(facts)
    pools: dict[int, np.ndarray] = {}
    if corrupt_mode == "relation_objects":
        objs: dict[int, set[int]] = {}
        for t in positives:
            objs.setdefault(t.p, set()).add(t.o)
        pools = {p: np.array(sorted(v), dtype=np.int64) for p, v in objs.items()}

    order = rng.permutation(len(positives))
    n_test = int(round(len(positives) * test_fraction))
    test_idx = set(int(i) for i in order[:n_test])

    def paired(idx_list):
        out = []
        for i in idx_list:
            pos = positives[i]
            try:
                neg = corrupt_object(rng, pos, vocab, known, pools.get(pos.p))
            except ExhaustedNegativesError:
                continue
            out.append((LabeledQuery(pos, 1), LabeledQuery(neg, 0)))
        return out

    test_pairs = paired([int(i) for i in order[:n_test]])
    train_pairs = paired([int(i) for i in order[n_test:]])
    test_pos = {q.triple for q, _ in test_pairs}
    if exclude_target_edges:
        graph_facts = [t for t in facts if t.p not in targets]
    else:
        graph_facts = [t for t in facts if t not in test_pos]
    flatten = lambda pairs: [q for pair in pairs for q in pair]
    return DatasetSplit(train=flatten(train_pairs), test=flatten(test_pairs),
                        graph_facts=graph_facts)


# ---------------------------------------------------------------------------
# snapshots


def save_graph(path, vocab: Vocab, facts: list[Triple]):
    doc = {
        "format": GRAPH_FORMAT,
        "version": FORMAT_VERSION,
        "entities": vocab.entities,
        "base_relations": vocab.relations[:vocab.n_base],
        "facts": [[t.s, t.p, t.o] for t in facts],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def load_graph(path) -> tuple[Vocab, list[Triple]]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != GRAPH_FORMAT:
        raise ParseError(f"{path}: not a graph snapshot")
    if doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported snapshot version {doc.get('version')}")
    vocab = Vocab(doc["entities"], doc["base_relations"])
    return vocab, [Triple(*t) for t in doc["facts"]]


def save_split(path, split: DatasetSplit):
    doc = {
        "format": SPLIT_FORMAT,
        "version": FORMAT_VERSION,
        "train": [[q.triple.s, q.triple.p, q.triple.o, q.label] for q in split.train],
        "test": [[q.triple.s, q.triple.p, q.triple.o, q.label] for q in split.test],
        "graph_facts": [[t.s, t.p, t.o] for t in split.graph_facts],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def load_split(path) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != SPLIT_FORMAT:
        raise ParseError(f"{path}: not a split file")
    row = lambda r: LabeledQuery(Triple(r[0], r[1], r[2]), r[3])
    return DatasetSplit(train=[row(r) for r in doc["train"]],
                        test=[row(r) for r in doc["test"]],
                        graph_facts=[Triple(*t) for t in doc["graph_facts"]])
