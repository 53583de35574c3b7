"""A 12-fact basketball mini-graph used by tests, docs, and the demo CLI.

Small enough to enumerate by hand, rich enough to show multi-hop pro and
con arguments around the query (Michael Jordan, has_profession,
Basketball player).
"""

from __future__ import annotations

from .kg import GraphIndex, Triple, Vocab, build_index

DEMO_TRIPLES: list[tuple[str, str, str]] = [
    ("Michael Jordan", "plays_for", "Chicago Bulls"),
    ("Michael Jordan", "plays_for", "Washington Wizzards"),
    ("Chicago Bulls", "team_of", "NBA"),
    ("Washington Wizzards", "team_of", "NBA"),
    ("Michael Jordan", "plays_for", "Chicago White Sox"),
    ("Chicago White Sox", "team_of", "MLB"),
    ("Michael Jordan", "has_gender", "male"),
    ("Michael Jordan", "plays_role_in", "Space Jam"),
    ("Michael Jordan", "has_nationality", "USA"),
    ("Space Jam", "has_genre", "Children's Movie"),
    ("Space Jam", "produced_in", "USA"),
    ("Michael Jordan", "has_profession", "Basketball player"),
]

DEMO_QUERY = ("Michael Jordan", "has_profession", "Basketball player")


def demo_vocab_and_facts() -> tuple[Vocab, list[Triple]]:
    entity_names: list[str] = []
    seen_e: dict[str, int] = {}
    relation_names: list[str] = []
    seen_r: dict[str, int] = {}

    def eid(name):
        if name not in seen_e:
            seen_e[name] = len(entity_names)
            entity_names.append(name)
        return seen_e[name]

    def rid(name):
        if name not in seen_r:
            seen_r[name] = len(relation_names)
            relation_names.append(name)
        return seen_r[name]

    facts = [Triple(eid(s), rid(p), eid(o)) for s, p, o in DEMO_TRIPLES]
    return Vocab(entity_names, relation_names), facts


def demo_index() -> GraphIndex:
    vocab, facts = demo_vocab_and_facts()
    return build_index(vocab, facts)


def write_demo_tsv(path):
    with open(path, "w", encoding="utf-8") as f:
        for s, p, o in DEMO_TRIPLES:
            f.write(f"{s}\t{p}\t{o}\n")
