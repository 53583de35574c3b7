"""Synthetic rule-governed KG: nationality(x, c) holds exactly when some
city links x to c via born_in(x, city) and located_in(city, c). Distractor
relations (professions, friendships, twin cities) add branching that is
uncorrelated with the rule, so a classifier only wins by following paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import DatasetSplit, Triple, Vocab, make_split

TARGET_RELATION = "nationality"
RULE_RELATIONS = ("born_in", "located_in")


@dataclass(frozen=True)
class SyntheticConfig:
    persons: int = 140
    cities: int = 40
    countries: int = 8
    professions: int = 12
    friends_per_person: int = 1
    twins_per_city: int = 1
    seed: int = 7


def build_rule_graph(cfg: SyntheticConfig) -> tuple[Vocab, list[Triple]]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    entity_names = ([f"person_{i:03d}" for i in range(cfg.persons)]
                    + [f"city_{i:02d}" for i in range(cfg.cities)]
                    + [f"country_{i}" for i in range(cfg.countries)]
                    + [f"profession_{i:02d}" for i in range(cfg.professions)])
    relations = [TARGET_RELATION, "born_in", "located_in", "works_as",
                 "has_friend", "twinned_with"]
    vocab = Vocab(entity_names, relations)
    e = vocab.entity_id
    r = vocab.relation_id

    person = [f"person_{i:03d}" for i in range(cfg.persons)]
    city = [f"city_{i:02d}" for i in range(cfg.cities)]
    country = [f"country_{i}" for i in range(cfg.countries)]
    profession = [f"profession_{i:02d}" for i in range(cfg.professions)]

    facts: list[Triple] = []
    # the rule backbone: one birth city per person, one country per city;
    # round-robin over shuffled lists keeps country/city coverage balanced
    city_order = [city[int(i)] for i in rng.permutation(cfg.cities)]
    city_country = {c: country[k % cfg.countries] for k, c in enumerate(city_order)}
    for c in city:
        facts.append(Triple(e(c), r("located_in"), e(city_country[c])))
    person_order = [person[int(i)] for i in rng.permutation(cfg.persons)]
    for k, p in enumerate(person_order):
        born = city_order[k % cfg.cities]
        facts.append(Triple(e(p), r("born_in"), e(born)))
        facts.append(Triple(e(p), r(TARGET_RELATION), e(city_country[born])))
    # distractors, independent of the rule
    for p in person:
        facts.append(Triple(e(p), r("works_as"),
                            e(profession[int(rng.integers(cfg.professions))])))
        others = [q for q in person if q != p]
        for k in rng.choice(len(others), size=min(cfg.friends_per_person, len(others)),
                            replace=False):
            facts.append(Triple(e(p), r("has_friend"), e(others[int(k)])))
    for c in city:
        others = [d for d in city if d != c]
        for k in rng.choice(len(others), size=min(cfg.twins_per_city, len(others)),
                            replace=False):
            facts.append(Triple(e(c), r("twinned_with"), e(others[int(k)])))
    return vocab, facts


def rule_split(vocab: Vocab, facts: list[Triple], test_fraction: float = 0.25,
               seed: int = 13) -> DatasetSplit:
    """Balanced nationality split with type-consistent negatives (corrupted
    objects drawn from observed countries, so the truth value genuinely
    depends on the path structure). All nationality edges are masked from
    the traversal graph: otherwise train-time debates shortcut through the
    query edge and the judge learns a feature that cannot transfer to test
    queries, whose edges are held out."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    return make_split(facts, [vocab.relation_id(TARGET_RELATION)], test_fraction,
                      rng, vocab, corrupt_mode="relation_objects",
                      exclude_target_edges=True)


def follows_rule_path(vocab: Vocab, argument) -> bool:
    """Does an argument walk born_in then located_in (ignoring self-loop
    padding before/between/after)?"""
    names = [vocab.relation_name(a.relation) for a in argument.steps
             if a.relation != vocab.self_loop]
    return tuple(names[:2]) == RULE_RELATIONS if len(names) >= 2 else False
