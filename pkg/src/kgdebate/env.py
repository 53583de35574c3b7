"""The debate environment: a fixed-horizon deterministic MDP over the graph
plus round scheduling and transcript assembly.

A debate over query (s_q, p_q, o_q) runs N rounds; in each round agent 1
then agent 2 walks exactly horizon-1 hops from s_q, after which the END
marker is appended. Arguments are self-contained paths; the transcript
keeps them in strict alternation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

from .kg import GraphIndex, Triple, Vocab

END_MARKER = "END"


class ContractViolation(RuntimeError):
    pass


class State(NamedTuple):
    entity: int
    query: Triple


class Action(NamedTuple):
    relation: int
    target: int


@dataclass(frozen=True)
class Argument:
    """One agent's path for one round, starting at the query subject."""
    agent: int
    round: int
    start: int
    steps: tuple[Action, ...]
    terminated_by: str = END_MARKER


@dataclass
class DebateTranscript:
    query: Triple
    arguments: list[Argument]
    judge_score: float | None = None
    label: int | None = None
    human_verdict: str | None = None
    leak_flag: bool = False


@dataclass(frozen=True)
class DebateConfig:
    rounds: int = 3          # N: alternating argument rounds
    horizon: int = 3         # T: each argument has horizon-1 hops
    rollouts_per_query: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.horizon < 2 or self.rollouts_per_query < 1:
            raise ValueError(f"bad debate config: {self}")


class Policy(Protocol):
    def begin_argument(self, query: Triple): ...
    def choose(self, history, actions: tuple[Action, ...], rng): ...


@dataclass
class StepTrace:
    """Differentiable bookkeeping for one sampled action (None when the
    policy does not record, e.g. uniform-random baselines)."""
    logprob: object = None
    entropy: object = None


@dataclass
class ArgumentTrace:
    agent: int
    round: int
    steps: list[StepTrace] = field(default_factory=list)


def available_actions(index: GraphIndex, state: State) -> tuple[Action, ...]:
    """All admissible transitions; never empty thanks to the self-loop."""
    return tuple(Action(r, t) for r, t in index.actions(state.entity))


def step(state: State, action: Action, index: GraphIndex | None = None) -> State:
    """Deterministic transition: move to the action target, keep the query."""
    if index is not None and (action.relation, action.target) not in index.actions(state.entity):
        raise ContractViolation(f"action {action} not admissible from entity {state.entity}")
    return State(action.target, state.query)


def _is_query_edge(vocab: Vocab, entity: int, action: Action, query: Triple) -> bool:
    if entity == query.s and action.relation == query.p and action.target == query.o:
        return True
    return (entity == query.o and action.relation == vocab.inverse(query.p)
            and action.target == query.s)


def run_debate(index: GraphIndex, config: DebateConfig, query: Triple,
               agent1: Policy, agent2: Policy, rng,
               trace_sink: list | None = None) -> DebateTranscript:
    """Roll out one full debate. Agent 1 argues each round before agent 2;
    every argument restarts at the query subject with a fresh history.

    When trace_sink is a list, one ArgumentTrace per argument is appended
    (for REINFORCE credit assignment by round).
    """
    vocab = index.vocab
    arguments: list[Argument] = []
    leak = False
    for n in range(1, config.rounds + 1):
        for agent_id, policy in ((1, agent1), (2, agent2)):
            history = policy.begin_argument(query)
            state = State(query.s, query)
            steps: list[Action] = []
            trace = ArgumentTrace(agent_id, n)
            for _ in range(config.horizon - 1):
                actions = available_actions(index, state)
                idx, info, history = policy.choose(history, actions, rng)
                if not 0 <= idx < len(actions):
                    raise ContractViolation(
                        f"policy for agent {agent_id} returned action index {idx} "
                        f"out of range 0..{len(actions) - 1}")
                action = actions[idx]
                if _is_query_edge(vocab, state.entity, action, query):
                    leak = True
                steps.append(action)
                trace.steps.append(info if isinstance(info, StepTrace) else StepTrace())
                state = step(state, action)
            arguments.append(Argument(agent_id, n, query.s, tuple(steps)))
            if trace_sink is not None:
                trace_sink.append(trace)
    return DebateTranscript(query=query, arguments=arguments, leak_flag=leak)


class UniformRandomPolicy:
    """Picks uniformly among admissible actions; records nothing."""

    def begin_argument(self, query: Triple):
        return None

    def choose(self, history, actions, rng):
        return int(rng.integers(len(actions))), None, None


def render_argument(vocab: Vocab, argument: Argument) -> str:
    """Human-readable conjunction of hop statements. Inverse hops are shown
    with subject/object swapped under the base relation name; self-loops as
    "(stays at e)"."""
    parts = []
    current = argument.start
    for action in argument.steps:
        rel, target = action.relation, action.target
        if rel == vocab.self_loop:
            parts.append(f"(stays at {vocab.entity_name(current)})")
        elif vocab.is_inverse(rel):
            base = vocab.relation_name(vocab.base_of(rel))
            parts.append(f"({vocab.entity_name(target)}, {base}, {vocab.entity_name(current)})")
        else:
            parts.append(f"({vocab.entity_name(current)}, {vocab.relation_name(rel)}, "
                         f"{vocab.entity_name(target)})")
        current = target
    return " ∧ ".join(parts)


def verify_walkable(index: GraphIndex, start: int, steps: list[Action] | tuple[Action, ...]) -> int | None:
    """Return the index of the first broken hop, or None if the path walks."""
    current = start
    for i, action in enumerate(steps):
        if (action.relation, action.target) not in index.actions(current):
            return i
        current = action.target
    return None


# ---------------------------------------------------------------------------
# JSON wire format


def argument_to_dict(vocab: Vocab, argument: Argument) -> dict:
    return {
        "agent": argument.agent,
        "round": argument.round,
        "start": vocab.entity_name(argument.start),
        "hops": [{"relation": vocab.relation_name(a.relation),
                  "entity": vocab.entity_name(a.target)} for a in argument.steps],
        "terminated_by": argument.terminated_by,
        "text": render_argument(vocab, argument),
    }


def transcript_to_dict(vocab: Vocab, transcript: DebateTranscript) -> dict:
    q = transcript.query
    return {
        "query": {
            "subject": vocab.entity_name(q.s),
            "predicate": vocab.relation_name(q.p),
            "object": vocab.entity_name(q.o),
        },
        "arguments": [argument_to_dict(vocab, a) for a in transcript.arguments],
        "judge_score": transcript.judge_score,
        "label": transcript.label,
        "human_verdict": transcript.human_verdict,
        "leak_flag": transcript.leak_flag,
    }


def transcript_from_dict(vocab: Vocab, doc: dict) -> DebateTranscript:
    q = doc["query"]
    query = Triple(vocab.entity_id(q["subject"]), vocab.relation_id(q["predicate"]),
                   vocab.entity_id(q["object"]))
    arguments = []
    for a in doc["arguments"]:
        steps = tuple(Action(vocab.relation_id(h["relation"]), vocab.entity_id(h["entity"]))
                      for h in a["hops"])
        arguments.append(Argument(a["agent"], a["round"], vocab.entity_id(a["start"]), steps))
    return DebateTranscript(query=query, arguments=arguments,
                            judge_score=doc.get("judge_score"), label=doc.get("label"),
                            human_verdict=doc.get("human_verdict"),
                            leak_flag=bool(doc.get("leak_flag", False)))
