"""Agent policies: an LSTM history encoder with a dense head that scores
admissible actions against their embeddings.

Each agent owns fully separate embedding tables and weights. An argument
starts by pushing the query encoding (subject, predicate, object
embeddings, linearly projected to the action-embedding width) through the
LSTM from the zero state; every sampled action is then fed back in. The
head sees the recurrent state together with the query predicate and
object embeddings, so the agent keeps direct query access at every hop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .env import Action, StepTrace
from .kg import Triple, Vocab
from .params import ParameterStore, normal_embeddings, xavier_uniform


@dataclass(frozen=True)
class PolicyDims:
    entity_dim: int = 64
    relation_dim: int = 64
    hidden_dim: int = 128

    @property
    def action_dim(self) -> int:
        return self.relation_dim + self.entity_dim

    @property
    def query_dim(self) -> int:
        return 2 * self.entity_dim + self.relation_dim


@dataclass
class History:
    """Recurrent summary of one argument so far, plus cached query inputs."""
    h: Tensor
    c: Tensor
    query_rel: Tensor
    query_obj: Tensor


def init_agent_store(rng, vocab: Vocab, dims: PolicyDims) -> ParameterStore:
    store = ParameterStore()
    d_a, d_h, d_q = dims.action_dim, dims.hidden_dim, dims.query_dim
    store.add("entity_emb", normal_embeddings(rng, vocab.n_entities, dims.entity_dim))
    store.add("relation_emb", normal_embeddings(rng, vocab.n_relations, dims.relation_dim))
    store.add("qproj/W", xavier_uniform(rng, d_q, d_a))
    store.add("qproj/b", np.zeros(d_a))
    store.add("lstm/Wx", xavier_uniform(rng, d_a, 4 * d_h, shape=(d_a, 4 * d_h)))
    store.add("lstm/Wh", xavier_uniform(rng, d_h, 4 * d_h, shape=(d_h, 4 * d_h)))
    store.add("lstm/b", np.zeros(4 * d_h))
    head_in = d_h + dims.relation_dim + dims.entity_dim
    store.add("head/W1", xavier_uniform(rng, head_in, d_h))
    store.add("head/b1", np.zeros(d_h))
    store.add("head/W2", xavier_uniform(rng, d_h, d_a))
    store.add("head/b2", np.zeros(d_a))
    return store


class AgentPolicy:
    """One debating agent. Set `tape` to record differentiable rollouts;
    leave it None for inference."""

    def __init__(self, store: ParameterStore, dims: PolicyDims):
        self.store = store
        self.dims = dims
        self.tape: Tape | None = None

    def init_history(self, query: Triple) -> History:
        tape = self.tape
        p = self.store
        enc = ad.concat(tape, [
            ad.lookup(tape, p["entity_emb"], query.s),
            ad.lookup(tape, p["relation_emb"], query.p),
            ad.lookup(tape, p["entity_emb"], query.o),
        ])
        x0 = ad.affine(tape, enc, p["qproj/W"], p["qproj/b"])
        zeros = Tensor(np.zeros(self.dims.hidden_dim))
        h, c = ad.lstm_step(tape, x0, zeros, Tensor(np.zeros(self.dims.hidden_dim)),
                            p["lstm/Wx"], p["lstm/Wh"], p["lstm/b"])
        return History(h=h, c=c,
                       query_rel=ad.lookup(tape, p["relation_emb"], query.p),
                       query_obj=ad.lookup(tape, p["entity_emb"], query.o))

    def action_distribution(self, history: History, actions) -> Tensor:
        """Masked softmax over dot products between the head output and each
        admissible action's embedding."""
        if len(actions) == 0:
            raise ValueError("empty action list")
        tape = self.tape
        p = self.store
        head_in = ad.concat(tape, [history.h, history.query_rel, history.query_obj])
        hidden = ad.relu(tape, ad.affine(tape, head_in, p["head/W1"], p["head/b1"]))
        u = ad.affine(tape, hidden, p["head/W2"], p["head/b2"])
        rel_ids = np.fromiter((a[0] for a in actions), dtype=np.int64, count=len(actions))
        tgt_ids = np.fromiter((a[1] for a in actions), dtype=np.int64, count=len(actions))
        emb = ad.hconcat(tape, ad.rows(tape, p["relation_emb"], rel_ids),
                         ad.rows(tape, p["entity_emb"], tgt_ids))
        scores = ad.matvec(tape, emb, u)
        return ad.masked_softmax(tape, scores, len(actions))

    def advance(self, history: History, action: Action) -> History:
        tape = self.tape
        p = self.store
        x = ad.concat(tape, [ad.lookup(tape, p["relation_emb"], action.relation),
                             ad.lookup(tape, p["entity_emb"], action.target)])
        h, c = ad.lstm_step(tape, x, history.h, history.c,
                            p["lstm/Wx"], p["lstm/Wh"], p["lstm/b"])
        return History(h=h, c=c, query_rel=history.query_rel, query_obj=history.query_obj)

    def sample_and_advance(self, history: History, actions, rng):
        """Draw an action from the categorical distribution, recording its
        log-probability (and entropy, for the exploration bonus)."""
        probs = self.action_distribution(history, actions)
        idx = ad.sample_categorical(rng, probs.value)
        logprob = ad.log_entry(self.tape, probs, idx)
        ent = ad.entropy(self.tape, probs)
        action = Action(*actions[idx])
        return idx, action, logprob, ent, self.advance(history, action)

    # env.Policy protocol
    def begin_argument(self, query: Triple) -> History:
        return self.init_history(query)

    def choose(self, history: History, actions, rng):
        idx, _, logprob, ent, new_history = self.sample_and_advance(history, actions, rng)
        return idx, StepTrace(logprob=logprob, entropy=ent), new_history
