"""The judge: a sum-pooling binary classifier over debate arguments.

Each argument (its horizon-1 hop embeddings, concatenated with the query
predicate and query object embeddings) is encoded by a two-hidden-layer
feed-forward network; the per-argument codes are summed and a linear layer
plus sigmoid yields the truth score in (0,1). Per-round reward scores use
the same parameters on a singleton argument list. The judge never sees
which agent produced an argument, nor the query subject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .env import Argument, DebateTranscript
from .kg import Triple, Vocab
from .params import AdamConfig, ParameterStore, normal_embeddings, xavier_uniform


class JudgeUpdateError(RuntimeError):
    pass


@dataclass(frozen=True)
class JudgeDims:
    entity_dim: int = 64
    relation_dim: int = 64
    hidden1: int = 128
    hidden2: int = 64
    horizon: int = 3     # arguments carry exactly horizon-1 hops

    @property
    def input_dim(self) -> int:
        hop = self.relation_dim + self.entity_dim
        return (self.horizon - 1) * hop + self.relation_dim + self.entity_dim


def init_judge_store(rng, vocab: Vocab, dims: JudgeDims) -> ParameterStore:
    store = ParameterStore()
    store.add("entity_emb", normal_embeddings(rng, vocab.n_entities, dims.entity_dim))
    store.add("relation_emb", normal_embeddings(rng, vocab.n_relations, dims.relation_dim))
    store.add("enc/W1", xavier_uniform(rng, dims.input_dim, dims.hidden1))
    store.add("enc/b1", np.zeros(dims.hidden1))
    store.add("enc/W2", xavier_uniform(rng, dims.hidden1, dims.hidden2))
    store.add("enc/b2", np.zeros(dims.hidden2))
    store.add("out/W", xavier_uniform(rng, dims.hidden2, 1))
    store.add("out/b", np.zeros(1))
    return store


class Judge:
    def __init__(self, store: ParameterStore, dims: JudgeDims):
        self.store = store
        self.dims = dims
        self.tape: Tape | None = None

    def encode_argument(self, query: Triple, argument: Argument) -> Tensor:
        if len(argument.steps) != self.dims.horizon - 1:
            raise ValueError(f"argument has {len(argument.steps)} hops, "
                             f"expected {self.dims.horizon - 1}")
        tape = self.tape
        p = self.store
        parts = []
        for action in argument.steps:
            parts.append(ad.lookup(tape, p["relation_emb"], action.relation))
            parts.append(ad.lookup(tape, p["entity_emb"], action.target))
        parts.append(ad.lookup(tape, p["relation_emb"], query.p))
        parts.append(ad.lookup(tape, p["entity_emb"], query.o))
        x = ad.concat(tape, parts)
        h1 = ad.relu(tape, ad.affine(tape, x, p["enc/W1"], p["enc/b1"]))
        return ad.relu(tape, ad.affine(tape, h1, p["enc/W2"], p["enc/b2"]))

    def score_debate(self, query: Triple, arguments: list[Argument]) -> Tensor:
        """sigmoid(linear(sum of argument codes)), strictly inside (0,1)."""
        if not arguments:
            raise ValueError("score_debate needs at least one argument")
        tape = self.tape
        p = self.store
        pooled = ad.add_n(tape, [self.encode_argument(query, a) for a in arguments])
        z = ad.affine(tape, pooled, p["out/W"], p["out/b"])
        return _as_scalar(tape, ad.sigmoid_clamped(tape, z))

    def score_single_argument(self, query: Triple, argument: Argument) -> Tensor:
        return self.score_debate(query, [argument])

    def score_value(self, query: Triple, argument: Argument) -> float:
        """Reward-side score: plain float, no recording."""
        saved, self.tape = self.tape, None
        try:
            return float(self.score_single_argument(query, argument).value)
        finally:
            self.tape = saved


def _as_scalar(tape, x: Tensor) -> Tensor:
    """View a length-1 vector as a 0-d scalar tensor."""
    out = Tensor(x.value[0])
    if tape is not None:
        def bw():
            x.grad[0] += out.grad
        tape.ops.append(bw)
    return out


def judge_update(judge: Judge, batch: list[tuple[DebateTranscript, int]],
                 adam: AdamConfig) -> float:
    """One supervised step: mean BCE over the batch, Adam on judge params
    only. Returns the pre-step loss."""
    if not batch:
        raise ValueError("empty judge batch")
    tape = Tape()
    judge.tape = tape
    try:
        losses = []
        for transcript, label in batch:
            f = judge.score_debate(transcript.query, transcript.arguments)
            losses.append(ad.bce_loss(tape, f, label))
        mean_loss = ad.scale(tape, ad.add_n(tape, losses), 1.0 / len(losses))
        judge.store.zero_grad()
        tape.backward(mean_loss)
    finally:
        judge.tape = None
    if not np.isfinite(mean_loss.value) or not judge.store.grad_is_finite():
        raise JudgeUpdateError("non-finite judge loss or gradient")
    judge.store.adam_step(adam)
    return float(mean_loss.value)
