"""Training and evaluation: REINFORCE for both agents with opposing
rewards, supervised judge updates, the alternating schedule, metrics, and
checkpointing.

Per batch: sample balanced query pairs, roll out debates (agent tapes
recording), take one supervised judge step on the full transcripts, then
re-score each round's argument with the updated judge and apply one
REINFORCE step per agent. Agent 1's per-round reward is the judge score of
its argument; agent 2's is the negated score of its own. Rewards are
centered by a per-agent exponential moving-average baseline and an entropy
bonus keeps exploration alive. Everything is seeded and single-threaded,
so identical configs produce identical metrics logs.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .env import DebateConfig, DebateTranscript, run_debate
from .judge import Judge, JudgeDims, init_judge_store, judge_update
from .kg import (DatasetSplit, ExhaustedNegativesError, GraphIndex, LabeledQuery,
                 Vocab, build_index, corrupt_object)
from .params import AdamConfig, ParameterStore, save_checkpoint
from .policy import AgentPolicy, PolicyDims, init_agent_store

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.jsonl"


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 3                 # debate rounds N
    horizon: int = 3                # path horizon T (arguments have T-1 hops)
    rollouts_per_query: int = 5     # eval-time debates per query, majority vote
    train_rollouts: int = 1         # debates per query per training batch
    batch_size: int = 64            # queries per batch; even (positive/negative pairs)
    epochs: int = 50
    judge_pretrain_epochs: int = 10
    lr_judge: float = 1e-3
    lr_agent: float = 1e-4
    l2_judge: float = 0.0
    l2_agent: float = 0.0
    resample_negatives: int = 0  # 1: draw fresh corrupted train negatives each epoch
    judge_round_loss: int = 0    # 1: judge also trains on per-round singleton argument lists
    baseline_decay: float = 0.99
    entropy_weight: float = 1e-2
    eval_every: int = 10
    seed: int = 0
    entity_dim: int = 64
    relation_dim: int = 64
    hidden_dim: int = 128
    judge_hidden1: int = 128
    judge_hidden2: int = 64

    def __post_init__(self):
        if self.lr_judge <= 0 or self.lr_agent <= 0:
            raise ConfigError("learning rates must be positive")
        if self.l2_judge < 0 or self.l2_agent < 0:
            raise ConfigError("weight decay must be >= 0")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline_decay must be in [0, 1)")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be even and >= 2")
        if self.epochs < 0 or self.judge_pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        for name in ("rounds", "horizon", "rollouts_per_query", "train_rollouts",
                     "eval_every", "entity_dim", "relation_dim", "hidden_dim",
                     "judge_hidden1", "judge_hidden2"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.horizon < 2:
            raise ConfigError("horizon must be >= 2")

    def debate_config(self) -> DebateConfig:
        return DebateConfig(rounds=self.rounds, horizon=self.horizon,
                            rollouts_per_query=self.rollouts_per_query, seed=self.seed)

    def policy_dims(self) -> PolicyDims:
        return PolicyDims(self.entity_dim, self.relation_dim, self.hidden_dim)

    def judge_dims(self) -> JudgeDims:
        return JudgeDims(self.entity_dim, self.relation_dim,
                         self.judge_hidden1, self.judge_hidden2, self.horizon)


_CONFIG_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config_file(path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; unknown keys error."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def apply_config(mapping: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    updates = {}
    for key, raw in mapping.items():
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        kind = _CONFIG_TYPES[key]
        try:
            updates[key] = int(raw) if kind in (int, "int") else float(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None
    return dataclasses.replace(base, **updates)


@dataclass
class EvalReport:
    accuracy: float
    per_relation: dict[str, float]
    mean_score_true: float
    mean_score_false: float
    leak_rate: float
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_relation": self.per_relation,
            "mean_score_true": self.mean_score_true,
            "mean_score_false": self.mean_score_false,
            "leak_rate": self.leak_rate,
            "n_queries": self.n_queries,
        }


@dataclass
class DebateModels:
    vocab: Vocab
    agent1: AgentPolicy
    agent2: AgentPolicy
    judge: Judge

    def stores(self) -> dict[str, ParameterStore]:
        return {"agent1": self.agent1.store, "agent2": self.agent2.store,
                "judge": self.judge.store}


def build_models(vocab: Vocab, config: TrainConfig) -> DebateModels:
    def rng(k):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, k])))
    pd = config.policy_dims()
    return DebateModels(
        vocab=vocab,
        agent1=AgentPolicy(init_agent_store(rng(1), vocab, pd), pd),
        agent2=AgentPolicy(init_agent_store(rng(2), vocab, pd), pd),
        judge=Judge(init_judge_store(rng(3), vocab, config.judge_dims()), config.judge_dims()),
    )


def models_from_stores(vocab: Vocab, stores: dict[str, ParameterStore],
                       config: TrainConfig) -> DebateModels:
    pd = config.policy_dims()
    jd = config.judge_dims()
    if stores["agent1"]["entity_emb"].value.shape[0] != vocab.n_entities:
        raise TrainingError("checkpoint entity table does not match the graph vocab")
    return DebateModels(vocab=vocab,
                        agent1=AgentPolicy(stores["agent1"], pd),
                        agent2=AgentPolicy(stores["agent2"], pd),
                        judge=Judge(stores["judge"], jd))


# ---------------------------------------------------------------------------
# rewards and policy gradients


def round_rewards(transcript: DebateTranscript, scorer) -> list[tuple[int, int, float]]:
    """(agent, round, reward) per argument: agent 1 earns the judge score of
    its own argument, agent 2 the negated score of its own."""
    out = []
    for arg in transcript.arguments:
        f = float(scorer(transcript.query, arg))
        out.append((arg.agent, arg.round, f if arg.agent == 1 else -f))
    return out


@dataclass
class RoundItem:
    """One round of one rollout for one agent: its reward plus the recorded
    per-action log-prob and entropy nodes."""
    reward: float
    logprobs: list
    entropies: list


class EmaBaseline:
    """Per-agent reward baseline: exponential moving average over batches."""

    def __init__(self, decay: float):
        self.decay = decay
        self.value = 0.0

    def update(self, batch_mean: float):
        self.value = self.decay * self.value + (1.0 - self.decay) * batch_mean


def reinforce_step(store: ParameterStore, tape: Tape, items: list[RoundItem],
                   n_debates: int, baseline: float, entropy_weight: float,
                   adam: AdamConfig) -> float:
    """Gradient ascent on sum_rounds (R_n - b) * sum log pi + entropy bonus,
    averaged over debates; updates only this agent's parameters. Returns the
    surrogate loss value (the minimized negative objective)."""
    if not items:
        return 0.0
    terms = []
    for item in items:
        lp = ad.add_n(tape, item.logprobs)
        term = ad.scale(tape, lp, item.reward - baseline)
        if entropy_weight != 0.0 and item.entropies:
            ent = ad.add_n(tape, item.entropies)
            term = ad.add(tape, term, ad.scale(tape, ent, entropy_weight))
        terms.append(term)
    loss = ad.scale(tape, ad.add_n(tape, terms), -1.0 / max(n_debates, 1))
    store.zero_grad()
    tape.backward(loss)
    if not store.grad_is_finite():
        raise TrainingError("non-finite policy gradient")
    store.adam_step(adam)
    return float(loss.value)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(index: GraphIndex, models: DebateModels, test: list[LabeledQuery],
             config: TrainConfig, eval_seed: int) -> EvalReport:
    """Majority vote of (f >= 0.5) over rollouts_per_query debates per query,
    each on its own (eval_seed, query index) derived stream."""
    dconf = config.debate_config()
    vocab = models.vocab
    correct = 0
    rel_hits: dict[str, list[int]] = {}
    score_sum = {0: 0.0, 1: 0.0}
    score_n = {0: 0, 1: 0}
    leaks = 0
    debates = 0
    for qi, lq in enumerate(test):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([eval_seed, qi])))
        votes = 0
        scores = []
        for _ in range(config.rollouts_per_query):
            tr = run_debate(index, dconf, lq.triple, models.agent1, models.agent2, rng)
            f = float(models.judge.score_debate(lq.triple, tr.arguments).value)
            scores.append(f)
            votes += f >= 0.5
            leaks += tr.leak_flag
            debates += 1
            score_sum[lq.label] += f
            score_n[lq.label] += 1
        n = len(scores)
        pred = votes * 2 > n or (votes * 2 == n and float(np.mean(scores)) >= 0.5)
        hit = int(pred == bool(lq.label))
        correct += hit
        rel_hits.setdefault(vocab.relation_name(lq.triple.p), []).append(hit)
    return EvalReport(
        accuracy=correct / len(test),
        per_relation={r: float(np.mean(h)) for r, h in sorted(rel_hits.items())},
        mean_score_true=score_sum[1] / score_n[1] if score_n[1] else float("nan"),
        mean_score_false=score_sum[0] / score_n[0] if score_n[0] else float("nan"),
        leak_rate=leaks / debates,
        n_queries=len(test),
    )


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    models: DebateModels
    reports: list[tuple[int, EvalReport]]
    checkpoint_path: str | None = None
    metrics_path: str | None = None


def _pairs(train: list[LabeledQuery]) -> list[tuple[LabeledQuery, LabeledQuery]]:
    pos = [q for q in train if q.label == 1]
    neg = [q for q in train if q.label == 0]
    if len(pos) != len(neg):
        raise TrainingError(f"train split is unbalanced: {len(pos)} vs {len(neg)}")
    return list(zip(pos, neg))


def checkpoint_meta(config: TrainConfig, vocab: Vocab) -> dict:
    return {"config": dataclasses.asdict(config),
            "vocab": {"n_entities": vocab.n_entities, "n_base": vocab.n_base}}


def train(vocab: Vocab, split: DatasetSplit, config: TrainConfig,
          out_dir: str | None = None, progress=None) -> TrainResult:
    """Full alternating schedule. Writes checkpoint + metrics into out_dir
    when given; the metrics log carries one JSON line per evaluation and is
    byte-identical across runs with the same seed."""
    if not split.train:
        raise TrainingError("empty train split")
    index = build_index(vocab, split.graph_facts)
    models = build_models(vocab, config)
    dconf = config.debate_config()
    adam_judge = AdamConfig(config.lr_judge, weight_decay=config.l2_judge)
    adam_agent = AdamConfig(config.lr_agent, weight_decay=config.l2_agent)
    baselines = {1: EmaBaseline(config.baseline_decay), 2: EmaBaseline(config.baseline_decay)}
    rng_shuffle = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 10])))
    rng_rollout = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 11])))
    pairs = _pairs(split.train)

    resampler = None
    if config.resample_negatives:
        rng_negs = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 12])))
        positives = [q for q in split.train if q.label == 1]
        all_pos = [q.triple for q in split.train + split.test if q.label == 1]
        known = set(split.graph_facts) | set(all_pos)
        pools: dict[int, np.ndarray] = {}
        for t in all_pos:
            pools.setdefault(t.p, set()).add(t.o)  # type: ignore[arg-type]
        pools = {p: np.array(sorted(v), dtype=np.int64) for p, v in pools.items()}

        def resampler():
            fresh = []
            for pos in positives:
                try:
                    neg = corrupt_object(rng_negs, pos.triple, vocab, known, pools.get(pos.triple.p))
                except ExhaustedNegativesError:
                    continue
                fresh.append((pos, LabeledQuery(neg, 0)))
            return fresh

    metrics_path = checkpoint_path = None
    metrics_f = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, METRICS_NAME)
        checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
        metrics_f = open(metrics_path, "w", encoding="utf-8")

    reports: list[tuple[int, EvalReport]] = []

    def run_eval(epoch: int, judge_loss: float | None):
        report = evaluate(index, models, split.test, config, eval_seed=config.seed)
        reports.append((epoch, report))
        if metrics_f is not None:
            record = {"type": "eval", "epoch": epoch, "judge_loss": judge_loss,
                      "report": report.to_dict()}
            metrics_f.write(json.dumps(record, sort_keys=True) + "\n")
            metrics_f.flush()
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, models.stores(), checkpoint_meta(config, vocab))
        if progress is not None:
            progress(epoch, judge_loss, report)

    try:
        epoch = 0
        judge_loss = None
        for epoch in range(1, config.epochs + 1):
            if resampler is not None:
                pairs = resampler()
            order = rng_shuffle.permutation(len(pairs))
            epoch_losses = []
            for lo in range(0, len(order), config.batch_size // 2):
                batch = [pairs[int(i)] for i in order[lo:lo + config.batch_size // 2]]
                queries = [q for pair in batch for q in pair]
                tape1, tape2 = Tape(), Tape()
                models.agent1.tape, models.agent2.tape = tape1, tape2
                rollouts = []  # (label, transcript, traces)
                try:
                    for lq in queries:
                        for _ in range(config.train_rollouts):
                            traces: list = []
                            tr = run_debate(index, dconf, lq.triple, models.agent1,
                                            models.agent2, rng_rollout, trace_sink=traces)
                            tr.label = lq.label
                            rollouts.append((lq.label, tr, traces))
                finally:
                    models.agent1.tape = models.agent2.tape = None

                judge_batch = [(tr, lab) for lab, tr, _ in rollouts]
                if config.judge_round_loss:
                    judge_batch += [
                        (DebateTranscript(query=tr.query, arguments=[arg]), lab)
                        for lab, tr, _ in rollouts for arg in tr.arguments]
                epoch_losses.append(judge_update(models.judge, judge_batch, adam_judge))

                if epoch > config.judge_pretrain_epochs:
                    for agent_id, policy, tape in ((1, models.agent1, tape1),
                                                   (2, models.agent2, tape2)):
                        items = []
                        for _, tr, traces in rollouts:
                            rewards = {(a, r): v for a, r, v in
                                       round_rewards(tr, models.judge.score_value)
                                       if a == agent_id}
                            for arg, trace in zip(tr.arguments, traces):
                                if arg.agent != agent_id:
                                    continue
                                items.append(RoundItem(
                                    reward=rewards[(arg.agent, arg.round)],
                                    logprobs=[st.logprob for st in trace.steps],
                                    entropies=[st.entropy for st in trace.steps]))
                        reinforce_step(policy.store, tape, items, len(rollouts),
                                       baselines[agent_id].value, config.entropy_weight,
                                       adam_agent)
                        if items:
                            baselines[agent_id].update(float(np.mean([it.reward for it in items])))
            judge_loss = float(np.mean(epoch_losses)) if epoch_losses else None
            if epoch % config.eval_every == 0:
                run_eval(epoch, judge_loss)
        if not reports or reports[-1][0] != epoch:
            run_eval(epoch, judge_loss)
    finally:
        if metrics_f is not None:
            metrics_f.close()
    return TrainResult(models=models, reports=reports,
                       checkpoint_path=checkpoint_path, metrics_path=metrics_path)
