import numpy as np
import pytest

from helpers import fd_gradient, max_rel_err

from kgdebate.autodiff import Tape
from kgdebate.demo import demo_index
from kgdebate.env import Action, Argument, DebateConfig, DebateTranscript, UniformRandomPolicy, run_debate
from kgdebate.judge import Judge, JudgeDims, init_judge_store, judge_update
from kgdebate.kg import Triple
from kgdebate.params import AdamConfig

DIMS = JudgeDims(entity_dim=4, relation_dim=3, hidden1=6, hidden2=5, horizon=3)


def make_judge(seed=0, dims=DIMS):
    index = demo_index()
    rng = np.random.default_rng(seed)
    return index, Judge(init_judge_store(rng, index.vocab, dims), dims)


def zero_judge():
    index, judge = make_judge()
    for t in judge.store.tensors():
        t.value[...] = 0.0
    return index, judge


def demo_query(vocab):
    return Triple(vocab.entity_id("Michael Jordan"), vocab.relation_id("has_profession"),
                  vocab.entity_id("Basketball player"))


def sample_arguments(index, n, seed=0, rounds=None):
    config = DebateConfig(rounds=rounds or (n + 1) // 2, horizon=DIMS.horizon,
                          rollouts_per_query=1, seed=0)
    tr = run_debate(index, config, demo_query(index.vocab), UniformRandomPolicy(),
                    UniformRandomPolicy(), np.random.default_rng(seed))
    return tr.arguments[:n]


# ---------------------------------------------------------------------------
# straight-line oracle


def oracle_score(store, dims, query, arguments):
    ent, rel = store["entity_emb"].value, store["relation_emb"].value

    def code(arg):
        parts = []
        for a in arg.steps:
            parts.append(rel[a.relation])
            parts.append(ent[a.target])
        parts.append(rel[query.p])
        parts.append(ent[query.o])
        x = np.concatenate(parts)
        h1 = np.maximum(x @ store["enc/W1"].value + store["enc/b1"].value, 0.0)
        return np.maximum(h1 @ store["enc/W2"].value + store["enc/b2"].value, 0.0)

    pooled = np.sum(np.stack([code(a) for a in arguments]), axis=0)
    z = pooled @ store["out/W"].value + store["out/b"].value
    return 1.0 / (1.0 + np.exp(-z[0]))


def test_score_matches_straightline_oracle():
    index, judge = make_judge(seed=4)
    q = demo_query(index.vocab)
    args = sample_arguments(index, 4, seed=6)
    got = float(judge.score_debate(q, args).value)
    assert max_rel_err(got, oracle_score(judge.store, DIMS, q, args)) < 1e-9


def test_encode_zero_params_zero_code():
    index, judge = zero_judge()
    q = demo_query(index.vocab)
    (arg,) = sample_arguments(index, 1)
    assert np.all(judge.encode_argument(q, arg).value == 0.0)


def test_encode_deterministic():
    index, judge = make_judge(seed=9)
    q = demo_query(index.vocab)
    (arg,) = sample_arguments(index, 1, seed=2)
    c1 = judge.encode_argument(q, arg).value
    c2 = judge.encode_argument(q, arg).value
    assert np.array_equal(c1, c2)


def test_encode_rejects_wrong_length():
    index, judge = make_judge()
    q = demo_query(index.vocab)
    short = Argument(agent=1, round=1, start=q.s, steps=(Action(index.vocab.self_loop, q.s),))
    with pytest.raises(ValueError):
        judge.encode_argument(q, short)


def test_zero_judge_scores_half():
    index, judge = zero_judge()
    q = demo_query(index.vocab)
    args = sample_arguments(index, 4, seed=3)
    assert float(judge.score_debate(q, args).value) == 0.5
    assert float(judge.score_single_argument(q, args[0]).value) == 0.5


def test_score_permutation_invariance_100_orderings():
    index, judge = make_judge(seed=12)
    q = demo_query(index.vocab)
    args = sample_arguments(index, 6, seed=8, rounds=3)
    base = float(judge.score_debate(q, args).value)
    rng = np.random.default_rng(0)
    for _ in range(100):
        perm = [args[i] for i in rng.permutation(len(args))]
        assert abs(float(judge.score_debate(q, perm).value) - base) < 1e-12


def test_duplicated_arguments_double_the_pooled_code():
    index, judge = make_judge(seed=15)
    q = demo_query(index.vocab)
    args = sample_arguments(index, 3, seed=5, rounds=2)
    got = float(judge.score_debate(q, args + args).value)
    # direct evaluation: sigmoid(linear(2 * sum of codes))
    pooled = 2.0 * np.sum(np.stack(
        [judge.encode_argument(q, a).value for a in args]), axis=0)
    z = pooled @ judge.store["out/W"].value + judge.store["out/b"].value
    assert abs(got - 1.0 / (1.0 + np.exp(-z[0]))) < 1e-12


def test_single_argument_score_is_singleton_debate():
    index, judge = make_judge(seed=20)
    q = demo_query(index.vocab)
    (arg,) = sample_arguments(index, 1, seed=9)
    assert (float(judge.score_single_argument(q, arg).value)
            == float(judge.score_debate(q, [arg]).value))


def test_empty_argument_list_rejected():
    index, judge = make_judge()
    with pytest.raises(ValueError):
        judge.score_debate(demo_query(index.vocab), [])


def test_scores_strictly_inside_unit_interval():
    index, judge = make_judge(seed=30)
    judge.store["out/b"].value[...] = 60.0  # saturate the sigmoid
    q = demo_query(index.vocab)
    args = sample_arguments(index, 2, seed=4)
    f = float(judge.score_debate(q, args).value)
    assert 0.0 < f < 1.0


def test_full_chain_gradient_matches_fd():
    index, judge = make_judge(seed=31)
    q = demo_query(index.vocab)
    args = sample_arguments(index, 4, seed=7)
    label = 1.0

    def forward(tape):
        judge.tape = tape
        try:
            from kgdebate import autodiff as ad
            f = judge.score_debate(q, args)
            return ad.bce_loss(tape, f, label)
        finally:
            judge.tape = None

    tape = Tape()
    loss = forward(tape)
    judge.store.zero_grad()
    tape.backward(loss)
    worst = 0.0
    for name in judge.store.names():
        t = judge.store[name]
        numeric = fd_gradient(lambda: float(forward(None).value), t.value)
        worst = max(worst, max_rel_err(t.grad, numeric))
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# updates


def batch_of(index, labels, seed=0):
    q = demo_query(index.vocab)
    out = []
    for k, label in enumerate(labels):
        args = sample_arguments(index, 4, seed=seed + k)
        out.append((DebateTranscript(query=q, arguments=list(args)), label))
    return out


def test_zero_init_judge_loss_is_ln2():
    index, judge = zero_judge()
    batch = batch_of(index, [1, 0, 1])
    loss = judge_update(judge, batch, AdamConfig(lr=1e-3))
    assert abs(loss - np.log(2.0)) < 1e-12


def test_already_correct_scores_give_tiny_loss_and_update():
    index, judge = make_judge(seed=40)
    judge.store["out/b"].value[...] = 14.0  # score ~ 1 - 1e-6 everywhere
    before = {n: judge.store[n].value.copy() for n in judge.store.names()}
    batch = batch_of(index, [1, 1, 1])
    loss = judge_update(judge, batch, AdamConfig(lr=1e-4))
    assert loss < 1e-5
    for n, old in before.items():
        assert np.max(np.abs(judge.store[n].value - old)) < 2e-4


def test_repeated_updates_monotone_decrease_50_steps():
    index, judge = make_judge(seed=41)
    batch = batch_of(index, [1, 0, 0, 1], seed=20)
    losses = [judge_update(judge, batch, AdamConfig(lr=3e-3)) for _ in range(51)]
    diffs = np.diff(losses[:51])
    assert np.all(diffs < 0.0), f"non-monotone at steps {np.where(diffs >= 0)[0]}"


def test_update_only_touches_judge_store():
    index, judge = make_judge(seed=42)
    from kgdebate.policy import AgentPolicy, PolicyDims, init_agent_store
    dims = PolicyDims(3, 3, 4)
    agent_store = init_agent_store(np.random.default_rng(0), index.vocab, dims)
    snap = agent_store.value_bytes()
    judge_update(judge, batch_of(index, [1, 0]), AdamConfig(lr=1e-2))
    assert agent_store.value_bytes() == snap
