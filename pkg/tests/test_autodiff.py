import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_grads, fd_gradient, max_rel_err

from kgdebate import autodiff as ad
from kgdebate.autodiff import NonFiniteError, ShapeError, Tape, Tensor


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape))


# ---------------------------------------------------------------------------
# per-op finite-difference checks (20 random small shapes each)


@pytest.mark.parametrize("trial", range(20))
def test_affine_matvec_pointwise_grads(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    x, w, b = rand(rng, n), rand(rng, n, m), rand(rng, m)
    mat, v = rand(rng, m, n), rand(rng, n)
    probe1 = rng.normal(size=m)
    probe2 = rng.normal(size=m)

    def build():
        tape = Tape()
        y = ad.affine(tape, x, w, b)
        z = ad.add(tape, ad.tanh(tape, y), ad.sigmoid(tape, y))
        k = ad.matvec(tape, mat, v)
        loss = ad.add(tape, ad_dot(tape, z, probe1), ad_dot(tape, k, probe2))
        return tape, loss

    check_grads(build, [x, w, b, mat, v])


def ad_dot(tape, t, probe):
    """Linear probe turning a vector tensor into a scalar loss."""
    return ad.scale(tape, _sum_all(tape, ad.mul(tape, t, Tensor(probe))), 1.0)


def _sum_all(tape, t):
    out = Tensor(np.sum(t.value))
    if tape is not None:
        def bw():
            t.grad += out.grad
        tape.ops.append(bw)
    return out


@pytest.mark.parametrize("trial", range(20))
def test_mul_scale_concat_rows_grads(trial):
    rng = np.random.default_rng(200 + trial)
    n = int(rng.integers(1, 5))
    k = int(rng.integers(1, 4))
    a, b = rand(rng, n), rand(rng, n)
    table = rand(rng, 6, n)
    idx = rng.integers(0, 6, size=k)  # duplicates allowed
    probe = rng.normal(size=2 * n + k * n)
    probe_rows = rng.normal(size=k * n)

    def build():
        tape = Tape()
        prod = ad.mul(tape, a, b)
        sc = ad.scale(tape, a, 1.7)
        flat = ad.concat(tape, [prod, sc] + [ad.lookup(tape, table, int(i)) for i in idx])
        gathered = _flatten(tape, ad.rows(tape, table, idx))
        return tape, ad.add(tape, ad_dot(tape, flat, probe),
                            ad_dot(tape, gathered, probe_rows))

    check_grads(build, [a, b, table])


@pytest.mark.parametrize("trial", range(20))
def test_relu_grad_away_from_kink(trial):
    rng = np.random.default_rng(300 + trial)
    n = int(rng.integers(1, 6))
    x = Tensor(np.where(np.abs(z := rng.normal(size=n)) < 1e-2, z + 0.5, z))
    probe = rng.normal(size=n)

    def build():
        tape = Tape()
        return tape, ad_dot(tape, ad.relu(tape, x), probe)

    check_grads(build, [x])


@pytest.mark.parametrize("trial", range(20))
def test_lstm_step_grads(trial):
    rng = np.random.default_rng(400 + trial)
    d_in = int(rng.integers(1, 4))
    d_h = int(rng.integers(1, 4))
    x, h, c = rand(rng, d_in), rand(rng, d_h), rand(rng, d_h)
    wx, wh, b = rand(rng, d_in, 4 * d_h), rand(rng, d_h, 4 * d_h), rand(rng, 4 * d_h)
    p1, p2 = rng.normal(size=d_h), rng.normal(size=d_h)

    def build():
        tape = Tape()
        h2, c2 = ad.lstm_step(tape, x, h, c, wx, wh, b)
        return tape, ad.add(tape, ad_dot(tape, h2, p1), ad_dot(tape, c2, p2))

    check_grads(build, [x, h, c, wx, wh, b])


@pytest.mark.parametrize("trial", range(20))
def test_masked_softmax_logprob_entropy_grads(trial):
    rng = np.random.default_rng(500 + trial)
    m_max = int(rng.integers(1, 6))
    valid = int(rng.integers(1, m_max + 1))
    logits = rand(rng, m_max)
    chosen = int(rng.integers(0, valid))
    probe = rng.normal(size=m_max)

    def build():
        tape = Tape()
        probs = ad.masked_softmax(tape, logits, valid)
        loss = ad.add(tape, ad_dot(tape, probs, probe),
                      ad.add(tape, ad.log_entry(tape, probs, chosen),
                             ad.entropy(tape, probs)))
        return tape, loss

    check_grads(build, [logits])


@pytest.mark.parametrize("trial", range(20))
def test_bce_chain_grads(trial):
    rng = np.random.default_rng(600 + trial)
    z = Tensor(rng.normal())
    label = float(rng.integers(0, 2))

    def build():
        tape = Tape()
        s = ad.sigmoid_clamped(tape, z)
        return tape, ad.bce_loss(tape, s, label)

    check_grads(build, [z])


def test_bce_grad_wrt_logit_is_score_minus_label():
    # analytic identity: dL/dz = sigmoid(z) - y
    for z0, y in [(-1.3, 1.0), (0.4, 0.0), (2.2, 1.0)]:
        z = Tensor(z0)
        tape = Tape()
        s = ad.sigmoid_clamped(tape, z)
        loss = ad.bce_loss(tape, s, y)
        tape.backward(loss)
        assert abs(float(z.grad) - (float(s.value) - y)) < 1e-12
        numeric = fd_gradient(lambda: float(_rebuild_bce(z, y)), z.value)
        assert max_rel_err(z.grad, numeric) < 1e-4


def _rebuild_bce(z, y):
    tape = Tape()
    return ad.bce_loss(tape, ad.sigmoid_clamped(tape, z), y).value


@pytest.mark.parametrize("trial", range(20))
def test_add_n_hconcat_grads(trial):
    rng = np.random.default_rng(700 + trial)
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    terms = [rand(rng, n) for _ in range(k)]
    a2, b2 = rand(rng, 3, n), rand(rng, 3, 2)
    probe = rng.normal(size=n)
    probe2 = rng.normal(size=3 * (n + 2))

    def build():
        tape = Tape()
        pooled = ad.add_n(tape, terms)
        wide = ad.hconcat(tape, a2, b2)
        flat = _flatten(tape, wide)
        return tape, ad.add(tape, ad_dot(tape, pooled, probe), ad_dot(tape, flat, probe2))

    check_grads(build, terms + [a2, b2])


def _flatten(tape, t):
    out = Tensor(t.value.ravel())
    if tape is not None:
        shape = t.value.shape
        def bw():
            t.grad += out.grad.reshape(shape)
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# exact-value examples


def test_lstm_zero_params_zero_cell_gives_zero_h():
    rng = np.random.default_rng(0)
    d_in, d_h = 3, 4
    x = Tensor(rng.normal(size=d_in))
    h = Tensor(rng.normal(size=d_h))
    c = Tensor(np.zeros(d_h))
    zeros = lambda *s: Tensor(np.zeros(s))
    h2, c2 = ad.lstm_step(None, x, h, c, zeros(d_in, 4 * d_h), zeros(d_h, 4 * d_h),
                          zeros(4 * d_h))
    assert np.all(h2.value == 0.0)
    assert np.all(c2.value == 0.0)


def test_lstm_hand_evaluated_1x1_cell():
    # manual evaluation, gate order i, f, g, o
    x, h, c = 0.5, -0.3, 0.2
    wx = np.array([[0.1, -0.2, 0.3, 0.4]])
    wh = np.array([[0.5, 0.6, -0.7, 0.8]])
    b = np.array([0.01, 0.02, 0.03, -0.04])
    z = x * wx[0] + h * wh[0] + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, g, o = sig(z[0]), sig(z[1]), np.tanh(z[2]), sig(z[3])
    c2_manual = f * c + i * g
    h2_manual = o * np.tanh(c2_manual)
    h2, c2 = ad.lstm_step(None, Tensor([x]), Tensor([h]), Tensor([c]),
                          Tensor(wx), Tensor(wh), Tensor(b))
    assert abs(float(h2.value[0]) - h2_manual) < 1e-15
    assert abs(float(c2.value[0]) - c2_manual) < 1e-15


def test_masked_softmax_examples():
    equal = ad.masked_softmax(None, Tensor([2.0, 2.0, 2.0, 2.0]), 4)
    assert np.array_equal(equal.value, [0.25, 0.25, 0.25, 0.25])
    single = ad.masked_softmax(None, Tensor([3.7]), 1)
    assert float(single.value[0]) == 1.0
    huge = ad.masked_softmax(None, Tensor([1000.0, 0.0, 0.0]), 3)
    assert np.all(np.isfinite(huge.value))
    assert abs(float(huge.value[0]) - 1.0) < 1e-9
    masked = ad.masked_softmax(None, Tensor([1.0, 1.0, 5.0]), 2)
    assert masked.value[2] == 0.0
    assert abs(masked.value.sum() - 1.0) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=8),
       st.data())
def test_masked_softmax_is_probability_vector(logit_list, data):
    valid = data.draw(st.integers(min_value=1, max_value=len(logit_list)))
    probs = ad.masked_softmax(None, Tensor(logit_list), valid).value
    assert np.all(probs >= 0.0)
    assert abs(probs.sum() - 1.0) < 1e-9
    assert np.all(probs[valid:] == 0.0)


def test_masked_softmax_rejects_empty_mask():
    with pytest.raises(ShapeError):
        ad.masked_softmax(None, Tensor([1.0, 2.0]), 0)


def test_bce_examples():
    half = ad.bce_loss(None, Tensor(0.5), 1.0)
    assert abs(float(half.value) - np.log(2.0)) < 1e-12
    assert abs(float(ad.bce_loss(None, Tensor(0.5), 0.0).value) - np.log(2.0)) < 1e-12
    nine = ad.bce_loss(None, Tensor(0.9), 1.0)
    assert abs(float(nine.value) + np.log(0.9)) < 1e-12


def test_bce_boundary_clamps_instead_of_inf(caplog):
    loss = ad.bce_loss(None, Tensor(1.0), 0.0)
    assert np.isfinite(loss.value)


def test_nonfinite_forward_raises():
    big = Tensor(np.array([1e308]))
    with pytest.raises(NonFiniteError):
        ad.mul(None, big, big)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.add(None, Tensor([1.0]), Tensor([1.0, 2.0]))
    with pytest.raises(ShapeError):
        ad.affine(None, Tensor([1.0, 2.0]), Tensor(np.zeros((3, 2))), Tensor(np.zeros(2)))


# ---------------------------------------------------------------------------
# sampling


def test_sample_categorical_statistics():
    # 3-sigma multinomial band around expected counts
    rng = np.random.default_rng(42)
    probs = np.array([0.7, 0.2, 0.1])
    n = 100_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[ad.sample_categorical(rng, probs)] += 1
    for k in range(3):
        sigma = np.sqrt(n * probs[k] * (1 - probs[k]))
        assert abs(counts[k] - n * probs[k]) < 3 * sigma


def test_sample_categorical_deterministic():
    draws = lambda: [ad.sample_categorical(np.random.default_rng(9), np.array([0.3, 0.7]))
                     for _ in range(1)]
    assert draws() == draws()


def test_sample_categorical_degenerate():
    rng = np.random.default_rng(1)
    assert ad.sample_categorical(rng, np.array([1.0])) == 0
