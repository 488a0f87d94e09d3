"""Network core: forward/backward against naive oracles, Adam against a
reference implementation, clipping, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synergy_rl import nn
from synergy_rl.errors import NumericError


def naive_forward(params: nn.NetworkParams, x: np.ndarray) -> np.ndarray:
    """Element-by-element loops, no matmul."""
    a = np.asarray(x, dtype=np.float64)
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = np.empty(w.shape[0])
        for i in range(w.shape[0]):
            acc = b[i]
            for j in range(w.shape[1]):
                acc += w[i, j] * a[j]
            z[i] = acc
        a = z if l == last else np.maximum(z, 0.0)
    return a


def flat_coords(params: nn.NetworkParams):
    for kind in ("weights", "biases"):
        for l, arr in enumerate(getattr(params, kind)):
            for idx in np.ndindex(arr.shape):
                yield kind, l, idx


def loss_and_grads(params, x, g):
    out, cache = nn.mlp_forward(params, x)
    grads, input_grad = nn.mlp_backward(params, cache, g)
    return float(np.sum(g * out)), grads, input_grad


def test_forward_matches_naive_loop():
    rng = np.random.default_rng(0)
    for trial in range(20):
        sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
        params = nn.mlp_init(sizes, seed=trial)
        x = rng.normal(size=sizes[0])
        out, _ = nn.mlp_forward(params, x)
        np.testing.assert_allclose(out, naive_forward(params, x), rtol=1e-12, atol=1e-12)


def test_forward_batch_rows_independent():
    params = nn.mlp_init([3, 8, 2], seed=1)
    rng = np.random.default_rng(1)
    xs = rng.normal(size=(5, 3))
    batch_out, _ = nn.mlp_forward(params, xs)
    assert batch_out.shape == (5, 2)
    for i in range(5):
        row_out, _ = nn.mlp_forward(params, xs[i])
        # BLAS may sum matrix-matrix and matrix-vector products in different
        # orders, so equality only up to roundoff.
        np.testing.assert_allclose(batch_out[i], row_out, rtol=1e-13, atol=1e-15)


def test_backward_matches_central_differences():
    # Relative tolerance 1e-4 per coordinate with denominator
    # max(|analytic|, |numeric|, 1e-6); h = 1e-5.
    rng = np.random.default_rng(2)
    h = 1e-5
    for trial in range(5):
        sizes = [int(rng.integers(2, 5)) for _ in range(3)]
        params = nn.mlp_init(sizes, seed=100 + trial)
        x = rng.normal(size=sizes[0])
        g = rng.normal(size=sizes[-1])
        _, grads, input_grad = loss_and_grads(params, x, g)
        for kind, l, idx in flat_coords(params):
            arr = getattr(params, kind)[l]
            orig = arr[idx]
            arr[idx] = orig + h
            up, _, _ = loss_and_grads(params, x, g)
            arr[idx] = orig - h
            dn, _, _ = loss_and_grads(params, x, g)
            arr[idx] = orig
            fd = (up - dn) / (2 * h)
            an = getattr(grads, kind)[l][idx]
            denom = max(abs(fd), abs(an), 1e-6)
            assert abs(fd - an) / denom < 1e-4, (kind, l, idx)
        for j in range(sizes[0]):
            orig = x[j]
            x[j] = orig + h
            up, _, _ = loss_and_grads(params, x, g)
            x[j] = orig - h
            dn, _, _ = loss_and_grads(params, x, g)
            x[j] = orig
            fd = (up - dn) / (2 * h)
            denom = max(abs(fd), abs(input_grad[j]), 1e-6)
            assert abs(fd - input_grad[j]) / denom < 1e-4


def test_backward_batch_sums_parameter_grads():
    params = nn.mlp_init([4, 6, 3], seed=3)
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(7, 4))
    gs = rng.normal(size=(7, 3))
    _, cache = nn.mlp_forward(params, xs)
    batch_grads, batch_input = nn.mlp_backward(params, cache, gs)
    acc = nn.grads_zeros_like(params)
    for i in range(7):
        _, c = nn.mlp_forward(params, xs[i])
        g_i, in_i = nn.mlp_backward(params, c, gs[i])
        acc = nn.grads_add(acc, g_i)
        np.testing.assert_allclose(batch_input[i], in_i, rtol=1e-12, atol=1e-14)
    for bw, aw in zip(batch_grads.weights, acc.weights):
        np.testing.assert_allclose(bw, aw, rtol=1e-12, atol=1e-14)
    for bb, ab in zip(batch_grads.biases, acc.biases):
        np.testing.assert_allclose(bb, ab, rtol=1e-12, atol=1e-14)


def test_relu_subgradient_zero_at_zero():
    # One hidden unit whose preactivation is exactly 0: upstream gradient
    # must not flow through it.
    params = nn.mlp_init([1, 1, 1], seed=4)
    params.weights[0][0, 0] = 1.0
    params.biases[0][0] = 0.0
    params.weights[1][0, 0] = 1.0
    out, cache = nn.mlp_forward(params, np.array([0.0]))
    assert cache.preacts[0][0] == 0.0
    grads, input_grad = nn.mlp_backward(params, cache, np.array([1.0]))
    assert input_grad[0] == 0.0
    assert grads.weights[0][0, 0] == 0.0


def test_backward_rejects_shape_mismatch():
    params = nn.mlp_init([2, 3], seed=5)
    _, cache = nn.mlp_forward(params, np.zeros(2))
    with pytest.raises(ValueError):
        nn.mlp_backward(params, cache, np.zeros(4))


def test_forward_rejects_bad_input():
    params = nn.mlp_init([2, 3], seed=6)
    with pytest.raises(ValueError):
        nn.mlp_forward(params, np.zeros(5))
    with pytest.raises(ValueError):
        nn.mlp_forward(params, np.zeros((2, 2, 2)))


def test_mlp_init_validation_and_range():
    with pytest.raises(ValueError):
        nn.mlp_init([4], seed=0)
    with pytest.raises(ValueError):
        nn.mlp_init([4, 0, 2], seed=0)
    params = nn.mlp_init([9, 4], seed=7)
    bound = 1.0 / 3.0
    assert np.all(np.abs(params.weights[0]) <= bound)
    assert np.all(params.biases[0] == 0.0)
    again = nn.mlp_init([9, 4], seed=7)
    np.testing.assert_array_equal(params.weights[0], again.weights[0])


def reference_adam(params, grad_seq, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on flattened arrays, independent of the library code."""
    flats = [a.copy() for a in (list(params.weights) + list(params.biases))]
    m = [np.zeros_like(a) for a in flats]
    v = [np.zeros_like(a) for a in flats]
    for t, grads in enumerate(grad_seq, start=1):
        gl = list(grads.weights) + list(grads.biases)
        for k in range(len(flats)):
            m[k] = b1 * m[k] + (1 - b1) * gl[k]
            v[k] = b2 * v[k] + (1 - b2) * gl[k] ** 2
            mhat = m[k] / (1 - b1**t)
            vhat = v[k] / (1 - b2**t)
            flats[k] = flats[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return flats


def test_parameter_count_and_zero_net():
    params = nn.mlp_init([2, 3, 1], seed=0)
    count = sum(w.size for w in params.weights) + sum(b.size for b in params.biases)
    assert count == 2 * 3 + 3 + 3 * 1 + 1
    for w in params.weights:
        w[...] = 0.0
    out, _ = nn.mlp_forward(params, np.array([5.0, -7.0]))
    np.testing.assert_array_equal(out, np.zeros(1))


def test_adam_zero_grad_is_identity():
    params = nn.mlp_init([2, 2], seed=2)
    state = nn.adam_init(params)
    zeros = nn.grads_zeros_like(params)
    new_params, new_state = nn.adam_step(state, params, zeros)
    for a, b in zip(new_params.weights, params.weights):
        np.testing.assert_array_equal(a, b)
    assert new_state.step_count == 1


def test_adam_first_step_moves_by_lr():
    params = nn.mlp_init([1, 1], seed=3)
    state = nn.adam_init(params, learning_rate=0.01)
    grads = nn.grads_zeros_like(params)
    grads.weights[0][0, 0] = 0.3
    new_params, _ = nn.adam_step(state, params, grads)
    delta = new_params.weights[0][0, 0] - params.weights[0][0, 0]
    # bias-corrected first step is -lr * g/|g|, up to the epsilon term
    np.testing.assert_allclose(delta, -0.01, rtol=1e-6)


def test_adam_matches_reference_over_steps():
    params = nn.mlp_init([3, 4, 2], seed=8)
    rng = np.random.default_rng(8)
    grad_seq = []
    for _ in range(6):
        g = nn.grads_zeros_like(params)
        for arr in list(g.weights) + list(g.biases):
            arr[...] = rng.normal(size=arr.shape)
        grad_seq.append(g)
    state = nn.adam_init(params, learning_rate=0.001)
    p = params
    for g in grad_seq:
        p, state = nn.adam_step(state, p, g)
    expect = reference_adam(params, grad_seq)
    got = list(p.weights) + list(p.biases)
    for a, b in zip(got, expect):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    assert state.step_count == len(grad_seq)


def test_adam_is_pure():
    params = nn.mlp_init([2, 2], seed=9)
    before = params.copy()
    state = nn.adam_init(params)
    g = nn.grads_zeros_like(params)
    g.weights[0][...] = 1.0
    new_params, new_state = nn.adam_step(state, params, g)
    np.testing.assert_array_equal(params.weights[0], before.weights[0])
    assert state.step_count == 0
    assert new_state.step_count == 1
    assert not np.array_equal(new_params.weights[0], params.weights[0])


def test_adam_rejects_nonfinite_gradients():
    params = nn.mlp_init([2, 2], seed=10)
    state = nn.adam_init(params)
    g = nn.grads_zeros_like(params)
    g.weights[0][0, 0] = np.nan
    with pytest.raises(NumericError):
        nn.adam_step(state, params, g)


def test_global_norm_oracle():
    params = nn.mlp_init([3, 5, 2], seed=11)
    rng = np.random.default_rng(11)
    g = nn.grads_zeros_like(params)
    for arr in list(g.weights) + list(g.biases):
        arr[...] = rng.normal(size=arr.shape)
    flat = np.concatenate([a.ravel() for a in list(g.weights) + list(g.biases)])
    assert np.isclose(nn.global_norm(g), np.linalg.norm(flat), rtol=1e-12)


def test_clip_gradients_scales_jointly():
    params = nn.mlp_init([3, 3], seed=12)
    g = nn.grads_zeros_like(params)
    g.weights[0][...] = 3.0
    g.biases[0][...] = 4.0
    norm = nn.global_norm(g)
    clipped = nn.clip_gradients(g, norm / 2)
    assert np.isclose(nn.global_norm(clipped), norm / 2, rtol=1e-12)
    # Direction preserved: clipped is an exact scalar multiple.
    ratio = clipped.weights[0] / g.weights[0]
    np.testing.assert_allclose(ratio, ratio.flat[0], rtol=1e-12)
    untouched = nn.clip_gradients(g, norm * 2)
    np.testing.assert_array_equal(untouched.weights[0], g.weights[0])
    with pytest.raises(ValueError):
        nn.clip_gradients(g, 0.0)


def test_save_load_roundtrip_bit_exact(tmp_path):
    params = nn.mlp_init([4, 7, 3], seed=13)
    extra = {"kind": "test", "dims": [4, 7, 3], "tol": 1e-6}
    path = str(tmp_path / "net.npz")
    nn.save_params(path, params, extra)
    loaded, got_extra = nn.load_params(path)
    assert loaded.layer_sizes == params.layer_sizes
    for a, b in zip(loaded.weights, params.weights):
        assert np.array_equal(a, b) and a.dtype == b.dtype
    for a, b in zip(loaded.biases, params.biases):
        assert np.array_equal(a, b)
    assert got_extra == extra


def test_load_rejects_wrong_format_version(tmp_path):
    params = nn.mlp_init([2, 2], seed=14)
    path = str(tmp_path / "net.npz")
    nn.save_params(path, params)
    with np.load(path, allow_pickle=False) as data:
        payload = {k: data[k] for k in data.files}
    payload["format_version"] = np.array([99], dtype=np.int64)
    with open(path, "wb") as f:
        np.savez(f, **payload)
    with pytest.raises(ValueError):
        nn.load_params(path)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_backward_is_linear_in_output_grad(seed):
    rng = np.random.default_rng(seed)
    params = nn.mlp_init([3, 4, 2], seed=seed)
    x = rng.normal(size=(2, 3))
    _, cache = nn.mlp_forward(params, x)
    g1 = rng.normal(size=(2, 2))
    g2 = rng.normal(size=(2, 2))
    a1, i1 = nn.mlp_backward(params, cache, g1)
    a2, i2 = nn.mlp_backward(params, cache, g2)
    asum, isum = nn.mlp_backward(params, cache, g1 + g2)
    np.testing.assert_allclose(isum, i1 + i2, rtol=1e-10, atol=1e-12)
    for w, wa, wb in zip(asum.weights, a1.weights, a2.weights):
        np.testing.assert_allclose(w, wa + wb, rtol=1e-10, atol=1e-12)
