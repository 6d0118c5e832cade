import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import all_sequences, central_diff, direct_kl, naive_probs, rel_error
from sgrpo import policy as pol
from sgrpo.errors import ConfigurationError, InputError
from sgrpo.policy import PolicyParams, Role
from sgrpo.trajectory import Prompt


def random_params(rng, P=2, L=3, V=4, scale=1.5):
    return PolicyParams(rng.normal(scale=scale, size=(P, L, V)))


# sampling ---------------------------------------------------------------------

def test_sample_uniform_logprob():
    params = PolicyParams.uniform(1, 2, 4)
    traj = pol.sample(params, 0, np.random.default_rng(3))
    assert traj.seq_logprob == pytest.approx(2 * math.log(0.25), abs=1e-12)
    assert traj.source is pol.Source.SAMPLED


def test_sample_near_deterministic():
    logits = np.zeros((1, 3, 5))
    target = [4, 0, 2]
    logits[0, np.arange(3), target] = 1e6
    traj = pol.sample(PolicyParams(logits), 0, np.random.default_rng(0))
    assert traj.seq == tuple(target)
    assert traj.seq_logprob == pytest.approx(0.0, abs=1e-12)


def test_sample_deterministic_given_seed(rng):
    params = random_params(rng)
    a = [pol.sample(params, 1, np.random.default_rng(11)).seq for _ in range(3)]
    assert len(set(a)) == 1


def test_sample_rejects_bad_prompt():
    with pytest.raises(InputError):
        pol.sample(PolicyParams.uniform(2, 1, 2), 2, np.random.default_rng(0))


def test_sampling_frequencies_converge():
    logits = np.array([[[0.3, -1.0, 1.2, 0.0]]])
    params = PolicyParams(logits)
    rng = np.random.default_rng(123)
    counts = np.zeros(4)
    for _ in range(100_000):
        counts[pol.sample(params, 0, rng).seq[0]] += 1
    assert np.max(np.abs(counts / counts.sum() - naive_probs(logits[0, 0]))) < 0.01


# log-probabilities ------------------------------------------------------------

def test_logprob_uniform():
    _, total = pol.logprob(PolicyParams.uniform(1, 3, 4), 0, (0, 3, 1))
    assert total == pytest.approx(3 * math.log(0.25), abs=1e-12)


def test_logprob_single_peak():
    params = PolicyParams(np.array([[[1.0, 0, 0, 0]]]))
    _, total = pol.logprob(params, 0, (0,))
    assert total == pytest.approx(math.log(naive_probs([1.0, 0, 0, 0])[0]), abs=1e-12)
    assert total == pytest.approx(-0.74366, abs=1e-5)


def test_greedy_sequence_is_most_likely(rng):
    for _ in range(10):
        params = random_params(rng, P=1, L=2, V=3)
        greedy = tuple(np.argmax(params.logits[0], axis=-1))
        best = pol.logprob(params, 0, greedy)[1]
        assert all(best >= pol.logprob(params, 0, s)[1] - 1e-12 for s in all_sequences(3, 2))


def test_logprob_input_errors():
    params = PolicyParams.uniform(1, 2, 3)
    with pytest.raises(InputError):
        pol.logprob(params, 0, (0,))
    with pytest.raises(InputError):
        pol.logprob(params, 0, (0, 3))
    with pytest.raises(InputError):
        pol.logprob(params, 0, (-1, 0))


@settings(max_examples=100)
@given(arrays(np.float64, (1, 2, 5), elements=st.floats(-50, 50)))
def test_probabilities_sum_to_one(logits):
    p = pol.softmax(logits)
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) < 1e-12)


def test_log_softmax_extreme_logits_stay_finite():
    z = np.array([[0.0, -2000.0, 1000.0]])
    out = pol.log_softmax(z)
    assert np.all(np.isfinite(out))
    assert out[0, 2] == 0.0


@settings(max_examples=50)
@given(st.floats(-100, 100), st.integers(0, 2), st.integers(0, 2**31))
def test_shift_invariance(c, t, seed):
    r = np.random.default_rng(seed)
    params = random_params(r, P=1)
    ref = random_params(r, P=1)
    shifted = params.copy()
    shifted.logits[0, t, :] += c
    seq = (1, 2, 3)
    assert pol.logprob(shifted, 0, seq)[1] == pytest.approx(pol.logprob(params, 0, seq)[1], abs=1e-9)
    assert pol.kl_to(shifted, ref, 0)[0] == pytest.approx(pol.kl_to(params, ref, 0)[0], abs=1e-9)
    assert np.allclose(pol.softmax(shifted.logits), pol.softmax(params.logits), atol=1e-9, rtol=0)


# gradients --------------------------------------------------------------------

def test_grad_logprob_uniform_example():
    params = PolicyParams.uniform(1, 1, 4)
    g = pol.grad_logprob(params, 0, (0,))
    fd = central_diff(lambda x: pol.logprob(PolicyParams(x), 0, (0,))[1], params.logits.copy())
    assert np.allclose(fd[0, 0], [0.75, -0.25, -0.25, -0.25], atol=1e-9)
    assert np.allclose(g, fd, atol=1e-9)


def test_grad_logprob_saturated():
    logits = np.zeros((1, 2, 3))
    logits[0, :, 1] = 40.0
    g = pol.grad_logprob(PolicyParams(logits), 0, (1, 1))
    assert np.linalg.norm(g) < 1e-3


def test_grad_rows_sum_to_zero_and_touch_one_prompt(rng):
    params = random_params(rng, P=3)
    g = pol.grad_logprob(params, 1, (0, 1, 3))
    assert np.all(np.abs(g.sum(axis=-1)) < 1e-12)
    assert not g[0].any() and not g[2].any()


@pytest.mark.parametrize("point", range(20))
def test_grad_logprob_matches_finite_differences(point):
    r = np.random.default_rng(1000 + point)
    params = random_params(r)
    seq = tuple(r.integers(0, 4, size=3))
    fd = central_diff(lambda x: pol.logprob(PolicyParams(x), 1, seq)[1], params.logits.copy())
    assert rel_error(pol.grad_logprob(params, 1, seq), fd) < 1e-6


# KL ---------------------------------------------------------------------------

def test_kl_identity_is_zero(rng):
    params = random_params(rng)
    value, grad = pol.kl_to(params, pol.snapshot(params, Role.REFERENCE), 0)
    assert value == 0.0
    assert np.abs(grad).max() < 1e-15


def test_kl_two_token_example():
    p = PolicyParams(np.array([[[math.log(3.0), 0.0]]]))  # (0.75, 0.25)
    q = PolicyParams.uniform(1, 1, 2)
    value, _ = pol.kl_to(p, q, 0)
    assert value == pytest.approx(direct_kl([0.75, 0.25], [0.5, 0.5]), abs=1e-12)
    assert value == pytest.approx(0.13081, abs=1e-5)


def test_kl_nonnegative_and_matches_direct_sum(rng):
    for _ in range(100):
        a, b = random_params(rng), random_params(rng)
        value, _ = pol.kl_to(a, b, 1)
        expected = sum(direct_kl(naive_probs(a.logits[1, t]), naive_probs(b.logits[1, t])) for t in range(3))
        assert value >= 0
        assert value == pytest.approx(expected, abs=1e-12)


def test_kl_shape_mismatch():
    with pytest.raises(ConfigurationError):
        pol.kl_to(PolicyParams.uniform(1, 2, 3), PolicyParams.uniform(1, 2, 4), 0)


@pytest.mark.parametrize("point", range(20))
def test_kl_gradient_matches_finite_differences(point):
    r = np.random.default_rng(2000 + point)
    params, ref = random_params(r), random_params(r)
    fd = central_diff(lambda x: pol.kl_to(PolicyParams(x), ref, 0)[0], params.logits.copy())
    assert rel_error(pol.kl_to(params, ref, 0)[1], fd) < 1e-6


def test_k3_estimator_is_unbiased_at_scale():
    r = np.random.default_rng(5)
    params, ref = random_params(r, P=1, L=2, V=3, scale=0.7), random_params(r, P=1, L=2, V=3, scale=0.7)
    samples = [pol.sample(params, 0, r).seq for _ in range(40_000)]
    est, _ = pol.k3_kl(params, ref, 0, samples)
    exact, _ = pol.kl_to(params, ref, 0)
    assert est == pytest.approx(exact, abs=0.01)


@pytest.mark.parametrize("point", range(5))
def test_k3_gradient_matches_finite_differences(point):
    r = np.random.default_rng(3000 + point)
    params, ref = random_params(r), random_params(r)
    samples = [tuple(r.integers(0, 4, size=3)) for _ in range(4)]
    fd = central_diff(lambda x: pol.k3_kl(PolicyParams(x), ref, 0, samples)[0], params.logits.copy())
    assert rel_error(pol.k3_kl(params, ref, 0, samples)[1], fd) < 1e-6


# SFT --------------------------------------------------------------------------

def test_sft_uniform_loss():
    loss, _ = pol.sft_gradient(PolicyParams.uniform(1, 2, 4), Prompt(0, "p", (1, 2)))
    assert loss == pytest.approx(-2 * math.log(0.25), abs=1e-12)


def test_sft_descent_converges():
    params = PolicyParams.uniform(1, 2, 4)
    prompt = Prompt(0, "p", (3, 1))
    losses = []
    for _ in range(500):
        loss, g = pol.sft_gradient(params, prompt)
        losses.append(loss)
        params.logits -= 0.1 * g
    # plain descent decays like 1/steps: measured 0.0320 at step 500, < 0.01 only past ~1600
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert pol.sft_gradient(params, prompt)[0] < 0.035
    from sgrpo.engine import Adam
    params, opt = PolicyParams.uniform(1, 2, 4), Adam(0.1)
    for _ in range(500):
        opt.step(params, pol.sft_gradient(params, prompt)[1])
    assert pol.sft_gradient(params, prompt)[0] < 0.01


@pytest.mark.parametrize("point", range(20))
def test_sft_gradient_matches_finite_differences(point):
    r = np.random.default_rng(4000 + point)
    params = random_params(r)
    prompt = Prompt(1, "p", tuple(r.integers(0, 4, size=3)))
    fd = central_diff(lambda x: pol.sft_gradient(PolicyParams(x), prompt)[0], params.logits.copy())
    assert rel_error(pol.sft_gradient(params, prompt)[1], fd) < 1e-6


# snapshots and checkpoints ---------------------------------------------------

def test_snapshot_isolation(rng):
    params = random_params(rng)
    snap = pol.snapshot(params, Role.BEHAVIOR)
    assert np.array_equal(snap.logits, params.logits)
    assert snap.role is Role.BEHAVIOR
    seq = (0, 1, 2)
    assert pol.logprob(snap, 0, seq)[1] == pol.logprob(params, 0, seq)[1]
    before = snap.logits.copy()
    params.logits += 1.0
    assert np.array_equal(snap.logits, before)
    with pytest.raises(ValueError):
        snap.logits[0, 0, 0] = 3.0


def test_params_validation():
    with pytest.raises(ConfigurationError):
        PolicyParams(np.zeros((2, 3)))
    with pytest.raises(ConfigurationError):
        PolicyParams(np.full((1, 1, 2), np.nan))


@pytest.mark.parametrize("fmt", ["binary", "json"])
def test_checkpoint_round_trip(tmp_path, rng, fmt):
    params = random_params(rng, P=3, L=2, V=5)
    params.logits[0, 0, 0] = 1e-300
    path = pol.save_checkpoint(params, tmp_path / f"ck.{fmt}", fmt)
    loaded = pol.load_checkpoint(path)
    assert loaded.shape == (3, 2, 5)
    assert loaded.logits.tobytes() == params.logits.tobytes()


def test_checkpoint_binary_header(tmp_path):
    path = pol.save_checkpoint(PolicyParams.uniform(2, 3, 4), tmp_path / "ck.bin")
    raw = path.read_bytes()
    assert raw[:8] == b"SGRPOPOL"
    assert len(raw) == 8 + 4 + 3 * 8 + 2 * 3 * 4 * 8


def test_checkpoint_bad_format(tmp_path):
    with pytest.raises(ConfigurationError):
        pol.save_checkpoint(PolicyParams.uniform(1, 1, 2), tmp_path / "x", "yaml")
