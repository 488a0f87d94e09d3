"""Policy heads: densities, entropy, sampling, replay, persistence."""

import numpy as np
import pytest

from synergy_rl import nn
from synergy_rl import policy as pol
from synergy_rl.envs import EnvConfig, make_env
from synergy_rl.errors import ConfigurationError
from synergy_rl.spaces import AgentAction, JointAction, ParamSpec, SkillLibrary, SkillSpec


def toy_library():
    return SkillLibrary(
        skills=(
            SkillSpec("move", (ParamSpec("dx", -1.0, 1.0), ParamSpec("dy", 0.0, 2.0))),
            SkillSpec("twist", (ParamSpec("angle", -3.0, 3.0),)),
            SkillSpec("wait", ()),
        )
    )


def toy_output(logits, means, logstds, n_agents=1):
    lay = pol.HeadLayout.from_library(toy_library(), n_agents)
    return pol.PolicyOutput(
        layout=lay,
        logits=np.asarray(logits, dtype=float),
        means=np.asarray(means, dtype=float),
        logstds=np.asarray(logstds, dtype=float),
        value=0.0,
    )


def bar_env():
    return make_env(EnvConfig(name="bar_lift", n_agents=2))


# --- squash ------------------------------------------------------------------


def test_squash_unsquash_inverse():
    low = np.array([-1.0, 0.0, -3.0])
    high = np.array([1.0, 2.0, 3.0])
    z = np.array([-4.0, 0.3, 7.0])
    p = pol.squash(z, low, high)
    assert np.all(p > low) and np.all(p < high)
    np.testing.assert_allclose(pol.unsquash(p, low, high), z, atol=1e-8)


def test_log_squash_deriv_matches_fd():
    low = np.array([-1.0])
    high = np.array([2.0])
    h = 1e-6
    for z in [-3.0, -0.5, 0.0, 1.7, 4.0]:
        za = np.array([z])
        fd = (pol.squash(za + h, low, high) - pol.squash(za - h, low, high)) / (2 * h)
        np.testing.assert_allclose(np.exp(pol.log_squash_deriv(za, low, high)), fd, rtol=1e-6)


# --- closed-form densities ---------------------------------------------------


def test_log_prob_closed_form():
    logits = [[0.4, -1.2, 0.7]]
    means = [[0.1, 0.5, -0.2]]
    logstds = [[-0.3, 0.2, 0.0]]
    out = toy_output(logits, means, logstds)
    lay = out.layout
    params = np.array([0.3, 1.4])
    action = JointAction((AgentAction(0, params),))

    lg = np.asarray(logits[0])
    cat = lg[0] - np.log(np.sum(np.exp(lg)))
    z = pol.unsquash(params, lay.low[:2], lay.high[:2])
    mu = np.asarray(means[0])[:2]
    sd = np.exp(np.asarray(logstds[0])[:2])
    gauss = -0.5 * ((z - mu) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)
    corr = pol.log_squash_deriv(z, lay.low[:2], lay.high[:2])
    expected = cat + np.sum(gauss - corr)

    assert np.isclose(pol.log_prob(out, action), expected, atol=1e-12)


def test_log_prob_parameterless_skill_is_pure_categorical():
    logits = [[0.0, 0.0, 0.0]]
    out = toy_output(logits, [[0.0] * 3], [[0.0] * 3])
    action = JointAction((AgentAction(2, np.zeros(0)),))
    assert np.isclose(pol.log_prob(out, action), np.log(1.0 / 3.0))


def test_log_prob_rejects_bad_skill():
    out = toy_output([[0.0, 0.0, 0.0]], [[0.0] * 3], [[0.0] * 3])
    with pytest.raises(ValueError):
        pol.log_prob(out, JointAction((AgentAction(7, np.zeros(0)),)))


def test_density_integrates_to_one():
    # one skill, one parameter: exp(log_prob) over the box is a density
    lib = SkillLibrary(skills=(SkillSpec("go", (ParamSpec("d", -1.0, 2.0),)),))
    lay = pol.HeadLayout.from_library(lib, 1)
    mu, logstd = 0.3, -0.2
    b = 20_001
    p_grid = np.linspace(-1.0 + 1e-9, 2.0 - 1e-9, b)
    z = pol.unsquash(p_grid, lay.low, lay.high)[:, None, None]
    fwd = pol.PolicyForward(
        logits=np.zeros((b, 1, 1)),
        means=np.full((b, 1, 1), mu),
        logstds=np.full((b, 1, 1), logstd),
        clamp_open=np.ones((b, 1, 1), dtype=bool),
        values=np.zeros(b),
        cache=None,
    )
    lp = pol.log_prob_batch(fwd, lay, np.zeros((b, 1), dtype=int), z, np.ones((b, 1, 1), dtype=bool))
    mass = np.trapezoid(np.exp(lp), p_grid)
    assert abs(mass - 1.0) < 1e-3


def test_entropy_closed_form():
    logits = [[1.0, 0.0, -1.0]]
    logstds = [[-0.5, 0.3, 0.1]]
    out = toy_output(logits, [[0.0] * 3], logstds)
    p = np.exp(logits[0]) / np.sum(np.exp(logits[0]))
    h_cat = -np.sum(p * np.log(p))
    h_gauss = np.sum(0.5 * (np.log(2 * np.pi) + 1.0) + np.asarray(logstds[0]))
    assert np.isclose(pol.entropy(out), h_cat + h_gauss, atol=1e-12)


# --- sampling ----------------------------------------------------------------


def batch_forward_of(logits, means, logstds, b):
    """Tile one head configuration into a (B, ...) PolicyForward."""
    lg = np.tile(np.asarray(logits, dtype=float)[None], (b, 1, 1))
    mu = np.tile(np.asarray(means, dtype=float)[None], (b, 1, 1))
    ls = np.tile(np.asarray(logstds, dtype=float)[None], (b, 1, 1))
    return pol.PolicyForward(
        logits=lg, means=mu, logstds=ls,
        clamp_open=np.ones_like(mu, dtype=bool),
        values=np.zeros(b), cache=None,
    )


def test_sample_skill_frequencies_within_3_sigma():
    lay = pol.HeadLayout.from_library(toy_library(), 1)
    p0 = 0.7
    logits = [[np.log(p0), np.log(1 - p0), -1e9]]
    fwd = batch_forward_of(logits, [[0.0] * 3], [[0.0] * 3], 20_000)
    batch = pol.sample_batch(fwd, lay, np.random.default_rng(0))
    count = int(np.sum(batch.skills == 0))
    se = np.sqrt(20_000 * p0 * (1 - p0))
    assert abs(count - 20_000 * p0) < 3 * se
    assert not np.any(batch.skills == 2)


def test_sample_params_respect_boxes():
    lay = pol.HeadLayout.from_library(toy_library(), 1)
    # wide std pushes pre-squash values far out; the squash must hold the box
    fwd = batch_forward_of([[0.0, 0.0, 0.0]], [[0.0] * 3], [[2.0] * 3], 500)
    batch = pol.sample_batch(fwd, lay, np.random.default_rng(1))
    assert np.all(batch.params > lay.low) and np.all(batch.params < lay.high)


def test_sample_log_probs_match_recompute():
    lay = pol.HeadLayout.from_library(toy_library(), 2)
    rng = np.random.default_rng(2)
    fwd = batch_forward_of(
        [[0.3, -0.2, 0.1], [0.0, 0.5, -0.5]],
        [[0.1, -0.1, 0.2], [0.0, 0.3, 0.0]],
        [[-0.2, 0.0, 0.1], [0.2, -0.1, 0.0]],
        64,
    )
    batch = pol.sample_batch(fwd, lay, rng)
    again = pol.log_prob_batch(fwd, lay, batch.skills, batch.z, batch.slot_mask)
    np.testing.assert_array_equal(batch.log_probs, again)


def test_sampling_deterministic_and_draw_count_fixed():
    # same seed, same batch; and the draw count per call does not depend
    # on which skills come up, so downstream streams stay aligned
    lay = pol.HeadLayout.from_library(toy_library(), 1)
    fwd = batch_forward_of([[5.0, 0.0, 0.0]], [[0.0] * 3], [[0.0] * 3], 10)
    r1 = np.random.default_rng(3)
    r2 = np.random.default_rng(3)
    b1 = pol.sample_batch(fwd, lay, r1)
    b2 = pol.sample_batch(fwd, lay, r2)
    np.testing.assert_array_equal(b1.skills, b2.skills)
    np.testing.assert_array_equal(b1.eps, b2.eps)
    assert r1.random() == r2.random()


def test_replay_reproduces_sampled_action():
    env = bar_env()
    policy = pol.make_policy(env.schema, np.random.default_rng(4))
    state = env.reset(0)
    out = pol.policy_forward(policy, state, env.schema.horizon, True)
    action, logp = pol.sample_action(out, np.random.default_rng(5))
    skills = [a.skill_id for a in action.actions]
    eps = np.stack([a.noise for a in action.actions])
    rebuilt = pol.action_from_noise(out, skills, eps)
    for orig, rep in zip(action.actions, rebuilt.actions):
        assert orig.skill_id == rep.skill_id
        np.testing.assert_array_equal(orig.params, rep.params)
        np.testing.assert_array_equal(orig.presquash, rep.presquash)
    assert np.isclose(pol.log_prob(out, action), logp, atol=1e-8)


# --- trunk wiring ------------------------------------------------------------


def test_forward_batch_shapes_and_clamp():
    env = bar_env()
    policy = pol.make_policy(env.schema, np.random.default_rng(6))
    lay = policy.layout
    # saturate one log-std unit through its output bias
    slot = lay.means_end + 1
    policy.net.biases[-1][slot] = 50.0
    obs = np.random.default_rng(7).normal(size=(5, env.schema.obs_dim))
    fwd = pol.forward_batch(policy, obs)
    assert fwd.logits.shape == (5, lay.n_agents, lay.n_skills)
    assert fwd.means.shape == fwd.logstds.shape == (5, lay.n_agents, lay.n_params)
    assert fwd.values.shape == (5,)
    assert np.all(fwd.logstds[:, 0, 1] == pol.LOGSTD_MAX)
    assert not np.any(fwd.clamp_open[:, 0, 1])
    assert np.all(fwd.logstds <= pol.LOGSTD_MAX) and np.all(fwd.logstds >= pol.LOGSTD_MIN)


def test_policy_forward_rejects_wrong_obs_dim():
    env = bar_env()
    other = make_env(EnvConfig(name="reach", n_agents=1))
    policy = pol.make_policy(env.schema, np.random.default_rng(8))
    state = other.reset(0)
    with pytest.raises(ValueError):
        pol.policy_forward(policy, state, other.schema.horizon, False)


# --- persistence -------------------------------------------------------------


def test_save_load_roundtrip(tmp_path):
    env = bar_env()
    policy = pol.make_policy(env.schema, np.random.default_rng(9))
    path = str(tmp_path / "p.npz")
    pol.save_policy(path, policy)
    loaded = pol.load_policy(path, env.schema)
    for a, b in zip(loaded.net.weights, policy.net.weights):
        np.testing.assert_array_equal(a, b)
    assert loaded.layout.n_agents == 2


def test_load_rejects_wrong_env(tmp_path):
    env = bar_env()
    other = make_env(EnvConfig(name="reach", n_agents=2))
    policy = pol.make_policy(env.schema, np.random.default_rng(10))
    path = str(tmp_path / "p.npz")
    pol.save_policy(path, policy)
    with pytest.raises(ConfigurationError):
        pol.load_policy(path, other.schema)


def test_load_rejects_missing_manifest(tmp_path):
    env = bar_env()
    policy = pol.make_policy(env.schema, np.random.default_rng(11))
    path = str(tmp_path / "bare.npz")
    nn.save_params(path, policy.net, extra={})
    with pytest.raises(ConfigurationError):
        pol.load_policy(path, env.schema)


def test_load_per_agent_override(tmp_path):
    env = bar_env()
    lay1 = pol.HeadLayout.from_library(env.schema.library, 1)
    in_dim = env.schema.env_feature_dim + env.schema.agent_state_dim
    net = nn.mlp_init([in_dim, 16, lay1.out_dim], np.random.default_rng(12))
    single = pol.Policy(net=net, layout=lay1)
    path = str(tmp_path / "solo.npz")
    pol.save_policy(path, single)
    loaded = pol.load_policy(path, env.schema, n_agents=1)
    assert loaded.layout.n_agents == 1
    with pytest.raises(ConfigurationError):
        pol.load_policy(path, env.schema)  # expects the 2-agent head block
