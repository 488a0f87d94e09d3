"""Environment rules against the closed forms in envs/RULES.md, plus the
shared step/reset contract."""

import numpy as np
import pytest

from synergy_rl.envs import (
    EnvConfig,
    env_names,
    make_env,
    single_agent_variant,
)
from synergy_rl.envs import bar_lift, block_push, bottle_twist, reach, soccer
from synergy_rl.envs.scripted import run_scripted_episode
from synergy_rl.errors import ConfigurationError
from synergy_rl.geometry import IDENTITY_QUAT, Pose, quat_angle
from synergy_rl.spaces import AgentAction, EnvState, JointAction, JointState

CONFIGS = {
    "bar_lift": EnvConfig(name="bar_lift", n_agents=2),
    "bottle_twist": EnvConfig(name="bottle_twist", n_agents=2),
    "block_push": EnvConfig(name="block_push", n_agents=2),
    "soccer": EnvConfig(name="soccer", n_agents=2),
    "reach": EnvConfig(name="reach", n_agents=1),
}


def noop(env):
    return env.noop_action()


def noop_joint(env):
    return JointAction(tuple(noop(env) for _ in range(env.schema.n_agents)))


# --- shared contract ---------------------------------------------------------


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_reset_is_deterministic_and_not_at_goal(name):
    env = make_env(CONFIGS[name])
    for seed in range(40):
        a = env.reset(seed)
        b = env.reset(seed)
        np.testing.assert_array_equal(a.env.features(10, True), b.env.features(10, True))
        for sa, sb in zip(a.agent_states, b.agent_states):
            np.testing.assert_array_equal(sa, sb)
        assert not env._goal(a)
    # different seeds draw different episodes (generically)
    assert not np.array_equal(env.reset(0).env.geometry, env.reset(1).env.geometry)


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_step_is_pure_and_leaves_input_alone(name):
    env = make_env(CONFIGS[name])
    state = env.reset(3)
    frozen = state.copy()
    rng = np.random.default_rng(0)
    action = env.random_joint_action(rng)
    n1, r1_, d1 = env.step(state, action)
    n2, r2_, d2 = env.step(state, action)
    assert (r1_, d1) == (r2_, d2)
    np.testing.assert_array_equal(n1.env.metric_vector(), n2.env.metric_vector())
    np.testing.assert_array_equal(state.env.metric_vector(), frozen.env.metric_vector())
    assert state.env.timestep == frozen.env.timestep
    for sa, sb in zip(state.agent_states, frozen.agent_states):
        np.testing.assert_array_equal(sa, sb)


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_horizon_terminates_and_overstepping_raises(name):
    env = make_env(CONFIGS[name])
    state = env.reset(5)
    done = False
    steps = 0
    while not done:
        state, _, done = env.step(state, noop_joint(env))
        steps += 1
        assert steps <= env.schema.horizon
    assert steps == env.schema.horizon  # noops never reach a goal
    with pytest.raises(ValueError):
        env.step(state, noop_joint(env))


def test_reward_granted_exactly_once_and_terminates():
    env = make_env(CONFIGS["reach"])
    state = env.reset(0)
    target = state.env.geometry
    # one push straight onto the target
    axis = int(np.argmax(np.abs(target)))
    name = ("push_right" if target[0] > 0 else "push_left") if axis == 0 else (
        "push_up" if target[1] > 0 else "push_down"
    )
    sid = env.schema.library.skill_id(name)
    act = JointAction((AgentAction(sid, np.array([abs(float(target[axis]))])),))
    nxt, reward, done = env.step(state, act)
    # the other axis error is at most 0.3 > goal radius only sometimes; aim fully
    if not reward:
        other = 1 - axis
        name2 = ("push_right" if target[0] > 0 else "push_left") if other == 0 else (
            "push_up" if target[1] > 0 else "push_down"
        )
        sid2 = env.schema.library.skill_id(name2)
        nxt, reward, done = env.step(
            nxt, JointAction((AgentAction(sid2, np.array([abs(float(target[other]))])),))
        )
    assert reward == 1
    assert done  # success ends the episode, so the reward cannot repeat


def test_sanitize_clamps_params_into_box():
    env = make_env(CONFIGS["reach"])
    state = env.reset(1)
    sid = env.schema.library.skill_id("push_up")
    nxt, _, _ = env.step(state, JointAction((AgentAction(sid, np.array([99.0])),)))
    assert np.isclose(nxt.env.pose.position[1] - state.env.pose.position[1], reach.PUSH_MAX)
    nxt, _, _ = env.step(state, JointAction((AgentAction(sid, np.array([-99.0])),)))
    np.testing.assert_array_equal(nxt.env.pose.position, state.env.pose.position)


def test_sanitize_rejects_bad_actions():
    env = make_env(CONFIGS["reach"])
    state = env.reset(1)
    with pytest.raises(ValueError):
        env.step(state, JointAction((AgentAction(99, np.zeros(0)),)))
    sid = env.schema.library.skill_id("push_up")
    with pytest.raises(ValueError):
        env.step(state, JointAction((AgentAction(sid, np.zeros(3)),)))
    with pytest.raises(ValueError):  # wrong agent count
        env.step(state, JointAction((AgentAction(sid, np.array([0.1])),) * 2))


def test_frozen_agents_act_as_noop():
    cfg = single_agent_variant(EnvConfig(name="reach", n_agents=2), agent_id=0)
    assert cfg.frozen_agents == (1,)
    env = make_env(cfg)
    state = env.reset(2)
    sid = env.schema.library.skill_id("push_up")
    push = AgentAction(sid, np.array([0.4]))
    nxt, _, _ = env.step(state, JointAction((noop(env), push)))
    np.testing.assert_array_equal(nxt.env.pose.position, state.env.pose.position)
    nxt, _, _ = env.step(state, JointAction((push, noop(env))))
    assert np.isclose(nxt.env.pose.position[1], state.env.pose.position[1] + 0.4)


def test_random_action_respects_bounds():
    env = make_env(CONFIGS["bar_lift"])
    rng = np.random.default_rng(0)
    low, high = env.schema.library.bounds()
    for _ in range(200):
        act = env.random_action(rng)
        skill = env.schema.library.skills[act.skill_id]
        off = env.schema.library.slot_offset(act.skill_id)
        for k in range(skill.n_params):
            assert low[off + k] <= act.params[k] <= high[off + k]


def test_registry():
    assert env_names() == ["bar_lift", "block_push", "bottle_twist", "reach", "soccer"]
    with pytest.raises(ConfigurationError):
        make_env(EnvConfig(name="tennis", n_agents=2))
    with pytest.raises(ValueError):
        make_env(EnvConfig(name="bar_lift", n_agents=3))
    with pytest.raises(ValueError):
        single_agent_variant(EnvConfig(name="reach", n_agents=2), agent_id=5)


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_scripted_controller_succeeds(name):
    env = make_env(CONFIGS[name])
    for seed in range(5):
        assert run_scripted_episode(env, seed)


# --- bar_lift ----------------------------------------------------------------


def bar_state(half_length=0.7, grasped=((0.0, 0.0), (0.0, 0.0)), z=0.0):
    env_state = EnvState(
        0,
        np.array([half_length, 1.0]),
        Pose(np.array([0.0, 0.0, z]), IDENTITY_QUAT.copy()),
        np.zeros(0),
    )
    return JointState(tuple(np.array(g, dtype=np.float64) for g in grasped), env_state)


def bar_act(skill, value=None):
    params = np.zeros(0) if value is None else np.array([float(value)])
    return AgentAction(skill, params)


@pytest.fixture
def bar():
    return make_env(CONFIGS["bar_lift"])


def test_bar_grasp_feasibility(bar):
    s = bar_state(half_length=0.7)
    nxt, _, _ = bar.step(s, JointAction((bar_act(bar_lift.GRASP, 0.6), bar_act(bar_lift.GRASP, -0.9))))
    np.testing.assert_array_equal(nxt.agent_states[0], [1.0, 0.6])
    np.testing.assert_array_equal(nxt.agent_states[1], [0.0, 0.0])  # beyond the end


def test_bar_lift_needs_prior_grasp(bar):
    s = bar_state()
    nxt, _, _ = bar.step(s, JointAction((bar_act(bar_lift.LIFT, 0.5), bar_act(bar_lift.LIFT, 0.5))))
    assert nxt.env.pose.position[2] == 0.0
    # grasping and lifting in the same step cannot pull either
    nxt, _, _ = bar.step(s, JointAction((bar_act(bar_lift.GRASP, -0.4), bar_act(bar_lift.LIFT, 0.5))))
    assert nxt.env.pose.position[2] == 0.0
    assert nxt.agent_states[0][0] == 1.0


def test_bar_cooperative_lift_is_clean_min(bar):
    s = bar_state(grasped=((1.0, -0.4), (1.0, 0.3)))
    nxt, _, _ = bar.step(s, JointAction((bar_act(bar_lift.LIFT, 0.3), bar_act(bar_lift.LIFT, 0.2))))
    assert np.isclose(nxt.env.pose.position[2], 0.2)
    np.testing.assert_array_equal(nxt.env.pose.orientation, IDENTITY_QUAT)


def test_bar_same_half_lifts_leak_and_tilt(bar):
    # both grips on the positive half: no cooperative branch
    s = bar_state(grasped=((1.0, 0.2), (1.0, 0.3)))
    nxt, _, _ = bar.step(s, JointAction((bar_act(bar_lift.LIFT, 0.1), bar_act(bar_lift.LIFT, 0.1))))
    assert np.isclose(nxt.env.pose.position[2], 2 * bar_lift.LIFT_LEAK * 0.1)
    # equal pulls tilt opposite ways and cancel
    assert np.isclose(quat_angle(nxt.env.pose.orientation), 0.0, atol=1e-12)


def test_bar_lone_lift_tilts_and_drops(bar):
    s = bar_state(grasped=((1.0, -0.4), (0.0, 0.0)))
    nxt, _, _ = bar.step(s, JointAction((bar_act(bar_lift.LIFT, 0.2), bar_act(bar_lift.NOOP))))
    assert np.isclose(nxt.env.pose.position[2], bar_lift.LIFT_LEAK * 0.2)
    assert np.isclose(quat_angle(nxt.env.pose.orientation), 0.4)
    # next pull crosses the drop threshold: bar falls flat, grips release
    nxt2, _, _ = bar.step(nxt, JointAction((bar_act(bar_lift.LIFT, 0.1), bar_act(bar_lift.NOOP))))
    assert nxt2.env.pose.position[2] == 0.0
    np.testing.assert_array_equal(nxt2.env.pose.orientation, IDENTITY_QUAT)
    np.testing.assert_array_equal(nxt2.agent_states[0], [0.0, 0.0])


def test_bar_goal_and_reward(bar):
    s = bar_state(grasped=((1.0, -0.4), (1.0, 0.4)), z=bar_lift.GOAL_HEIGHT - 0.3)
    lift = JointAction((bar_act(bar_lift.LIFT, 0.5), bar_act(bar_lift.LIFT, 0.5)))
    nxt, reward, done = bar.step(s, lift)
    assert reward == 1 and done
    assert nxt.env.pose.position[2] >= bar_lift.GOAL_HEIGHT


def test_bar_lone_agent_height_bound():
    # With one agent frozen, total achievable height is bounded by the
    # drop threshold: z <= LIFT_LEAK * TILT_DROP / TILT_PER_METER.
    bound = bar_lift.LIFT_LEAK * bar_lift.TILT_DROP / bar_lift.TILT_PER_METER
    cfg = single_agent_variant(EnvConfig(name="bar_lift", n_agents=2), agent_id=0)
    env = make_env(cfg)
    rng = np.random.default_rng(0)
    top = 0.0
    for ep in range(100):
        state = env.reset(ep)
        done = False
        while not done:
            state, _, done = env.step(state, env.random_joint_action(rng))
            top = max(top, float(state.env.pose.position[2]))
    assert top <= bound + 1e-9


# --- bottle_twist ------------------------------------------------------------


def bottle_state(holding=(0.0, 0.0), cap=0.0):
    env_state = EnvState(
        0,
        np.array([0.05]),
        Pose(np.zeros(3), IDENTITY_QUAT.copy()),
        np.array([cap]),
    )
    return JointState(tuple(np.array([h]) for h in holding), env_state)


@pytest.fixture
def bottle():
    return make_env(CONFIGS["bottle_twist"])


def test_bottle_hold_limit(bottle):
    s = bottle_state()
    act = JointAction((AgentAction(bottle_twist.HOLD, np.array([1.3])), noop(bottle)))
    nxt, _, _ = bottle.step(s, act)
    assert nxt.agent_states[0][0] == 0.0  # approach too wide, grip fails
    act = JointAction((AgentAction(bottle_twist.HOLD, np.array([1.1])), noop(bottle)))
    nxt, _, _ = bottle.step(s, act)
    assert nxt.agent_states[0][0] == 1.0


def test_bottle_twist_with_holder_turns_cap(bottle):
    s = bottle_state(holding=(1.0, 1.0))
    act = JointAction((noop(bottle), AgentAction(bottle_twist.TWIST, np.zeros(0))))
    nxt, _, _ = bottle.step(s, act)
    assert np.isclose(nxt.env.flags[0], bottle_twist.TWIST_STEP)
    assert nxt.agent_states[1][0] == 0.0  # twisting costs the twister's grip
    assert np.isclose(quat_angle(nxt.env.pose.orientation), 0.0, atol=1e-12)


def test_bottle_twist_unheld_spins_base(bottle):
    s = bottle_state(holding=(0.0, 0.0))
    act = JointAction((noop(bottle), AgentAction(bottle_twist.TWIST, np.zeros(0))))
    nxt, _, _ = bottle.step(s, act)
    assert nxt.env.flags[0] == 0.0
    assert np.isclose(quat_angle(nxt.env.pose.orientation), bottle_twist.TWIST_STEP)


def test_bottle_double_twist_resolves_in_agent_order(bottle):
    # Agent 0 twists while 1 still holds (cap turns); agent 1 then twists
    # with nobody holding (base spins).
    s = bottle_state(holding=(1.0, 1.0))
    act = JointAction((
        AgentAction(bottle_twist.TWIST, np.zeros(0)),
        AgentAction(bottle_twist.TWIST, np.zeros(0)),
    ))
    nxt, _, _ = bottle.step(s, act)
    assert np.isclose(nxt.env.flags[0], bottle_twist.TWIST_STEP)
    assert np.isclose(quat_angle(nxt.env.pose.orientation), bottle_twist.TWIST_STEP)
    assert all(nxt.agent_states[i][0] == 0.0 for i in range(2))


def test_bottle_goal_at_quarter_turn(bottle):
    s = bottle_state(holding=(1.0, 0.0), cap=np.pi / 2 - 0.1)
    act = JointAction((noop(bottle), AgentAction(bottle_twist.TWIST, np.zeros(0))))
    nxt, reward, done = bottle.step(s, act)
    assert reward == 1 and done


def test_bottle_lone_agent_never_turns_cap():
    cfg = single_agent_variant(EnvConfig(name="bottle_twist", n_agents=2), agent_id=0)
    env = make_env(cfg)
    rng = np.random.default_rng(1)
    for ep in range(50):
        state = env.reset(ep)
        done = False
        while not done:
            state, reward, done = env.step(state, env.random_joint_action(rng))
            assert state.env.flags[0] == 0.0
            assert reward == 0


# --- block_push --------------------------------------------------------------


def block_state(pos=(0.0, 0.0), target=(0.5, 0.5), n=2):
    env_state = EnvState(
        0,
        np.array([0.1, target[0], target[1]]),
        Pose(np.array([pos[0], pos[1], 0.0]), IDENTITY_QUAT.copy()),
        np.zeros(0),
    )
    return JointState(tuple(np.zeros(0) for _ in range(n)), env_state)


def push(env, name, mag):
    return AgentAction(env.schema.library.skill_id(name), np.array([mag]))


@pytest.fixture
def block():
    return make_env(CONFIGS["block_push"])


def test_block_moves_by_min_magnitude(block):
    s = block_state()
    nxt, _, _ = block.step(s, JointAction((push(block, "push_up", 0.2), push(block, "push_up", 0.3))))
    np.testing.assert_allclose(nxt.env.pose.position[:2], [0.0, 0.2])


def test_block_requires_everyone(block):
    s = block_state()
    nxt, _, _ = block.step(s, JointAction((push(block, "push_up", 0.2), noop(block))))
    np.testing.assert_array_equal(nxt.env.pose.position[:2], [0.0, 0.0])


def test_block_disagreeing_pushes_cancel(block):
    s = block_state()
    for other in ("push_down", "push_left", "push_right"):
        nxt, _, _ = block.step(s, JointAction((push(block, "push_up", 0.2), push(block, other, 0.2))))
        np.testing.assert_array_equal(nxt.env.pose.position[:2], [0.0, 0.0])


def test_block_clamped_to_arena(block):
    s = block_state(pos=(0.95, 0.0))
    nxt, _, _ = block.step(s, JointAction((push(block, "push_right", 0.3), push(block, "push_right", 0.3))))
    assert nxt.env.pose.position[0] == block_push.ARENA


def test_block_three_agents_all_required():
    env = make_env(EnvConfig(name="block_push", n_agents=3))
    s = block_state(n=3)
    acts = (push(env, "push_up", 0.2), push(env, "push_up", 0.2), noop(env))
    nxt, _, _ = env.step(s, JointAction(acts))
    np.testing.assert_array_equal(nxt.env.pose.position[:2], [0.0, 0.0])
    acts = (push(env, "push_up", 0.2), push(env, "push_up", 0.3), push(env, "push_up", 0.25))
    nxt, _, _ = env.step(s, JointAction(acts))
    np.testing.assert_allclose(nxt.env.pose.position[:2], [0.0, 0.2])


def test_block_goal_radius(block):
    s = block_state(pos=(0.45, 0.5), target=(0.5, 0.5))
    nxt, reward, done = block.step(s, JointAction((push(block, "push_right", 0.04), push(block, "push_right", 0.04))))
    assert reward == 1 and done


# --- reach -------------------------------------------------------------------


def test_reach_pushes_are_additive():
    env = make_env(EnvConfig(name="reach", n_agents=2))
    state = env.reset(4)
    start = state.env.pose.position[:2].copy()
    act = JointAction((push(env, "push_up", 0.2), push(env, "push_right", 0.3)))
    nxt, _, _ = env.step(state, act)
    np.testing.assert_allclose(nxt.env.pose.position[:2] - start, [0.3, 0.2])


# --- soccer ------------------------------------------------------------------


def soccer_state(ball=(0.0, 0.0), goal=(0.5, 0.0), agents=((-0.6, -0.6), (0.6, 0.6)), flags=None):
    n = len(agents)
    env_state = EnvState(
        0,
        np.array(goal, dtype=np.float64),
        Pose(np.array([ball[0], ball[1], 0.0]), IDENTITY_QUAT.copy()),
        np.zeros(n) if flags is None else np.array(flags, dtype=np.float64),
    )
    return JointState(tuple(np.array(a, dtype=np.float64) for a in agents), env_state)


@pytest.fixture
def pitch():
    return make_env(CONFIGS["soccer"])


def test_soccer_move_and_capture(pitch):
    s = soccer_state(agents=((0.0, -0.3), (0.6, 0.6)))
    act = JointAction((push(pitch, "move_up", 0.3), noop(pitch)))
    nxt, _, _ = pitch.step(s, act)
    np.testing.assert_allclose(nxt.agent_states[0], [0.0, 0.0])
    assert nxt.env.flags[0] == 1.0  # landed on the ball
    assert nxt.env.flags[1] == 0.0


def test_soccer_kick_needs_step_start_contact(pitch):
    # standing at the ball: kick moves it toward the goal
    s = soccer_state(agents=((0.0, 0.0), (0.6, 0.6)))
    act = JointAction((AgentAction(soccer.KICK, np.array([0.2])), noop(pitch)))
    nxt, _, _ = pitch.step(s, act)
    np.testing.assert_allclose(nxt.env.pose.position[:2], [0.2, 0.0], atol=1e-12)
    # from across the pitch the same kick does nothing
    s = soccer_state(agents=((0.5, 0.5), (0.6, 0.6)))
    nxt, _, _ = pitch.step(s, act)
    np.testing.assert_array_equal(nxt.env.pose.position[:2], [0.0, 0.0])


def test_soccer_kicks_sum(pitch):
    s = soccer_state(agents=((0.0, 0.0), (0.0, 0.0)))
    act = JointAction((
        AgentAction(soccer.KICK, np.array([0.2])),
        AgentAction(soccer.KICK, np.array([0.15])),
    ))
    nxt, _, _ = pitch.step(s, act)
    np.testing.assert_allclose(nxt.env.pose.position[:2], [0.35, 0.0], atol=1e-12)


def test_soccer_goal_requires_all_possession(pitch):
    s = soccer_state(ball=(0.45, 0.0), agents=((0.45, 0.0), (0.6, 0.6)), flags=(1.0, 0.0))
    act = JointAction((AgentAction(soccer.KICK, np.array([0.05])), noop(pitch)))
    nxt, reward, done = pitch.step(s, act)
    assert reward == 0  # ball in the region, but agent 1 never touched it
    s2 = soccer_state(ball=(0.45, 0.0), agents=((0.45, 0.0), (0.6, 0.6)), flags=(1.0, 1.0))
    nxt, reward, done = pitch.step(s2, act)
    assert reward == 1 and done
