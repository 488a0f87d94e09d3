"""Hand-written cooperative controllers.

One closed-loop controller per environment, used to demonstrate that every
task is solvable by coordinated play within the horizon (the counterpart
of the exhaustive single-agent search showing it is not solvable alone).
"""

from __future__ import annotations

import numpy as np

from ..spaces import AgentAction, JointAction, JointState
from . import bar_lift, bottle_twist, soccer
from .base import Env


def scripted_action(env: Env, state: JointState) -> JointAction:
    fn = _CONTROLLERS.get(env.name)
    if fn is None:
        raise ValueError(f"no scripted controller for environment {env.name!r}")
    return fn(env, state)


def run_scripted_episode(env: Env, episode_seed: int) -> bool:
    """Returns True when the scripted controller reaches the goal."""
    state = env.reset(episode_seed)
    done = False
    while not done:
        state, extrinsic, done = env.step(state, scripted_action(env, state))
        if extrinsic:
            return True
    return False


def _noop(env: Env) -> AgentAction:
    return AgentAction(env.schema.library.skill_id("noop"), np.zeros(0))


def _axis_move(env: Env, prefix: str, delta: np.ndarray, max_step: float) -> AgentAction | None:
    """Cardinal step along the largest remaining axis of `delta`, or None."""
    axis = int(np.argmax(np.abs(delta)))
    if abs(float(delta[axis])) < 1e-12:
        return None
    if axis == 0:
        name = f"{prefix}_right" if delta[0] > 0 else f"{prefix}_left"
    else:
        name = f"{prefix}_up" if delta[1] > 0 else f"{prefix}_down"
    mag = min(abs(float(delta[axis])), max_step)
    return AgentAction(env.schema.library.skill_id(name), np.array([mag]))


def _move_vector(env: Env, action: AgentAction) -> np.ndarray:
    name = env.schema.library.skills[action.skill_id].name
    table = {"up": [0, 1], "down": [0, -1], "left": [-1, 0], "right": [1, 0]}
    suffix = name.rsplit("_", 1)[-1]
    return float(action.params[0]) * np.array(table[suffix], dtype=np.float64)


def _bar_lift(env: Env, state: JointState) -> JointAction:
    grasp_at = (-0.4, 0.4)  # inside every drawn half length, opposite halves
    if all(state.agent_states[i][0] == 1.0 for i in range(2)):
        lift = AgentAction(bar_lift.LIFT, np.array([0.45]))
        return JointAction((lift, AgentAction(bar_lift.LIFT, np.array([0.45]))))
    acts = []
    for i in range(2):
        if state.agent_states[i][0] == 0.0:
            acts.append(AgentAction(bar_lift.GRASP, np.array([grasp_at[i]])))
        else:
            acts.append(_noop(env))
    return JointAction(tuple(acts))


def _bottle_twist(env: Env, state: JointState) -> JointAction:
    if state.agent_states[0][0] == 0.0:
        return JointAction((AgentAction(bottle_twist.HOLD, np.array([0.0])), _noop(env)))
    return JointAction((_noop(env), AgentAction(bottle_twist.TWIST, np.zeros(0))))


def _block_push(env: Env, state: JointState) -> JointAction:
    target = state.env.geometry[1:3]
    delta = target - state.env.pose.position[:2]
    act = _axis_move(env, "push", delta, 0.3)
    if act is None:
        return JointAction(tuple(_noop(env) for _ in range(env.schema.n_agents)))
    same = AgentAction(act.skill_id, act.params.copy())
    return JointAction(tuple(
        AgentAction(same.skill_id, same.params.copy()) for _ in range(env.schema.n_agents)
    ))


def _reach(env: Env, state: JointState) -> JointAction:
    # pushes are additive, so hand each agent the remaining error in turn
    delta = (state.env.geometry - state.env.pose.position[:2]).copy()
    acts = []
    for _ in range(env.schema.n_agents):
        act = _axis_move(env, "push", delta, 0.5)
        if act is None:
            acts.append(_noop(env))
        else:
            acts.append(act)
            delta -= _move_vector(env, act)
    return JointAction(tuple(acts))


def _soccer(env: Env, state: JointState) -> JointAction:
    n = env.schema.n_agents
    ball = state.env.pose.position[:2]
    goal = state.env.geometry
    acts: list[AgentAction] = []
    if not np.all(state.env.flags == 1.0):
        # everyone without possession walks to the ball; landing on it counts
        for i in range(n):
            if state.env.flags[i] == 1.0:
                acts.append(_noop(env))
                continue
            act = _axis_move(env, "move", ball - state.agent_states[i], soccer.MOVE_MAX)
            acts.append(act if act is not None else _noop(env))
        return JointAction(tuple(acts))
    # possession complete: the nearest agent at the ball kicks, others chase
    kicked = False
    for i in range(n):
        near = float(np.linalg.norm(state.agent_states[i] - ball)) <= soccer.CAPTURE_RADIUS
        if near and not kicked:
            power = min(float(np.linalg.norm(goal - ball)), soccer.KICK_MAX)
            acts.append(AgentAction(soccer.KICK, np.array([power])))
            kicked = True
        elif near:
            acts.append(_noop(env))
        else:
            act = _axis_move(env, "move", ball - state.agent_states[i], soccer.MOVE_MAX)
            acts.append(act if act is not None else _noop(env))
    return JointAction(tuple(acts))


_CONTROLLERS = {
    "bar_lift": _bar_lift,
    "bottle_twist": _bottle_twist,
    "block_push": _block_push,
    "soccer": _soccer,
    "reach": _reach,
}
