"""Keep-away style soccer: everyone must touch the ball before a goal counts.

Agents walk with cardinal moves; ending a move within the capture radius
of the ball sets that agent's sticky possession flag. An agent standing
within the capture radius may kick, sending the ball toward the goal
region. The extrinsic goal only fires once the ball is inside the goal
region AND every possession flag is set, so a lone striker can score
nothing. Orientation is untracked.

See RULES.md for the exact closed forms.
"""

from __future__ import annotations

import numpy as np

from ..geometry import IDENTITY_QUAT, Pose
from ..spaces import (
    AgentAction,
    EnvSchema,
    EnvState,
    JointState,
    ParamSpec,
    SkillLibrary,
    SkillSpec,
)
from .base import Env, EnvConfig

CAPTURE_RADIUS = 0.05
GOAL_RADIUS = 0.1
ARENA = 1.0
MOVE_MAX = 0.5
KICK_MAX = 0.5

BALL_START_RANGE = 0.3
GOAL_CENTER_RANGE = 0.6
GOAL_DIST_RANGE = (0.25, 0.9)  # distance from ball start to goal center

AGENT_STARTS = (
    np.array([-0.6, -0.6]),
    np.array([0.6, 0.6]),
    np.array([0.6, -0.6]),
)

DIRECTIONS = {
    "move_up": np.array([0.0, 1.0]),
    "move_down": np.array([0.0, -1.0]),
    "move_left": np.array([-1.0, 0.0]),
    "move_right": np.array([1.0, 0.0]),
}

LIBRARY = SkillLibrary(
    tuple(
        SkillSpec(name, (ParamSpec("distance", 0.0, MOVE_MAX),)) for name in DIRECTIONS
    )
    + (
        SkillSpec("kick", (ParamSpec("power", 0.0, KICK_MAX),)),
        SkillSpec("noop"),
    )
)

KICK = LIBRARY.skill_id("kick")
NOOP = LIBRARY.skill_id("noop")


class SoccerEnv(Env):
    name = "soccer"

    def _build_schema(self, config: EnvConfig) -> EnvSchema:
        if config.n_agents not in (2, 3):
            raise ValueError("soccer supports two or three agents")
        return EnvSchema(
            name=self.name,
            n_agents=config.n_agents,
            horizon=config.horizon,
            agent_state_dim=2,  # [x, y]
            geometry_dim=2,  # [goal center x, goal center y]
            flags_dim=config.n_agents,  # possession, one per agent
            has_orientation=False,
            library=LIBRARY,
        )

    def _draw(self, rng: np.random.Generator) -> JointState:
        n = self.config.n_agents
        ball = rng.uniform(-BALL_START_RANGE, BALL_START_RANGE, size=2)
        for _ in range(1000):
            goal = rng.uniform(-GOAL_CENTER_RANGE, GOAL_CENTER_RANGE, size=2)
            if GOAL_DIST_RANGE[0] <= np.linalg.norm(goal - ball) <= GOAL_DIST_RANGE[1]:
                break
        pose = Pose(np.array([ball[0], ball[1], 0.0]), IDENTITY_QUAT.copy())
        env = EnvState(0, goal.copy(), pose, np.zeros(n))
        return JointState(tuple(AGENT_STARTS[i].copy() for i in range(n)), env)

    def _goal(self, state: JointState) -> bool:
        goal = state.env.geometry
        in_region = float(np.linalg.norm(state.env.pose.position[:2] - goal)) <= GOAL_RADIUS
        return in_region and bool(np.all(state.env.flags == 1.0))

    def _transition(self, state: JointState, actions: list[AgentAction]) -> JointState:
        nxt = state.copy()
        ball = state.env.pose.position[:2].copy()

        moved = []
        for i, act in enumerate(actions):
            name = LIBRARY.skills[act.skill_id].name
            if name in DIRECTIONS:
                pos = nxt.agent_states[i]
                pos += float(act.params[0]) * DIRECTIONS[name]
                np.clip(pos, -ARENA, ARENA, out=pos)
                moved.append(i)

        # a move ending at the ball takes possession, and keeps it for good
        for i in moved:
            if np.linalg.norm(nxt.agent_states[i] - ball) <= CAPTURE_RADIUS:
                nxt.env.flags[i] = 1.0

        # kicks are only possible standing right at the ball; direction is
        # toward the goal region, all from the step-start ball position
        goal = state.env.geometry
        shift = np.zeros(2)
        for i, act in enumerate(actions):
            if act.skill_id != KICK:
                continue
            if np.linalg.norm(state.agent_states[i] - ball) > CAPTURE_RADIUS:
                continue
            to_goal = goal - ball
            dist = float(np.linalg.norm(to_goal))
            if dist < 1e-12:
                continue
            shift = shift + float(act.params[0]) * to_goal / dist
        pos = nxt.env.pose.position
        pos[0] = np.clip(ball[0] + shift[0], -ARENA, ARENA)
        pos[1] = np.clip(ball[1] + shift[1], -ARENA, ARENA)
        return nxt
