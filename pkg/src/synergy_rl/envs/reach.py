"""Reach family: nudge a puck into a target region.

Dynamics are exactly additive: every agent's push moves the puck by its
own displacement, applied in agent order, with no interaction between
agents and no walls. With one agent this is the policy-optimization
sanity task; with two it is the decoupled control case whose true joint
dynamics equal the sequential composition of the per-agent dynamics
exactly, which pins the compositional reward at zero.
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

GOAL_RADIUS = 0.15
PUSH_MAX = 0.5
TARGET_RANGE = 0.3

DIRECTIONS = {
    "push_up": np.array([0.0, 1.0]),
    "push_down": np.array([0.0, -1.0]),
    "push_left": np.array([-1.0, 0.0]),
    "push_right": np.array([1.0, 0.0]),
}

LIBRARY = SkillLibrary(
    tuple(
        SkillSpec(name, (ParamSpec("distance", 0.0, PUSH_MAX),)) for name in DIRECTIONS
    )
    + (SkillSpec("noop"),)
)

NOOP = LIBRARY.skill_id("noop")


class ReachEnv(Env):
    name = "reach"

    def _build_schema(self, config: EnvConfig) -> EnvSchema:
        if config.n_agents not in (1, 2):
            raise ValueError("reach supports one or two agents")
        return EnvSchema(
            name=self.name,
            n_agents=config.n_agents,
            horizon=config.horizon,
            agent_state_dim=0,
            geometry_dim=2,  # [target x, target y]
            flags_dim=0,
            has_orientation=False,
            library=LIBRARY,
        )

    def _draw(self, rng: np.random.Generator) -> JointState:
        target = rng.uniform(-TARGET_RANGE, TARGET_RANGE, size=2)
        pose = Pose(np.zeros(3), IDENTITY_QUAT.copy())
        env = EnvState(0, target, pose, np.zeros(0))
        return JointState(tuple(np.zeros(0) for _ in range(self.config.n_agents)), env)

    def _goal(self, state: JointState) -> bool:
        target = state.env.geometry
        return float(np.linalg.norm(state.env.pose.position[:2] - target)) <= GOAL_RADIUS

    def _transition(self, state: JointState, actions: list[AgentAction]) -> JointState:
        nxt = state.copy()
        pos = nxt.env.pose.position
        for act in actions:  # agent order; strictly additive, no walls
            name = LIBRARY.skills[act.skill_id].name
            if name in DIRECTIONS:
                d = float(act.params[0]) * DIRECTIONS[name]
                pos[0] = pos[0] + d[0]
                pos[1] = pos[1] + d[1]
        return nxt
