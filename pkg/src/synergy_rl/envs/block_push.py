"""All agents shove a heavy block together, or it does not move at all.

A push only takes effect when every agent pushes in the same step and all
push directions agree to within 45 degrees (with the four cardinal skills
that means: the same direction); the block then moves by the smallest of
the pushed magnitudes along the mean direction. Any lone or disagreeing
push wastes the step. Orientation is untracked.

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

CONE_COS = np.cos(np.pi / 4)
GOAL_RADIUS = 0.1
ARENA = 1.0
PUSH_MAX = 0.3

SIZE_RANGE = (0.05, 0.15)
BLOCK_START_RANGE = 0.3
# with three agents the hard part is agreeing at all, so their carry is shorter
TARGET_RANGE = {2: 0.6, 3: 0.5}
MIN_TARGET_DIST = {2: 0.25, 3: 0.3}

DIRECTIONS = {
    "push_up": np.array([0.0, 1.0]),
    "push_down": np.array([0.0, -1.0]),
    "push_left": np.array([-1.0, 0.0]),
    "push_right": np.array([1.0, 0.0]),
}

LIBRARY = SkillLibrary(
    tuple(
        SkillSpec(name, (ParamSpec("magnitude", 0.0, PUSH_MAX),)) for name in DIRECTIONS
    )
    + (SkillSpec("noop"),)
)

NOOP = LIBRARY.skill_id("noop")


class BlockPushEnv(Env):
    name = "block_push"

    def _build_schema(self, config: EnvConfig) -> EnvSchema:
        if config.n_agents not in (2, 3):
            raise ValueError("block_push supports two or three agents")
        return EnvSchema(
            name=self.name,
            n_agents=config.n_agents,
            horizon=config.horizon,
            agent_state_dim=0,
            geometry_dim=3,  # [block size, target x, target y]
            flags_dim=0,
            has_orientation=False,
            library=LIBRARY,
        )

    def _draw(self, rng: np.random.Generator) -> JointState:
        n = self.config.n_agents
        size = rng.uniform(*SIZE_RANGE)
        block = rng.uniform(-BLOCK_START_RANGE, BLOCK_START_RANGE, size=2)
        reach = TARGET_RANGE[n]
        for _ in range(1000):
            target = rng.uniform(-reach, reach, size=2)
            if np.linalg.norm(target - block) >= MIN_TARGET_DIST[n]:
                break
        pose = Pose(np.array([block[0], block[1], 0.0]), IDENTITY_QUAT.copy())
        env = EnvState(0, np.array([size, target[0], target[1]]), pose, np.zeros(0))
        return JointState(tuple(np.zeros(0) for _ in range(n)), env)

    def _goal(self, state: JointState) -> bool:
        target = state.env.geometry[1:3]
        return float(np.linalg.norm(state.env.pose.position[:2] - target)) <= GOAL_RADIUS

    def _transition(self, state: JointState, actions: list[AgentAction]) -> JointState:
        nxt = state.copy()
        pushes = [
            (DIRECTIONS[LIBRARY.skills[a.skill_id].name], float(a.params[0]))
            for a in actions
            if a.skill_id != NOOP
        ]
        if len(pushes) != len(actions):
            return nxt  # someone sat out; the block is too heavy for the rest
        dirs = [d for d, _ in pushes]
        for i in range(len(dirs)):
            for j in range(i + 1, len(dirs)):
                if float(dirs[i] @ dirs[j]) < CONE_COS:
                    return nxt  # pushing against each other achieves nothing
        mean_dir = np.mean(dirs, axis=0)
        norm = float(np.linalg.norm(mean_dir))
        if norm < 1e-12:
            return nxt
        move = min(m for _, m in pushes) * mean_dir / norm
        pos = nxt.env.pose.position
        pos[0] = np.clip(pos[0] + move[0], -ARENA, ARENA)
        pos[1] = np.clip(pos[1] + move[1], -ARENA, ARENA)
        return nxt
