"""Two agents open a twist cap: one steadies the base, the other twists.

The bottle's base orientation is a rotation about z; the cap's angle
*relative to the base* is the flag the goal reads. Twisting while some
other agent holds the base turns the cap. Twisting an unheld bottle just
spins the whole thing, leaving the relative angle untouched, so a lone
agent can never make progress on the goal.

See RULES.md for the exact closed forms.
"""

from __future__ import annotations

import numpy as np

from ..geometry import IDENTITY_QUAT, Pose, apply_delta, PoseDelta, axis_angle_quat
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

TWIST_STEP = 0.6  # radians per twist application
GOAL_ANGLE = np.pi / 2  # cap must be a quarter turn from the base
HOLD_LIMIT = 1.2  # approach angles beyond this have no grip solution

SIZE_RANGE = (0.03, 0.08)
CENTER_RANGE = 0.2

LIBRARY = SkillLibrary(
    (
        SkillSpec("hold", (ParamSpec("approach", -np.pi / 2, np.pi / 2),)),
        SkillSpec("twist"),
        SkillSpec("noop"),
    )
)

HOLD, TWIST, NOOP = 0, 1, 2
Z_AXIS = np.array([0.0, 0.0, 1.0])


class BottleTwistEnv(Env):
    name = "bottle_twist"

    def _build_schema(self, config: EnvConfig) -> EnvSchema:
        if config.n_agents != 2:
            raise ValueError("bottle_twist is a two-agent environment")
        return EnvSchema(
            name=self.name,
            n_agents=2,
            horizon=config.horizon,
            agent_state_dim=1,  # [holding]
            geometry_dim=1,  # [cap size]
            flags_dim=1,  # [cap angle relative to base]
            has_orientation=True,
            library=LIBRARY,
        )

    @property
    def goal_angle(self) -> float:
        return float(self.config.overrides.get("goal_angle", GOAL_ANGLE))

    def _draw(self, rng: np.random.Generator) -> JointState:
        size = rng.uniform(*SIZE_RANGE)
        center = rng.uniform(-CENTER_RANGE, CENTER_RANGE, size=2)
        pose = Pose(np.array([center[0], center[1], 0.0]), IDENTITY_QUAT.copy())
        env = EnvState(0, np.array([size]), pose, np.zeros(1))
        return JointState((np.zeros(1), np.zeros(1)), env)

    def _goal(self, state: JointState) -> bool:
        return state.env.flags[0] >= self.goal_angle

    def _transition(self, state: JointState, actions: list[AgentAction]) -> JointState:
        nxt = state.copy()

        for i, act in enumerate(actions):
            if act.skill_id == HOLD and abs(float(act.params[0])) <= HOLD_LIMIT:
                nxt.agent_states[i][0] = 1.0

        for i, act in enumerate(actions):
            if act.skill_id != TWIST:
                continue
            # the twisting hand cannot keep its own grip on the base
            nxt.agent_states[i][0] = 0.0
            others_hold = any(
                nxt.agent_states[j][0] == 1.0 for j in range(len(actions)) if j != i
            )
            if others_hold:
                nxt.env.flags[0] += TWIST_STEP
            else:
                delta = PoseDelta(np.zeros(3), axis_angle_quat(Z_AXIS, TWIST_STEP))
                nxt.env.pose = apply_delta(nxt.env.pose, delta)

        return nxt
