"""Two agents lift a bar that is too heavy for either alone.

The bar lies along the x axis. Each agent owns one end (agent 0 the
negative-x end, agent 1 the positive-x end), may grasp at a point along
the bar, and may pull its end upward. Only a simultaneous lift by both
agents, grasping on opposite halves, raises the bar cleanly; a lone lift
mostly slips (a small fraction of the pull height leaks into z) and tips
the bar toward the other end. Too much accumulated tilt drops the bar.

See RULES.md for the exact closed forms and the named constants.
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

# Fraction of a lone pull's height that actually reaches the bar.
LIFT_LEAK = 0.1
# Tilt in radians per meter of lone pull.
TILT_PER_METER = 2.0
# Accumulated tilt beyond this drops the bar.
TILT_DROP = 0.5
# Above the reach of two full coordinated pulls, so holding the goal takes a
# sustained sequence of them rather than one lucky step.
GOAL_HEIGHT = 1.05

HALF_LENGTH_RANGE = (0.5, 0.9)
DENSITY_RANGE = (0.5, 1.5)
CENTER_RANGE = 0.2

LIBRARY = SkillLibrary(
    (
        SkillSpec("grasp", (ParamSpec("offset", -1.0, 1.0),)),
        SkillSpec("lift", (ParamSpec("height", 0.0, 0.5),)),
        SkillSpec("noop"),
    )
)

GRASP, LIFT, NOOP = 0, 1, 2
# Lifting your own end tips the bar about the y axis; the sign says which
# way: agent 0 raises the -x end (positive angle about +y), agent 1 the +x end.
TILT_SIGN = (1.0, -1.0)


def _tilt_angle(q: np.ndarray) -> float:
    """Signed rotation about +y; valid because all rotations here share that axis."""
    return 2.0 * float(np.arctan2(q[2], q[0]))


class BarLiftEnv(Env):
    name = "bar_lift"

    def _build_schema(self, config: EnvConfig) -> EnvSchema:
        if config.n_agents != 2:
            raise ValueError("bar_lift is a two-agent environment")
        return EnvSchema(
            name=self.name,
            n_agents=2,
            horizon=config.horizon,
            agent_state_dim=2,  # [grasped, grasp offset]
            geometry_dim=2,  # [half length, density]
            flags_dim=0,
            has_orientation=True,
            library=LIBRARY,
        )

    def _draw(self, rng: np.random.Generator) -> JointState:
        half_length = rng.uniform(*HALF_LENGTH_RANGE)
        density = rng.uniform(*DENSITY_RANGE)
        center = rng.uniform(-CENTER_RANGE, CENTER_RANGE, size=2)
        pose = Pose(np.array([center[0], center[1], 0.0]), IDENTITY_QUAT.copy())
        env = EnvState(0, np.array([half_length, density]), pose, np.zeros(0))
        return JointState((np.zeros(2), np.zeros(2)), env)

    @property
    def goal_height(self) -> float:
        return float(self.config.overrides.get("goal_height", GOAL_HEIGHT))

    def _goal(self, state: JointState) -> bool:
        return state.env.pose.position[2] >= self.goal_height

    def _transition(self, state: JointState, actions: list[AgentAction]) -> JointState:
        nxt = state.copy()
        half_length = state.env.geometry[0]

        # grasps resolve first; a grasp beyond the physical bar end fails
        for i, act in enumerate(actions):
            if act.skill_id == GRASP:
                offset = float(act.params[0])
                if abs(offset) <= half_length:
                    nxt.agent_states[i][0] = 1.0
                    nxt.agent_states[i][1] = offset

        # lifts need a grasp from an earlier step
        lifters = [
            i
            for i, act in enumerate(actions)
            if act.skill_id == LIFT and state.agent_states[i][0] == 1.0
        ]
        offsets = [state.agent_states[i][1] for i in range(2)]
        pose = nxt.env.pose
        if len(lifters) == 2 and offsets[0] * offsets[1] < 0.0:
            # coordinated lift from opposite halves: clean raise, no tilt
            raise_by = min(float(actions[i].params[0]) for i in lifters)
            pose = Pose(pose.position + np.array([0.0, 0.0, raise_by]), pose.orientation)
        else:
            for i in lifters:
                height = float(actions[i].params[0])
                delta = PoseDelta(
                    np.array([0.0, 0.0, LIFT_LEAK * height]),
                    axis_angle_quat(np.array([0.0, 1.0, 0.0]),
                                    TILT_SIGN[i] * TILT_PER_METER * height),
                )
                pose = apply_delta(pose, delta)

        if abs(_tilt_angle(pose.orientation)) > TILT_DROP:
            # bar slips out and falls flat; everyone loses their grip
            pose = Pose(np.array([pose.position[0], pose.position[1], 0.0]),
                        IDENTITY_QUAT.copy())
            for i in range(2):
                nxt.agent_states[i][:] = 0.0

        nxt.env.pose = pose
        return nxt
