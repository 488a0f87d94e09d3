"""Shared state and action containers.

Flattening conventions live here and are load-bearing: model inputs,
policy observations, and the distance metric all read these layouts.

Env feature vector (model/policy input block, in order):
    [timestep / horizon, geometry..., position (3), orientation quaternion
     (4, only when the environment tracks orientation), flags...]

Metric vector (distance computations; timestep deliberately excluded):
    [position (3), canonical orientation quaternion (4), flags...]

Policy observation: [env features, agent state 0, agent state 1, ...].

Per-agent action encoding: [one-hot skill (K), parameter slots (P)] where
P is the total parameter count across all skills of the library and only
the chosen skill's slots carry values (others zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_canonical


@dataclass(frozen=True)
class ParamSpec:
    name: str
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError(f"empty parameter box for {self.name}: [{self.low}, {self.high}]")


@dataclass(frozen=True)
class SkillSpec:
    name: str
    params: tuple[ParamSpec, ...] = ()

    @property
    def n_params(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class SkillLibrary:
    """Ordered skill set shared by every agent of an environment."""

    skills: tuple[SkillSpec, ...]

    def __post_init__(self):
        if not self.skills:
            raise ValueError("skill library cannot be empty")

    @property
    def n_skills(self) -> int:
        return len(self.skills)

    @property
    def total_params(self) -> int:
        return sum(s.n_params for s in self.skills)

    def slot_offset(self, skill_id: int) -> int:
        return sum(s.n_params for s in self.skills[:skill_id])

    @property
    def encoded_dim(self) -> int:
        return self.n_skills + self.total_params

    def skill_id(self, name: str) -> int:
        for i, s in enumerate(self.skills):
            if s.name == name:
                return i
        raise ValueError(f"unknown skill {name!r}")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(low, high) arrays over all parameter slots in library order."""
        lows = [p.low for s in self.skills for p in s.params]
        highs = [p.high for s in self.skills for p in s.params]
        return np.array(lows, dtype=np.float64), np.array(highs, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "skills": [
                {
                    "name": s.name,
                    "params": [
                        {"name": p.name, "low": p.low, "high": p.high} for p in s.params
                    ],
                }
                for s in self.skills
            ]
        }


@dataclass
class EnvState:
    """World-side state: timestep, static geometry features, object pose,
    and extra flag values (possession markers, relative angles, ...)."""

    timestep: int
    geometry: np.ndarray
    pose: Pose
    flags: np.ndarray

    def __post_init__(self):
        self.geometry = np.asarray(self.geometry, dtype=np.float64)
        self.flags = np.asarray(self.flags, dtype=np.float64)

    def copy(self) -> "EnvState":
        return EnvState(self.timestep, self.geometry.copy(), self.pose.copy(), self.flags.copy())

    def features(self, horizon: int, has_orientation: bool) -> np.ndarray:
        parts = [np.array([self.timestep / horizon]), self.geometry, self.pose.position]
        if has_orientation:
            parts.append(self.pose.orientation)
        parts.append(self.flags)
        return np.concatenate(parts)

    def metric_vector(self) -> np.ndarray:
        """Flattened comparison vector; timestep excluded by design."""
        return np.concatenate(
            [self.pose.position, quat_canonical(self.pose.orientation), self.flags]
        )


def env_feature_dim(geometry_dim: int, flags_dim: int, has_orientation: bool) -> int:
    return 1 + geometry_dim + 3 + (4 if has_orientation else 0) + flags_dim


@dataclass
class JointState:
    """Full observation: per-agent proprioceptive vectors plus env state."""

    agent_states: tuple[np.ndarray, ...]
    env: EnvState

    def __post_init__(self):
        self.agent_states = tuple(np.asarray(a, dtype=np.float64) for a in self.agent_states)

    def copy(self) -> "JointState":
        return JointState(tuple(a.copy() for a in self.agent_states), self.env.copy())

    def obs_vector(self, horizon: int, has_orientation: bool) -> np.ndarray:
        return np.concatenate(
            [self.env.features(horizon, has_orientation), *self.agent_states]
        )


@dataclass
class AgentAction:
    """One agent's choice: a skill id, that skill's parameter values, and
    (when sampled from a policy) the pre-squash Gaussian draw data."""

    skill_id: int
    params: np.ndarray
    noise: np.ndarray | None = None   # standard normal draws, one per param
    presquash: np.ndarray | None = None  # mu + sigma * noise at sampling time

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)


@dataclass
class JointAction:
    actions: tuple[AgentAction, ...]

    @property
    def n_agents(self) -> int:
        return len(self.actions)

    def skill_ids(self) -> list[int]:
        return [a.skill_id for a in self.actions]


def encode_action(library: SkillLibrary, action: AgentAction) -> np.ndarray:
    """One-hot skill plus parameter slots (inactive skills' slots zero)."""
    if not 0 <= action.skill_id < library.n_skills:
        raise ValueError(f"skill id {action.skill_id} outside library of {library.n_skills}")
    skill = library.skills[action.skill_id]
    if action.params.shape != (skill.n_params,):
        raise ValueError(
            f"skill {skill.name!r} takes {skill.n_params} params, got {action.params.shape}"
        )
    enc = np.zeros(library.encoded_dim)
    enc[action.skill_id] = 1.0
    off = library.n_skills + library.slot_offset(action.skill_id)
    enc[off : off + skill.n_params] = action.params
    return enc


@dataclass(frozen=True)
class EnvSchema:
    """Machine-readable environment descriptor."""

    name: str
    n_agents: int
    horizon: int
    agent_state_dim: int
    geometry_dim: int
    flags_dim: int
    has_orientation: bool
    library: SkillLibrary

    @property
    def env_feature_dim(self) -> int:
        return env_feature_dim(self.geometry_dim, self.flags_dim, self.has_orientation)

    @property
    def obs_dim(self) -> int:
        return self.env_feature_dim + self.n_agents * self.agent_state_dim

    @property
    def metric_dim(self) -> int:
        return 3 + 4 + self.flags_dim

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_agents": self.n_agents,
            "horizon": self.horizon,
            "agent_state_dim": self.agent_state_dim,
            "geometry_dim": self.geometry_dim,
            "flags_dim": self.flags_dim,
            "has_orientation": self.has_orientation,
            "library": self.library.to_dict(),
        }
