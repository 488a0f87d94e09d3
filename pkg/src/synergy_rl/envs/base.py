"""Environment base contract.

An Env object is a stateless rules bundle: `reset(episode_seed)` draws the
episode's randomization and returns the full starting JointState, and
`step(state, action)` is a pure function of its arguments (every piece of
episode randomness lives inside the state, so identical inputs give
identical outputs). The extrinsic reward is sparse {0, 1}: it is granted
exactly once, on the step whose post-transition state first satisfies the
goal, and that step terminates the episode. An episode also ends when the
timestep reaches the horizon.

Infeasible skill applications (and skills whose phase preconditions fail)
change nothing except the timestep and earn no reward; `step` is total and
parameter values are clamped into their declared boxes before the rules
run. Exact closed forms for every environment live in RULES.md next to
this file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..spaces import AgentAction, EnvSchema, EnvState, JointAction, JointState


@dataclass(frozen=True)
class EnvConfig:
    """Name plus the knobs shared by all environments.

    `frozen_agents` lists agents whose actions are replaced by no-ops;
    single-agent variants use it so state and model shapes stay unchanged.
    `overrides` carries per-environment constants (documented per env).
    """

    name: str
    n_agents: int
    horizon: int = 10
    frozen_agents: tuple[int, ...] = ()
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if any(not 0 <= i < self.n_agents for i in self.frozen_agents):
            raise ValueError(f"frozen agent ids {self.frozen_agents} out of range")


class Env:
    """Subclasses define the schema, the episode draw, and the world rules."""

    # subclasses set these class attributes
    name: str = ""
    noop_skill: str = "noop"

    def __init__(self, config: EnvConfig):
        self.config = config
        self.schema: EnvSchema = self._build_schema(config)

    # --- subclass surface -------------------------------------------------
    def _build_schema(self, config: EnvConfig) -> EnvSchema:
        raise NotImplementedError

    def _draw(self, rng: np.random.Generator) -> JointState:
        """Draw one episode's starting state (timestep 0)."""
        raise NotImplementedError

    def _goal(self, state: JointState) -> bool:
        raise NotImplementedError

    def _transition(self, state: JointState, actions: list[AgentAction]) -> JointState:
        """Apply the world rules; returns the next state with timestep already
        advanced. Frozen agents have been replaced by no-ops beforehand."""
        raise NotImplementedError

    # --- shared behavior --------------------------------------------------
    def reset(self, episode_seed: int) -> JointState:
        """Start an episode. Redraws until the goal is not already satisfied
        so no episode can succeed before any agent acts."""
        rng = np.random.default_rng(episode_seed)
        for _ in range(100):
            state = self._draw(rng)
            if not self._goal(state):
                return state
        raise RuntimeError(f"{self.name}: could not draw a non-goal start state")

    def step(self, state: JointState, action: JointAction) -> tuple[JointState, int, bool]:
        """Pure transition. Returns (next_state, extrinsic, done)."""
        if action.n_agents != self.schema.n_agents:
            raise ValueError(
                f"action has {action.n_agents} agents, env expects {self.schema.n_agents}"
            )
        if state.env.timestep >= self.schema.horizon:
            raise ValueError("episode is already over (timestep at horizon)")
        acts = [self._sanitize(a, i) for i, a in enumerate(action.actions)]
        nxt = self._transition(state, acts)
        nxt.env.timestep = state.env.timestep + 1
        goal = self._goal(nxt)
        extrinsic = 1 if goal else 0
        done = goal or nxt.env.timestep >= self.schema.horizon
        return nxt, extrinsic, done

    def _sanitize(self, action: AgentAction, agent_id: int) -> AgentAction:
        lib = self.schema.library
        if not 0 <= action.skill_id < lib.n_skills:
            raise ValueError(f"skill id {action.skill_id} outside library")
        if agent_id in self.config.frozen_agents:
            return AgentAction(lib.skill_id(self.noop_skill), np.zeros(0))
        skill = lib.skills[action.skill_id]
        if action.params.shape != (skill.n_params,):
            raise ValueError(
                f"skill {skill.name!r} takes {skill.n_params} params, "
                f"got shape {action.params.shape}"
            )
        lo = np.array([p.low for p in skill.params])
        hi = np.array([p.high for p in skill.params])
        params = np.clip(action.params, lo, hi) if skill.n_params else action.params
        return AgentAction(action.skill_id, params)

    # --- conveniences -----------------------------------------------------
    def noop_action(self) -> AgentAction:
        return AgentAction(self.schema.library.skill_id(self.noop_skill), np.zeros(0))

    def random_action(self, rng: np.random.Generator) -> AgentAction:
        """Uniform skill, uniform parameters: the exploration policy used for
        model pretraining and the `random` baseline."""
        lib = self.schema.library
        sid = int(rng.integers(lib.n_skills))
        skill = lib.skills[sid]
        params = np.array([rng.uniform(p.low, p.high) for p in skill.params])
        return AgentAction(sid, params)

    def random_joint_action(self, rng: np.random.Generator) -> JointAction:
        return JointAction(tuple(self.random_action(rng) for _ in range(self.schema.n_agents)))
