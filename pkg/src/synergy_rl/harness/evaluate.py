"""Policy-checkpoint evaluation rollouts.

One checkpoint drives all agents; n_agents checkpoints (from the
independent-learner baseline) drive one agent each.  Deterministic mode
takes the most likely skill and puts the parameter noise at zero, so a
given (checkpoint, env, seed) always returns the same number.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .. import policy as pol
from ..envs.base import Env
from ..errors import ConfigurationError
from ..spaces import AgentAction, JointAction


def load_policies(paths: Sequence[str | Path], env: Env) -> list[pol.Policy]:
    schema = env.schema
    for p in paths:
        if not Path(p).is_file():
            raise ConfigurationError(f"checkpoint {p} does not exist")
    if len(paths) == 1:
        return [pol.load_policy(paths[0], schema)]
    if len(paths) == schema.n_agents:
        return [pol.load_policy(p, schema, n_agents=1) for p in paths]
    raise ConfigurationError(
        f"give 1 checkpoint (joint policy) or {schema.n_agents} (one per agent), got {len(paths)}"
    )


def _greedy_action(policy: pol.Policy, obs: np.ndarray) -> list[AgentAction]:
    lay = policy.layout
    fwd = pol.forward_batch(policy, obs[None, :])
    skills = np.argmax(fwd.logits[0], axis=-1)
    params = pol.squash(fwd.means[0], lay.low, lay.high)
    acts = []
    for agent in range(lay.n_agents):
        sid = int(skills[agent])
        slots = lay.skill_slot_mask[sid]
        acts.append(AgentAction(skill_id=sid, params=params[agent, slots].copy()))
    return acts


def _stochastic_action(
    policy: pol.Policy, obs: np.ndarray, rng: np.random.Generator
) -> list[AgentAction]:
    fwd = pol.forward_batch(policy, obs[None, :])
    sampled = pol.sample_batch(fwd, policy.layout, rng)
    return list(sampled.joint_action(policy.layout, 0).actions)


def evaluate(
    policies: Sequence[pol.Policy],
    env: Env,
    episodes: int,
    seed: int,
    stochastic: bool = False,
) -> float:
    """Mean success over fresh episodes; seeds are derived, not reused."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    schema = env.schema
    if len(policies) == 1:
        agent_sets = [tuple(range(schema.n_agents))]
    else:
        agent_sets = [(i,) for i in range(schema.n_agents)]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
    successes = 0
    for ep in range(episodes):
        state = env.reset(int(np.random.SeedSequence((seed, ep)).generate_state(1)[0]))
        for _ in range(schema.horizon):
            feats = state.env.features(schema.horizon, schema.has_orientation)
            actions: list[AgentAction | None] = [None] * schema.n_agents
            for policy, agents in zip(policies, agent_sets):
                obs = np.concatenate([feats, *[state.agent_states[i] for i in agents]])
                acts = (
                    _stochastic_action(policy, obs, rng)
                    if stochastic
                    else _greedy_action(policy, obs)
                )
                for k, agent in enumerate(agents):
                    actions[agent] = acts[k]
            state, ext, done = env.step(state, JointAction(tuple(actions)))
            if done:
                successes += ext
                break
    return successes / episodes
