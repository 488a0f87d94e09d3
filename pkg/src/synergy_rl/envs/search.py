"""Exhaustive open-loop plan search over grid-discretized skill parameters.

Because `step` is a pure function of (state, action), two plan prefixes
that land in the same state have identical futures, so breadth-first
search over *reachable states* covers every open-loop plan exactly while
staying tractable. States are keyed by their rounded flattened content;
the timestep is implicit in the search depth.
"""

from __future__ import annotations

import numpy as np

from ..spaces import AgentAction, JointAction, JointState
from .base import Env

DEFAULT_GRID = 0.05


def grid_values(low: float, high: float, grid: float) -> list[float]:
    """low, low+grid, ... plus the upper endpoint when the box is not a
    whole number of grid steps."""
    n = int(np.floor((high - low) / grid + 1e-9))
    vals = [low + k * grid for k in range(n + 1)]
    if vals[-1] < high - 1e-9:
        vals.append(high)
    return vals


def enumerate_actions(env: Env, grid: float) -> list[AgentAction]:
    """Every (skill, gridded parameters) combination for one agent."""
    out: list[AgentAction] = []
    for sid, skill in enumerate(env.schema.library.skills):
        if skill.n_params == 0:
            out.append(AgentAction(sid, np.zeros(0)))
            continue
        grids = [grid_values(p.low, p.high, grid) for p in skill.params]
        idx = [0] * len(grids)
        while True:
            out.append(AgentAction(sid, np.array([g[i] for g, i in zip(grids, idx)])))
            for d in range(len(grids) - 1, -1, -1):
                idx[d] += 1
                if idx[d] < len(grids[d]):
                    break
                idx[d] = 0
            else:
                break
    return out


def _state_key(state: JointState) -> tuple:
    parts = [np.concatenate(state.agent_states) if state.agent_states else np.zeros(0),
             state.env.geometry, state.env.pose.position,
             state.env.pose.orientation, state.env.flags]
    flat = np.concatenate([p.ravel() for p in parts])
    return tuple(np.round(flat, 9))


def exhaustive_single_agent_search(
    env: Env, episode_seed: int, grid: float = DEFAULT_GRID, max_states: int = 500_000
) -> bool:
    """True when some open-loop plan of the single acting agent reaches the
    goal within the horizon. The env must have exactly one unfrozen agent."""
    acting = [i for i in range(env.schema.n_agents) if i not in env.config.frozen_agents]
    if len(acting) != 1:
        raise ValueError("exhaustive search expects exactly one acting agent")
    agent = acting[0]
    noop = env.noop_action()
    choices = enumerate_actions(env, grid)

    joint_choices = []
    for choice in choices:
        acts = [noop] * env.schema.n_agents
        acts[agent] = choice
        joint_choices.append(JointAction(tuple(acts)))

    start = env.reset(episode_seed)
    frontier: dict[tuple, JointState] = {_state_key(start): start}
    # the reachable state space is small and revisited at every depth, so
    # memoizing (state, action) -> outcome keeps this near-instant; the
    # timestep is excluded from keys (the rules never read it) and depth
    # bounding happens through the loop itself
    memo: dict[tuple, tuple] = {}
    for _ in range(env.schema.horizon):
        nxt: dict[tuple, JointState] = {}
        for key, state in frontier.items():
            for ai, joint in enumerate(joint_choices):
                hit = memo.get((key, ai))
                if hit is None:
                    after, extrinsic, goal = _step_ignoring_horizon(env, state, joint)
                    child_key = _state_key(after)
                    hit = (child_key, after, extrinsic, goal)
                    memo[(key, ai)] = hit
                child_key, after, extrinsic, goal = hit
                if extrinsic:
                    return True
                if not goal and child_key not in nxt:
                    nxt[child_key] = after
        if len(nxt) > max_states:
            raise RuntimeError(f"search frontier exceeded {max_states} states")
        frontier = nxt
        if not frontier:
            break
    return False


def _step_ignoring_horizon(env: Env, state: JointState, action: JointAction):
    """Step without tripping the horizon guard; memoized entries are reused
    at several depths, so the stored state's own timestep is irrelevant."""
    probe = state.copy()
    probe.env.timestep = 0
    after, extrinsic, _ = env.step(probe, action)
    return after, extrinsic, bool(extrinsic)
