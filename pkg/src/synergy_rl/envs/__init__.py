"""Environment registry and helpers."""

from __future__ import annotations

from ..errors import ConfigurationError
from .bar_lift import BarLiftEnv
from .base import Env, EnvConfig
from .block_push import BlockPushEnv
from .bottle_twist import BottleTwistEnv
from .reach import ReachEnv
from .soccer import SoccerEnv

_REGISTRY: dict[str, type[Env]] = {
    cls.name: cls
    for cls in (BarLiftEnv, BottleTwistEnv, BlockPushEnv, SoccerEnv, ReachEnv)
}


def env_names() -> list[str]:
    return sorted(_REGISTRY)


def make_env(config: EnvConfig) -> Env:
    try:
        cls = _REGISTRY[config.name]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {config.name!r}; known: {env_names()}"
        ) from None
    return cls(config)


def single_agent_variant(config: EnvConfig, agent_id: int) -> EnvConfig:
    """Same world, same shapes, but every agent except `agent_id` is replaced
    by a no-op actor. Used for per-agent model pretraining."""
    if not 0 <= agent_id < config.n_agents:
        raise ValueError(f"agent id {agent_id} out of range for {config.n_agents} agents")
    frozen = tuple(i for i in range(config.n_agents) if i != agent_id)
    return EnvConfig(
        name=config.name,
        n_agents=config.n_agents,
        horizon=config.horizon,
        frozen_agents=frozen,
        overrides=dict(config.overrides),
    )


def skill_library(name: str):
    cfg = EnvConfig(name=name, n_agents=_default_agents(name))
    return make_env(cfg).schema.library


def _default_agents(name: str) -> int:
    return {"bar_lift": 2, "bottle_twist": 2, "block_push": 2, "soccer": 2, "reach": 1}[name]


__all__ = [
    "Env",
    "EnvConfig",
    "BarLiftEnv",
    "BottleTwistEnv",
    "BlockPushEnv",
    "SoccerEnv",
    "ReachEnv",
    "env_names",
    "make_env",
    "single_agent_variant",
    "skill_library",
]
