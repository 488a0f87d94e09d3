"""Mixed discrete-continuous stochastic policy with a shared critic.

One trunk network reads the flattened joint observation and emits every
head at once, in a fixed order:

    [skill logits, agent-major] [parameter means] [parameter log-stds] [value]

Each agent gets one categorical head over the skill library plus an
independent Gaussian per continuous parameter slot.  Samples respect
each parameter's search box through a sigmoid squash with the matching
log-density correction, so boxes are enforced smoothly rather than by
clipping.  Log-stds are clamped to [-5, 2]; the clamp mask is exposed
because gradients must not flow through a saturated clamp.

Sampling draws a fixed number of random values per call (one uniform
per categorical head, one normal per parameter slot) regardless of
which skills come up, which keeps worker random streams aligned and
makes replay exact: feeding recorded noise back through the same
parameters reproduces the identical action.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigurationError
from .spaces import AgentAction, EnvSchema, JointAction, JointState, SkillLibrary

LOGSTD_MIN = -5.0
LOGSTD_MAX = 2.0
LOG_2PI = float(np.log(2.0 * np.pi))


def squash(z: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Map the real line into (low, high) via a sigmoid."""
    return low + (high - low) / (1.0 + np.exp(-z))


def unsquash(p: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    frac = np.clip((p - low) / (high - low), 1e-12, 1.0 - 1e-12)
    return np.log(frac) - np.log1p(-frac)


def log_squash_deriv(z: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """log dp/dz, written with softplus for stability at large |z|."""
    sp_pos = np.logaddexp(0.0, z)
    sp_neg = np.logaddexp(0.0, -z)
    return np.log(high - low) - sp_pos - sp_neg


@dataclasses.dataclass(frozen=True)
class HeadLayout:
    """Index map into the trunk's output vector."""

    n_agents: int
    n_skills: int
    n_params: int  # continuous parameter slots per agent
    low: np.ndarray  # (n_params,) slot lower bounds
    high: np.ndarray
    skill_slot_mask: np.ndarray  # (n_skills, n_params) bool, slots owned by each skill

    @staticmethod
    def from_library(lib: SkillLibrary, n_agents: int) -> "HeadLayout":
        low, high = lib.bounds()
        mask = np.zeros((lib.n_skills, lib.total_params), dtype=bool)
        for sid, skill in enumerate(lib.skills):
            off = lib.slot_offset(sid)
            mask[sid, off : off + len(skill.params)] = True
        return HeadLayout(
            n_agents=n_agents,
            n_skills=lib.n_skills,
            n_params=lib.total_params,
            low=low,
            high=high,
            skill_slot_mask=mask,
        )

    @staticmethod
    def from_schema(schema: EnvSchema) -> "HeadLayout":
        return HeadLayout.from_library(schema.library, schema.n_agents)

    @property
    def out_dim(self) -> int:
        return self.n_agents * (self.n_skills + 2 * self.n_params) + 1

    # block boundaries, in layout order
    @property
    def logits_end(self) -> int:
        return self.n_agents * self.n_skills

    @property
    def means_end(self) -> int:
        return self.logits_end + self.n_agents * self.n_params

    @property
    def logstds_end(self) -> int:
        return self.means_end + self.n_agents * self.n_params

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "n_skills": self.n_skills,
            "n_params": self.n_params,
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "skill_slot_mask": self.skill_slot_mask.astype(int).tolist(),
        }


@dataclasses.dataclass
class Policy:
    net: nn.NetworkParams
    layout: HeadLayout

    def copy(self) -> "Policy":
        return Policy(net=self.net.copy(), layout=self.layout)


def make_policy(schema: EnvSchema, rng: np.random.Generator, hidden: Sequence[int] = (64, 64, 64)) -> Policy:
    layout = HeadLayout.from_schema(schema)
    sizes = [schema.obs_dim, *hidden, layout.out_dim]
    return Policy(net=nn.mlp_init(sizes, rng), layout=layout)


@dataclasses.dataclass
class PolicyForward:
    """Batched head views plus what the backward pass needs."""

    logits: np.ndarray  # (B, A, K)
    means: np.ndarray  # (B, A, P)
    logstds: np.ndarray  # (B, A, P), clamped
    clamp_open: np.ndarray  # (B, A, P) bool, True where the clamp is not saturated
    values: np.ndarray  # (B,)
    cache: nn.ForwardCache

    @property
    def batch(self) -> int:
        return self.logits.shape[0]


def forward_batch(policy: Policy, obs: np.ndarray) -> PolicyForward:
    """Run the trunk on (B, obs_dim) rows and slice the heads."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    out, cache = nn.mlp_forward(policy.net, obs)
    lay = policy.layout
    b = obs.shape[0]
    a, k, p = lay.n_agents, lay.n_skills, lay.n_params
    logits = out[:, : lay.logits_end].reshape(b, a, k)
    means = out[:, lay.logits_end : lay.means_end].reshape(b, a, p)
    raw = out[:, lay.means_end : lay.logstds_end].reshape(b, a, p)
    clamp_open = (raw > LOGSTD_MIN) & (raw < LOGSTD_MAX)
    logstds = np.clip(raw, LOGSTD_MIN, LOGSTD_MAX)
    values = out[:, -1]
    return PolicyForward(logits, means, logstds, clamp_open, values, cache)


def head_grads_to_output(lay: HeadLayout, g_logits, g_means, g_logstds, g_values) -> np.ndarray:
    """Pack per-head gradients back into trunk-output order."""
    b = g_logits.shape[0]
    return np.concatenate(
        [
            g_logits.reshape(b, -1),
            g_means.reshape(b, -1),
            g_logstds.reshape(b, -1),
            g_values.reshape(b, 1),
        ],
        axis=1,
    )


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


@dataclasses.dataclass
class SampledBatch:
    """One action per row, with everything replay and PPO need."""

    skills: np.ndarray  # (B, A) int
    eps: np.ndarray  # (B, A, P) standard-normal draws, all slots
    z: np.ndarray  # (B, A, P) pre-squash values mean + std * eps
    params: np.ndarray  # (B, A, P) squashed values, all slots
    slot_mask: np.ndarray  # (B, A, P) bool, slots belonging to the chosen skill
    log_probs: np.ndarray  # (B,)

    def joint_action(self, lay: HeadLayout, row: int) -> JointAction:
        acts = []
        for agent in range(self.skills.shape[1]):
            sid = int(self.skills[row, agent])
            slots = lay.skill_slot_mask[sid]
            acts.append(
                AgentAction(
                    skill_id=sid,
                    params=self.params[row, agent, slots].copy(),
                    noise=self.eps[row, agent].copy(),
                    presquash=self.z[row, agent].copy(),
                )
            )
        return JointAction(tuple(acts))


def sample_batch(fwd: PolicyForward, lay: HeadLayout, rng: np.random.Generator) -> SampledBatch:
    b, a, k = fwd.logits.shape
    p = lay.n_params
    # inverse-CDF categorical draw; one uniform per head keeps streams aligned
    logp = log_softmax(fwd.logits)
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = rng.random((b, a, 1))
    skills = np.sum(u > cdf, axis=-1)
    skills = np.minimum(skills, k - 1)
    eps = rng.standard_normal((b, a, p))
    stds = np.exp(fwd.logstds)
    z = fwd.means + stds * eps
    params = squash(z, lay.low, lay.high)
    slot_mask = lay.skill_slot_mask[skills]
    lp = log_prob_batch(fwd, lay, skills, z, slot_mask)
    return SampledBatch(skills, eps, z, params, slot_mask, lp)


def log_prob_batch(
    fwd: PolicyForward,
    lay: HeadLayout,
    skills: np.ndarray,
    z: np.ndarray,
    slot_mask: np.ndarray,
) -> np.ndarray:
    """Joint log-density of (skills, squashed params) per row.

    ``z`` holds the pre-squash parameter values; only slots under
    ``slot_mask`` (the chosen skills' slots) contribute.
    """
    logp_cat = log_softmax(fwd.logits)
    chosen = np.take_along_axis(logp_cat, skills[..., None], axis=-1)[..., 0]
    stds = np.exp(fwd.logstds)
    g = -0.5 * ((z - fwd.means) / stds) ** 2 - fwd.logstds - 0.5 * LOG_2PI
    corr = log_squash_deriv(z, lay.low, lay.high)
    per_slot = np.where(slot_mask, g - corr, 0.0)
    return np.sum(chosen, axis=-1) + np.sum(per_slot, axis=(-2, -1))


def entropy_batch(fwd: PolicyForward) -> np.ndarray:
    """Categorical entropies plus pre-squash Gaussian entropies, all heads."""
    logp = log_softmax(fwd.logits)
    h_cat = -np.sum(np.exp(logp) * logp, axis=-1)
    h_gauss = 0.5 * (LOG_2PI + 1.0) + fwd.logstds
    return np.sum(h_cat, axis=-1) + np.sum(h_gauss, axis=(-2, -1))


# --- object-level API -------------------------------------------------------


@dataclasses.dataclass
class PolicyOutput:
    """Single-state view of the heads, plus the layout that shaped it."""

    layout: HeadLayout
    logits: np.ndarray  # (A, K)
    means: np.ndarray  # (A, P)
    logstds: np.ndarray  # (A, P)
    value: float


def policy_forward(policy: Policy, state: JointState, horizon: int, has_orientation: bool) -> PolicyOutput:
    obs = state.obs_vector(horizon, has_orientation)
    if obs.shape[0] != policy.net.layer_sizes[0]:
        raise ValueError(
            f"observation dim {obs.shape[0]} does not match policy input {policy.net.layer_sizes[0]}"
        )
    fwd = forward_batch(policy, obs[None, :])
    return PolicyOutput(policy.layout, fwd.logits[0], fwd.means[0], fwd.logstds[0], float(fwd.values[0]))


def _fwd_of_output(out: PolicyOutput) -> PolicyForward:
    return PolicyForward(
        logits=out.logits[None],
        means=out.means[None],
        logstds=out.logstds[None],
        clamp_open=np.ones_like(out.means[None], dtype=bool),
        values=np.array([out.value]),
        cache=None,  # type: ignore[arg-type]
    )


def sample_action(out: PolicyOutput, rng: np.random.Generator) -> tuple[JointAction, float]:
    batch = sample_batch(_fwd_of_output(out), out.layout, rng)
    return batch.joint_action(out.layout, 0), float(batch.log_probs[0])


def action_from_noise(out: PolicyOutput, skills: Sequence[int], eps: np.ndarray) -> JointAction:
    """Deterministic replay: rebuild the action a noise record produces."""
    lay = out.layout
    stds = np.exp(out.logstds)
    z = out.means + stds * np.asarray(eps)
    params = squash(z, lay.low, lay.high)
    acts = []
    for agent, sid in enumerate(skills):
        slots = lay.skill_slot_mask[sid]
        acts.append(AgentAction(skill_id=int(sid), params=params[agent, slots].copy(),
                                noise=np.array(eps[agent]), presquash=z[agent].copy()))
    return JointAction(tuple(acts))


def log_prob(out: PolicyOutput, action: JointAction) -> float:
    lay = out.layout
    a, p = lay.n_agents, lay.n_params
    skills = np.zeros((1, a), dtype=int)
    z = np.zeros((1, a, p))
    mask = np.zeros((1, a, p), dtype=bool)
    for agent, act in enumerate(action.actions):
        if not 0 <= act.skill_id < lay.n_skills:
            raise ValueError(f"skill id {act.skill_id} out of range")
        skills[0, agent] = act.skill_id
        slots = lay.skill_slot_mask[act.skill_id]
        mask[0, agent] = slots
        z[0, agent, slots] = unsquash(act.params, lay.low[slots], lay.high[slots])
    return float(log_prob_batch(_fwd_of_output(out), lay, skills, z, mask)[0])


def entropy(out: PolicyOutput) -> float:
    return float(entropy_batch(_fwd_of_output(out))[0])


# --- persistence ------------------------------------------------------------


def save_policy(path, policy: Policy) -> None:
    nn.save_params(path, policy.net, extra={"head_layout": policy.layout.to_dict()})


def load_policy(path, schema: EnvSchema, n_agents: int | None = None) -> Policy:
    """Checkpoint back into a Policy, checked against the environment.

    ``n_agents`` overrides the head count for per-agent policies (the
    independent-learner baseline saves one checkpoint per agent); the
    observation is then the env features plus that one agent's state.
    """
    net, extra = nn.load_params(path)
    try:
        stored = extra["head_layout"]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: missing head_layout manifest") from exc
    if n_agents is None:
        layout = HeadLayout.from_schema(schema)
        in_dim = schema.obs_dim
    else:
        layout = HeadLayout.from_library(schema.library, n_agents)
        in_dim = schema.env_feature_dim + n_agents * schema.agent_state_dim
    if (
        stored["n_agents"] != layout.n_agents
        or stored["n_skills"] != layout.n_skills
        or stored["n_params"] != layout.n_params
        or not np.allclose(stored["low"], layout.low)
        or not np.allclose(stored["high"], layout.high)
    ):
        raise ConfigurationError(f"{path}: head layout does not match environment")
    if net.layer_sizes[-1] != layout.out_dim or net.layer_sizes[0] != in_dim:
        raise ConfigurationError(f"{path}: network shape does not match environment")
    return Policy(net=net, layout=layout)
