"""Intrinsic reward signals and the state-space metric.

Four signals, all distances in the same metric over flattened env
states (position, sign-canonicalized orientation quaternion, flags;
timestep excluded):

- compositional prediction error: true next env state vs the chained
  single-agent prediction
- prediction disparity: joint prediction vs the chained prediction,
  computed without ever touching the true next state, and
  differentiable in every continuous action parameter
- joint surprise: joint prediction vs the true next state
- per-agent surprise: one agent's solo prediction vs the true next state

The disparity gradient is exact reverse-mode through both prediction
chains, including the quaternion normalize/canonicalize steps and the
Hamilton products that apply deltas.  At an exact zero of the metric
the norm has a kink; the gradient is defined as zero there.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from . import nn
from .dynamics import (
    FeatureLayout,
    ForwardModel,
    compose,
    model_input,
    predict_joint,
    predict_single,
)
from .geometry import IDENTITY_QUAT, hamilton, hamilton_vjp, normalize_vjp, quat_norm
from .spaces import EnvSchema, EnvState, JointAction, JointState, encode_action


@dataclasses.dataclass(frozen=True)
class RewardConfig:
    """Shaping weights.  ``lam`` scales the extrinsic term."""

    lam: float = 10.0
    metric_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")
        if len(self.metric_weights) != 3 or any(w < 0 for w in self.metric_weights):
            raise ValueError("metric_weights must be three values >= 0")


def state_metric(a: EnvState, b: EnvState, weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> float:
    """Block-weighted Euclidean distance between two env states."""
    va = a.metric_vector()
    vb = b.metric_vector()
    if va.shape != vb.shape:
        raise ValueError(f"metric vectors disagree: {va.shape} vs {vb.shape}")
    d = va - vb
    w_pos, w_rot, w_flag = weights
    s = w_pos * np.sum(d[:3] ** 2) + w_rot * np.sum(d[3:7] ** 2) + w_flag * np.sum(d[7:] ** 2)
    return float(np.sqrt(s))


def r1(
    schema: EnvSchema,
    singles: Sequence[ForwardModel],
    state: JointState,
    action: JointAction,
    next_state: JointState,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    """How wrong the chained single-agent prediction was."""
    predicted = compose(singles, schema, state, action, "fixed")
    return state_metric(next_state.env, predicted, cfg.metric_weights)


def r2(
    schema: EnvSchema,
    joint: ForwardModel,
    singles: Sequence[ForwardModel],
    state: JointState,
    action: JointAction,
    next_state: JointState | None = None,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    """Disparity between the joint and chained predictions.

    ``next_state`` is accepted for call-site uniformity and ignored;
    the signal does not depend on where the environment actually went.
    """
    del next_state
    pj = predict_joint(joint, schema, state, action)
    pc = compose(singles, schema, state, action, "fixed")
    return state_metric(pj, pc, cfg.metric_weights)


def surprise_joint(
    schema: EnvSchema,
    joint: ForwardModel,
    state: JointState,
    action: JointAction,
    next_state: JointState,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    pj = predict_joint(joint, schema, state, action)
    return state_metric(pj, next_state.env, cfg.metric_weights)


def surprise_single(
    schema: EnvSchema,
    model: ForwardModel,
    agent_id: int,
    state: JointState,
    action: JointAction,
    next_state: JointState,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    ps = predict_single(model, schema, state.env, state.agent_states[agent_id], action.actions[agent_id])
    return state_metric(ps, next_state.env, cfg.metric_weights)


def full_reward(intrinsic: float, extrinsic: float, cfg: RewardConfig) -> float:
    if extrinsic not in (0.0, 1.0):
        raise ValueError(f"extrinsic reward must be 0 or 1, got {extrinsic}")
    return intrinsic + cfg.lam * extrinsic


# --- disparity with exact action gradients ----------------------------------
#
# Everything below works on batched feature rows so the trainer can
# evaluate a whole collection step at once.  The object-level API wraps
# the batch of one.


def _canon_signs(u: np.ndarray) -> np.ndarray:
    """Sign the canonicalization step multiplies by, per row."""
    w = u[..., 0]
    flip = w < 0.0
    tie = w == 0.0
    if np.any(tie):
        rest = u[..., 1:]
        nz = rest != 0.0
        first = np.argmax(nz, axis=-1)
        firstval = np.take_along_axis(rest, first[..., None], axis=-1)[..., 0]
        flip = np.where(tie, firstval < 0.0, flip)
    return np.where(flip, -1.0, 1.0)


@dataclasses.dataclass
class _StepTrace:
    cache: nn.ForwardCache
    v: np.ndarray | None  # raw quat head + identity, pre-normalize
    sigma: np.ndarray | None
    qd: np.ndarray | None  # decoded delta rotation
    q_prev: np.ndarray | None  # incoming orientation
    h: np.ndarray | None  # hamilton(qd, q_prev), pre-normalize
    tau: np.ndarray | None


def _forward_step(
    model: ForwardModel,
    layout: FeatureLayout,
    feats: np.ndarray,
    agent_states: Sequence[np.ndarray],
    encs: Sequence[np.ndarray],
) -> tuple[np.ndarray, _StepTrace]:
    """One model application on feature rows, keeping what backward needs."""
    x = model_input(model.spec, feats, agent_states, encs)
    raw, cache = nn.mlp_forward(model.net, x)
    out = np.array(feats, copy=True)
    out[..., layout.position] = feats[..., layout.position] + raw[..., :3]
    if layout.orientation is None:
        return out, _StepTrace(cache, None, None, None, None, None, None)
    v = raw[..., 3:7] + IDENTITY_QUAT
    u = v / quat_norm(v)[..., None]
    sigma = _canon_signs(u)
    qd = sigma[..., None] * u
    q_prev = feats[..., layout.orientation]
    h = hamilton(qd, q_prev)
    wq = h / quat_norm(h)[..., None]
    tau = _canon_signs(wq)
    out[..., layout.orientation] = tau[..., None] * wq
    return out, _StepTrace(cache, v, sigma, qd, q_prev, h, tau)


def _backward_step(
    model: ForwardModel,
    layout: FeatureLayout,
    trace: _StepTrace,
    g_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull a feature-row gradient back through one model application.

    Returns (gradient on incoming feature rows, gradient on the model's
    full input rows).  The caller slices agent-state and action blocks
    out of the latter.
    """
    g_dpos = g_out[..., layout.position]
    if layout.orientation is None:
        g_raw = g_dpos
        g_prev = np.array(g_out, copy=True)
    else:
        g_q1 = trace.tau[..., None] * g_out[..., layout.orientation]
        g_h = normalize_vjp(g_q1, trace.h)
        g_qd, g_qprev = hamilton_vjp(g_h, trace.qd, trace.q_prev)
        g_u = trace.sigma[..., None] * g_qd
        g_v = normalize_vjp(g_u, trace.v)
        g_raw = np.concatenate([g_dpos, g_v], axis=-1)
        g_prev = np.array(g_out, copy=True)
        g_prev[..., layout.orientation] = g_qprev
    _, g_x = nn.mlp_backward(model.net, trace.cache, g_raw)
    g_prev += g_x[..., : layout.dim]
    return g_prev, g_x


def _metric_rows(layout: FeatureLayout, fa: np.ndarray, fb: np.ndarray, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance per row plus the weighted difference used by backward."""
    d = fa - fb
    w_pos, w_rot, w_flag = weights
    wvec = np.zeros(layout.dim)
    wvec[layout.position] = w_pos
    if layout.orientation is not None:
        wvec[layout.orientation] = w_rot
    wvec[layout.flags] = w_flag
    sq = np.sum(wvec * d * d, axis=-1)
    return np.sqrt(sq), d, wvec


def metric_features(
    layout: FeatureLayout,
    fa: np.ndarray,
    fb: np.ndarray,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> np.ndarray:
    """State metric evaluated directly on flattened feature rows."""
    values, _, _ = _metric_rows(layout, fa, fb, weights)
    return values


def r2_batch(
    schema: EnvSchema,
    joint: ForwardModel,
    singles: Sequence[ForwardModel],
    feats: np.ndarray,
    agent_states: Sequence[np.ndarray],
    encs: Sequence[np.ndarray],
    cfg: RewardConfig = RewardConfig(),
    want_grad: bool = False,
) -> tuple[np.ndarray, list[np.ndarray] | None]:
    """Disparity on feature rows; optionally its action-parameter gradient.

    ``feats`` is (B, feature_dim); ``agent_states[i]`` is (B, S) and
    ``encs[i]`` (B, E) for agent i.  Returns per-row values and, when
    asked, one (B, total_params) gradient array per agent covering that
    agent's continuous parameter slots.  Rows at an exact metric zero
    get a zero gradient.
    """
    n = len(singles)
    if len(agent_states) != n or len(encs) != n:
        raise ValueError("need one state and one encoding per agent")
    layout = FeatureLayout.for_schema(schema)
    k = schema.library.n_skills

    # composed chain
    chain_feats = [feats]
    traces: list[_StepTrace] = []
    cur = feats
    for i in range(n):
        cur, tr = _forward_step(singles[i], layout, cur, [agent_states[i]], [encs[i]])
        chain_feats.append(cur)
        traces.append(tr)
    # joint, one step from the original rows
    fj, trace_j = _forward_step(joint, layout, feats, agent_states, encs)

    values, d, wvec = _metric_rows(layout, fj, cur, cfg.metric_weights)
    if not want_grad:
        return values, None

    inv = np.where(values > 0.0, 1.0 / np.where(values > 0.0, values, 1.0), 0.0)
    g_common = (wvec * d) * inv[..., None]  # d metric / d (fj - fcomposed)

    grads = [np.zeros(encs[i].shape) for i in range(n)]

    # joint side
    g_prev, g_x = _backward_step(joint, layout, trace_j, g_common)
    off = layout.dim
    for i in range(n):
        off += agent_states[i].shape[-1]
        grads[i] += g_x[..., off : off + encs[i].shape[-1]]
        off += encs[i].shape[-1]

    # composed side, walked backwards
    g_f = -g_common
    for i in reversed(range(n)):
        g_f, g_x = _backward_step(singles[i], layout, traces[i], g_f)
        off = layout.dim + agent_states[i].shape[-1]
        grads[i] += g_x[..., off : off + encs[i].shape[-1]]

    # only continuous parameter slots carry gradient; skill one-hots do not
    return values, [g[..., k:] for g in grads]


def r2_action_grad(
    schema: EnvSchema,
    joint: ForwardModel,
    singles: Sequence[ForwardModel],
    state: JointState,
    action: JointAction,
    cfg: RewardConfig = RewardConfig(),
) -> list[np.ndarray]:
    """Exact gradient of the disparity in every continuous parameter slot.

    Returns one flat array per agent, ordered like the parameter section
    of the action encoding.  Slots the networks provably ignore come
    back exactly zero, as does everything when the disparity is zero.
    """
    feats = state.env.features(schema.horizon, schema.has_orientation)[None, :]
    agent_states = [s[None, :] for s in state.agent_states]
    encs = [encode_action(schema.library, a)[None, :] for a in action.actions]
    _, grads = r2_batch(schema, joint, singles, feats, agent_states, encs, cfg, want_grad=True)
    assert grads is not None
    return [g[0] for g in grads]
