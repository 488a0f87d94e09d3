"""Forward models over the environment state.

A forward model eats a flattened view of the world and emits a pose
delta.  Three kinds exist, all sharing one network shape and one input
convention:

- per-agent models: input ``[env features, s_i, encode(a_i)]``
- the joint model: input ``[env features, s_0..s_{N-1}, enc(a_0)..enc(a_{N-1})]``

Env features follow ``EnvState.features``: normalized timestep, object
geometry, position, orientation quaternion (oriented environments only),
extra flags.  The output head is ``[dposition (3), raw orientation (4)]``,
with the orientation block dropped entirely for orientation-free
environments.  The raw orientation head is decoded as
``normalize(identity + raw)``, so an all-zero network predicts the
identity rotation and regression targets stay linear in the head.

Models predict only the pose.  Timestep, geometry, and flags pass
through untouched; anything the environment expresses through flags is
deliberately outside the models' reach.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Callable, Sequence

import numpy as np

from . import nn
from .errors import ConfigurationError
from .geometry import (
    IDENTITY_QUAT,
    Pose,
    PoseDelta,
    apply_delta,
    hamilton,
    quat_canonical,
    quat_conjugate,
    quat_normalize,
)
from .spaces import AgentAction, EnvSchema, EnvState, JointAction, JointState, encode_action

DEFAULT_HIDDEN = (64, 64, 64)


@dataclasses.dataclass(frozen=True)
class FeatureLayout:
    """Index map into a flattened env-feature row."""

    timestep: slice
    geometry: slice
    position: slice
    orientation: slice | None
    flags: slice
    dim: int

    @staticmethod
    def for_schema(schema: EnvSchema) -> "FeatureLayout":
        g = schema.geometry_dim
        pos_end = 1 + g + 3
        if schema.has_orientation:
            quat = slice(pos_end, pos_end + 4)
            flags_start = pos_end + 4
        else:
            quat = None
            flags_start = pos_end
        dim = flags_start + schema.flags_dim
        return FeatureLayout(
            timestep=slice(0, 1),
            geometry=slice(1, 1 + g),
            position=slice(1 + g, pos_end),
            orientation=quat,
            flags=slice(flags_start, dim),
            dim=dim,
        )


@dataclasses.dataclass(frozen=True)
class ModelInputSpec:
    """What a model consumes and produces.

    ``agent_ids`` lists the agents whose state/action blocks appear in
    the input, in order.  A single-agent model carries one id; the joint
    model carries all of them.
    """

    kind: str  # "single" | "joint"
    env_name: str
    agent_ids: tuple[int, ...]
    agent_state_dim: int
    action_dim: int
    env_feature_dim: int
    has_orientation: bool

    def __post_init__(self) -> None:
        if self.kind not in ("single", "joint"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.agent_ids:
            raise ValueError("model must consume at least one agent")

    @property
    def input_dim(self) -> int:
        per_agent = self.agent_state_dim + self.action_dim
        return self.env_feature_dim + per_agent * len(self.agent_ids)

    @property
    def output_dim(self) -> int:
        return 7 if self.has_orientation else 3

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelInputSpec":
        d = dict(d)
        d["agent_ids"] = tuple(d["agent_ids"])
        return ModelInputSpec(**d)


@dataclasses.dataclass
class ForwardModel:
    net: nn.NetworkParams
    spec: ModelInputSpec

    def copy(self) -> "ForwardModel":
        return ForwardModel(net=self.net.copy(), spec=self.spec)


def single_model_spec(schema: EnvSchema, agent_id: int) -> ModelInputSpec:
    if not 0 <= agent_id < schema.n_agents:
        raise ValueError(f"agent_id {agent_id} out of range for {schema.name}")
    return ModelInputSpec(
        kind="single",
        env_name=schema.name,
        agent_ids=(agent_id,),
        agent_state_dim=schema.agent_state_dim,
        action_dim=schema.library.encoded_dim,
        env_feature_dim=schema.env_feature_dim,
        has_orientation=schema.has_orientation,
    )


def joint_model_spec(schema: EnvSchema) -> ModelInputSpec:
    return ModelInputSpec(
        kind="joint",
        env_name=schema.name,
        agent_ids=tuple(range(schema.n_agents)),
        agent_state_dim=schema.agent_state_dim,
        action_dim=schema.library.encoded_dim,
        env_feature_dim=schema.env_feature_dim,
        has_orientation=schema.has_orientation,
    )


def make_model(
    spec: ModelInputSpec,
    rng: np.random.Generator,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
) -> ForwardModel:
    sizes = [spec.input_dim, *hidden, spec.output_dim]
    return ForwardModel(net=nn.mlp_init(sizes, rng), spec=spec)


# --- input assembly ---------------------------------------------------------


def model_input(
    spec: ModelInputSpec,
    env_features: np.ndarray,
    agent_states: Sequence[np.ndarray],
    action_encodings: Sequence[np.ndarray],
) -> np.ndarray:
    """Concatenate one input row.  Batched rows concatenate along axis -1."""
    if len(agent_states) != len(spec.agent_ids) or len(action_encodings) != len(spec.agent_ids):
        raise ValueError(
            f"model expects {len(spec.agent_ids)} agent blocks, "
            f"got {len(agent_states)} states / {len(action_encodings)} actions"
        )
    parts = [np.asarray(env_features, dtype=np.float64)]
    for s, a in zip(agent_states, action_encodings):
        parts.append(np.asarray(s, dtype=np.float64))
        parts.append(np.asarray(a, dtype=np.float64))
    x = np.concatenate(parts, axis=-1)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"assembled input has dim {x.shape[-1]}, spec wants {spec.input_dim}")
    return x


def decode_delta(spec: ModelInputSpec, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Raw head output -> (dposition, drotation or None).  Batched or flat."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != spec.output_dim:
        raise ValueError(f"raw output dim {raw.shape[-1]} != {spec.output_dim}")
    dpos = raw[..., :3]
    if not spec.has_orientation:
        return dpos, None
    drot = quat_canonical(quat_normalize(raw[..., 3:7] + IDENTITY_QUAT))
    return dpos, drot


def apply_features(layout: FeatureLayout, feats: np.ndarray, dpos: np.ndarray, drot: np.ndarray | None) -> np.ndarray:
    """Apply a pose delta to flattened feature rows.  Pure; returns a copy."""
    out = np.array(feats, dtype=np.float64, copy=True)
    out[..., layout.position] = feats[..., layout.position] + dpos
    if drot is not None:
        if layout.orientation is None:
            raise ValueError("orientation delta on an orientation-free layout")
        q = hamilton(drot, feats[..., layout.orientation])
        out[..., layout.orientation] = quat_canonical(quat_normalize(q))
    return out


# --- object-level prediction ------------------------------------------------


def _check_spec(model: ForwardModel, schema_name: str, kind: str) -> None:
    if model.spec.kind != kind:
        raise ValueError(f"expected a {kind} model, got {model.spec.kind}")
    if model.spec.env_name != schema_name:
        raise ValueError(f"model built for {model.spec.env_name!r}, state is {schema_name!r}")


def _predicted_env(env: EnvState, dpos: np.ndarray, drot: np.ndarray | None) -> EnvState:
    if drot is None:
        delta = PoseDelta(dposition=dpos, drotation=IDENTITY_QUAT.copy())
    else:
        delta = PoseDelta(dposition=dpos, drotation=drot)
    out = env.copy()
    out.pose = apply_delta(env.pose, delta)
    return out


def predict_single(
    model: ForwardModel,
    schema: EnvSchema,
    env: EnvState,
    agent_state: np.ndarray,
    action: AgentAction,
) -> EnvState:
    """One agent acting alone: env' = env + predicted delta.

    Timestep, geometry, and flags pass through unchanged.
    """
    _check_spec(model, schema.name, "single")
    x = model_input(
        model.spec,
        env.features(schema.horizon, schema.has_orientation),
        [agent_state],
        [encode_action(schema.library, action)],
    )
    raw, _ = nn.mlp_forward(model.net, x)
    dpos, drot = decode_delta(model.spec, raw)
    return _predicted_env(env, dpos, drot)


def predict_joint(model: ForwardModel, schema: EnvSchema, state: JointState, action: JointAction) -> EnvState:
    _check_spec(model, schema.name, "joint")
    if len(action.actions) != schema.n_agents:
        raise ValueError("action count does not match schema")
    x = model_input(
        model.spec,
        state.env.features(schema.horizon, schema.has_orientation),
        list(state.agent_states),
        [encode_action(schema.library, a) for a in action.actions],
    )
    raw, _ = nn.mlp_forward(model.net, x)
    dpos, drot = decode_delta(model.spec, raw)
    return _predicted_env(state.env, dpos, drot)


def compose(
    models: Sequence[ForwardModel],
    schema: EnvSchema,
    state: JointState,
    action: JointAction,
    ordering: str = "fixed",
) -> EnvState:
    """Chain single-agent predictions into a compositional one.

    ``fixed``: agents apply in index order, each model fed the previous
    model's predicted env state (the agents' own states are read from
    ``state``, which composition never touches).
    ``average_all_permutations``: every ordering is chained, then the
    resulting env vectors are averaged; the quaternion block is averaged
    and renormalized.
    """
    n = len(state.agent_states)
    if len(models) != n:
        raise ValueError(f"got {len(models)} models for {n} agents")
    if len(action.actions) != n:
        raise ValueError("action count does not match state")
    for i, m in enumerate(models):
        _check_spec(m, schema.name, "single")
        if m.spec.agent_ids != (i,):
            raise ValueError(f"model {i} is bound to agent {m.spec.agent_ids}")

    def chain(order: Sequence[int]) -> EnvState:
        env = state.env
        for i in order:
            env = predict_single(models[i], schema, env, state.agent_states[i], action.actions[i])
        return env

    if ordering == "fixed":
        return chain(range(n))
    if ordering != "average_all_permutations":
        raise ValueError(f"unknown ordering {ordering!r}")

    import itertools

    chained = [chain(order) for order in itertools.permutations(range(n))]
    out = chained[0].copy()
    out.pose.position = np.mean([e.pose.position for e in chained], axis=0)
    if schema.has_orientation:
        q = np.mean([e.pose.orientation for e in chained], axis=0)
        out.pose.orientation = quat_canonical(quat_normalize(q))
    return out


# --- batched prediction over feature rows -----------------------------------


def predict_features(
    model: ForwardModel,
    layout: FeatureLayout,
    feats: np.ndarray,
    agent_states: Sequence[np.ndarray],
    action_encodings: Sequence[np.ndarray],
) -> np.ndarray:
    """Batched predict on flattened rows; shares the object-path math."""
    x = model_input(model.spec, feats, agent_states, action_encodings)
    raw, _ = nn.mlp_forward(model.net, x)
    dpos, drot = decode_delta(model.spec, raw)
    return apply_features(layout, feats, dpos, drot)


def compose_features(
    models: Sequence[ForwardModel],
    layout: FeatureLayout,
    feats: np.ndarray,
    agent_states: Sequence[np.ndarray],
    action_encodings: Sequence[np.ndarray],
) -> np.ndarray:
    out = feats
    for i, m in enumerate(models):
        out = predict_features(m, layout, out, [agent_states[i]], [action_encodings[i]])
    return out


# --- training ---------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FitReport:
    n_train: int
    n_val: int
    val_mse: float
    target_variance: float
    final_train_loss: float
    # row indices of the held-out split, so the reported val_mse can be
    # recomputed from a persisted copy of the dataset
    val_indices: np.ndarray


def delta_target(layout: FeatureLayout, feats_before: np.ndarray, feats_after: np.ndarray) -> np.ndarray:
    """Regression target in raw-head space: [dpos, drot - identity]."""
    dpos = feats_after[..., layout.position] - feats_before[..., layout.position]
    if layout.orientation is None:
        return dpos
    q0 = feats_before[..., layout.orientation]
    q1 = feats_after[..., layout.orientation]
    drot = quat_canonical(quat_normalize(hamilton(q1, quat_conjugate(q0))))
    return np.concatenate([dpos, drot - IDENTITY_QUAT], axis=-1)


def collect_single_agent_dataset(
    env,
    agent_id: int,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Random interaction with one live agent; everything else frozen.

    Returns (inputs, raw-head targets).  The reward channel is never
    read: rows carry only states and actions.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    schema = env.schema
    spec = single_model_spec(schema, agent_id)
    layout = FeatureLayout.for_schema(schema)
    xs = np.empty((n_samples, spec.input_dim))
    ys = np.empty((n_samples, spec.output_dim))
    state = None
    done = True
    episode = 0
    for row in range(n_samples):
        if done:
            state = env.reset(int(rng.integers(0, 2**31 - 1)))
            episode += 1
        actions = [env.noop_action() for _ in range(schema.n_agents)]
        actions[agent_id] = env.random_action(rng)
        joint = JointAction(tuple(actions))
        nxt, _, done = env.step(state, joint)
        feats = state.env.features(schema.horizon, schema.has_orientation)
        feats_next = nxt.env.features(schema.horizon, schema.has_orientation)
        xs[row] = model_input(
            spec,
            feats,
            [state.agent_states[agent_id]],
            [encode_action(schema.library, actions[agent_id])],
        )
        ys[row] = delta_target(layout, feats, feats_next)
        state = nxt
    return xs, ys


def fit_forward_model(
    spec: ModelInputSpec,
    xs: np.ndarray,
    ys: np.ndarray,
    rng: np.random.Generator,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    epochs: int = 40,
    batch_size: int = 128,
    lr: float = 1e-3,
    val_fraction: float = 0.1,
) -> tuple[ForwardModel, FitReport]:
    """Minibatch Adam on squared delta error, 90/10 train/val split."""
    n = xs.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    xt, yt = xs[train_idx], ys[train_idx]
    xv, yv = xs[val_idx], ys[val_idx]

    model = make_model(spec, rng, hidden)
    adam = nn.adam_init(model.net, learning_rate=lr)
    last = 0.0
    for _ in range(epochs):
        order = rng.permutation(xt.shape[0])
        for start in range(0, xt.shape[0], batch_size):
            idx = order[start : start + batch_size]
            pred, cache = nn.mlp_forward(model.net, xt[idx])
            err = pred - yt[idx]
            last = float(np.mean(np.sum(err**2, axis=-1)))
            # d/dpred of mean_i ||err_i||^2
            grads, _ = nn.mlp_backward(model.net, cache, 2.0 * err / idx.shape[0])
            model.net, adam = nn.adam_step(adam, model.net, grads)
    val_pred, _ = nn.mlp_forward(model.net, xv)
    val_mse = float(np.mean(np.sum((val_pred - yv) ** 2, axis=-1)))
    report = FitReport(
        n_train=int(xt.shape[0]),
        n_val=int(n_val),
        val_mse=val_mse,
        target_variance=float(np.sum(np.var(yv, axis=0))),
        final_train_loss=last,
        val_indices=val_idx.copy(),
    )
    return model, report


def pretrain_single(
    env_factory: Callable[[], object],
    agent_id: int,
    n_samples: int,
    seed: int,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    epochs: int = 40,
    batch_size: int = 128,
    lr: float = 1e-3,
) -> tuple[ForwardModel, FitReport]:
    """Collect single-agent random experience and fit that agent's model.

    Deterministic in ``seed``.  No extrinsic reward is consumed at any
    point; the collector discards the reward channel entirely.
    """
    env = env_factory()
    rng = np.random.default_rng(seed)
    xs, ys = collect_single_agent_dataset(env, agent_id, n_samples, rng)
    spec = single_model_spec(env.schema, agent_id)
    return fit_forward_model(spec, xs, ys, rng, hidden=hidden, epochs=epochs, batch_size=batch_size, lr=lr)


def train_joint_step(
    model: ForwardModel,
    adam: nn.AdamState,
    xs: np.ndarray,
    ys: np.ndarray,
) -> tuple[ForwardModel, nn.AdamState, float]:
    """One Adam step on the batch mean of squared delta error.

    Returns the pre-update loss; the input model is left untouched.
    """
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    pred, cache = nn.mlp_forward(model.net, xs)
    err = pred - ys
    loss = float(np.mean(np.sum(err**2, axis=-1)))
    grads, _ = nn.mlp_backward(model.net, cache, 2.0 * err / xs.shape[0])
    net, adam2 = nn.adam_step(adam, model.net, grads)
    return ForwardModel(net=net, spec=model.spec), adam2, loss


# --- persistence ------------------------------------------------------------


def save_model(path, model: ForwardModel) -> None:
    nn.save_params(path, model.net, extra={"input_spec": model.spec.to_dict()})


def load_model(path) -> ForwardModel:
    net, extra = nn.load_params(path)
    try:
        spec = ModelInputSpec.from_dict(extra["input_spec"])
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: missing or malformed input_spec") from exc
    if net.layer_sizes[0] != spec.input_dim or net.layer_sizes[-1] != spec.output_dim:
        raise ConfigurationError(f"{path}: network shape disagrees with its input_spec")
    return ForwardModel(net=net, spec=spec)
