"""Training loop: rollouts, joint-model fitting, PPO, analytic shaping.

One outer iteration = collect a batch across workers, extend and refit
the joint model (methods that use it), then run clipped-surrogate PPO on
the shaped rewards.  For method ``r2`` every minibatch gradient also
carries the reparameterized gradient of the expected disparity, added to
the surrogate's head gradients before clipping, so the analytic signal
rides every optimizer step.  Passing no disparity inputs leaves the PPO
path bit-identical, which is what ``r2_no_analytic`` does.

Methods:

- ``r1``             shaped with the compositional prediction error
- ``r2``             shaped with the prediction disparity, analytic term on
- ``r2_no_analytic`` same shaping, analytic term off
- ``surprise_joint`` shaped with the joint model's own prediction error
- ``surprise_separate`` one independent policy per agent, each shaped
  with its own single-model surprise; successes are recorded passively
- ``extrinsic_only`` sparse reward times lambda, nothing else
- ``random``         uniform actions, no learning, baseline bookkeeping

Everything is deterministic given the config: every consumer of
randomness gets its own spawned stream, so method and lambda choices
cannot perturb the environment stream.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from typing import Callable, Sequence

import numpy as np

from . import dynamics as dyn
from . import nn
from . import policy as pol
from . import rewards as rw
from .envs import make_env, single_agent_variant
from .envs.base import Env, EnvConfig
from .errors import NumericError
from .spaces import AgentAction, JointAction, JointState

METHODS = (
    "r1",
    "r2",
    "r2_no_analytic",
    "surprise_joint",
    "surprise_separate",
    "extrinsic_only",
    "random",
)
_NEEDS_SINGLES = ("r1", "r2", "r2_no_analytic", "surprise_separate")
_NEEDS_JOINT = ("r2", "r2_no_analytic", "surprise_joint")


@dataclasses.dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    entropy_coef: float = 0.01
    vf_coef: float = 0.5
    grad_clip: float = 0.5
    n_steps: int = 10
    minibatches: int = 4
    epochs: int = 4
    lr: float = 0.001

    def __post_init__(self) -> None:
        for name in ("clip", "entropy_coef", "vf_coef", "grad_clip", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ppo.{name} must be positive")
        for name in ("n_steps", "minibatches", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"ppo.{name} must be >= 1")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    env: EnvConfig
    method: str
    lam: float = 10.0
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo: PPOConfig = dataclasses.field(default_factory=PPOConfig)
    workers: int = 8
    pretrain_samples: int = 10_000
    joint_pretrain_samples: int = 0
    total_env_steps: int = 50_000
    seed: int = 0
    # joint-model fitting budget per outer iteration; the buffer keeps
    # the most recent joint_buffer_cap transitions
    joint_buffer_cap: int = 50_000
    joint_fit_minibatches: int = 16
    joint_fit_batch: int = 128

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0 < self.gamma <= 1 or not 0 < self.gae_lambda <= 1:
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError("lam must be finite and >= 0")
        if self.workers < 1 or self.pretrain_samples < 1:
            raise ValueError("workers and pretrain_samples must be >= 1")
        if self.total_env_steps < 0 or self.joint_pretrain_samples < 0:
            raise ValueError("step counts cannot be negative")
        if self.joint_buffer_cap < 1 or self.joint_fit_minibatches < 1 or self.joint_fit_batch < 1:
            raise ValueError("joint-fitting settings must be >= 1")


@dataclasses.dataclass
class MetricsRow:
    env_steps: int
    episodes: int
    success_rate: float
    mean_intrinsic: float
    mean_extrinsic: float
    policy_loss: float
    value_loss: float
    entropy: float
    joint_model_loss: float

    FIELDS = (
        "env_steps",
        "episodes",
        "success_rate",
        "mean_intrinsic",
        "mean_extrinsic",
        "policy_loss",
        "value_loss",
        "entropy",
        "joint_model_loss",
    )


@dataclasses.dataclass
class Learner:
    """One policy plus the agents it controls."""

    agent_ids: tuple[int, ...]
    policy: pol.Policy
    adam: nn.AdamState

    def obs_rows(self, feats: np.ndarray, agent_states: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([feats, *[agent_states[i] for i in self.agent_ids]], axis=-1)


class _Worker:
    """Auto-resetting env wrapper; reset seeds come from its own stream."""

    def __init__(self, env: Env, seed_rng: np.random.Generator):
        self.env = env
        self.seed_rng = seed_rng
        self.state: JointState = env.reset(self._next_seed())

    def _next_seed(self) -> int:
        return int(self.seed_rng.integers(0, 2**31 - 1))

    def step(self, action: JointAction) -> tuple[JointState, float, bool]:
        nxt, ext, done = self.env.step(self.state, action)
        if done:
            self.state = self.env.reset(self._next_seed())
        else:
            self.state = nxt
        return nxt, ext, done


def encode_batch(
    lay: pol.HeadLayout, skills: np.ndarray, params: np.ndarray, slot_mask: np.ndarray
) -> np.ndarray:
    """(B, K + P) action encodings: one-hot skill, chosen slots filled."""
    b = skills.shape[0]
    enc = np.zeros((b, lay.n_skills + lay.n_params))
    enc[np.arange(b), skills] = 1.0
    enc[:, lay.n_skills :] = np.where(slot_mask, params, 0.0)
    return enc


def compute_advantages(
    rewards: np.ndarray,
    dones: np.ndarray,
    values: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    gae_lambda: float,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over (workers, steps) arrays; episode ends stop the recursion.

    Returns (normalized advantages, returns).  Returns are advantage
    plus value before normalization.
    """
    w, t = rewards.shape
    adv = np.zeros((w, t))
    last = np.zeros(w)
    next_value = bootstrap
    for step in reversed(range(t)):
        live = 1.0 - dones[:, step]
        delta = rewards[:, step] + gamma * next_value * live - values[:, step]
        last = delta + gamma * gae_lambda * live * last
        adv[:, step] = last
        next_value = values[:, step]
    returns = adv + values
    std = np.std(adv)
    norm = (adv - np.mean(adv)) / (std + 1e-8)
    return norm, returns


@dataclasses.dataclass
class PPOReport:
    policy_loss: float
    value_loss: float
    entropy: float


@dataclasses.dataclass
class AnalyticInputs:
    """Everything needed to differentiate the disparity through the actions.

    ``eps`` is the noise recorded at sampling time; replaying it through
    the current heads gives the reparameterized action, so the disparity
    gradient reaches the Gaussian parameters.  Rows align with the
    rollout batch handed to :func:`ppo_update`.
    """

    schema: object
    layout: dyn.FeatureLayout
    joint: dyn.ForwardModel
    singles: Sequence[dyn.ForwardModel]
    feats: np.ndarray
    agent_state_rows: Sequence[np.ndarray]
    eps: np.ndarray
    reward_cfg: rw.RewardConfig


def disparity_param_grads(
    policy: pol.Policy,
    obs: np.ndarray,
    skills: np.ndarray,
    slot_mask: np.ndarray,
    analytic: AnalyticInputs,
) -> nn.NetworkGrads:
    """Batch-mean gradient of the expected disparity, in parameter space.

    The recorded noise is replayed through the current heads, the
    disparity's action gradient is chained through the squash and
    backpropagated, then averaged over the whole rollout batch.
    Ascent direction.  Categorical heads get nothing: the skill choice
    is not reparameterizable.
    """
    lay = policy.layout
    b = obs.shape[0]
    fwd = pol.forward_batch(policy, obs)
    stds = np.exp(fwd.logstds)
    z_rep = fwd.means + stds * analytic.eps
    params = pol.squash(z_rep, lay.low, lay.high)
    encs = [
        encode_batch(lay, skills[:, i], params[:, i], slot_mask[:, i])
        for i in range(lay.n_agents)
    ]
    _, grads = rw.r2_batch(
        analytic.schema,
        analytic.joint,
        analytic.singles,
        analytic.feats,
        list(analytic.agent_state_rows),
        encs,
        analytic.reward_cfg,
        want_grad=True,
    )
    assert grads is not None
    g_slots = np.stack(grads, axis=1)  # (B, A, P)
    g_slots = np.where(slot_mask, g_slots, 0.0)  # only sampled slots move with theta
    dp_dz = np.exp(pol.log_squash_deriv(z_rep, lay.low, lay.high))
    g_z = g_slots * dp_dz
    g_means = g_z / b
    g_logstds = (g_z * stds * analytic.eps) / b
    g_logstds *= fwd.clamp_open
    g_out = pol.head_grads_to_output(
        lay, np.zeros_like(fwd.logits), g_means, g_logstds, np.zeros(b)
    )
    out, _ = nn.mlp_backward(policy.net, fwd.cache, g_out)
    return out


def ppo_update(
    learner: Learner,
    obs: np.ndarray,
    skills: np.ndarray,
    z: np.ndarray,
    slot_mask: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    returns: np.ndarray,
    cfg: PPOConfig,
    rng: np.random.Generator,
    analytic: AnalyticInputs | None = None,
) -> PPOReport:
    """Clipped-surrogate PPO with hand-assembled head gradients.

    When ``analytic`` is given, each minibatch gradient additionally
    carries the reparameterized gradient of the expected disparity,
    negated into the loss convention, before clipping and the Adam step.
    """
    lay = learner.policy.layout
    b = obs.shape[0]
    surr_sum = vf_sum = ent_sum = 0.0
    n_passes = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(b)
        for chunk in np.array_split(order, cfg.minibatches):
            m = chunk.shape[0]
            if m == 0:
                continue
            fwd = pol.forward_batch(learner.policy, obs[chunk])
            logp_new = pol.log_prob_batch(fwd, lay, skills[chunk], z[chunk], slot_mask[chunk])
            if not np.all(np.isfinite(logp_new)):
                raise NumericError("non-finite log-probability in ppo_update")
            ratio = np.exp(logp_new - logp_old[chunk])
            a_hat = adv[chunk]
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
            surr = np.minimum(ratio * a_hat, clipped * a_hat)
            ent = pol.entropy_batch(fwd)
            v_err = fwd.values - returns[chunk]
            surr_mean = float(np.mean(surr))
            vloss = float(np.mean(v_err**2))
            ent_mean = float(np.mean(ent))
            if not np.isfinite(surr_mean) or not np.isfinite(vloss):
                raise NumericError("non-finite loss in ppo_update")
            surr_sum += surr_mean
            vf_sum += vloss
            ent_sum += ent_mean
            n_passes += 1

            # gradient of the unclipped branch only where it is active
            active = np.where(
                a_hat >= 0.0, ratio <= 1.0 + cfg.clip, ratio >= 1.0 - cfg.clip
            ).astype(float)
            dl_dlogp = -(active * ratio * a_hat) / m

            p_cat = np.exp(pol.log_softmax(fwd.logits))  # (m, A, K)
            onehot = np.zeros_like(p_cat)
            mi = np.arange(m)[:, None]
            ai = np.arange(lay.n_agents)[None, :]
            onehot[mi, ai, skills[chunk]] = 1.0
            g_logits = dl_dlogp[:, None, None] * (onehot - p_cat)
            # entropy bonus: dL/dl_k = (coef/m) * p_k (log p_k + H_cat)
            logp_cat = pol.log_softmax(fwd.logits)
            h_cat = -np.sum(p_cat * logp_cat, axis=-1, keepdims=True)
            g_logits += (cfg.entropy_coef / m) * p_cat * (logp_cat + h_cat)

            stds = np.exp(fwd.logstds)
            z_mb = z[chunk]
            mask = slot_mask[chunk]
            dlogp_dmu = np.where(mask, (z_mb - fwd.means) / stds**2, 0.0)
            dlogp_dls = np.where(mask, ((z_mb - fwd.means) / stds) ** 2 - 1.0, 0.0)
            g_means = dl_dlogp[:, None, None] * dlogp_dmu
            g_logstds = dl_dlogp[:, None, None] * dlogp_dls
            # entropy of every Gaussian head is logstd plus a constant
            g_logstds += -cfg.entropy_coef / m
            g_logstds *= fwd.clamp_open
            g_values = cfg.vf_coef * 2.0 * v_err / m

            g_out = pol.head_grads_to_output(lay, g_logits, g_means, g_logstds, g_values)
            grads, _ = nn.mlp_backward(learner.policy.net, fwd.cache, g_out)
            if analytic is not None:
                # ascend the expected disparity: negate into the loss convention
                grads = nn.grads_add(
                    grads,
                    disparity_param_grads(learner.policy, obs, skills, slot_mask, analytic),
                    scale=-1.0,
                )
            grads = nn.clip_gradients(grads, cfg.grad_clip)
            learner.policy.net, learner.adam = nn.adam_step(learner.adam, learner.policy.net, grads)
    return PPOReport(
        policy_loss=-surr_sum / max(n_passes, 1),
        value_loss=vf_sum / max(n_passes, 1),
        entropy=ent_sum / max(n_passes, 1),
    )


@dataclasses.dataclass
class TrainResult:
    rows: list[MetricsRow]
    policies: list[pol.Policy]
    singles: list[dyn.ForwardModel] | None
    joint: dyn.ForwardModel | None
    episodes: int
    final_success_rate: float


def _random_joint_dataset(
    env: Env, n_samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform joint play, packed as joint-model training rows."""
    schema = env.schema
    spec = dyn.joint_model_spec(schema)
    layout = dyn.FeatureLayout.for_schema(schema)
    xs = np.empty((n_samples, spec.input_dim))
    ys = np.empty((n_samples, spec.output_dim))
    state = None
    done = True
    for row in range(n_samples):
        if done:
            state = env.reset(int(rng.integers(0, 2**31 - 1)))
        action = env.random_joint_action(rng)
        nxt, _, done = env.step(state, action)
        feats = state.env.features(schema.horizon, schema.has_orientation)
        xs[row] = dyn.model_input(
            spec,
            feats,
            list(state.agent_states),
            [np.asarray(a_enc) for a_enc in _encode_all(schema, action)],
        )
        ys[row] = dyn.delta_target(
            layout, feats, nxt.env.features(schema.horizon, schema.has_orientation)
        )
        state = nxt
    return xs, ys


def _encode_all(schema, action: JointAction) -> list[np.ndarray]:
    from .spaces import encode_action

    return [encode_action(schema.library, a) for a in action.actions]


def train(
    cfg: TrainConfig,
    singles: Sequence[dyn.ForwardModel] | None = None,
    joint: dyn.ForwardModel | None = None,
) -> TrainResult:
    """Run the full loop; deterministic given cfg.

    Pretrained single-agent models may be passed in; otherwise they are
    pretrained here (methods that need them).  A joint model may be
    passed to continue training it.
    """
    seed_seq = np.random.SeedSequence(cfg.seed)
    (
        ss_pretrain,
        ss_envs,
        ss_sample,
        ss_ppo,
        ss_joint,
        ss_init,
        ss_jointpre,
    ) = seed_seq.spawn(7)

    env0 = make_env(cfg.env)
    schema = env0.schema
    layout = dyn.FeatureLayout.for_schema(schema)
    feat_dim = schema.env_feature_dim
    reward_cfg = rw.RewardConfig(lam=cfg.lam)
    n_agents = schema.n_agents

    # pretrained-and-frozen single-agent models
    if cfg.method in _NEEDS_SINGLES and singles is None:
        singles = []
        for agent, ss in zip(range(n_agents), ss_pretrain.spawn(n_agents)):
            var = single_agent_variant(cfg.env, agent)
            model, _ = dyn.pretrain_single(
                lambda v=var: make_env(v),
                agent,
                cfg.pretrain_samples,
                seed=int(ss.generate_state(1)[0]),
            )
            singles.append(model)
    singles = list(singles) if singles is not None else None

    init_rng = np.random.default_rng(ss_init)
    jointpre_rng = np.random.default_rng(ss_jointpre)
    joint_rng = np.random.default_rng(ss_joint)
    sample_rng = np.random.default_rng(ss_sample)
    ppo_rng = np.random.default_rng(ss_ppo)

    if cfg.method in _NEEDS_JOINT and joint is None:
        spec = dyn.joint_model_spec(schema)
        if cfg.joint_pretrain_samples > 0:
            xs, ys = _random_joint_dataset(make_env(cfg.env), cfg.joint_pretrain_samples, jointpre_rng)
            joint, _ = dyn.fit_forward_model(spec, xs, ys, jointpre_rng)
        else:
            joint = dyn.make_model(spec, init_rng)
    adam_joint = nn.adam_init(joint.net, learning_rate=cfg.ppo.lr) if joint is not None else None

    # learners: one joint policy, or one per agent for surprise_separate
    learners: list[Learner] = []
    if cfg.method == "surprise_separate":
        for agent in range(n_agents):
            lay = pol.HeadLayout.from_library(schema.library, 1)
            sizes = [feat_dim + schema.agent_state_dim, 64, 64, 64, lay.out_dim]
            p = pol.Policy(net=nn.mlp_init(sizes, init_rng), layout=lay)
            learners.append(Learner((agent,), p, nn.adam_init(p.net, learning_rate=cfg.ppo.lr)))
    elif cfg.method != "random":
        p = pol.make_policy(schema, init_rng)
        learners.append(
            Learner(tuple(range(n_agents)), p, nn.adam_init(p.net, learning_rate=cfg.ppo.lr))
        )

    workers = [
        _Worker(make_env(cfg.env), np.random.default_rng(ss))
        for ss in ss_envs.spawn(cfg.workers)
    ]

    w, t = cfg.workers, cfg.ppo.n_steps
    success_window: deque[float] = deque(maxlen=100)
    episodes = 0
    buffer_x = buffer_y = None
    rows: list[MetricsRow] = []

    def metrics(env_steps, mi, me, p_loss, v_loss, ent, j_loss):
        rows.append(
            MetricsRow(
                env_steps=env_steps,
                episodes=episodes,
                success_rate=float(np.mean(success_window)) if success_window else 0.0,
                mean_intrinsic=mi,
                mean_extrinsic=me,
                policy_loss=p_loss,
                value_loss=v_loss,
                entropy=ent,
                joint_model_loss=j_loss,
            )
        )

    metrics(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    n_updates = cfg.total_env_steps // (w * t)

    for update in range(n_updates):
        # --- collect -------------------------------------------------------
        feats_steps = []
        next_feats_steps = []
        agent_state_steps = []  # list over steps of list over agents of (W, S)
        enc_steps = []  # list over steps of list over agents of (W, K+P)
        ext_steps = np.zeros((w, t))
        done_steps = np.zeros((w, t))
        per_learner_obs = [[] for _ in learners]
        per_learner_skills = [[] for _ in learners]
        per_learner_z = [[] for _ in learners]
        per_learner_eps = [[] for _ in learners]
        per_learner_mask = [[] for _ in learners]
        per_learner_logp = [[] for _ in learners]
        per_learner_value = [[] for _ in learners]

        for step in range(t):
            feats = np.stack(
                [wk.state.env.features(schema.horizon, schema.has_orientation) for wk in workers]
            )
            agent_states = [
                np.stack([wk.state.agent_states[i] for wk in workers]) for i in range(n_agents)
            ]
            feats_steps.append(feats)
            agent_state_steps.append(agent_states)

            row_actions: list[list[AgentAction | None]] = [[None] * n_agents for _ in range(w)]
            if cfg.method == "random":
                for wi, wk in enumerate(workers):
                    ja = wk.env.random_joint_action(sample_rng)
                    for i, a in enumerate(ja.actions):
                        row_actions[wi][i] = a
            else:
                for li, ln in enumerate(learners):
                    obs = ln.obs_rows(feats, agent_states)
                    fwd = pol.forward_batch(ln.policy, obs)
                    sampled = pol.sample_batch(fwd, ln.policy.layout, sample_rng)
                    per_learner_obs[li].append(obs)
                    per_learner_skills[li].append(sampled.skills)
                    per_learner_z[li].append(sampled.z)
                    per_learner_eps[li].append(sampled.eps)
                    per_learner_mask[li].append(sampled.slot_mask)
                    per_learner_logp[li].append(sampled.log_probs)
                    per_learner_value[li].append(fwd.values)
                    for wi in range(w):
                        ja = sampled.joint_action(ln.policy.layout, wi)
                        for k, agent in enumerate(ln.agent_ids):
                            row_actions[wi][agent] = ja.actions[k]

            encs = [np.zeros((w, schema.library.encoded_dim)) for _ in range(n_agents)]
            next_feats = np.empty_like(feats)
            for wi, wk in enumerate(workers):
                action = JointAction(tuple(row_actions[wi]))
                for i, enc_row in enumerate(_encode_all(schema, action)):
                    encs[i][wi] = enc_row
                nxt, ext, done = wk.step(action)
                next_feats[wi] = nxt.env.features(schema.horizon, schema.has_orientation)
                ext_steps[wi, step] = ext
                done_steps[wi, step] = float(done)
                if done:
                    episodes += 1
                    success_window.append(ext)
            enc_steps.append(encs)
            next_feats_steps.append(next_feats)

        feats_all = np.concatenate(feats_steps)  # (W*T, fd) step-major
        next_feats_all = np.concatenate(next_feats_steps)
        states_all = [
            np.concatenate([agent_state_steps[s][i] for s in range(t)]) for i in range(n_agents)
        ]
        encs_all = [np.concatenate([enc_steps[s][i] for s in range(t)]) for i in range(n_agents)]

        # --- intrinsic rewards, batched over the whole collection ----------
        per_learner_intrinsic: list[np.ndarray]
        if cfg.method in ("r1",):
            comp = dyn.compose_features(singles, layout, feats_all, states_all, encs_all)
            intr = rw.metric_features(layout, next_feats_all, comp, reward_cfg.metric_weights)
            per_learner_intrinsic = [intr]
        elif cfg.method in ("r2", "r2_no_analytic"):
            vals, _ = rw.r2_batch(schema, joint, singles, feats_all, states_all, encs_all, reward_cfg)
            per_learner_intrinsic = [vals]
        elif cfg.method == "surprise_joint":
            pj = dyn.predict_features(joint, layout, feats_all, states_all, encs_all)
            per_learner_intrinsic = [
                rw.metric_features(layout, pj, next_feats_all, reward_cfg.metric_weights)
            ]
        elif cfg.method == "surprise_separate":
            per_learner_intrinsic = []
            for agent in range(n_agents):
                ps = dyn.predict_features(
                    singles[agent], layout, feats_all, [states_all[agent]], [encs_all[agent]]
                )
                per_learner_intrinsic.append(
                    rw.metric_features(layout, ps, next_feats_all, reward_cfg.metric_weights)
                )
        else:
            per_learner_intrinsic = [np.zeros(w * t) for _ in learners] or [np.zeros(w * t)]

        # --- joint-model buffer and refit ----------------------------------
        j_loss = 0.0
        if joint is not None:
            xj = dyn.model_input(joint.spec, feats_all, states_all, encs_all)
            yj = dyn.delta_target(layout, feats_all, next_feats_all)
            if buffer_x is None:
                buffer_x, buffer_y = xj, yj
            else:
                buffer_x = np.concatenate([buffer_x, xj])[-cfg.joint_buffer_cap :]
                buffer_y = np.concatenate([buffer_y, yj])[-cfg.joint_buffer_cap :]
            losses = []
            for _ in range(cfg.joint_fit_minibatches):
                idx = joint_rng.integers(0, buffer_x.shape[0], size=cfg.joint_fit_batch)
                joint, adam_joint, step_loss = dyn.train_joint_step(
                    joint, adam_joint, buffer_x[idx], buffer_y[idx]
                )
                losses.append(step_loss)
            j_loss = float(np.mean(losses))

        ext_flat = ext_steps.T.reshape(-1)  # step-major to match feats_all
        mean_ext = float(np.mean(ext_flat))
        mean_intr = float(np.mean(np.stack(per_learner_intrinsic))) if learners else 0.0

        # --- PPO per learner ----------------------------------------------
        p_loss = v_loss = entropy_val = 0.0
        for li, ln in enumerate(learners):
            shaped = per_learner_intrinsic[li] + cfg.lam * ext_flat
            shaped_wt = shaped.reshape(t, w).T  # (W, T)
            values_wt = np.stack(per_learner_value[li], axis=1)  # (W, T)
            boot_obs = ln.obs_rows(
                np.stack(
                    [wk.state.env.features(schema.horizon, schema.has_orientation) for wk in workers]
                ),
                [np.stack([wk.state.agent_states[i] for wk in workers]) for i in range(n_agents)],
            )
            bootstrap = pol.forward_batch(ln.policy, boot_obs).values
            adv, ret = compute_advantages(
                shaped_wt, done_steps, values_wt, bootstrap, cfg.gamma, cfg.gae_lambda
            )
            analytic = None
            if cfg.method == "r2":
                analytic = AnalyticInputs(
                    schema=schema,
                    layout=layout,
                    joint=joint,
                    singles=singles,
                    feats=feats_all,
                    agent_state_rows=states_all,
                    eps=np.concatenate(per_learner_eps[li]),
                    reward_cfg=reward_cfg,
                )
            report = ppo_update(
                ln,
                np.concatenate(per_learner_obs[li]),
                np.concatenate(per_learner_skills[li]),
                np.concatenate(per_learner_z[li]),
                np.concatenate(per_learner_mask[li]),
                np.concatenate(per_learner_logp[li]),
                adv.T.reshape(-1),
                ret.T.reshape(-1),
                cfg.ppo,
                ppo_rng,
                analytic=analytic,
            )
            p_loss += report.policy_loss
            v_loss += report.value_loss
            entropy_val += report.entropy

        metrics((update + 1) * w * t, mean_intr, mean_ext, p_loss, v_loss, entropy_val, j_loss)

    return TrainResult(
        rows=rows,
        policies=[ln.policy for ln in learners],
        singles=singles,
        joint=joint,
        episodes=episodes,
        final_success_rate=float(np.mean(success_window)) if success_window else 0.0,
    )
