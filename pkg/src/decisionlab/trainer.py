"""Two-phase supervised pretraining of the sequence policy.

Early iterations draw every training sequence from the noisy-optimal
behavior distribution (approximated by a pre-generated pool); mixed
iterations draw a kappa fraction from the pool and the rest from rollouts
of a frozen snapshot of the current policy. Each iteration runs minibatch
AdamW steps over that iteration's dataset at the curriculum horizon.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import core, envs, model, pretrain
from .rng import stream


@dataclass
class TrainConfig:
    m_total: int = 30  # iterations M
    m_early: int = 15  # early-phase iterations M0
    n_early: int = 512  # sequences per early iteration
    n_mixed: int = 96  # sequences per mixed iteration
    kappa: float = 1.0 / 3.0
    batch_size: int = 32
    epochs_per_iter: int = 1
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss_kind: str = "cross_entropy"
    eval_every: int = 5
    horizon: int = 50
    start_horizon: int = 20
    f_pool_size: int = 4096
    n_eval_ood: int = 16
    n_eval_regret: int = 32

    def __post_init__(self):
        if not 1 <= self.m_early <= self.m_total:
            raise ValueError("need 1 <= M0 <= M")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, size: int) -> "OptimizerState":
        return cls(np.zeros(size), np.zeros(size))


def optimizer_step(params: model.PolicyParams, grads: model.PolicyParams,
                   state: OptimizerState, cfg: TrainConfig) -> None:
    """Decoupled-weight-decay adaptive-moment update, in place."""
    g = grads.vector
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise FloatingPointError(
            f"non-finite gradient in parameter slice {params.slice_of(bad)!r}"
        )
    b1, b2 = cfg.betas
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    params.vector -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    params.vector -= cfg.lr * cfg.weight_decay * params.vector


def sequence_loss_and_grads(params, sequences, horizon, loss_kind, want_grads=True):
    """Mean per-position loss over a batch of equal-horizon sequences."""
    cfg = params.config
    prompts = [model.sequence_prompt(s, cfg, horizon) for s in sequences]
    targets = np.stack([model.sequence_targets(s, cfg, horizon) for s in sequences])
    preds, cache = model.forward(params, prompts)
    loss, _, dpreds = model.loss_and_grad(preds, targets, loss_kind)
    if not want_grads:
        return loss, None
    return loss, model.backward(params, cache, dpreds)


def generate_policy_sequences(params, prior, n, horizon, rng):
    """Roll n environments in lockstep under the frozen policy snapshot.

    Batching the per-step forward passes across sequences keeps the mixed
    phase affordable; labels are the true optimal actions as always.
    """
    cfg = params.config
    env_list = [envs.sample_environment(prior, rng) for _ in range(n)]
    spaces_ = [envs.action_space(e) for e in env_list]
    features = np.zeros((n, horizon, cfg.feature_dim))
    labels_in = np.zeros((n, max(horizon - 1, 0), cfg.label_dim))
    steps = [[] for _ in range(n)]
    projections = [0] * n
    for t in range(horizon):
        contexts = [envs.sample_context(e, rng) for e in env_list]
        for i, x in enumerate(contexts):
            features[i, t, : len(x)] = x
            if t > 0:
                features[i, t, len(x):] = steps[i][-1].observation
        prompts = [
            model.Prompt(features[i, : t + 1], labels_in[i, :t]) for i in range(n)
        ]
        preds, _ = model.forward(params, prompts)
        last = preds[:, -1]  # (n, out_dim)
        for i, env in enumerate(env_list):
            if cfg.head_kind == "softmax":
                probs = last[i] - last[i].max()
                probs = np.exp(probs)
                probs /= probs.sum()
                action = int(rng.choice(cfg.out_dim, p=probs))
                projected = False
            else:
                raw = last[i] if cfg.out_dim > 1 else float(last[i][0])
                action, projected = spaces_[i].project(raw)
            projections[i] += int(projected)
            obs = envs.sample_observation(env, contexts[i], action, rng)
            steps[i].append(
                core.StepRecord(contexts[i], action, obs, envs.optimal_action(env, contexts[i]))
            )
            if t < horizon - 1:
                labels_in[i, t] = model.encode_action(action, cfg)
    return [
        pretrain.LabeledSequence(env_list[i], core.Trajectory(steps[i], projections[i]), "policy")
        for i in range(n)
    ]


def ood_gap(params, prior, n_eval, horizon, loss_kind, rng):
    """Loss on self-generated sequences minus loss on f-generated ones."""
    f_seqs = [pretrain.generate_sequence(prior, horizon, rng) for _ in range(n_eval)]
    p_seqs = generate_policy_sequences(params, prior, n_eval, horizon, rng)
    f_loss, _ = sequence_loss_and_grads(params, f_seqs, horizon, loss_kind, want_grads=False)
    p_loss, _ = sequence_loss_and_grads(params, p_seqs, horizon, loss_kind, want_grads=False)
    return p_loss - f_loss, f_loss, p_loss


def _eval_regret(params, eval_envs, horizon, seed):
    finals = []
    for i, env in enumerate(eval_envs):
        policy = model.TransformerPolicy(env, params, stream(seed, "eval-act", i))
        traj = core.rollout(env, policy, horizon, stream(seed, "eval-env", i))
        finals.append(core.cumulative_expected_regret(traj, env)[-1])
    finals = np.asarray(finals)
    return float(finals.mean()), float(finals.std(ddof=1) / math.sqrt(len(finals)))


TELEMETRY_COLUMNS = (
    "m", "T_tilde", "train_loss", "f_loss", "rollout_loss",
    "ood_gap", "eval_regret_mean", "eval_regret_se",
)


def train(prior: envs.PriorSpec, model_config: model.ModelConfig, cfg: TrainConfig):
    """Run the full two-phase loop; returns (params, telemetry rows)."""
    params = model.init_params(model_config, cfg.seed)
    opt = OptimizerState.fresh(params.size)
    schedule = pretrain.CurriculumSchedule(
        start_horizon=cfg.start_horizon,
        target_horizon=cfg.horizon,
        total_iterations=cfg.m_total,
    )
    pool_rng = stream(cfg.seed, "f-pool")
    pool = [
        pretrain.generate_sequence(prior, cfg.horizon, pool_rng)
        for _ in range(cfg.f_pool_size)
    ]
    eval_env_rng = stream(cfg.seed, "eval-envs")
    eval_envs = [envs.sample_environment(prior, eval_env_rng) for _ in range(cfg.n_eval_regret)]

    telemetry = []
    for m in range(1, cfg.m_total + 1):
        t_tilde = pretrain.curriculum_horizon(m, schedule)
        iter_rng = stream(cfg.seed, "iter", m)
        if m <= cfg.m_early:
            idx = iter_rng.integers(len(pool), size=cfg.n_early)
            dataset = [pool[i].truncate(t_tilde) for i in idx]
        else:
            n_f = int(cfg.kappa * cfg.n_mixed)
            idx = iter_rng.integers(len(pool), size=n_f)
            dataset = [pool[i].truncate(t_tilde) for i in idx]
            snapshot = params.copy()  # frozen for the whole iteration
            dataset.extend(
                generate_policy_sequences(
                    snapshot, prior, cfg.n_mixed - n_f, t_tilde, stream(cfg.seed, "rollout", m)
                )
            )
        losses = []
        for _epoch in range(cfg.epochs_per_iter):
            order = iter_rng.permutation(len(dataset))
            for lo in range(0, len(dataset), cfg.batch_size):
                batch = [dataset[i] for i in order[lo : lo + cfg.batch_size]]
                loss, grads = sequence_loss_and_grads(params, batch, t_tilde, cfg.loss_kind)
                optimizer_step(params, grads, opt, cfg)
                losses.append(loss)
        row = {
            "m": m,
            "T_tilde": t_tilde,
            "train_loss": float(np.mean(losses)),
            "f_loss": "", "rollout_loss": "", "ood_gap": "",
            "eval_regret_mean": "", "eval_regret_se": "",
        }
        if m % cfg.eval_every == 0 or m in (cfg.m_early, cfg.m_total):
            gap, f_loss, p_loss = ood_gap(
                params, prior, cfg.n_eval_ood, cfg.horizon, cfg.loss_kind,
                stream(cfg.seed, "ood", m),
            )
            reg_mean, reg_se = _eval_regret(params, eval_envs, cfg.horizon, cfg.seed)
            row.update(
                f_loss=f_loss, rollout_loss=p_loss, ood_gap=gap,
                eval_regret_mean=reg_mean, eval_regret_se=reg_se,
            )
        telemetry.append(row)
    return params, telemetry


def write_telemetry(rows, path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TELEMETRY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
