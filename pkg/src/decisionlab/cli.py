"""Command-line entry points.

Exit codes: 0 success, 1 file/IO error, 2 usage error, 3 numerical
divergence during training, 4 failed acceptance-style check.
"""

import argparse
import json
import sys

import numpy as np

from . import baselines, bayes, core, envs, evalsuite, model, pretrain, trainer
from .rng import stream

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_CHECK_FAILED = 4


class UsageError(Exception):
    pass


_PRIOR_KEYS = {"family", "num_arms", "action_dim", "context_dim", "demand_mix", "noise_variance"}
_MODEL_KEYS = {"layers", "heads", "embed_dim"}
_TRAIN_KEYS = {
    "m_total", "m_early", "n_early", "n_mixed", "kappa", "batch_size",
    "epochs_per_iter", "lr", "weight_decay", "betas", "eps", "seed",
    "loss_kind", "eval_every", "horizon", "start_horizon", "f_pool_size",
    "n_eval_ood", "n_eval_regret",
}


def load_experiment_config(path):
    """Strictly parse an experiment JSON: unknown fields are rejected."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise UsageError("experiment config must be a JSON object")
    if "family" not in raw:
        raise UsageError("experiment config needs a \"family\" field")
    unknown = set(raw) - _PRIOR_KEYS - _MODEL_KEYS - _TRAIN_KEYS - {"checkpoint", "telemetry"}
    if unknown:
        raise UsageError(f"unknown config fields: {sorted(unknown)}")
    prior_kwargs = {k: raw[k] for k in _PRIOR_KEYS & set(raw) if k != "family"}
    prior = envs.make_prior(raw["family"], **prior_kwargs)
    train_kwargs = {k: raw[k] for k in _TRAIN_KEYS & set(raw)}
    if "betas" in train_kwargs:
        train_kwargs["betas"] = tuple(train_kwargs["betas"])
    tcfg = trainer.TrainConfig(**train_kwargs)
    model_kwargs = {k: raw[k] for k in _MODEL_KEYS & set(raw)}
    mcfg = model.config_for_prior(prior, tcfg.horizon, **model_kwargs)
    return prior, mcfg, tcfg, raw.get("checkpoint"), raw.get("telemetry")


def _prior_from_args(args) -> envs.PriorSpec:
    kwargs = {}
    if args.family == "mab":
        kwargs["num_arms"] = args.num_arms
    if args.family in ("pricing", "newsvendor"):
        kwargs["demand_mix"] = args.demand_mix
    return envs.make_prior(args.family, **kwargs)


def cmd_gen_data(args) -> int:
    prior = _prior_from_args(args)
    rng = stream(args.seed, "gen-data")
    factory = None
    tag = "f"
    if args.policy:
        params = model.load_checkpoint(args.policy)
        factory = lambda env, _rng: model.TransformerPolicy(env, params, _rng)  # noqa: E731
        tag = "policy"
    sequences = [
        pretrain.generate_sequence(prior, args.horizon, rng, factory, tag)
        for _ in range(args.num_sequences)
    ]
    count = pretrain.write_dataset(sequences, args.out)
    print(f"wrote {count} sequences to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    prior, mcfg, tcfg, ckpt_path, telemetry_path = load_experiment_config(args.config)
    ckpt_path = args.checkpoint or ckpt_path
    telemetry_path = args.telemetry or telemetry_path
    plan = (
        f"family={prior.family} horizon={tcfg.horizon} "
        f"M={tcfg.m_total} M0={tcfg.m_early} n_early={tcfg.n_early} n_mixed={tcfg.n_mixed} "
        f"model={mcfg.layers}x{mcfg.heads}/{mcfg.embed_dim} params={model.PolicyParams(mcfg).size}"
    )
    if args.dry_run:
        print("dry run:", plan)
        schedule = pretrain.CurriculumSchedule(
            start_horizon=tcfg.start_horizon,
            target_horizon=tcfg.horizon,
            total_iterations=tcfg.m_total,
        )
        print("curriculum:")
        for m in range(1, tcfg.m_total + 1):
            phase = "early" if m <= tcfg.m_early else "mixed"
            print(f"  m={m:3d} T~={pretrain.curriculum_horizon(m, schedule):4d} {phase}")
        return EXIT_OK
    print("training:", plan)
    try:
        params, telemetry = trainer.train(prior, mcfg, tcfg)
    except FloatingPointError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    if ckpt_path:
        model.save_checkpoint(params, ckpt_path)
        print(f"checkpoint -> {ckpt_path}")
    if telemetry_path:
        trainer.write_telemetry(telemetry, telemetry_path)
        print(f"telemetry -> {telemetry_path}")
    final = telemetry[-1]
    print(f"final train_loss={final['train_loss']:.6f} eval_regret={final['eval_regret_mean']}")
    return EXIT_OK


_ALGO_FAMILIES = {
    "ucb": ("mab",),
    "ts": ("mab",),
    "linucb": ("linear_bandit",),
    "lints": ("linear_bandit",),
    "ilse": ("pricing",),
    "cils": ("pricing",),
    "pricing-ts": ("pricing",),
    "erm": ("newsvendor",),
    "fai": ("newsvendor",),
    "alg-star": envs.FAMILIES,
    "oracle": envs.FAMILIES,
    "uniform": ("mab", "linear_bandit", "pricing", "newsvendor"),
}


def _bench_factory(name: str, prior: envs.PriorSpec, horizon: int):
    if name == "oracle":
        return lambda env, rng: core.OraclePolicy(env)
    if name == "uniform":
        return lambda env, rng: core.UniformRandomPolicy(env, rng)
    if name == "ucb":
        return lambda env, rng: baselines.UCBPolicy(env, horizon)
    if name == "ts":
        return lambda env, rng: baselines.TSPolicy(env, horizon, rng)
    if name == "linucb":
        return lambda env, rng: baselines.LinUCBPolicy(env, horizon)
    if name == "lints":
        return lambda env, rng: baselines.LinTSPolicy(env, horizon, rng)
    if name == "ilse":
        return lambda env, rng: baselines.ILSEPolicy(env)
    if name == "cils":
        return lambda env, rng: baselines.CILSPolicy(env)
    if name == "pricing-ts":
        return lambda env, rng: baselines.PricingTSPolicy(env, rng)
    if name == "erm":
        return lambda env, rng: baselines.ERMNewsvendorPolicy(env)
    if name == "fai":
        return lambda env, rng: baselines.FAIPolicy(env, rng)
    if name == "alg-star":
        rule = bayes.DEFAULT_RULES[prior.family]
        return lambda env, rng: bayes.AlgStarPolicy(prior.pool, rule, rng)
    raise UsageError(f"unknown algorithm {name!r}")


def cmd_bench(args) -> int:
    prior = _prior_from_args(args)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if not algos:
        raise UsageError("no algorithms requested")
    for name in algos:
        families = _ALGO_FAMILIES.get(name)
        if families is None:
            raise UsageError(f"unknown algorithm {name!r}")
        if args.family not in families:
            raise UsageError(f"{name} does not support family {args.family!r}")
    if "alg-star" in algos:
        if args.pool_size < 2:
            raise UsageError("alg-star needs a finite pool; pass --pool-size >= 2")
        pool_rng = stream(args.seed, "bench-pool")
        pool = tuple(envs.sample_environment(prior, pool_rng) for _ in range(args.pool_size))
        prior = envs.PriorSpec(
            family=prior.family, num_arms=prior.num_arms, action_dim=prior.action_dim,
            context_dim=prior.context_dim, demand_mix=prior.demand_mix,
            noise_variance=prior.noise_variance, pool=pool,
        )
    factories = {name: _bench_factory(name, prior, args.horizon) for name in algos}
    reports = evalsuite.compare(factories, prior, args.runs, args.horizon, args.seed)
    for name, report in reports.items():
        print(f"{name:12s} final regret {report.final_mean:10.4f} +- {report.final_se:.4f}")
    if args.out_csv:
        evalsuite.write_regret_csv(reports, args.out_csv)
        print(f"curves -> {args.out_csv}")
    if args.out_summary:
        evalsuite.write_summary_json(reports, args.out_summary)
        print(f"summary -> {args.out_summary}")
    return EXIT_OK


def cmd_counterexample(args) -> int:
    kind = args.kind.replace("-", "_")
    prior, per_step = bayes.counterexample_instance(kind)
    tol = 1e-9
    mass_tol = 1e-12
    ok = True
    rows = []
    for idx, env in enumerate(prior.pool):
        policy = bayes.AlgStarPolicy(prior.pool, "averaging")
        traj = core.rollout(env, policy, args.horizon, stream(args.seed, "cx", idx))
        curve = core.cumulative_expected_regret(traj, env)
        # the averaged action makes both candidates observationally
        # identical, so the posterior must sit at 1/2 forever
        state = bayes.PosteriorState.uniform(prior.pool)
        mass_err = 0.0
        for step in traj.steps:
            state = bayes.posterior_update(state, step)
            mass_err = max(mass_err, float(np.abs(state.probabilities() - 0.5).max()))
        final = curve[-1]
        expected = per_step[idx] * args.horizon
        err = abs(final - expected)
        good = err <= tol and mass_err <= mass_tol
        status = "ok" if good else "MISMATCH"
        print(
            f"env {idx}: regret {final:.12f} expected {expected:.12f} "
            f"|err| {err:.2e} posterior drift {mass_err:.2e} {status}"
        )
        rows.extend((idx, t + 1, curve[t]) for t in range(len(curve)))
        ok = ok and good
    if args.out_csv:
        import csv

        with open(args.out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env", "t", "regret"])
            writer.writerows((i, t, repr(float(v))) for i, t, v in rows)
        print(f"curves -> {args.out_csv}")
    if not ok:
        print("posterior-averaging regret did not match the closed form", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"averaging rule earns linear regret on the {kind} instance")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = stream(args.seed, "gradcheck")
    tol = 1e-4
    worst = 0.0
    for head_kind, loss_kind in (
        ("softmax", "cross_entropy"), ("continuous", "squared"), ("continuous", "absolute"),
    ):
        out_dim = 4 if head_kind == "softmax" else 2
        cfg = model.ModelConfig(
            layers=1, heads=1, embed_dim=8, feature_dim=3,
            label_dim=out_dim, out_dim=out_dim, max_prompt_len=9, head_kind=head_kind,
        )
        params = model.init_params(cfg, args.seed)
        t = 4
        prompt = model.Prompt(rng.normal(size=(t, 3)), rng.normal(size=(t - 1, out_dim)))
        if loss_kind == "cross_entropy":
            targets = rng.integers(out_dim, size=(1, t))
        else:
            targets = rng.normal(size=(1, t, out_dim))

        def value(vec):
            p = model.PolicyParams(cfg, vec)
            preds, _ = model.forward(p, [prompt])
            loss, _, _ = model.loss_and_grad(preds, targets, loss_kind)
            return loss

        preds, cache = model.forward(params, [prompt])
        _, _, dpreds = model.loss_and_grad(preds, targets, loss_kind)
        grads = model.backward(params, cache, dpreds).vector
        if args.corrupt_gradient:
            grads = grads + 0.1
        coords = rng.choice(params.size, size=min(args.coords, params.size), replace=False)
        eps = 1e-6
        for c in coords:
            v = params.vector.copy()
            v[c] += eps
            up = value(v)
            v[c] -= 2 * eps
            down = value(v)
            fd = (up - down) / (2 * eps)
            err = abs(fd - grads[c]) / max(1.0, abs(fd), abs(grads[c]))
            worst = max(worst, err)
        print(f"{head_kind}/{loss_kind}: worst relative error so far {worst:.3e}")
    if worst > tol:
        print(f"gradient check failed: {worst:.3e} > {tol:.0e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"gradient check passed (worst relative error {worst:.3e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decisionlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a pretraining dataset (JSONL)")
    p.add_argument("--family", required=True, choices=sorted(envs.FAMILIES))
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--num-sequences", "--n", dest="num_sequences", type=int, default=100)
    p.add_argument("--num-arms", type=int, default=20)
    p.add_argument("--demand-mix", type=float, default=0.0)
    p.add_argument("--policy", default=None, help="checkpoint; roll this policy instead of f")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the two-phase pretraining loop")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--telemetry", default=None)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="compare algorithms under common random numbers")
    p.add_argument("--family", required=True, choices=sorted(envs.FAMILIES))
    p.add_argument("--algos", required=True, help="comma-separated algorithm names")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--num-arms", type=int, default=20)
    p.add_argument("--demand-mix", type=float, default=0.0)
    p.add_argument("--pool-size", type=int, default=0, help="finite pool size for alg-star")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-summary", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("counterexample", help="verify the posterior-averaging failure instances")
    p.add_argument("--kind", required=True,
                   choices=["linear-bandit", "linear_bandit", "pricing"])
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model gradients")
    p.add_argument("--coords", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses its own codes; normalize usage errors
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
