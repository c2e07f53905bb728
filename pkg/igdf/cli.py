# igdf/cli.py

"""
Command-line entry point: ``python -m igdf <subcommand>``.

Every subcommand exits 0 on success. Any failure prints one line

    error: <ExceptionType>: <message>

to stderr and exits 1.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
import yaml

from igdf.contrastive import estimate_i_nce, load_encoder, save_encoder, train_encoder
from igdf.envs import FAMILIES, Quality, family_spec, generate_dataset, make_env_pair
from igdf.harness import filter_stats, records_to_frame, run_ablation, run_experiment, write_csv
from igdf.info_oracle import infonce_ceiling, mi_gap, to_float
from igdf.mdp_core import DomainTag, estimate_empirical, load_dataset, save_dataset
from igdf.offline_rl import evaluate_policy, load_policy, save_policy, train_iql
from igdf.schemas import ContrastiveConfig, FilterConfig, IqlConfig
from igdf.settings import Settings, configure_logging

logger = logging.getLogger(__name__)

TRAIN_RL_COLUMNS = ["step", "phase", "v_loss", "q_loss", "pi_loss", "eval_return_mean", "eval_return_std"]


def _env_pair(family: str):
    return make_env_pair(family_spec(family))


def cmd_gen_data(args) -> None:
    spec = family_spec(args.family)
    if args.env is not None and spec.kind != args.env:
        raise ValueError(f"Family {args.family} is a {spec.kind} env, not {args.env}")
    pair = make_env_pair(spec)
    dataset = generate_dataset(pair, DomainTag(args.domain), Quality(args.quality), args.n, args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} transitions to {args.out}")


def cmd_train_encoder(args) -> None:
    cfg = ContrastiveConfig(
        dim=args.d,
        negatives_per_positive=args.k - 1,
        update_count=args.steps,
        learning_rate=args.lr,
        batch_size=args.batch,
        seed=args.seed,
        log_every=args.log_every,
    )
    d_src, d_tar = load_dataset(args.src), load_dataset(args.tar)
    enc, records = train_encoder(cfg, d_src, d_tar)
    save_encoder(enc, args.out, seed=args.seed)
    metrics = records_to_frame(records)[["step", "loss", "i_nce_estimate"]]
    write_csv(metrics, args.metrics or f"{args.out}.metrics.csv")
    print(f"wrote encoder to {args.out}")


def cmd_oracle(args) -> None:
    d_src, d_tar = load_dataset(args.src), load_dataset(args.tar)
    n_states = max(d_src.n_states, d_tar.n_states)
    n_actions = max(d_src.n_actions, d_tar.n_actions)
    src_emp = estimate_empirical(d_src, n_states, n_actions)
    tar_emp = estimate_empirical(d_tar, n_states, n_actions)
    sampler = d_src if DomainTag(args.sampler) is DomainTag.SOURCE else d_tar
    report = mi_gap(src_emp, tar_emp, sampler, on_violation=args.on_violation)
    row = report.as_row()
    row["infonce_ceiling"] = infonce_ceiling(tar_emp, src_emp).value
    if args.encoder:
        mean, stderr = estimate_i_nce(load_encoder(args.encoder), d_src, d_tar, args.k, args.eval_batches)
        row.update(i_nce_estimate=mean, i_nce_stderr=stderr)
    if args.out:
        write_csv(pd.DataFrame([{k: to_float(v) if k != "data_domain" else v for k, v in row.items()}]), args.out)
    print(json.dumps(row, default=str, sort_keys=True))


def cmd_filter_stats(args) -> None:
    frame = filter_stats(load_encoder(args.ckpt), load_dataset(args.src), args.xi, args.out)
    print(f"scored {len(frame)} transitions into {args.out}")


def cmd_train_rl(args) -> None:
    cfg = IqlConfig(
        tau=args.tau,
        awr_temperature=args.temp,
        discount=args.gamma,
        target_rate=args.mu,
        td_steps=args.td_steps,
        policy_steps=args.pi_steps,
        batch_size=args.batch,
        seed=args.seed,
        eval_every=args.eval_every,
        log_every=args.log_every,
    )
    fcfg = FilterConfig(xi=args.xi, alpha=args.alpha, batch_size=args.batch)
    d_tar = load_dataset(args.tar)
    d_src = load_dataset(args.src) if args.src else None
    enc = load_encoder(args.encoder) if args.encoder else None
    eval_fn = None
    if args.family:
        target_env = _env_pair(args.family).target
        eval_fn = lambda policy: evaluate_policy(target_env, policy, args.episodes, args.seed)  # noqa: E731

    nets, records = train_iql(cfg, d_tar, d_src=d_src, fcfg=fcfg if d_src is not None else None, enc=enc, eval_fn=eval_fn)
    out = Path(args.out)
    save_policy(nets.policy, out / "policy.ckpt", seed=args.seed)
    write_csv(records_to_frame(records).reindex(columns=TRAIN_RL_COLUMNS), out / "metrics.csv")
    print(f"wrote policy and metrics to {out}")


def cmd_eval(args) -> None:
    env = _env_pair(args.family).target
    mean, std = evaluate_policy(env, load_policy(args.policy), args.episodes, args.seed, deterministic=args.greedy)
    print(f"return_mean,return_std\n{mean:.10g},{std:.10g}")


def cmd_run(args) -> None:
    summary = run_experiment(args.config, output_dir=args.out)
    print(summary.to_csv(index=False), end="")


def _parse_values(raw: str) -> list:
    return [yaml.safe_load(token.strip()) for token in raw.split(",") if token.strip()]


def cmd_ablate(args) -> None:
    table = run_ablation(args.config, args.param, _parse_values(args.values), output_dir=args.out)
    print(table.to_csv(index=False), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igdf", description="Info-gap data filtering for cross-domain offline RL.")
    parser.add_argument("--log-level", default=None, help="Overrides IGDF_LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Sample a behavior dataset from one domain of an env family.")
    p.add_argument("--env", default=None, choices=["gridworld", "pointmass"], help="Must match the family's kind.")
    p.add_argument("--family", required=True, choices=sorted(FAMILIES))
    p.add_argument("--domain", required=True, choices=[d.value for d in DomainTag])
    p.add_argument("--quality", default=Quality.MEDIUM.value, choices=[q.value for q in Quality])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-encoder", help="Train the contrastive phi/psi encoder.")
    p.add_argument("--src", required=True)
    p.add_argument("--tar", required=True)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--k", type=int, default=128, help="Candidates per positive (1 positive + K-1 negatives).")
    p.add_argument("--steps", type=int, default=7000)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None, help="Metrics CSV path (default <out>.metrics.csv).")
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("oracle", help="Exact information-gap report for two tabular datasets.")
    p.add_argument("--src", required=True)
    p.add_argument("--tar", required=True)
    p.add_argument("--sampler", "--domain", dest="sampler", default=DomainTag.SOURCE.value,
                   choices=[d.value for d in DomainTag], help="Which dataset's tuples the expectations run over.")
    p.add_argument("--on-violation", default="sentinel", choices=["sentinel", "restrict"])
    p.add_argument("--encoder", default=None, help="Also estimate I_NCE with this encoder.")
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--eval-batches", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("filter-stats", help="Score and filter a source dataset with a trained encoder.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--xi", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_stats)

    p = sub.add_parser("train-rl", help="Train IQL, optionally with filtered source data.")
    p.add_argument("--encoder", default=None, help="Encoder checkpoint; omit to weigh all source data equally.")
    p.add_argument("--src", default=None, help="Source dataset; omit for target-only IQL.")
    p.add_argument("--tar", required=True)
    p.add_argument("--xi", type=float, default=0.25)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--temp", type=float, default=3.0)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--mu", type=float, default=0.005)
    p.add_argument("--td-steps", type=int, default=1000)
    p.add_argument("--pi-steps", type=int, default=1000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--family", default=None, choices=sorted(FAMILIES), help="Evaluate on this family's target env.")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("eval", help="Roll a saved policy in a family's target env.")
    p.add_argument("--policy", required=True)
    p.add_argument("--family", required=True, choices=sorted(FAMILIES))
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true", help="Act greedily instead of sampling actions.")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="Run an experiment config over all its seeds.")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="Sweep one dotted config parameter.")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help='Dotted path, e.g. "filter.xi".')
    p.add_argument("--values", required=True, help='Comma-separated values, e.g. "0.25,0.5,0.75,1.0".')
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    if args.log_level:
        settings = settings.model_copy(update={"log_level": args.log_level})
    configure_logging(settings)
    try:
        args.func(args)
    except Exception as e:
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        logger.debug("Command failed", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
