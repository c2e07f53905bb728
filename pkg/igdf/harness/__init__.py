# igdf/harness/__init__.py

"""
Module: harness

Experiment orchestration. ``run_experiment`` runs one mode over several
seeds: generate both datasets, subsample the target data, train (the only
mode-specific stage), evaluate on the target env, and write

    <output_dir>/seed_<k>/metrics.csv   per-seed training metrics
    <output_dir>/summary.csv            one row per seed plus mean/std rows
    <output_dir>/manifest.json          config, config hash, package version
    <output_dir>/runs.sqlite            run registry (unless IGDF_DATABASE_URL is set)
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from igdf import __version__
from igdf.contrastive import Encoder
from igdf.envs import EnvPair, TabularEnv, generate_dataset, greedy_success_rate, make_env_pair
from igdf.filtering import filter_by_scores
from igdf.mdp_core import Dataset, DomainTag, Stream, make_rng, subsample
from igdf.models import Experiment, Run, TrainingContext, make_engine, make_session_factory
from igdf.offline_rl import Policy, TabularSoftmaxPolicy, evaluate_policy
from igdf.schemas import ExperimentConfig, MetricsRecord, Mode, load_experiment_config
from igdf.settings import Settings

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
HISTOGRAM_BINS = 20
METRIC_COLUMNS = [
    "run_id", "seed", "step", "phase",
    "loss", "i_nce_estimate", "v_loss", "q_loss", "pi_loss",
    "eval_return_mean", "eval_return_std",
]
SUMMARY_COLUMNS = ["seed", "mode", "status", "return_mean", "return_std", "success_rate", "reason"]


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def records_to_frame(records: Iterable[MetricsRecord]) -> pd.DataFrame:
    """One row per record; known metric columns first, any others after them in name order."""
    rows = [{"run_id": r.run_id, "seed": r.seed, "step": r.step, "phase": r.phase, **r.values} for r in records]
    frame = pd.DataFrame(rows)
    extra = sorted(c for c in frame.columns if c not in METRIC_COLUMNS)
    return frame.reindex(columns=METRIC_COLUMNS + extra)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _as_config(config: Union[ExperimentConfig, str, Path]) -> ExperimentConfig:
    return config if isinstance(config, ExperimentConfig) else load_experiment_config(config)


def prepare_datasets(config: ExperimentConfig, pair: EnvPair, seed: int) -> tuple[Dataset, Dataset]:
    """Source and Γ-subsampled target datasets for one seed; identical across modes."""
    d_src = generate_dataset(pair, DomainTag.SOURCE, config.source_quality, config.n_source, seed)
    d_tar = generate_dataset(pair, DomainTag.TARGET, config.target_quality, config.n_target, seed)
    d_tar = subsample(d_tar, config.target_data_ratio, make_rng(seed, Stream.SUBSAMPLE))
    return d_src, d_tar


def evaluate_run(config: ExperimentConfig, pair: EnvPair, policy: Policy, seed: int) -> tuple[float, float, Optional[float]]:
    """Target-env return and, for tabular envs, the greedy goal success rate."""
    mean, std = evaluate_policy(pair.target, policy, config.eval_episodes, seed)
    success = None
    if isinstance(pair.target, TabularEnv) and isinstance(policy, TabularSoftmaxPolicy):
        success = greedy_success_rate(
            pair.target.mdp, policy.to_tabular(), pair.spec.goal_state, pair.spec.horizon,
        )
    return mean, std, success


def _summary_frame(rows: list[dict]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    # Missing values (failed seeds, continuous success rates) become NaN
    for column in ("return_mean", "return_std", "success_rate"):
        frame[column] = frame[column].astype(float)
    completed = frame[frame["status"] == "completed"]
    stats = []
    for label, reducer in (("mean", np.mean), ("std", np.std)):
        stats.append({
            "seed": label,
            "mode": rows[0]["mode"] if rows else "",
            "status": f"{len(completed)}/{len(frame)}",
            "return_mean": float(reducer(completed["return_mean"])) if len(completed) else math.nan,
            "return_std": float(reducer(completed["return_std"])) if len(completed) else math.nan,
            "success_rate": float(reducer(completed["success_rate"])) if len(completed) else math.nan,
            "reason": "",
        })
    frame["seed"] = frame["seed"].astype(str)
    return pd.concat([frame, pd.DataFrame(stats, columns=SUMMARY_COLUMNS)], ignore_index=True)


def run_experiment(
    config: Union[ExperimentConfig, str, Path],
    output_dir: Optional[Union[str, Path]] = None,
    settings: Optional[Settings] = None,
) -> pd.DataFrame:
    """
    Run the configured mode for every seed and write the summary table.

    Parameters:
    - config: a validated ExperimentConfig or the path of a YAML config.
    - output_dir: overrides ``config.output_dir``.

    Returns:
    - The summary DataFrame: one row per seed, then "mean" and "std" rows.

    A seed whose pipeline raises is recorded as failed with the reason;
    the remaining seeds still run.

    Example:
    >>> summary = run_experiment("configs/gridworld.yaml")
    >>> list(summary["seed"])[-2:]
    ['mean', 'std']
    """
    config = _as_config(config)
    settings = settings or Settings()
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = make_env_pair(config.env)

    engine = make_engine(settings.database_url or f"sqlite:///{(out / 'runs.sqlite').resolve()}")
    session_factory = make_session_factory(engine)
    rows = []
    logger.info(f"Running experiment {config.name} ({config.mode.value}) over seeds {config.seeds}")
    with session_factory() as session:
        experiment = Experiment(
            name=config.name,
            config=config.model_dump(mode="json"),
            config_hash=config_hash(config),
            version=__version__,
        )
        session.add(experiment)
        for seed in config.seeds:
            run = Run.create(config.mode, seed=seed)
            experiment.runs.append(run)
            seed_dir = out / f"seed_{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            logger.info(f"Seed {seed}: starting {run.run_key}")
            try:
                d_src, d_tar = prepare_datasets(config, pair, seed)
                ctx = TrainingContext(
                    config=config, seed=seed, d_src=d_src, d_tar=d_tar, output_dir=seed_dir,
                    eval_fn=lambda policy, s=seed: evaluate_policy(pair.target, policy, config.eval_episodes, s),
                )
                policy, records = run.train(ctx)
                run.complete(*evaluate_run(config, pair, policy, seed))
                run.record_metrics(records)
                write_csv(records_to_frame(records), seed_dir / "metrics.csv")
                logger.info(f"Seed {seed}: return {run.return_mean:.4f} ± {run.return_std:.4f}")
            except Exception as e:
                run.fail(f"{type(e).__name__}: {e}")
                logger.error(f"Seed {seed} failed: {run.reason}")
            rows.append({
                "seed": seed, "mode": config.mode.value, "status": run.status,
                "return_mean": run.return_mean, "return_std": run.return_std,
                "success_rate": run.success_rate, "reason": run.reason or "",
            })
        session.commit()
    engine.dispose()

    summary = _summary_frame(rows)
    write_csv(summary, out / "summary.csv")
    manifest = {
        "name": config.name,
        "mode": config.mode.value,
        "version": __version__,
        "config_hash": config_hash(config),
        "config": config.model_dump(mode="json"),
    }
    with open(out / "manifest.json", "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info(f"Wrote summary for {config.name} to {out}")
    return summary


def run_comparison(
    config: Union[ExperimentConfig, str, Path],
    modes: Sequence[Union[Mode, str]] = (Mode.IGDF, Mode.NAIVE_MERGE, Mode.TARGET_ONLY),
    output_dir: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """Paired table: one return column per mode, rows keyed by seed."""
    config = _as_config(config)
    out = Path(output_dir or config.output_dir)
    table = pd.DataFrame({"seed": [str(s) for s in config.seeds]})
    for mode in modes:
        mode = Mode(mode)
        summary = run_experiment(config.model_copy(update={"mode": mode}), out / mode.value)
        per_seed = summary.iloc[: len(config.seeds)]
        table[f"return_{mode.value}"] = per_seed["return_mean"].to_numpy(dtype=float)
    means = {"seed": "mean", **{c: float(table[c].mean()) for c in table.columns if c != "seed"}}
    table = pd.concat([table, pd.DataFrame([means])], ignore_index=True)
    write_csv(table, out / "comparison.csv")
    return table


def with_parameter(config: ExperimentConfig, parameter: str, value: Any) -> ExperimentConfig:
    """Copy of ``config`` with the dotted ``parameter`` (e.g. "filter.xi") set to ``value``."""
    data = config.model_dump(mode="json")
    node = data
    keys = parameter.split(".")
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ValueError(f"Unknown parameter: {parameter}")
        node = node[key]
    if keys[-1] not in node:
        raise ValueError(f"Unknown parameter: {parameter}")
    node[keys[-1]] = value
    return ExperimentConfig.model_validate(data)


def run_ablation(
    config: Union[ExperimentConfig, str, Path],
    parameter: str,
    values: Sequence[Any],
    output_dir: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    One run_experiment per value of ``parameter``; the consolidated table is
    keyed by (value, seed).
    """
    config = _as_config(config)
    out = Path(output_dir or config.output_dir)
    variants = [(value, with_parameter(config, parameter, value)) for value in values]
    frames = []
    for value, variant in variants:
        logger.info(f"Ablation {parameter}={value}")
        summary = run_experiment(variant, out / f"{parameter}={value}")
        per_seed = summary.iloc[: len(variant.seeds)].copy()
        per_seed.insert(0, "value", str(value))
        per_seed.insert(0, "parameter", parameter)
        frames.append(per_seed)
    table = pd.concat(frames, ignore_index=True)
    write_csv(table, out / "ablation.csv")
    return table


def filter_stats(enc: Encoder, d_src: Dataset, xi: float, out: Union[str, Path]) -> pd.DataFrame:
    """
    Score every source transition, keep the top-xi share, and write

        <out>            index,score,kept rows plus a final summary row
                         (index "summary", score = threshold, kept = kept count)
        <out>.hist.csv   20-bin score histogram over [1/e, e]
    """
    out = Path(out)
    scores = enc.score_batch(d_src.states, d_src.actions, d_src.next_states)
    filtered = filter_by_scores(d_src.as_batch(), scores, xi)
    frame = pd.DataFrame({
        "index": [str(i) for i in range(len(scores))],
        "score": scores,
        "kept": filtered.omega.astype(int),
    })
    summary = pd.DataFrame([{"index": "summary", "score": filtered.threshold, "kept": len(filtered)}])
    write_csv(pd.concat([frame, summary], ignore_index=True), out)
    counts, edges = np.histogram(scores, bins=HISTOGRAM_BINS, range=(math.exp(-1.0), math.e))
    write_csv(
        pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts}),
        out.with_name(out.name + ".hist.csv"),
    )
    logger.info(f"Kept {len(filtered)}/{len(scores)} transitions, threshold {filtered.threshold:.4f}")
    return frame


__all__ = [
    "config_hash",
    "evaluate_run",
    "filter_stats",
    "prepare_datasets",
    "records_to_frame",
    "run_ablation",
    "run_comparison",
    "run_experiment",
    "with_parameter",
    "write_csv",
]
