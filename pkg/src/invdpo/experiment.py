"""Config-driven pipelines shared by the CLI and the acceptance suite.

Every random draw descends from the config's ``seed``:
substream 10 draws the training data, 11 initialises the model, 12 drives
pretraining, 20 builds candidate pools, 30 draws diagnostic samples and 40
the Gaussian starts used to measure sample reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Config
from .data import sample_mixture
from .denoiser import Denoiser
from .dpo import DIFFUSION_DPO, FULL_TRAJECTORY, INVERSION_DPO, SINGLE_T, DpoConfig
from .errors import InvalidArgumentError
from .inversion import adjacent_eps_gap, invert, roundtrip_error
from .diffusion import sample
from .numerics import RngState
from .preference import build_pools, dynamic_pairs, heldout_mask, toy_reward_suite
from .schedule import NoiseSchedule, make_schedule
from .trainer import AdamWConfig, evaluate, posttrain, pretrain_base

COMPARE_VARIANTS = (
    ("inversion-dpo", INVERSION_DPO, FULL_TRAJECTORY),
    ("diffusion-dpo", DIFFUSION_DPO, SINGLE_T),
    ("inversion-dpo-single-t", INVERSION_DPO, SINGLE_T),
)


def schedule_from(cfg: Config, T: int | None = None) -> NoiseSchedule:
    return make_schedule(T or cfg["schedule.T"], cfg["schedule.alpha_T"])


def reward_suite_from(cfg: Config):
    return toy_reward_suite(cfg["data.n_modes"], cfg["data.radius"], cfg["data.std"])


def conditions_from(cfg: Config) -> list[int]:
    return list(range(cfg["data.n_modes"]))


def dpo_config_from(cfg: Config, variant: str | None = None, timestep_mode: str | None = None) -> DpoConfig:
    mode = timestep_mode or cfg["dpo.timestep_mode"]
    return DpoConfig(
        beta=cfg["dpo.beta"],
        variant=variant or cfg["dpo.variant"],
        inner_sign=cfg["dpo.inner_sign"],
        timestep_mode=None if mode == "default" else mode,
    )


def run_pretrain(cfg: Config):
    root = RngState(cfg["seed"])
    x0, labels = sample_mixture(
        root.substream(10), cfg["data.n_samples"], cfg["data.n_modes"], cfg["data.radius"], cfg["data.std"]
    )
    model = Denoiser.init_random(
        root.substream(11),
        data_dim=2,
        n_conditions=cfg["data.n_modes"],
        hidden=cfg["model.hidden"],
        time_dim=cfg["model.time_dim"],
    )
    s = schedule_from(cfg)
    opt = AdamWConfig(lr=cfg["pretrain.lr"], weight_decay=cfg["pretrain.weight_decay"])
    model, report = pretrain_base(
        model,
        s,
        x0,
        labels,
        cfg["pretrain.epochs"],
        root.substream(12),
        opt,
        batch_size=cfg["pretrain.batch_size"],
        cosine=cfg["pretrain.cosine"],
        log_interval=cfg["pretrain.log_interval"],
        record_wallclock=cfg["report.wallclock"],
    )
    report.summary["loss_gate"] = cfg["pretrain.loss_gate"]
    report.summary["gate_passed"] = report.summary["final_loss"] < cfg["pretrain.loss_gate"]
    return model, s, report


def run_pairgen(cfg: Config, model, s: NoiseSchedule):
    if cfg["pairs.K"] < 2:
        raise InvalidArgumentError(f"pairs.K must be >= 2, got {cfg['pairs.K']}")
    pools = build_pools(
        model,
        s,
        reward_suite_from(cfg),
        conditions_from(cfg),
        cfg["pairs.pools_per_condition"],
        cfg["pairs.K"],
        RngState(cfg["seed"]).substream(20),
    )
    pairs = [p for pool in pools for p in dynamic_pairs(pool, cfg["pairs.strategy"], cfg["pairs.tie_tol"])]
    return pools, pairs


def split_pairs(cfg: Config, pairs):
    """``(train, heldout)`` by hashed (condition, pool); held-out capped at ``posttrain.eval_pairs``."""
    mask = heldout_mask(pairs, cfg["pairs.heldout_fraction"], cfg["seed"])
    train = [p for p, h in zip(pairs, mask) if not h]
    held = [p for p, h in zip(pairs, mask) if h][: cfg["posttrain.eval_pairs"]]
    if not train or not held:
        raise InvalidArgumentError(f"pair split left {len(train)} train / {len(held)} held-out pairs")
    return train, held


def reward_probe(cfg: Config, s: NoiseSchedule, n_per_condition: int | None = None):
    """Closure measuring sample reward from fixed Gaussian starts (common across calls)."""
    suite = reward_suite_from(cfg)
    n = n_per_condition or cfg["eval.n_per_condition"]
    rng = RngState(cfg["seed"]).substream(40)

    def probe(step, model):
        return evaluate(model, model, suite, s, conditions_from(cfg), n, rng)

    return probe


def run_posttrain(
    cfg: Config, model, s: NoiseSchedule, pairs, variant=None, timestep_mode=None, steps=None, on_eval=None
):
    train, held = split_pairs(cfg, pairs)
    dcfg = dpo_config_from(cfg, variant, timestep_mode)
    opt = AdamWConfig(lr=cfg["posttrain.lr"], weight_decay=cfg["posttrain.weight_decay"])
    return posttrain(
        model,
        s,
        train,
        held,
        dcfg,
        cfg["posttrain.steps"] if steps is None else steps,
        opt,
        batch_size=cfg["posttrain.batch_size"],
        eval_interval=cfg["posttrain.eval_interval"],
        seed=cfg["seed"],
        on_eval=on_eval,
        record_wallclock=cfg["report.wallclock"],
    )


@dataclass
class DiagnoseResult:
    rows: list  # (T, metric, value)
    trajectories: dict  # T -> (inverted Trajectory, sampled Trajectory) for the dumped items


def run_diagnose(cfg: Config, model, s: NoiseSchedule) -> DiagnoseResult:
    """Batch-mean round-trip error and adjacent-step noise gap for each T in ``diagnose.T_list``.

    Schedules keep the checkpoint's final alpha so only the step count changes.
    """
    x0, labels = sample_mixture(
        RngState(cfg["seed"]).substream(30),
        cfg["diagnose.n_samples"],
        cfg["data.n_modes"],
        cfg["data.radius"],
        cfg["data.std"],
    )
    rows, trajs = [], {}
    k = cfg["diagnose.dump_items"]
    for T in cfg.int_list("diagnose.T_list"):
        st = make_schedule(T, float(s.alpha[-1]))
        inv = invert(model, st, x0, labels)
        err = roundtrip_error(model, st, x0, labels)
        gap = adjacent_eps_gap(model, st, inv, labels)
        rows.append((T, "roundtrip_error", float(np.mean(err))))
        rows.append((T, "adjacent_eps_gap", float(np.mean(gap))))
        if k > 0:
            fwd = sample(model, st, inv.xT[:k], labels[:k])
            inv_k = invert(model, st, x0[:k], labels[:k])
            trajs[T] = (inv_k, fwd)
    return DiagnoseResult(rows=rows, trajectories=trajs)


def steps_to_threshold(steps, values, threshold) -> int | None:
    for st, v in zip(steps, values):
        if v >= threshold:
            return int(st)
    return None


def run_compare(cfg: Config, model, s: NoiseSchedule, pairs, steps=None):
    """Matched-budget runs of every variant in :data:`COMPARE_VARIANTS`.

    Returns ``(rows, summary)``: long-format ``(variant, step, metric, value)``
    rows and one summary dict per variant.
    """
    probe = reward_probe(cfg, s, cfg["compare.n_per_condition"])
    base_reward = probe(0, model)["reward_mean"]
    threshold = base_reward + cfg["compare.reward_delta"]
    rows, summary = [], []
    for label, variant, mode in COMPARE_VARIANTS:
        _, report = run_posttrain(cfg, model, s, pairs, variant, mode, steps=steps, on_eval=probe)
        for rec in report.records:
            metrics = {"loss": rec.loss, "margin_mean": rec.margin_mean, "pair_accuracy": rec.pair_accuracy}
            metrics.update(rec.extra)
            for name, value in metrics.items():
                rows.append((label, rec.step, name, value))
        reached = steps_to_threshold(report.column("step"), report.column("reward_mean"), threshold)
        summary.append(
            {
                "variant": label,
                "steps_to_threshold": reached,
                "threshold": threshold,
                "base_reward": base_reward,
                "final_reward_mean": report.records[-1].extra["reward_mean"],
                "final_pair_accuracy": report.records[-1].pair_accuracy,
            }
        )
    return rows, summary


def fmt_steps(v) -> str:
    return "never" if v is None else str(v)


def inf_steps(v) -> float:
    return math.inf if v is None else float(v)

