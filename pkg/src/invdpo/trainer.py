"""AdamW, base pretraining, preference post-training and evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .diffusion import base_loss, sample
from .dpo import DpoConfig, dpo_loss
from .errors import InvalidArgumentError, TrainingError
from .numerics import RngState, gaussian_sample
from .preference import PairBatch, PreferencePair, RewardSuite, aggregate_reward
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

REPORT_HEADER = ["step", "loss", "margin_mean", "pair_accuracy", "wallclock_ms"]


@dataclass
class AdamWConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    """Adam with decoupled weight decay.

    One call to :meth:`step` with gradient ``g`` and learning rate ``lr`` does::

        k += 1
        p -= lr * weight_decay * p
        m  = beta1 * m + (1 - beta1) * g
        v  = beta2 * v + (1 - beta2) * g**2
        p -= lr * (m / (1 - beta1**k)) / (sqrt(v / (1 - beta2**k)) + eps)
    """

    def __init__(self, params: Sequence[np.ndarray], cfg: AdamWConfig | None = None):
        self.cfg = cfg or AdamWConfig()
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.k = 0

    def step(self, params: list[np.ndarray], grads: Sequence[np.ndarray], lr: float | None = None) -> None:
        c = self.cfg
        lr = c.lr if lr is None else lr
        if len(grads) != len(self.m):
            raise InvalidArgumentError("gradient list does not match optimizer state")
        self.k += 1
        bc1 = 1.0 - c.beta1**self.k
        bc2 = 1.0 - c.beta2**self.k
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise InvalidArgumentError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            p *= 1.0 - lr * c.weight_decay
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainRecord:
    step: int
    loss: float
    margin_mean: float = 0.0
    pair_accuracy: float = 0.0
    wallclock_ms: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class TrainReport:
    records: list[TrainRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, rec: TrainRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise InvalidArgumentError("report steps must strictly increase")
        vals = [rec.loss, rec.margin_mean, rec.pair_accuracy, rec.wallclock_ms]
        if not all(math.isfinite(v) for v in vals):
            raise TrainingError(f"non-finite metric at step {rec.step}", last_good_step=self.last_step)
        self.records.append(rec)

    @property
    def last_step(self):
        return self.records[-1].step if self.records else None

    def column(self, name: str) -> np.ndarray:
        if name in REPORT_HEADER:
            return np.array([getattr(r, name) for r in self.records])
        return np.array([r.extra[name] for r in self.records])

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.records:
                w.writerow([r.step, repr(r.loss), repr(r.margin_mean), repr(r.pair_accuracy), repr(r.wallclock_ms)])


class _Clock:
    """Elapsed milliseconds, or a constant zero so reports stay byte-reproducible."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def ms(self) -> float:
        return round((time.perf_counter() - self.t0) * 1e3, 3) if self.enabled else 0.0


def _check_finite(loss, grads, step, last_good):
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError(f"loss diverged at step {step}", last_good_step=last_good)


def pretrain_base(
    model,
    s: NoiseSchedule,
    x0: np.ndarray,
    cond: np.ndarray,
    epochs: int,
    rng: RngState,
    opt: AdamWConfig | None = None,
    batch_size: int = 256,
    cosine: bool = True,
    log_interval: int = 500,
    eval_size: int = 4096,
    record_wallclock: bool = False,
):
    """Fit ``model`` in place with the epsilon-matching loss over shuffled minibatches.

    The learning rate follows a cosine decay to zero over all steps when
    ``cosine`` is set. ``summary["final_loss"]`` is the loss on a fixed batch
    of ``eval_size`` rows (with fixed noise) after training.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    cond = np.asarray(cond)
    n = len(x0)
    if n == 0:
        raise InvalidArgumentError("empty dataset")
    opt = opt or AdamWConfig(lr=2e-3, weight_decay=0.0)
    adam = AdamW(model.params, opt)
    shuffle_rng, noise_rng, eval_rng = rng.substream(1), rng.substream(2), rng.substream(3)
    per_epoch = math.ceil(n / batch_size)
    total = epochs * per_epoch
    clock = _Clock(record_wallclock)
    report = TrainReport()
    eval_idx = eval_rng.integers(0, n - 1, size=min(eval_size, n))

    def held_loss():
        return base_loss(model, s, x0[eval_idx], cond[eval_idx], eval_rng.substream(0), need_grad=False)[0]

    report.add(TrainRecord(step=0, loss=held_loss(), wallclock_ms=clock.ms()))
    step, window = 0, []
    for _ in range(epochs):
        perm = shuffle_rng.permutation(n)
        for b in range(per_epoch):
            idx = perm[b * batch_size:(b + 1) * batch_size]
            loss, grads = base_loss(model, s, x0[idx], cond[idx], noise_rng)
            _check_finite(loss, grads, step + 1, step)
            lr = opt.lr * 0.5 * (1.0 + math.cos(math.pi * step / total)) if cosine else opt.lr
            adam.step(model.params, grads, lr=lr)
            step += 1
            window.append(loss)
            if step % log_interval == 0 or step == total:
                report.add(TrainRecord(step=step, loss=float(np.mean(window)), wallclock_ms=clock.ms()))
                log.info("pretrain step %d loss %.4f", step, report.records[-1].loss)
                window = []
    report.summary = {"steps": step, "final_loss": held_loss()}
    return model, report


def _shuffled_batches(n: int, batch_size: int, rng: RngState):
    while True:
        perm = rng.permutation(n)
        for b in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield perm[b:b + batch_size]


def posttrain(
    model,
    s: NoiseSchedule,
    train_pairs: Sequence[PreferencePair] | PairBatch,
    heldout_pairs: Sequence[PreferencePair] | PairBatch,
    cfg: DpoConfig,
    steps: int,
    opt: AdamWConfig | None = None,
    batch_size: int = 8,
    eval_interval: int = 50,
    seed: int = 0,
    on_eval: Callable[[int, object], dict] | None = None,
    record_wallclock: bool = False,
):
    """Preference post-training against a frozen copy of the input model.

    Each logged row holds the held-out loss, mean margin and pair accuracy
    (fraction of held-out pairs with positive margin). Rows are written at
    step 0, every ``eval_interval`` steps and at the final step. ``on_eval``
    may add extra metrics per row; it receives ``(step, model)``.

    Returns:
        ``(trained_model, report)``. The input model is not modified.
    """
    train = train_pairs if isinstance(train_pairs, PairBatch) else PairBatch.from_pairs(train_pairs)
    held = heldout_pairs if isinstance(heldout_pairs, PairBatch) else PairBatch.from_pairs(heldout_pairs)
    if steps < 0:
        raise InvalidArgumentError("steps must be non-negative")
    opt = opt or AdamWConfig()
    ref = model.clone()
    ref_hash = ref.param_hash()
    policy = model.clone()
    adam = AdamW(policy.params, opt)
    root = RngState(seed)
    loss_rng, batches = root.substream(1), _shuffled_batches(len(train), batch_size, root.substream(2))
    clock = _Clock(record_wallclock)
    report = TrainReport()

    def evaluate_rows(step):
        res = dpo_loss(policy, ref, s, held, cfg, root.substream(3), need_grad=False)
        rec = TrainRecord(
            step=step,
            loss=res.loss,
            margin_mean=float(np.mean(res.margins)),
            pair_accuracy=res.accuracy,
            wallclock_ms=clock.ms(),
        )
        if on_eval is not None:
            rec.extra.update(on_eval(step, policy))
        report.add(rec)
        log.info("posttrain %s step %d held-out acc %.3f margin %.4g", cfg.variant, step, rec.pair_accuracy, rec.margin_mean)

    evaluate_rows(0)
    train_loss = []
    for step in range(1, steps + 1):
        res = dpo_loss(policy, ref, s, train.take(next(batches)), cfg, loss_rng)
        _check_finite(res.loss, res.grads, step, step - 1)
        adam.step(policy.params, res.grads)
        train_loss.append(res.loss)
        if step % eval_interval == 0 or step == steps:
            evaluate_rows(step)
    if ref.param_hash() != ref_hash:
        raise AssertionError("frozen reference model was modified during post-training")
    report.summary = {
        "steps": steps,
        "variant": cfg.variant,
        "timestep_mode": cfg.timestep_mode,
        "inner_sign": cfg.inner_sign,
        "final_train_loss": float(np.mean(train_loss[-eval_interval:])) if train_loss else float("nan"),
        "reference_hash": ref_hash,
    }
    return policy, report


def generate(model, s: NoiseSchedule, conditions: Sequence[int], n_per_condition: int, rng: RngState):
    """Samples for every condition from shared Gaussian draws; returns ``(x0, labels)``."""
    conditions = list(conditions)
    labels = np.repeat(np.asarray(conditions, dtype=np.int64), n_per_condition)
    x_T = gaussian_sample(rng, (len(labels), model.data_dim))
    return sample(model, s, x_T, labels).x0, labels


def evaluate(
    model,
    ref,
    suite: RewardSuite,
    s: NoiseSchedule,
    conditions: Sequence[int],
    n_per_condition: int,
    rng: RngState,
    pairs=None,
    cfg: DpoConfig | None = None,
) -> dict:
    """Reward of fresh samples plus, when ``pairs`` is given, held-out margin and accuracy."""
    x0, labels = generate(model, s, conditions, n_per_condition, rng.substream(0))
    agg, comps = aggregate_reward(suite, labels, x0)
    out = {"reward_mean": float(np.mean(agg))}
    for name in suite.names:
        out[f"reward_{name}"] = float(np.mean(comps[name]))
    if pairs is not None:
        res = dpo_loss(model, ref, s, pairs, cfg or DpoConfig(), rng.substream(1), need_grad=False)
        out["margin_mean"] = float(np.mean(res.margins))
        out["pair_accuracy"] = res.accuracy
    return out
