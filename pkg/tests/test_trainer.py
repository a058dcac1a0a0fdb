import csv

import numpy as np
import pytest

from invdpo.data import sample_mixture
from invdpo.dpo import DIFFUSION_DPO, DpoConfig
from invdpo.errors import InvalidArgumentError, TrainingError
from invdpo.numerics import RngState
from invdpo.preference import PreferencePair, toy_reward_suite
from invdpo.schedule import make_schedule
from invdpo.trainer import AdamW, AdamWConfig, TrainRecord, TrainReport, evaluate, posttrain, pretrain_base

from conftest import perturbed, small_denoiser


def test_adamw_one_parameter_hand_example():
    # decay: 1 - 0.1*0.01 = 0.999; m_hat = 0.5, v_hat = 0.25; step 0.1 * 0.5 / (0.5 + 1e-8)
    p = [np.array([1.0])]
    opt = AdamW(p, AdamWConfig(lr=0.1, weight_decay=0.01))
    opt.step(p, [np.array([0.5])])
    assert abs(p[0][0] - 0.899000002) < 1e-12


def test_adamw_second_step_and_lr_override():
    p = [np.array([0.0])]
    opt = AdamW(p, AdamWConfig(lr=1.0, weight_decay=0.0))
    opt.step(p, [np.array([2.0])], lr=0.5)
    # bias-corrected Adam step has magnitude lr for a constant gradient
    assert p[0][0] == pytest.approx(-0.5, abs=1e-8)
    opt.step(p, [np.array([2.0])], lr=0.5)
    assert p[0][0] == pytest.approx(-1.0, abs=1e-8)


def test_adamw_shape_checks():
    p = [np.zeros(2)]
    opt = AdamW(p)
    with pytest.raises(InvalidArgumentError):
        opt.step(p, [np.zeros(3)])
    with pytest.raises(InvalidArgumentError):
        opt.step(p, [np.zeros(2), np.zeros(2)])


def test_report_validation_and_csv(tmp_path):
    r = TrainReport()
    r.add(TrainRecord(step=0, loss=1.0))
    with pytest.raises(InvalidArgumentError):
        r.add(TrainRecord(step=0, loss=1.0))
    with pytest.raises(TrainingError) as e:
        r.add(TrainRecord(step=1, loss=float("nan")))
    assert e.value.last_good_step == 0
    r.add(TrainRecord(step=5, loss=0.5, margin_mean=0.1, pair_accuracy=0.75))
    r.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows == [["step", "loss", "margin_mean", "pair_accuracy", "wallclock_ms"],
                    ["0", "1.0", "0.0", "0.0", "0.0"], ["5", "0.5", "0.1", "0.75", "0.0"]]


def _tiny_data(n=512, seed=0):
    return sample_mixture(RngState(seed), n, n_modes=3)


def test_pretrain_one_epoch_reduces_loss():
    m, s = small_denoiser(seed=0), make_schedule(10, 0.05)
    x0, lab = _tiny_data()
    _, rep = pretrain_base(m, s, x0, lab, 1, RngState(1), AdamWConfig(lr=5e-3, weight_decay=0.0),
                           batch_size=64, cosine=False, log_interval=1000)
    assert rep.summary["steps"] == 8
    assert rep.summary["final_loss"] < rep.records[0].loss


def test_pretrain_deterministic():
    x0, lab = _tiny_data()
    s = make_schedule(10, 0.05)
    runs = [pretrain_base(small_denoiser(seed=0), s, x0, lab, 2, RngState(1), batch_size=64, log_interval=4)
            for _ in range(2)]
    assert runs[0][0].param_hash() == runs[1][0].param_hash()
    assert [r.loss for r in runs[0][1].records] == [r.loss for r in runs[1][1].records]


def test_pretrain_divergence_and_empty():
    m, s = small_denoiser(seed=0), make_schedule(10, 0.05)
    m.params[4][:] = np.nan
    x0, lab = _tiny_data(64)
    with pytest.raises(TrainingError):
        pretrain_base(m, s, x0, lab, 1, RngState(1), batch_size=32)
    with pytest.raises(InvalidArgumentError):
        pretrain_base(small_denoiser(), s, np.zeros((0, 2)), np.zeros(0, dtype=int), 1, RngState(1))


def _pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    return [PreferencePair(int(rng.integers(3)), rng.normal(size=2), rng.normal(size=2), 1.0, 0.0) for _ in range(n)]


def test_posttrain_zero_steps_is_identity():
    m, s = small_denoiser(seed=2), make_schedule(6, 0.05)
    out, rep = posttrain(m, s, _pairs(10), _pairs(4, 1), DpoConfig(), 0)
    assert out.param_hash() == m.param_hash()
    assert [r.step for r in rep.records] == [0]


@pytest.mark.parametrize("variant", ["inversion-dpo", DIFFUSION_DPO])
def test_posttrain_rows_and_frozen_reference(variant):
    m, s = small_denoiser(seed=2), make_schedule(6, 0.05)
    before = m.param_hash()
    out, rep = posttrain(m, s, _pairs(20), _pairs(6, 1), DpoConfig(variant=variant), 40,
                         AdamWConfig(lr=1e-3), batch_size=4, eval_interval=10)
    assert [r.step for r in rep.records] == [0, 10, 20, 30, 40]
    assert m.param_hash() == before == rep.summary["reference_hash"]
    assert out.param_hash() != before
    assert rep.records[0].loss == pytest.approx(np.log(2), abs=1e-12)


def test_posttrain_logs_final_partial_interval():
    m, s = small_denoiser(seed=2), make_schedule(4, 0.05)
    _, rep = posttrain(m, s, _pairs(8), _pairs(3, 1), DpoConfig(), 25, batch_size=4, eval_interval=10)
    assert [r.step for r in rep.records] == [0, 10, 20, 25]


def test_posttrain_deterministic_and_on_eval():
    m, s = small_denoiser(seed=2), make_schedule(6, 0.05)
    seen = []

    def hook(step, model):
        seen.append(step)
        return {"custom": float(step)}

    a = posttrain(m, s, _pairs(12), _pairs(4, 1), DpoConfig(), 20, batch_size=4, eval_interval=10, seed=3,
                  on_eval=hook)
    b = posttrain(m, s, _pairs(12), _pairs(4, 1), DpoConfig(), 20, batch_size=4, eval_interval=10, seed=3)
    assert a[0].param_hash() == b[0].param_hash()
    assert seen == [0, 10, 20] and list(a[1].column("custom")) == [0.0, 10.0, 20.0]


def test_evaluate_repeatable_and_complete():
    m, s = small_denoiser(seed=2), make_schedule(6, 0.05)
    ref = perturbed(m, 1e-2, 0)
    suite = toy_reward_suite(3)
    a = evaluate(m, ref, suite, s, [0, 1, 2], 8, RngState(5), pairs=_pairs(5), cfg=DpoConfig())
    b = evaluate(m, ref, suite, s, [0, 1, 2], 8, RngState(5), pairs=_pairs(5), cfg=DpoConfig())
    assert a == b
    assert {"reward_mean", "reward_fidelity", "reward_structure", "margin_mean", "pair_accuracy"} <= set(a)
