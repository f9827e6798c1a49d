import math
import warnings

import numpy as np
import pytest

from bridgelab import experiments as ex
from bridgelab.autograd import Tensor
from bridgelab.config import TrainConfig
from bridgelab.errors import ConfigurationError, DomainError
from bridgelab.trainer import (Adam, effective_weights, load_result, pk_batch, relabel,
                               save_result, total_loss, train_dg, train_uda, write_log)

SMALL = TrainConfig(epochs=2, iters_per_epoch=4, batch_n=8, lr_drop_epochs=(1,),
                     eps=0.4)


@pytest.fixture(scope="module")
def small_task():
    return ex.uda_task(11, n_ids=8, n_per_id=4)


@pytest.fixture(scope="module")
def small_run(small_task):
    source, target, _ = small_task
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train_uda(SMALL.replace(seed=11), source, target)


def test_adam_zero_gradient_no_decay_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    Adam(0.1).step([p])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_moves_against_constant_gradient():
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam(0.01)
    for _ in range(50):
        p.grad = np.array([1.0, -2.0, 0.5])
        opt.step([p])
    assert (np.sign(p.data) == [-1, 1, -1]).all()
    # bias-corrected Adam moves lr per step under a constant gradient
    np.testing.assert_allclose(np.abs(p.data), 0.5, rtol=1e-6)


def test_adam_skips_non_finite_and_drops_lr():
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([np.nan, 1.0])
    opt = Adam(1.0, drop_epochs=(2, 4))
    assert opt.step([p]) is False and opt.skipped == 1
    np.testing.assert_array_equal(p.data, 1.0)
    assert [opt.lr_at(e) for e in (0, 2, 5)] == [1.0, 0.1, pytest.approx(0.01)]


def test_total_loss_examples():
    comps = {"cls": 1.0, "tri": 0.2, "bridge_pred": 1.0, "bridge_feat": 1.0, "div": -0.5,
             "cons": 0.3}
    w = effective_weights(TrainConfig())
    assert total_loss(comps, w) == pytest.approx(1.1)
    assert total_loss(comps, {}) == pytest.approx(1.2)
    with pytest.raises(DomainError):
        total_loss({"bogus": 1.0}, w)


def test_effective_weights_follow_switches():
    w = effective_weights(TrainConfig(use_bridge_pred=False, use_cons=False))
    assert w["mu1"] == 0.0 and w["mu4"] == 0.0 and w["mu3"] == 1.0
    assert effective_weights(TrainConfig(mix_mode="random_beta:1.0"))["mu3"] == 0.0


def test_pk_batch_and_relabel(rng):
    labels = np.repeat([3, 9, 4], 3)
    idx = pk_batch(rng, labels, 2, 2)
    assert len(idx) == 4 and labels[idx[0]] == labels[idx[1]]
    mapped, uniq = relabel([9, 3, 9, 4])
    assert mapped.tolist() == [2, 0, 2, 1] and uniq.tolist() == [3, 4, 9]


def test_smoke_run_logs_every_epoch(small_run):
    log = small_run.log
    assert [r["epoch"] for r in log] == [0, 1]
    for r in log:
        for key in ("loss", "cls", "tri", "lr", "n_clusters", "bcubed_f", "nmi"):
            assert key in r and math.isfinite(r[key])
    assert log[1]["lr"] == pytest.approx(SMALL.lr / 10)


def test_same_seed_is_bitwise_reproducible(small_task, small_run, tmp_path):
    source, target, _ = small_task
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = train_uda(SMALL.replace(seed=11), source, target)
    write_log(tmp_path / "a.jsonl", small_run.log)
    write_log(tmp_path / "b.jsonl", again.log)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_checkpoint_reload_gives_identical_embeddings(small_task, small_run, tmp_path):
    _, _, test = small_task
    save_result(small_run, tmp_path / "m.ckpt")
    back = load_result(tmp_path / "m.ckpt")
    np.testing.assert_array_equal(back.embed(test.images), small_run.embed(test.images))
    assert back.config == small_run.config


def test_mode_mismatch_rejected(small_task):
    source, target, _ = small_task
    with pytest.raises(ConfigurationError):
        train_uda(SMALL.replace(mode="dg"), source, target)
    with pytest.raises(ConfigurationError):
        train_dg(SMALL, [source])


def test_dg_smoke(tmp_path):
    sources, unseen = ex.dg_task(5, n_ids=6, n_per_id=4)
    result = train_dg(SMALL.replace(mode="dg", seed=5), sources)
    assert len(result.log) == 2 and result.twin is not None
    for r in result.log:
        assert math.isfinite(r["loss"]) and 0.0 <= r["self_pair_rate"] <= 1.0
    metrics = result.evaluate(unseen)
    assert 0.0 <= metrics["mAP"] <= 1.0
    save_result(result, tmp_path / "dg.ckpt")
    back = load_result(tmp_path / "dg.ckpt")
    np.testing.assert_array_equal(back.embed(unseen.images), result.embed(unseen.images))


@pytest.mark.parametrize("m,l", [(0, 0), (1, 3), (2, 2), (4, 4), (0, 4)])
def test_every_plug_pair_trains(small_task, m, l):
    source, target, _ = small_task
    cfg = SMALL.replace(epochs=1, iters_per_epoch=2, stage_m=m, stage_l=l,
                        reduction=1 if m == 0 else 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = train_uda(cfg, source, target)
    assert math.isfinite(result.log[0]["loss"])


def test_alternative_mix_modes_train(small_task):
    source, target, _ = small_task
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fixed = train_uda(SMALL.replace(epochs=1, iters_per_epoch=2, mix_mode="fixed:0.25"),
                          source, target).log[0]
        beta = train_uda(SMALL.replace(epochs=1, iters_per_epoch=2,
                                       mix_mode="random_beta:0.5"), source, target).log[0]
    assert fixed["a_s_mean"] == 0.25 and fixed["a_s_std"] == 0.0
    assert math.isfinite(beta["loss"]) and 0.0 <= beta["a_s_mean"] <= 1.0
