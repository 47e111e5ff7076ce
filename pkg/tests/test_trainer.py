"""Optimizer, config format, checkpoints, training-loop behavior."""

import numpy as np
import pytest

import datagen
from rmn import autodiff as ad
from rmn import training as tr
from rmn.checkpoint import (Checkpoint, CheckpointError, collect_arrays,
                            load_checkpoint, restore_arrays, save_checkpoint)
from rmn.data import prepare, read_corpus


def test_adam_first_step_is_signed_lr():
    p = ad.parameter(np.array([1.0, -2.0, 3.0]))
    params = {"p": p}
    state = tr.AdamState(params)
    g = np.array([0.3, -0.7, 0.001])
    before = p.data.copy()
    tr.adam_step(params, {"p": g}, state, lr=0.01)
    delta = p.data - before
    assert np.allclose(delta, -0.01 * np.sign(g), atol=1e-5)


def test_adam_zero_gradient_keeps_parameters():
    p = ad.parameter(np.array([1.0, 2.0]))
    params = {"p": p}
    state = tr.AdamState(params)
    tr.adam_step(params, {"p": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(p.data, [1.0, 2.0])
    assert state.step == 1


def test_adam_minimizes_quadratic():
    # scalar simulation oracle: 100 steps on f(x) = x^2 from x = 1
    p = ad.parameter(np.array(1.0))
    params = {"x": p}
    state = tr.AdamState(params)
    for _ in range(100):
        g = 2.0 * p.data
        tr.adam_step(params, {"x": np.array(g)}, state, lr=0.1)
    assert abs(float(p.data)) < 0.05


def test_config_text_round_trip_and_schema():
    cfg = tr.story_defaults(task=3, epochs=7, g_widths=(64, 32, 1))
    text = tr.format_config(cfg)
    parsed = tr.parse_config_text(text)
    assert parsed == cfg
    schema = tr.config_schema()
    assert "learning_rate" in schema and "feature_map" in schema
    # schema text itself parses to the defaults
    assert tr.parse_config_text("\n".join(
        line for line in schema.splitlines() if not line.startswith("#"))) \
        == tr.TrainConfig()


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(tr.ConfigError, match="unknown config key"):
        tr.parse_config_text("learning_rte = 0.1")
    with pytest.raises(tr.ConfigError, match="bad value"):
        tr.parse_config_text("epochs = three")
    with pytest.raises(tr.ConfigError, match="invalid config"):
        tr.parse_config_text("dataset = tweets")


def test_dialog_defaults_match_published_rows():
    rows = {
        1: ("sum", 128, 1, (2048, 2048, 1), (2048, 2048, 4212)),
        2: ("sum", 128, 1, (1024, 1024, 1), (1024, 1024, 4212)),
        3: ("sum", 128, 1, (1024, 1024, 1024, 1), (1024, 1024, 1024, 4212)),
        4: ("concat", 50, 1, (1024, 1024, 1), (1024, 1024, 4212)),
        5: ("concat", 64, 2, (4096, 4096, 1), (4096, 4096, 4212)),
    }
    for task, (kind, dim, hops, g, f) in rows.items():
        cfg = tr.dialog_defaults(task)
        assert cfg.embed_kind == kind
        assert cfg.embed_dim == dim
        assert cfg.hops == hops
        assert tuple(cfg.g_widths) == g
        assert cfg.full_f_widths() == f
        assert cfg.activation == "tanh"
        assert cfg.batch_norm is True
        assert cfg.learning_rate == 1e-4


def test_story_defaults_match_published_setup():
    cfg = tr.story_defaults()
    assert cfg.hops == 2
    assert cfg.embed_kind == "lstm"
    assert cfg.embed_dim == 32 and cfg.hidden == 32
    assert tuple(cfg.g_widths) == (256, 128, 1)
    assert cfg.full_f_widths() == (512, 512, 159)
    assert cfg.activation == "relu"
    assert cfg.batch_norm is True
    assert cfg.learning_rate == 2e-4


@pytest.fixture(scope="module")
def needle_corpus(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("needle")
    datagen.write_needle_task(tmp, n_train=300, n_test=60, seed=0)
    return prepare.prepare_story_corpus(tmp, 1, tmp / "needle.rmnd")


def _tiny_cfg(**over):
    base = dict(task=1, epochs=2, seed=5, batch_size=16, patience=50,
                g_widths=(24, 1), f_widths=(32,), embed_dim=12, hidden=12,
                learning_rate=1e-3)
    base.update(over)
    return tr.story_defaults(**base)


def test_loss_non_increasing_on_frozen_batch(needle_corpus):
    from rmn.data.batching import pack_batch

    cfg = _tiny_cfg()
    net = tr.build_network(cfg, needle_corpus)
    params = net.named_parameters()
    opt = tr.AdamState(params)
    batch = pack_batch(needle_corpus.split("train"), np.arange(16))
    losses = []
    for _ in range(5):
        with ad.Tape() as tape:
            loss, _ = net.loss_batch(batch, train=True)
            grads = ad.backward(loss, tape)
        losses.append(loss.item())
        tr.adam_step(params, grads, opt, cfg.learning_rate)
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_evaluate_does_not_mutate_state(needle_corpus):
    cfg = _tiny_cfg(epochs=1)
    net = tr.build_network(cfg, needle_corpus)
    tr.train(net, needle_corpus, cfg)
    bn_before = {k: (bn.running_mean.copy(), bn.running_var.copy(),
                     bn.batches_seen)
                 for k, bn in net.named_bn_states().items()}
    ev1 = tr.evaluate(net, needle_corpus.split("test"))
    ev2 = tr.evaluate(net, needle_corpus.split("test"))
    assert ev1.per_task == ev2.per_task and ev1.loss == ev2.loss
    for k, bn in net.named_bn_states().items():
        mean, var, seen = bn_before[k]
        assert np.array_equal(bn.running_mean, mean)
        assert np.array_equal(bn.running_var, var)
        assert bn.batches_seen == seen


def test_untrained_model_sits_at_chance(needle_corpus):
    cfg = _tiny_cfg()
    net = tr.build_network(cfg, needle_corpus)
    # batch norm needs one train-mode pass before eval mode works
    from rmn.data.batching import pack_batch

    net.forward_batch(pack_batch(needle_corpus.split("train"),
                                 np.arange(32)), train=True)
    ev = tr.evaluate(net, needle_corpus.split("test"))
    c = needle_corpus.n_answer_classes
    chance_err = (1.0 - 1.0 / c) * 100.0
    assert abs(ev.mean_error - chance_err) < 30.0


def test_fixed_seed_training_is_bit_identical(needle_corpus):
    cfg = _tiny_cfg(epochs=2)

    def run():
        net = tr.build_network(cfg, needle_corpus)
        opt = tr.AdamState(net.named_parameters())
        res = tr.train(net, needle_corpus, cfg, optimizer=opt)
        return tr.metrics_csv(res.history), collect_arrays(net, opt)

    m1, a1 = run()
    m2, a2 = run()
    assert m1 == m2
    assert a1.keys() == a2.keys()
    for k in a1:
        assert np.array_equal(a1[k], a2[k]), k


def test_resume_matches_uninterrupted_run(needle_corpus):
    cfg = _tiny_cfg(epochs=4)
    net_full = tr.build_network(cfg, needle_corpus)
    opt_full = tr.AdamState(net_full.named_parameters())
    tr.train(net_full, needle_corpus, cfg, optimizer=opt_full)

    net_a = tr.build_network(cfg, needle_corpus)
    opt_a = tr.AdamState(net_a.named_parameters())
    cfg_half = tr.story_defaults(**{**cfg.__dict__, "epochs": 2})
    tr.train(net_a, needle_corpus, cfg_half, optimizer=opt_a)
    arrays = collect_arrays(net_a, opt_a)

    net_b = tr.build_network(cfg, needle_corpus)
    opt_b = tr.AdamState(net_b.named_parameters())
    restore_arrays(net_b, arrays, opt_b)
    opt_b.step = opt_a.step
    tr.train(net_b, needle_corpus, cfg, optimizer=opt_b, start_epoch=2)

    full = collect_arrays(net_full, opt_full)
    resumed = collect_arrays(net_b, opt_b)
    for k in full:
        assert np.array_equal(full[k], resumed[k]), k


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_guard(needle_corpus):
    # every op is numerically stabilized, so force a float64 overflow
    cfg = _tiny_cfg(epochs=3, learning_rate=1e160, patience=0)
    net = tr.build_network(cfg, needle_corpus)
    with pytest.raises(tr.DivergenceError):
        tr.train(net, needle_corpus, cfg)


def test_checkpoint_round_trip(tmp_path, needle_corpus):
    cfg = _tiny_cfg(epochs=1)
    net = tr.build_network(cfg, needle_corpus)
    opt = tr.AdamState(net.named_parameters())
    res = tr.train(net, needle_corpus, cfg, optimizer=opt)
    ev_before = tr.evaluate(net, needle_corpus.split("test"))

    ckpt = Checkpoint(config=cfg, arrays=collect_arrays(net, opt),
                      train_state={"seed": cfg.seed, "epochs_done": 1},
                      metrics=res.history)
    p1 = tmp_path / "a.rmn1"
    save_checkpoint(p1, ckpt)
    loaded = load_checkpoint(p1)
    assert loaded.config == cfg
    assert loaded.train_state["epochs_done"] == 1
    assert [m.epoch for m in loaded.metrics] == [m.epoch for m in res.history]

    p2 = tmp_path / "b.rmn1"
    save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()

    net2 = tr.build_network(loaded.config, needle_corpus)
    restore_arrays(net2, loaded.arrays)
    ev_after = tr.evaluate(net2, needle_corpus.split("test"))
    assert ev_before.per_task == ev_after.per_task
    assert ev_before.loss == ev_after.loss


def test_checkpoint_detects_corruption(tmp_path, needle_corpus):
    cfg = _tiny_cfg(epochs=1)
    net = tr.build_network(cfg, needle_corpus)
    ckpt = Checkpoint(config=cfg, arrays=collect_arrays(net))
    path = tmp_path / "c.rmn1"
    save_checkpoint(path, ckpt)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(path)


def test_restore_rejects_shape_mismatch(tmp_path, needle_corpus):
    cfg = _tiny_cfg(epochs=1)
    net = tr.build_network(cfg, needle_corpus)
    arrays = collect_arrays(net)
    key = next(k for k in arrays if k.startswith("param."))
    arrays[key] = np.zeros((2, 2))
    net2 = tr.build_network(cfg, needle_corpus)
    with pytest.raises(CheckpointError, match="shape"):
        restore_arrays(net2, arrays)


def test_joint_evaluation_partitions_by_task(tmp_path):
    datagen.write_story_task(tmp_path, 1, n_train=40, n_test=20, seed=6)
    datagen.write_story_task(tmp_path, 16, n_train=40, n_test=20, seed=6)
    corpus = prepare.prepare_story_corpus(tmp_path, [1, 16], tmp_path / "j.rmnd")
    cfg = _tiny_cfg(epochs=1, task=0)
    net = tr.build_network(cfg, corpus)
    tr.train(net, corpus, cfg)
    ev = tr.evaluate(net, corpus.split("test"))
    assert set(ev.per_task) == {1, 16}
    assert sum(n for n, _ in ev.per_task.values()) == 40
