import math

import numpy as np
import pytest

from econet.masking import EVENT, TEMPORAL
from econet.model import MiniLM, sigmoid, sigmoid_bce, softmax_xent
from econet.objectives import (LOG_COLUMNS, DiscriminatorInstance, EncodedSample, LabelSpaces,
                               ObjectiveError, PretrainConfig, add_pretraining_heads,
                               batch_indices, discriminator_loss, event_loss,
                               joint_loss_and_grads, perturb_prediction, prepare_model, pretrain,
                               read_loss_log, resume, temporal_loss)

from conftest import block_errors, numeric_grad, tiny_config


def _model_with_heads(n_events=500, vocab_size=50, seed=0, **kw):
    m = MiniLM(tiny_config(vocab_size=vocab_size, **kw), seed=seed)
    add_pretraining_heads(m, n_events, seed=seed + 1)
    return m


def _zero_head(m, name):
    m.params[f"head.{name}.w"][:] = 0.0
    m.params[f"head.{name}.b"][:] = 0.0


def test_temporal_head_has_forty_outputs():
    m = _model_with_heads(n_events=7)
    assert m.params["head.temporal.w"].shape == (16, 40)
    assert m.params["head.event.w"].shape == (16, 7)
    assert m.params["head.disc.w"].shape == (16, 1)


def test_uniform_logits_give_log_label_count():
    m = _model_with_heads(n_events=500)
    _zero_head(m, "temporal")
    _zero_head(m, "event")
    tr = m.forward([1, 2, 3])
    assert abs(temporal_loss(m, tr, 1, 5).loss - math.log(40)) < 1e-9
    assert abs(event_loss(m, tr, 1, 499).loss - math.log(500)) < 1e-9


def test_one_hot_limit():
    m = _model_with_heads(n_events=10)
    _zero_head(m, "temporal")
    m.params["head.temporal.b"][3] = 60.0
    tr = m.forward([1, 2])
    assert temporal_loss(m, tr, 0, 3).loss < 1e-20


def test_label_out_of_range():
    m = _model_with_heads(n_events=10)
    tr = m.forward([1, 2])
    with pytest.raises(ObjectiveError):
        temporal_loss(m, tr, 0, 40)
    with pytest.raises(ObjectiveError):
        event_loss(m, tr, 0, 10)


def test_xent_and_bce_against_standalone_oracles():
    from oracles import bce, xent
    rng = np.random.default_rng(0)
    for _ in range(100):
        z = rng.normal(0, 3, 40)
        g = int(rng.integers(40))
        assert abs(softmax_xent(z, g)[0] - xent(list(z), g)) < 1e-12
        logit = float(rng.normal(0, 3))
        y = int(rng.integers(2))
        assert abs(sigmoid_bce(logit, y)[0] - bce(1 / (1 + math.exp(-logit)), y)) < 1e-12


def test_discriminator_half_probability_is_ln2():
    m = _model_with_heads(n_events=5)
    _zero_head(m, "disc")
    for y in (0, 1):
        loss, prob, _ = discriminator_loss(m, DiscriminatorInstance((1, 2, 3), 1, y))
        assert prob == 0.5 and abs(loss - math.log(2)) < 1e-12


def test_discriminator_confident_original():
    m = _model_with_heads(n_events=5)
    _zero_head(m, "disc")
    m.params["head.disc.b"][0] = 50.0
    loss, prob, _ = discriminator_loss(m, DiscriminatorInstance((1, 2, 3), 1, 1))
    assert loss < 1e-20 and prob == pytest.approx(1.0)


def test_perturbation_r0_keeps_prediction():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = perturb_prediction(7, 7, range(40), 0.0, rng)
        assert p.y == 1 and p.token == 7 and not p.replaced


def test_perturbation_r100_rates():
    rng = np.random.default_rng(1)
    draws = [perturb_prediction(3, 3, list(range(40)), 100.0, rng) for _ in range(10_000)]
    assert all(d.replaced for d in draws)
    rate = np.mean([d.y for d in draws])
    sigma = math.sqrt((1 / 40) * (39 / 40) / 10_000)
    assert abs(rate - 1 / 40) <= 3 * sigma


def test_perturbation_r50_replacement_rate():
    rng = np.random.default_rng(2)
    draws = [perturb_prediction(3, 3, list(range(40)), 50.0, rng) for _ in range(10_000)]
    assert 0.47 <= np.mean([d.replaced for d in draws]) <= 0.53


def test_perturbation_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ObjectiveError):
        perturb_prediction(1, 1, [], 50.0, rng)
    with pytest.raises(ObjectiveError):
        perturb_prediction(1, 1, [1], 150.0, rng)


def _batch(kinds, n_events=6, vocab_size=50, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for kind in kinds:
        ids = [3] + list(rng.integers(5, vocab_size, 5))
        pos = int(rng.integers(1, 6))
        original = list(ids)
        ids[pos] = 2
        label = int(rng.integers(40 if kind == TEMPORAL else n_events))
        out.append(EncodedSample(tuple(ids), pos, kind, label, tuple(original)))
    return out


SPACES = LabelSpaces(tuple(range(5, 45)), tuple(range(40, 46)))


def test_only_temporal_items_leave_event_head_untouched():
    m = _model_with_heads(n_events=6)
    res = joint_loss_and_grads(m, _batch([TEMPORAL] * 3), SPACES, alpha=2.5)
    assert res.breakdown.l_event == 0.0
    assert not res.grads["head.event.w"].any() and not res.grads["head.event.b"].any()


def test_zero_weights_reduce_to_temporal_loss():
    m = _model_with_heads(n_events=6)
    bd = joint_loss_and_grads(m, _batch([TEMPORAL, EVENT, EVENT]), SPACES, 0.0, 0.0).breakdown
    assert bd.l_joint == bd.l_temporal


def test_empty_batch_rejected():
    with pytest.raises(ObjectiveError):
        joint_loss_and_grads(_model_with_heads(6), [], SPACES)


def test_joint_gradient_with_replayed_instances():
    m = _model_with_heads(n_events=6, max_seq_len=8)
    batch = _batch([TEMPORAL, EVENT, TEMPORAL], seed=4)
    first = joint_loss_and_grads(m, batch, SPACES, 0.7, 1.3, rng=np.random.default_rng(5))
    insts = first.instances

    def f():
        return joint_loss_and_grads(m, batch, SPACES, 0.7, 1.3, instances=insts
                                    ).breakdown.l_joint

    res = joint_loss_and_grads(m, batch, SPACES, 0.7, 1.3, instances=insts)
    errs = block_errors(res.grads, numeric_grad(f, m.params))
    assert max(errs.values()) < 1e-4


def test_shared_encoder_receives_both_paths():
    m = _model_with_heads(n_events=6)
    res = joint_loss_and_grads(m, _batch([TEMPORAL, EVENT]), SPACES, 1.0, 1.0)
    both = [k for k in res.grads if not k.startswith("head.")
            and np.abs(res.generator_grads[k]).sum() > 0 and np.abs(res.disc_grads[k]).sum() > 0]
    assert both
    assert not res.generator_grads["head.disc.w"].any()
    assert not res.disc_grads["head.temporal.w"].any()


def test_discriminator_labels_follow_gold():
    m = _model_with_heads(n_events=6)
    res = joint_loss_and_grads(m, _batch([TEMPORAL, EVENT] * 4), SPACES,
                               rng=np.random.default_rng(9))
    for s, inst in zip(_batch([TEMPORAL, EVENT] * 4), res.instances):
        gold = SPACES.candidates(s.kind)[s.label]
        assert inst.y == int(inst.filled_ids[inst.position] == gold)
        assert inst.filled_ids[:s.pos] == s.ids[:s.pos]


def test_batch_indices_cover_each_epoch():
    seen = [i for step in range(5) for i in batch_indices(10, step, 2, seed=3)]
    assert sorted(seen) == list(range(10))
    assert batch_indices(10, 7, 4, 1) == batch_indices(10, 7, 4, 1)


def test_lr_schedule():
    cfg = PretrainConfig(lr=1.0, max_steps=10, warmup_steps=2, schedule="linear")
    assert [round(cfg.lr_at(s), 6) for s in (0, 1, 2, 6, 9)] == [0.5, 1.0, 1.0, 0.5, 0.125]
    assert PretrainConfig(lr=0.3).lr_at(1000) == 0.3
    with pytest.raises(ObjectiveError):
        PretrainConfig(mode="bogus")


def _run(small_corpus, mode, steps, tmp_path=None, **kw):
    samples, events, vocab, data, spaces = small_corpus
    m = MiniLM(tiny_config(vocab_size=len(vocab), max_seq_len=64), seed=0)
    cfg = PretrainConfig(lr=1e-3, max_steps=steps, batch_size=4, mode=mode, seed=2, **kw)
    hist = pretrain(m, data, spaces, cfg, tmp_path, special_ids=vocab.special_ids)
    return m, hist


def test_loss_log_additivity(small_corpus, tmp_path):
    _, hist = _run(small_corpus, "econet", 30, tmp_path, checkpoint_every=10)
    for bd in hist:
        assert abs(bd.l_joint - (bd.l_temporal + bd.alpha * bd.l_event + bd.beta * bd.l_disc)
                   ) <= 1e-9
    rows = read_loss_log(tmp_path / "loss_log.csv")
    assert [r["step"] for r in rows] == list(range(30))
    assert list(rows[0]) == list(LOG_COLUMNS)
    assert rows[-1]["l_joint"] == hist[-1].l_joint
    assert {p.name for p in tmp_path.glob("*.npz")} == {"ckpt_10.npz", "ckpt_20.npz",
                                                        "ckpt_30.npz", "final.npz"}


def test_generator_only_mode(small_corpus):
    m0 = MiniLM(tiny_config(vocab_size=len(small_corpus[2]), max_seq_len=64), seed=0)
    prepare_model(m0, len(small_corpus[4].event), "econet", seed=2)
    disc_before = m0.params["head.disc.w"].copy()
    cfg = PretrainConfig(lr=1e-3, max_steps=15, batch_size=4, mode="generator_only", seed=2)
    hist = pretrain(m0, small_corpus[3], small_corpus[4], cfg)
    assert all(bd.l_disc == 0.0 for bd in hist)
    assert np.array_equal(m0.params["head.disc.w"], disc_before)
    assert cfg.effective_beta == 0.0


def test_random_mask_mode(small_corpus):
    m, hist = _run(small_corpus, "random_mask", 10)
    assert "head.mlm.w" in m.params and "head.temporal.w" not in m.params
    assert all(bd.l_event == 0.0 and bd.l_disc == 0.0 and bd.l_joint == bd.l_temporal
               for bd in hist)
    assert all(bd.l_temporal > 0 for bd in hist)


def test_generator_warmup_flag(small_corpus):
    _, hist = _run(small_corpus, "econet", 8, generator_warmup_steps=4)
    assert all(bd.l_disc == 0.0 for bd in hist[:4])
    assert all(bd.l_disc > 0.0 for bd in hist[4:])


def test_resume_is_bit_identical(small_corpus, tmp_path):
    samples, events, vocab, data, spaces = small_corpus
    full_dir, part_dir = tmp_path / "full", tmp_path / "part"
    m, full = _run(small_corpus, "econet", 20, full_dir, checkpoint_every=10)
    m2, meta, opt, step = resume(full_dir / "ckpt_10.npz")
    assert step == 10
    cfg = PretrainConfig(**meta["pretrain"])
    tail = pretrain(m2, data, spaces, cfg, part_dir, meta, opt, step,
                    special_ids=vocab.special_ids)
    assert [b.l_joint for b in tail] == [b.l_joint for b in full[10:]]
    assert all(np.array_equal(m.params[k], m2.params[k]) for k in m.params)


def test_empty_dataset_rejected(small_corpus):
    m = MiniLM(tiny_config(), seed=0)
    with pytest.raises(ObjectiveError):
        pretrain(m, [], small_corpus[4], PretrainConfig(max_steps=1))


def test_sigmoid_is_stable():
    assert sigmoid(-800.0) == pytest.approx(0.0) and sigmoid(800.0) == pytest.approx(1.0)
