"""Model contracts, loss identities, optimizer, training, checkpoints."""

import json
import math

import numpy as np
import pytest

from covis.geom3d import quat_from_axis_angle, quat_normalize
from covis.toynet import (
    AdamW,
    FinetuneConfig,
    ModelConfig,
    PretrainConfig,
    Tensor,
    TwoViewModel,
    WarmupCosineSchedule,
    backward,
    cross_entropy,
    cross_entropy_from_logits,
    finetune,
    init_parameters,
    joint_loss,
    labels_to_patches,
    load_checkpoint,
    parameter_group,
    patches_to_image,
    patchify,
    phase1_trainable,
    pose_head,
    pose_loss,
    pretrain,
    save_checkpoint,
    scene_pose_dataset,
    seg_probabilities,
    separable_seg_dataset,
    unpatchify,
    zero_grads,
)
from covis.toynet.fasteval import LossEvaluator
from covis.toynet.losses import segmentation_loss

TINY = ModelConfig(image_size=16, patch_size=8, dim=16, enc_layers=1, dec_layers=1, heads=2)
RNG = np.random.default_rng(7)


def rand_image(cfg=TINY, rng=RNG):
    return rng.normal(size=(3, cfg.image_size, cfg.image_size))


class TestPatchify:
    def test_shapes(self):
        cfg = ModelConfig()  # 32x32, p=8
        tokens = patchify(RNG.normal(size=(3, 32, 32)), 8)
        assert tokens.shape == (16, 192)

    def test_constant_image_equal_tokens(self):
        tokens = patchify(np.full((3, 32, 32), 0.7), 8)
        assert (tokens == tokens[0]).all()

    def test_inverse(self):
        img = RNG.normal(size=(3, 32, 32))
        np.testing.assert_array_equal(unpatchify(patchify(img, 8), 8, 32, 32), img)

    def test_labels_round_trip(self):
        labels = RNG.integers(0, 3, size=(32, 32)).astype(np.uint8)
        patches = labels_to_patches(labels, 8)
        np.testing.assert_array_equal(patches_to_image(patches, 8, 32, 32), labels)


class TestForward:
    def test_shared_encoder(self):
        model = TwoViewModel(TINY, seed=0)
        img = rand_image()
        b = model.forward_pair(img, img)
        np.testing.assert_array_equal(b.feats1.data, b.feats2.data)

    def test_feature_shapes(self):
        model = TwoViewModel(TINY, seed=0)
        b = model.forward_pair(rand_image(), rand_image())
        assert b.feats1.shape == (TINY.n_tokens, TINY.dim)
        assert b.out1.shape == (TINY.n_tokens, TINY.dim)

    def test_encoder_permutation_equivariance(self):
        from covis.toynet.model import encode

        model = TwoViewModel(TINY, seed=1)
        tokens = patchify(rand_image(), TINY.patch_size)
        feats = encode(tokens, model.params, TINY).data
        perm = RNG.permutation(TINY.n_tokens)
        orig_pos = model.params["pos_enc"].data.copy()
        model.params["pos_enc"].data = orig_pos[perm]
        feats_perm = encode(tokens[perm], model.params, TINY).data
        model.params["pos_enc"].data = orig_pos
        np.testing.assert_allclose(feats_perm, feats[perm], atol=1e-10)

    def test_zeroed_cross_values_decouple_views(self):
        model = TwoViewModel(TINY, seed=2)
        for i in range(TINY.dec_layers):
            model.params[f"dec{i}.cross.wv"].data[:] = 0.0
            model.params[f"dec{i}.cross.bv"].data[:] = 0.0
        img1 = rand_image()
        out_a = model.forward_pair(img1, rand_image()).out1.data
        out_b = model.forward_pair(img1, rand_image()).out1.data
        np.testing.assert_array_equal(out_a, out_b)

    def test_cross_attention_couples_views(self):
        model = TwoViewModel(TINY, seed=2)
        img1 = rand_image()
        out_a = model.forward_pair(img1, rand_image()).out1.data
        out_b = model.forward_pair(img1, rand_image()).out1.data
        assert np.abs(out_a - out_b).max() > 1e-9

    def test_fast_evaluator_matches_tape(self):
        model = TwoViewModel(TINY, seed=3)
        sample = scene_pose_dataset(TINY, 1, seed=4)[0]
        ev = LossEvaluator(TINY, sample)
        ce_f, pose_f, joint_f = ev.all_losses(model.params)

        b = model.forward_pair(sample.image1, sample.image2)
        po = pose_head(b.out1, b.out2, model.params)
        lp = pose_loss(
            sample.t_gt, sample.q_gt, po.t_hat, po.q_hat,
            model.params["s_t"], model.params["s_q"],
        )
        lc = segmentation_loss(
            b.out1, b.out2, sample.labels1, sample.labels2, model.params, TINY
        )
        lj = joint_loss(lp, lc, model.params["s_seg"])
        assert abs(lc.item() - ce_f) < 1e-12
        assert abs(lp.item() - pose_f) < 1e-12
        assert abs(lj.item() - joint_f) < 1e-12


class TestSegHead:
    def test_zero_logit_params_give_uniform(self):
        model = TwoViewModel(TINY, seed=0)
        model.params["seg.w"].data[:] = 0.0
        model.params["seg.b"].data[:] = 0.0
        b = model.forward_pair(rand_image(), rand_image())
        probs = seg_probabilities(b.out1, model.params, TINY).data
        np.testing.assert_allclose(probs, 1.0 / TINY.classes, atol=1e-12)

    def test_rows_sum_to_one(self):
        model = TwoViewModel(TINY, seed=4)
        b = model.forward_pair(rand_image(), rand_image())
        probs = seg_probabilities(b.out1, model.params, TINY).data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
        assert (probs >= 0).all()

    def test_logit_shift_invariance(self):
        from covis.toynet.autograd import softmax

        x = RNG.normal(size=(5, 3))
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 11.3)).data
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestCrossEntropy:
    def test_uniform_is_ln3(self):
        probs = Tensor(np.full((10, 3), 1.0 / 3.0))
        labels = RNG.integers(0, 3, size=10)
        assert cross_entropy(probs, labels).item() == pytest.approx(math.log(3.0), abs=1e-9)

    def test_perfect_prediction_zero(self):
        labels = RNG.integers(0, 3, size=10)
        probs = np.full((10, 3), 1e-12)
        probs[np.arange(10), labels] = 1.0
        assert cross_entropy(Tensor(probs), labels).item() == pytest.approx(0.0, abs=1e-9)

    def test_half_probability_is_ln2(self):
        labels = RNG.integers(0, 3, size=10)
        probs = np.full((10, 3), 0.25)
        probs[np.arange(10), labels] = 0.5
        assert cross_entropy(Tensor(probs), labels).item() == pytest.approx(math.log(2.0), abs=1e-9)

    def test_duplicating_pixels_leaves_loss_unchanged(self):
        logits = RNG.normal(size=(20, 3))
        labels = RNG.integers(0, 3, size=20)
        base = cross_entropy_from_logits(Tensor(logits), labels).item()
        doubled = cross_entropy_from_logits(
            Tensor(np.repeat(logits, 2, axis=0)), np.repeat(labels, 2)
        ).item()
        assert doubled == pytest.approx(base, abs=1e-9)

    def test_ignore_excluded(self):
        logits = RNG.normal(size=(10, 3))
        labels = RNG.integers(0, 3, size=10)
        with_ignore = labels.copy()
        with_ignore[5:] = 255
        a = cross_entropy_from_logits(Tensor(logits[:5]), labels[:5]).item()
        b = cross_entropy_from_logits(Tensor(logits), with_ignore).item()
        assert a == pytest.approx(b, abs=1e-12)


class TestPoseHead:
    def test_constant_decoder_output_pools_to_constant(self):
        model = TwoViewModel(TINY, seed=0)
        c1 = np.full((TINY.n_tokens, TINY.dim), 0.3)
        c2 = np.full((TINY.n_tokens, TINY.dim), -0.8)
        po = pose_head(Tensor(c1), Tensor(c2), model.params)
        np.testing.assert_allclose(po.f1.data, 0.3, atol=1e-12)
        np.testing.assert_allclose(po.f2.data, -0.8, atol=1e-12)

    def test_quaternion_unit_norm(self):
        model = TwoViewModel(TINY, seed=5)
        for _ in range(5):
            b = model.forward_pair(rand_image(), rand_image())
            _, q_hat = model.predict_pose(b)
            assert abs(np.linalg.norm(q_hat) - 1.0) < 1e-6

    def test_swap_changes_shared_feature(self):
        model = TwoViewModel(TINY, seed=6)
        o1 = Tensor(RNG.normal(size=(TINY.n_tokens, TINY.dim)))
        o2 = Tensor(RNG.normal(size=(TINY.n_tokens, TINY.dim)))
        a = pose_head(o1, o2, model.params).f_shared.data
        b = pose_head(o2, o1, model.params).f_shared.data
        assert np.abs(a - b).max() > 1e-9


class TestLossIdentities:
    def zeros(self):
        return Tensor(np.array(0.0)), Tensor(np.array(0.0))

    def test_pose_loss_zero_residuals(self):
        s_t, s_q = self.zeros()
        t = np.array([1.0, 2.0, 3.0])
        q = quat_normalize([0.9, 0.1, 0.2, 0.3])
        loss = pose_loss(t, q, Tensor(t), Tensor(q), s_t, s_q)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_pose_loss_translation_residual(self):
        s_t, s_q = self.zeros()
        q = quat_normalize([1.0, 0, 0, 0])
        t_gt = np.zeros(3)
        t_hat = Tensor(np.array([1.0, 1.0, 0.0]))  # squared norm 2
        loss = pose_loss(t_gt, q, t_hat, Tensor(q), s_t, s_q)
        assert loss.item() == pytest.approx(1.0, abs=1e-12)

    def test_pose_loss_log_variance_bookkeeping(self):
        s_t = Tensor(np.array(2.0))
        s_q = Tensor(np.array(0.0))
        q = quat_normalize([1.0, 0, 0, 0])
        t = np.zeros(3)
        loss = pose_loss(t, q, Tensor(t), Tensor(q), s_t, s_q)
        assert loss.item() == pytest.approx(1.0, abs=1e-12)

    def test_joint_loss_examples(self):
        one = Tensor(np.array(1.0))
        two = Tensor(np.array(2.0))
        zero = Tensor(np.array(0.0))
        assert joint_loss(one, two, zero).item() == pytest.approx(2.0, abs=1e-12)
        assert joint_loss(one, zero, zero).item() == pytest.approx(1.0, abs=1e-12)

    def test_joint_loss_limit_behavior(self):
        one = Tensor(np.array(1.0))
        two = Tensor(np.array(2.0))
        big = Tensor(np.array(40.0))
        # the data part vanishes; the regularizer grows linearly
        assert joint_loss(one, two, big).item() == pytest.approx(1.0 + 20.0, abs=1e-8)

    def test_sign_align_flag(self):
        s_t, s_q = self.zeros()
        q_gt = quat_normalize([0.8, 0.1, 0.2, 0.1])
        q_hat = Tensor(-q_gt)  # same rotation, opposite sign
        t = np.zeros(3)
        literal = pose_loss(t, q_gt, Tensor(t), q_hat, s_t, s_q)
        aligned = pose_loss(t, q_gt, Tensor(t), q_hat, s_t, s_q, sign_align=True)
        assert literal.item() == pytest.approx(2.0, abs=1e-9)  # ||q - (-q)||^2 / 2
        assert aligned.item() == pytest.approx(0.0, abs=1e-12)

    def test_gt_quaternion_canonicalized(self):
        s_t, s_q = self.zeros()
        q = quat_normalize([0.8, 0.1, 0.2, 0.1])
        t = np.zeros(3)
        # passing -q as ground truth must behave as +q (w >= 0 storage)
        loss = pose_loss(t, -q, Tensor(t), Tensor(q), s_t, s_q)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)


class TestOptimizer:
    def test_schedule_endpoints(self):
        sched = WarmupCosineSchedule(peak_lr=1e-3, warmup_steps=10, total_steps=100)
        assert sched.lr(0) == 0.0
        assert sched.lr(10) == pytest.approx(1e-3)
        assert sched.lr(100) == 0.0
        assert 0 < sched.lr(55) < 1e-3

    def test_schedule_monotone_warmup(self):
        sched = WarmupCosineSchedule(peak_lr=1.0, warmup_steps=5, total_steps=20)
        lrs = [sched.lr(s) for s in range(21)]
        assert all(a < b for a, b in zip(lrs[:5], lrs[1:6]))
        assert all(a >= b for a, b in zip(lrs[5:], lrs[6:]))

    def test_adamw_minimizes_quadratic(self):
        x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        params = {"x": x}
        opt = AdamW(weight_decay=0.0)
        from covis.toynet.autograd import squared_error

        for _ in range(400):
            zero_grads(params)
            loss = squared_error(x, np.array([1.0, 2.0]))
            backward(loss)
            opt.step(params, lr=0.05)
        np.testing.assert_allclose(x.data, [1.0, 2.0], atol=1e-3)

    def test_weight_decay_only_on_matrices(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        params = {"w": w, "b": b}
        opt = AdamW(weight_decay=0.5)
        for p in params.values():
            p.grad = np.zeros_like(p.data)
        opt.step(params, lr=0.1)
        assert (w.data < 1.0).all()  # decayed
        np.testing.assert_array_equal(b.data, np.ones(2))  # untouched


class TestTraining:
    def test_pretrain_deterministic(self):
        data = separable_seg_dataset(TINY, 4, seed=2)
        cfg = PretrainConfig(peak_lr=1e-3, warmup_steps=2, total_steps=6, batch_size=4, seed=3)
        runs = []
        for _ in range(2):
            model = TwoViewModel(TINY, seed=9)
            pretrain(model, data, cfg)
            runs.append({k: v.data.copy() for k, v in model.params.items()})
        for k in runs[0]:
            np.testing.assert_array_equal(runs[0][k], runs[1][k])

    def test_pretrain_reduces_loss(self):
        model = TwoViewModel(TINY, seed=0)
        data = separable_seg_dataset(TINY, 4, seed=1)
        log = pretrain(
            model, data,
            PretrainConfig(peak_lr=3e-3, warmup_steps=5, total_steps=80, batch_size=4, seed=0),
        )
        assert log[-1]["L_ce"] < 0.5 * log[0]["L_ce"]

    def test_log_schema(self):
        model = TwoViewModel(TINY, seed=0)
        data = separable_seg_dataset(TINY, 2, seed=1)
        log = pretrain(
            model, data,
            PretrainConfig(peak_lr=1e-3, warmup_steps=1, total_steps=2, batch_size=2, seed=0),
        )
        keys = {"step", "phase", "lr", "L_ce", "L_pose", "L_joint", "s_t", "s_q", "s_seg"}
        assert set(log[0]) == keys

    def test_log_file_jsonl(self, tmp_path):
        model = TwoViewModel(TINY, seed=0)
        data = separable_seg_dataset(TINY, 2, seed=1)
        path = tmp_path / "log.jsonl"
        pretrain(
            model, data,
            PretrainConfig(
                peak_lr=1e-3, warmup_steps=1, total_steps=3, batch_size=2, seed=0,
                log_path=str(path),
            ),
        )
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["step"] == 0

    def test_phase1_freeze_contract(self):
        model = TwoViewModel(TINY, seed=1)
        data = scene_pose_dataset(TINY, 2, seed=2)
        before = {k: v.data.copy() for k, v in model.params.items()}
        finetune(
            model, data,
            FinetuneConfig(phase1_epochs=3, phase2_epochs=0, phase1_lr=1e-3, batch_size=2, seed=0),
        )
        trainable = phase1_trainable(model.params)
        for name, prev in before.items():
            if name in trainable:
                continue
            np.testing.assert_array_equal(
                model.params[name].data, prev, err_msg=f"{name} changed in phase 1"
            )
        moved = [n for n in trainable if not np.array_equal(model.params[n].data, before[n])]
        assert moved, "phase 1 should update pose-head parameters"

    def test_phase1_trainable_grouping(self):
        params = init_parameters(TINY, seed=0)
        names = phase1_trainable(params)
        assert "pose.trunk.w1" in names and "s_t" in names and "s_q" in names
        assert "seg.w" not in names and "s_seg" not in names
        assert not any(parameter_group(n) == "backbone" for n in names)

    def test_phase2_updates_backbone(self):
        model = TwoViewModel(TINY, seed=1)
        data = scene_pose_dataset(TINY, 2, seed=2)
        before = {k: v.data.copy() for k, v in model.params.items()}
        log = finetune(
            model, data,
            FinetuneConfig(
                phase1_epochs=1, phase2_epochs=2, phase1_lr=1e-3, phase2_lr=1e-3,
                batch_size=2, seed=0,
            ),
        )
        assert any(r["phase"] == 2 for r in log)
        assert not np.array_equal(model.params["enc0.attn.wq"].data, before["enc0.attn.wq"])
        assert not np.array_equal(model.params["seg.w"].data, before["seg.w"])

    def test_phase_boundary_logged(self):
        model = TwoViewModel(TINY, seed=1)
        data = scene_pose_dataset(TINY, 2, seed=2)
        log = finetune(
            model, data,
            FinetuneConfig(
                phase1_epochs=2, phase2_epochs=3, phase1_lr=1e-3, phase2_lr=1e-3,
                batch_size=2, seed=0,
            ),
        )
        phases = [r["phase"] for r in log]
        assert phases == [1] * 2 + [2] * 3  # full-batch: one step per epoch


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = TwoViewModel(TINY, seed=8)
        path = tmp_path / "m.a0rc"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.config == model.config
        for name, p in model.params.items():
            # payload is f32; the round trip is exact at f32 resolution
            np.testing.assert_array_equal(
                back.params[name].data, p.data.astype(np.float32).astype(np.float64)
            )

    def test_bad_magic(self, tmp_path):
        from covis.datapipe import FormatError

        path = tmp_path / "bad.a0rc"
        model = TwoViewModel(TINY, seed=0)
        save_checkpoint(model, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_predictions_survive_round_trip(self, tmp_path):
        model = TwoViewModel(TINY, seed=8)
        img1, img2 = rand_image(), rand_image()
        save_checkpoint(model, tmp_path / "m.a0rc")
        back = load_checkpoint(tmp_path / "m.a0rc")
        t_a, q_a = model.predict_pose(model.forward_pair(img1, img2))
        t_b, q_b = back.predict_pose(back.forward_pair(img1, img2))
        np.testing.assert_allclose(t_a, t_b, atol=1e-4)
        np.testing.assert_allclose(q_a, q_b, atol=1e-4)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(image_size=30, patch_size=8)
        with pytest.raises(ValueError):
            ModelConfig(dim=30, heads=4)
        with pytest.raises(ValueError):
            ModelConfig(classes=4)

    def test_full_scale_documented(self):
        full = ModelConfig.full_scale()
        assert (full.enc_layers, full.dec_layers) == (24, 12)
        assert ModelConfig().enc_layers == 2  # the default stays toy-sized
