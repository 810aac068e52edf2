"""Masked-autoencoder pre-training: mask sampling, loss semantics, gradients,
and the encoder export used to seed the contrastive phase."""

import numpy as np
import pytest

from bilip.autodiff import Tensor
from bilip.contrastive import DualEncoderModel
from bilip.encoders import TextEncoderConfig, VisionEncoderConfig
from bilip.mae import (MAEConfig, MAEError, MAEModel, MaskPlan,
                       export_encoder, load_exported_encoder, mae_step,
                       masked_patch_mse, pretrain, sample_mask)

from conftest import check_gradients


class TestSampleMask:
    def test_keep_count_at_default_ratio(self):
        plan = sample_mask(49, 0.75, np.random.default_rng(0))
        assert plan.kept.size == 12   # floor(49 * 0.25)
        assert plan.masked.size == 37

    def test_zero_ratio_keeps_everything(self):
        plan = sample_mask(16, 0.0, np.random.default_rng(0))
        assert plan.kept.size == 16
        assert plan.masked.size == 0

    def test_ratio_with_no_visible_patches_rejected(self):
        with pytest.raises(MAEError):
            sample_mask(4, 0.99, np.random.default_rng(0))

    def test_float_residue_does_not_lose_a_patch(self):
        plan = sample_mask(100, 0.9, np.random.default_rng(0))
        assert plan.kept.size == 10  # 100 * (1 - 0.9) == 10 despite float residue

    def test_reproducible_under_seed(self):
        p1 = sample_mask(30, 0.5, np.random.default_rng(42))
        p2 = sample_mask(30, 0.5, np.random.default_rng(42))
        np.testing.assert_array_equal(p1.kept, p2.kept)

    def test_partition_invariant_enforced(self):
        with pytest.raises(MAEError):
            MaskPlan(kept=np.array([0, 1]), masked=np.array([1, 2]), ratio=0.5)

    def test_empirical_keep_frequency_uniform(self):
        rng = np.random.default_rng(7)
        n, trials, ratio = 20, 2000, 0.5
        hits = np.zeros(n)
        for _ in range(trials):
            hits[sample_mask(n, ratio, rng).kept] += 1
        freq = hits / trials
        sigma = np.sqrt(0.5 * 0.5 / trials)
        assert (np.abs(freq - 0.5) < 3 * sigma + 1e-9).all()


class TestMaskedLoss:
    def _setup(self, rng):
        pred = Tensor(rng.normal(size=(2, 6, 12)), requires_grad=True)
        target = rng.normal(size=(2, 6, 12))
        masked = np.array([[0, 2, 5], [1, 3, 4]])
        return pred, target, masked

    def test_forced_equality_gives_zero(self):
        rng = np.random.default_rng(0)
        target = rng.normal(size=(2, 6, 12))
        masked = np.array([[0, 2, 5], [1, 3, 4]])
        loss = masked_patch_mse(Tensor(target.copy()), target, masked)
        assert loss.item() == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        pred, target, masked = self._setup(rng)
        assert masked_patch_mse(pred, target, masked).item() >= 0.0

    def test_ignores_kept_positions(self):
        rng = np.random.default_rng(2)
        pred, target, masked = self._setup(rng)
        base = masked_patch_mse(pred, target, masked).item()
        vandalized = pred.data.copy()
        kept = np.array([[1, 3, 4], [0, 2, 5]])  # complement of masked
        for b in range(2):
            vandalized[b, kept[b]] = rng.normal(size=(3, 12)) * 100
        assert masked_patch_mse(Tensor(vandalized), target, masked).item() == pytest.approx(base)

    def test_hand_computed_value(self):
        # one image, two patches of one pixel; only patch 1 is masked
        pred = Tensor(np.array([[[5.0], [2.0]]]))
        target = np.array([[[-1.0], [4.0]]])
        loss = masked_patch_mse(pred, target, np.array([[1]]))
        assert loss.item() == pytest.approx((2.0 - 4.0) ** 2)


class TestMAEModel:
    def _tiny(self, decoder_layers=1):
        vcfg = VisionEncoderConfig(patch_size=4, image_size=8, width=16,
                                   layers=2, heads=2, embed_dim=8)
        cfg = MAEConfig(mask_ratio=0.5, decoder_layers=decoder_layers,
                        decoder_width=8, batch_size=2, warmup_steps=1, epochs=1)
        model = MAEModel(vcfg, cfg, np.random.default_rng(0))
        return model, vcfg, cfg

    def test_loss_finite_and_nonnegative(self):
        model, vcfg, cfg = self._tiny()
        rng = np.random.default_rng(1)
        images = rng.random((3, 8, 8, 3))
        plans = [sample_mask(vcfg.num_patches, cfg.mask_ratio, rng) for _ in range(3)]
        loss = model.loss(images, plans)
        assert np.isfinite(loss.item()) and loss.item() >= 0

    def test_plan_count_mismatch_rejected(self):
        model, vcfg, cfg = self._tiny()
        rng = np.random.default_rng(2)
        images = rng.random((3, 8, 8, 3))
        plans = [sample_mask(vcfg.num_patches, cfg.mask_ratio, rng)]
        with pytest.raises(MAEError):
            model.loss(images, plans)

    def test_inconsistent_plan_rejected(self):
        model, vcfg, cfg = self._tiny()
        rng = np.random.default_rng(3)
        images = rng.random((1, 8, 8, 3))
        bad = sample_mask(vcfg.num_patches + 5, cfg.mask_ratio, rng)
        with pytest.raises(MAEError):
            model.loss(images, [bad])

    def test_gradients_match_finite_differences(self):
        model, vcfg, cfg = self._tiny()
        rng = np.random.default_rng(4)
        images = rng.random((2, 8, 8, 3))
        plans = [sample_mask(vcfg.num_patches, cfg.mask_ratio,
                             np.random.default_rng(10 + i)) for i in range(2)]

        def loss():
            return model.loss(images, plans)

        check_gradients(loss, model.named_parameters(), tol=1e-4, h=1e-5)

    def test_mae_step_rejects_nonfinite(self):
        model, vcfg, cfg = self._tiny()
        rng = np.random.default_rng(5)
        model.decoder_head.weight.data[:] = np.inf
        images = rng.random((2, 8, 8, 3))
        plans = [sample_mask(vcfg.num_patches, cfg.mask_ratio, rng) for _ in range(2)]
        with pytest.raises(MAEError):
            mae_step(model, images, plans)


class TestExport:
    def test_no_decoder_keys(self):
        vcfg = VisionEncoderConfig(patch_size=4, image_size=8, width=16,
                                   layers=1, heads=2, embed_dim=8)
        model = MAEModel(vcfg, MAEConfig(decoder_layers=1, decoder_width=8),
                         np.random.default_rng(0))
        exported = export_encoder(model)
        assert exported
        assert all(not key.startswith("decoder") for key in exported)
        assert all("mask_token" not in key for key in exported)

    def test_roundtrip_preserves_encoding(self):
        vcfg = VisionEncoderConfig(patch_size=4, image_size=8, width=16,
                                   layers=1, heads=2, embed_dim=8)
        model = MAEModel(vcfg, MAEConfig(decoder_layers=1, decoder_width=8),
                         np.random.default_rng(0))
        images = np.random.default_rng(1).random((2, 8, 8, 3))
        reference = model.encoder(images).data
        restored = load_exported_encoder(export_encoder(model), vcfg)
        np.testing.assert_array_equal(restored(images).data, reference)

    def test_phase_two_initializes_from_export(self):
        vcfg = VisionEncoderConfig(patch_size=4, image_size=8, width=16,
                                   layers=1, heads=2, embed_dim=8)
        model = MAEModel(vcfg, MAEConfig(decoder_layers=1, decoder_width=8),
                         np.random.default_rng(0))
        tcfg = TextEncoderConfig(vocab_size=16, layers=1, width=8, heads=2,
                                 max_len=6, embed_dim=8)
        dual = DualEncoderModel(vcfg, tcfg, np.random.default_rng(1))
        exported = export_encoder(model)
        dual.vision.load_state_dict(
            {k.removeprefix("encoder."): v for k, v in exported.items()})
        out = dual.vision(np.random.default_rng(2).random((2, 8, 8, 3)))
        assert out.shape == (2, 8)


class TestDescent:
    def test_loss_halves_on_small_fixed_batch(self):
        vcfg = VisionEncoderConfig(patch_size=4, image_size=8, width=16,
                                   layers=1, heads=2, embed_dim=8)
        cfg = MAEConfig(mask_ratio=0.5, decoder_layers=1, decoder_width=8,
                        learning_rate=2e-3, weight_decay=0.05,
                        batch_size=8, warmup_steps=5, epochs=1)
        images = np.random.default_rng(0).random((8, 8, 8, 3))
        model, metrics = pretrain(images, vcfg, cfg, seed=0, steps=80)
        assert metrics[-1]["loss"] < 0.5 * metrics[0]["loss"]
