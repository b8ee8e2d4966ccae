import math

import numpy as np
import pytest
import torch

import hod.autodiff as ad
from hod.autodiff import Tensor, gradcheck
from hod.bpe import bpe_train
from hod.errors import ConfigError, DataError, NumericalError, ShapeError
from hod.model import ModelConfig, VideoTextModel, prepare_text_ids
from hod.synth import clip_frame_stacks, synth_clips
from hod.train import (
    AdamW,
    Batch,
    Dataset,
    TrainConfig,
    adamw_update,
    cotrain_step,
    info_nce,
    train_model,
)


def unit_rows(rng, b, d):
    x = rng.standard_normal((b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestInfoNce:
    def test_single_pair_is_zero(self):
        e = unit_rows(np.random.default_rng(0), 1, 8)
        loss = info_nce(Tensor(e), Tensor(e), temperature=0.07)
        assert loss.item() == 0.0

    @pytest.mark.parametrize("b", [2, 4, 8])
    def test_uniform_similarities(self, b):
        # Identical embeddings: every pairwise similarity equal, softmax uniform.
        row = unit_rows(np.random.default_rng(1), 1, 6)
        e = np.repeat(row, b, axis=0)
        loss = info_nce(Tensor(e), Tensor(e), temperature=0.07)
        assert loss.item() == pytest.approx(2 * math.log(b), abs=1e-9)

    def test_hand_derived_two_pair_case(self):
        e_v = np.array([[1.0, 0.0], [0.0, 1.0]])
        e_t = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = info_nce(Tensor(e_v), Tensor(e_t), temperature=1.0)
        assert loss.item() == pytest.approx(2 * math.log(1 + math.exp(-1)), abs=1e-9)

    def test_unnormalized_rejected(self):
        e = np.random.default_rng(2).standard_normal((3, 4)) * 2
        with pytest.raises(NumericalError, match="normalized"):
            info_nce(Tensor(e), Tensor(e))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        e_v, e_t = unit_rows(rng, 6, 8), unit_rows(rng, 6, 8)
        base = info_nce(Tensor(e_v), Tensor(e_t)).item()
        perm = rng.permutation(6)
        permuted = info_nce(Tensor(e_v[perm]), Tensor(e_t[perm])).item()
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            e_v, e_t = unit_rows(rng, 5, 6), unit_rows(rng, 5, 6)
            assert info_nce(Tensor(e_v), Tensor(e_t)).item() >= 0.0

    def test_gradcheck_through_normalization(self):
        def fn(v, t):
            return info_nce(ad.l2_normalize(v, axis=1), ad.l2_normalize(t, axis=1), 0.07)

        report = gradcheck(fn, [(4, 6), (4, 6)], tol=1e-4)
        assert report.passed, str(report)

    def test_bad_temperature_rejected(self):
        e = unit_rows(np.random.default_rng(5), 2, 4)
        with pytest.raises(ConfigError):
            info_nce(Tensor(e), Tensor(e), temperature=0.0)


class TestAdamW:
    def one_param(self, value):
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        return {"p": t}

    def test_zero_grad_no_decay_is_identity(self):
        params = self.one_param([1.0, -2.0])
        params["p"].grad = np.zeros(2)
        opt = AdamW(params, TrainConfig(lr=0.1))
        opt.step()
        assert np.array_equal(params["p"].data, [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        for g in (0.3, -4.0):
            params = self.one_param([0.0])
            params["p"].grad = np.array([g])
            opt = AdamW(params, TrainConfig(lr=0.01))
            opt.step()
            expect = -0.01 * g / (abs(g) + 1e-8)
            assert params["p"].data[0] == pytest.approx(expect, rel=1e-9)
            assert params["p"].data[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-6)

    def test_decoupled_decay_scales_parameter(self):
        params = self.one_param([2.0])
        params["p"].grad = np.array([0.0])
        opt = AdamW(params, TrainConfig(lr=0.1, weight_decay=0.5))
        opt.step()
        assert params["p"].data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5), abs=1e-15)

    def test_zero_lr_is_identity(self):
        rng = np.random.default_rng(6)
        params = self.one_param(rng.standard_normal(5))
        before = params["p"].data.copy()
        params["p"].grad = rng.standard_normal(5)
        opt = AdamW(params, TrainConfig(lr=0.0, weight_decay=0.3))
        opt.step()
        assert np.array_equal(params["p"].data, before)

    def test_none_grad_skipped(self):
        params = self.one_param([3.0])
        opt = AdamW(params, TrainConfig(lr=0.1, weight_decay=0.5))
        opt.step()
        assert params["p"].data[0] == 3.0

    def test_matches_torch_reference(self):
        rng = np.random.default_rng(7)
        init = rng.standard_normal((4, 3))
        grads = [rng.standard_normal((4, 3)) for _ in range(6)]

        mine = Tensor(init.copy(), requires_grad=True)
        opt = AdamW({"w": mine}, TrainConfig(lr=0.05, weight_decay=0.02))

        ref = torch.tensor(init.copy(), requires_grad=True)
        topt = torch.optim.AdamW([ref], lr=0.05, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.02)

        for g in grads:
            mine.grad = g.copy()
            opt.step()
            ref.grad = torch.tensor(g)
            topt.step()
        assert np.allclose(mine.data, ref.detach().numpy(), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            adamw_update(
                np.zeros(3), np.zeros(4), np.zeros(3), np.zeros(3),
                1, 0.1, 0.9, 0.999, 1e-8, 0.0,
            )


def tiny_setup(n_pairs=8, seed=0):
    cfg = ModelConfig(
        embed_dim=32, n_layers=2, n_heads=4, patch_size=8, image_size=16,
        frames_low=2, rate_multiplier=2, vocab_size=64, max_text_len=24,
        adapter_kind="motion",
    )
    clips = synth_clips(seed, n_pairs, image_size=cfg.image_size)
    captions = [c.caption for c in clips]
    tok = bpe_train(captions, 16)
    cfg.vocab_size = tok.vocab_size
    stacks = [clip_frame_stacks(c, cfg.frames_low, cfg.frames_high) for c in clips]
    data = Dataset(
        clip_ids=[c.clip_id for c in clips],
        x_low=np.stack([s[0] for s in stacks]),
        x_high=np.stack([s[1] for s in stacks]),
        text_ids=prepare_text_ids(captions, tok, cfg.max_text_len),
    )
    return cfg, tok, data


class TestCotrain:
    def test_empty_batch_rejected(self):
        with pytest.raises(DataError):
            Batch(clip_ids=[], x_low=np.zeros((0,)), x_high=np.zeros((0,)), text_ids=np.zeros((0,)))

    def test_duplicate_clip_ids_rejected(self):
        with pytest.raises(DataError):
            Batch(
                clip_ids=["a", "a"],
                x_low=np.zeros((2, 1)), x_high=np.zeros((2, 1)), text_ids=np.zeros((2, 1)),
            )

    def test_loss_decreases_to_convergence(self):
        cfg, tok, data = tiny_setup(n_pairs=8, seed=10)
        model = VideoTextModel(cfg, seed=11)
        tcfg = TrainConfig(lr=1e-3, epochs=200, batch_size=8, seed=12)
        history = train_model(model, data, tcfg, tok.eos_id)
        assert len(history) == 200
        assert history[-1]["loss"] < history[0]["loss"]
        assert history[-1]["loss"] < 0.1

    def test_bit_reproducible_per_seed(self):
        cfg, tok, data = tiny_setup(n_pairs=4, seed=20)
        runs = []
        for _ in range(2):
            model = VideoTextModel(cfg, seed=21)
            tcfg = TrainConfig(lr=1e-3, epochs=5, batch_size=2, seed=22)
            history = train_model(model, data, tcfg, tok.eos_id)
            runs.append((history, {k: v.data.copy() for k, v in model.params.items()}))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            assert np.array_equal(runs[0][1][name], runs[1][1][name])

    def test_reports_pathway_losses(self):
        cfg, tok, data = tiny_setup(n_pairs=4, seed=30)
        model = VideoTextModel(cfg, seed=31)
        tcfg = TrainConfig(lr=1e-3, epochs=1, batch_size=4, seed=32)
        opt = AdamW(model.params, tcfg)
        out = cotrain_step(data.batch(np.arange(4)), model, opt, tcfg, tok.eos_id)
        assert set(out) == {"loss", "loss_low", "loss_high"}
        assert all(v >= 0 for v in out.values())

    def test_aux_losses_flag_changes_updates(self):
        cfg, tok, data = tiny_setup(n_pairs=4, seed=40)
        finals = []
        for aux in (False, True):
            model = VideoTextModel(cfg, seed=41)
            tcfg = TrainConfig(lr=1e-3, epochs=2, batch_size=4, seed=42, aux_pathway_losses=aux)
            train_model(model, data, tcfg, tok.eos_id)
            finals.append(model.params["visual.patch_w"].data.copy())
        assert not np.allclose(finals[0], finals[1])
