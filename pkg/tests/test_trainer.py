import json

import numpy as np
import pytest
import torch

from cl2s.data import make_synthetic_set
from cl2s.heads import ComponentOutput, ComponentKind
from cl2s.trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    poly_lr,
    save_checkpoint,
    train,
    training_loss,
)
from cl2s.variants import build_variant

SMOKE = dict(
    variant="CL2S", synthetic_n=8, synthetic_size=32, max_iters=10,
    batch_size=2, crop=32, eval_every=0, checkpoint_every=0, log_every=1,
)


def _tiny_cfg(**overrides):
    return TrainConfig(**{**SMOKE, **overrides})


class TestPolyLR:
    def test_initial_rate_exact(self):
        cfg = TrainConfig(max_iters=40000)
        assert poly_lr(0, cfg) == 2e-4

    def test_final_rate_zero(self):
        cfg = TrainConfig(max_iters=40000)
        assert poly_lr(40000, cfg) == 0.0

    def test_midpoint(self):
        cfg = TrainConfig(max_iters=40000)
        assert abs(poly_lr(20000, cfg) - 2e-4 * 0.5**0.9) < 1e-12

    def test_strictly_decreasing(self):
        cfg = TrainConfig(max_iters=1000)
        values = [poly_lr(i, cfg) for i in range(0, 1001, 50)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_continuous_at_endpoints(self):
        cfg = TrainConfig(max_iters=1000)
        assert abs(poly_lr(1, cfg) - poly_lr(0, cfg)) < 1e-6
        assert poly_lr(999, cfg) < 1e-4

    def test_out_of_range(self):
        cfg = TrainConfig(max_iters=100)
        with pytest.raises(ValueError, match="outside"):
            poly_lr(-1, cfg)
        with pytest.raises(ValueError, match="outside"):
            poly_lr(101, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="max_iters"):
            TrainConfig(max_iters=0)
        with pytest.raises(ValueError, match="lr0"):
            TrainConfig(lr0=0.0)
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0)


class TestLoss:
    def test_zero_at_perfect_prediction(self):
        gt = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(0))
        assert training_loss(gt.clone(), [], gt).item() == 0.0

    def test_uniform_error(self):
        gt = torch.full((1, 3, 8, 8), 0.5)
        pred = torch.full((1, 3, 8, 8), 0.6)
        assert training_loss(pred, [], gt).item() == pytest.approx(0.1, abs=1e-7)

    def test_auxiliary_term_with_equal_components(self):
        gt = torch.full((1, 3, 4, 4), 0.5)
        pred = torch.full((1, 3, 4, 4), 0.7)
        comps = [ComponentOutput(ComponentKind.ADD, pred.clone()) for _ in range(3)]
        total = training_loss(pred, comps, gt, aux_weight=1.0)
        assert total.item() == pytest.approx(0.4, abs=1e-6)  # 2 * L1

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        model = build_variant("CL2S", seed=0).double()
        gen = torch.Generator().manual_seed(1)
        x = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)
        gt = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)

        def loss_value():
            fused, _, comps = model(x)
            return training_loss(fused, comps, gt, aux_weight=0.5)

        model.zero_grad()
        loss_value().backward()
        param = model.heads["SIN"].r_layers[2].weight
        analytic = param.grad
        h = 1e-6
        rng = np.random.default_rng(2)
        flat = param.data.view(-1)
        checked = 0
        for idx in rng.choice(flat.numel(), size=5, replace=False):
            orig = flat[idx].item()
            flat[idx] = orig + h
            plus = loss_value().item()
            flat[idx] = orig - h
            minus = loss_value().item()
            flat[idx] = orig
            fd = (plus - minus) / (2 * h)
            ref = analytic.view(-1)[idx].item()
            if max(abs(ref), abs(fd)) < 1e-12:
                continue
            assert abs(fd - ref) / max(abs(ref), abs(fd)) < 1e-2
            checked += 1
        assert checked >= 3


class TestTrainLoop:
    def test_loss_decreases_over_smoke_run(self):
        for seed in (0, 1, 2):
            result = train(_tiny_cfg(seed=seed), quiet=True)
            losses = [r["loss"] for r in result.history if "loss" in r]
            assert len(losses) == 10
            if losses[-1] < losses[0]:
                return
        pytest.fail("loss never decreased across 3 seeds")

    def test_seeded_determinism(self):
        h1 = train(_tiny_cfg(seed=3), quiet=True).history
        h2 = train(_tiny_cfg(seed=3), quiet=True).history
        assert h1 == h2

    def test_empty_dataset_fails_before_step_one(self):
        cfg = _tiny_cfg()
        cfg.synthetic_n = 0
        cfg.dataset_root = ""
        with pytest.raises(ValueError, match="zero samples"):
            train(cfg, quiet=True)

    def test_divergence_aborts_with_dump(self, tmp_path):
        cfg = _tiny_cfg(lr0=1e18, max_iters=5)
        with pytest.raises(TrainingDiverged, match="non-finite loss"):
            train(cfg, out_dir=tmp_path, quiet=True)
        dumps = list(tmp_path.glob("diverged_batch_iter*.npz"))
        assert len(dumps) == 1
        payload = np.load(dumps[0])
        assert payload["hazy"].shape[1:] == (3, 32, 32)

    def test_single_step_decreases_frozen_batch_loss(self):
        torch.manual_seed(0)
        model = build_variant("CL2S", seed=0)
        ds = make_synthetic_set(2, 32, seed=4)
        hazy = torch.from_numpy(np.stack([s.hazy for s in ds.samples]).astype(np.float32)).permute(0, 3, 1, 2)
        clear = torch.from_numpy(np.stack([s.clear for s in ds.samples]).astype(np.float32)).permute(0, 3, 1, 2)
        opt = torch.optim.Adam(model.parameters(), lr=1e-5)
        fused, _, comps = model(hazy)
        loss0 = training_loss(fused, comps, clear)
        opt.zero_grad()
        loss0.backward()
        opt.step()
        with torch.no_grad():
            fused1, _, comps1 = model(hazy)
            loss1 = training_loss(fused1, comps1, clear)
        assert loss1.item() < loss0.item()

    def test_writes_checkpoints_and_log(self, tmp_path):
        cfg = _tiny_cfg(seed=5, max_iters=4, checkpoint_every=2, eval_every=2,
                        holdout_frac=0.25)
        result = train(cfg, out_dir=tmp_path, quiet=True)
        assert (tmp_path / "checkpoint_final.pt").exists()
        assert (tmp_path / "checkpoint_000002.pt").exists()
        assert result.best_checkpoint is not None and result.best_checkpoint.exists()
        lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
        assert all(json.loads(l) for l in lines)
        assert result.best_psnr > 0


class TestCheckpoints:
    def _trained_model(self, seed=0):
        torch.manual_seed(seed)
        return build_variant("CL2S", seed=seed)

    def test_round_trip_probe_agreement(self, tmp_path):
        model = self._trained_model()
        path = save_checkpoint(model, TrainConfig(), 7, tmp_path / "m.pt")
        restored, payload = load_checkpoint(path)
        assert payload["iteration"] == 7
        gen = torch.Generator().manual_seed(9)
        x = torch.rand(1, 3, 32, 32, generator=gen)
        with torch.no_grad():
            a, _, _ = model.eval()(x)
            b, _, _ = restored(x)
        assert (a - b).abs().max() < 1e-6

    def test_cross_variant_rejected(self, tmp_path):
        model = self._trained_model()
        path = save_checkpoint(model, TrainConfig(), 0, tmp_path / "m.pt")
        with pytest.raises(CheckpointError, match="incompatible checkpoint"):
            load_checkpoint(path, variant="DM2F")

    def test_corrupted_file_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError, match="corrupted checkpoint"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="does not exist"):
            load_checkpoint(tmp_path / "nope.pt")

    def test_restores_exact_variant_and_backbone(self, tmp_path):
        model = build_variant("FD-J1,4", seed=1)
        path = save_checkpoint(model, None, 0, tmp_path / "m.pt")
        restored, _ = load_checkpoint(path)
        assert restored.spec.name == "FD-J1,4"
        assert restored.spec.kinds == model.spec.kinds
        assert restored.backbone_config.strides == model.backbone_config.strides
