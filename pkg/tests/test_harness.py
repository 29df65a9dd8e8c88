import json

import pytest
import torch

from forgeloc.config import (ExperimentConfig, apply_overrides, config_from_dict,
                             config_hash, config_to_dict, load_config, save_config,
                             stable_seed)
from forgeloc.errors import ConfigurationError, ForgeLocError, FormatError
from forgeloc.losses import bce_loss, dice_loss
from forgeloc.model import ForgeryLocalizer, checkpoint_tensors, load_checkpoint_tensors
from forgeloc.train import (ensure_dataset, evaluate_checkpoint, evaluate_samples,
                            load_checkpoint, param_checksums, predict_masks,
                            samples_to_tensors, train)
from forgeloc.forgegen import read_dataset


def micro_dict(**updates):
    d = config_to_dict(ExperimentConfig())
    d["dataset"]["counts"] = {"train": 12, "test": 6}
    d["dataset"]["image_size"] = 32
    d["denoiser"].update(width=24, depth=2, out_channels=16, time_embed_dim=16)
    d["semantic"].update(embed_dim=24, depth=2, out_channels=16)
    d["fusion"].update(proj_channels=16, fuse_channels=16, groupnorm_groups=4)
    d["head"].update(mid_channels=8)
    d["train"].update(epochs=1, batch_size=4)
    d["data_dir"] = "data/micro"
    d["output_dir"] = "runs/micro"
    for key, value in updates.items():
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return d


def micro_config(**updates):
    return config_from_dict(micro_dict(**updates))


class TestConfig:
    def test_round_trip(self):
        cfg = micro_config()
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = micro_config()
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    def test_hash_stable_and_sensitive(self):
        a = config_hash(micro_config())
        b = config_hash(micro_config())
        c = config_hash(micro_config(seed=99))
        assert a == b
        assert a != c

    def test_overrides(self):
        d = apply_overrides(micro_dict(), ["train.epochs=7", "noise.mechanism=zero",
                                           "output_dir=runs/x"])
        cfg = config_from_dict(d)
        assert cfg.train.epochs == 7
        assert cfg.noise.mechanism == "zero"
        assert cfg.output_dir == "runs/x"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            config_from_dict(micro_dict(**{"denoiser.banana": 1}))

    def test_upsample_must_match_factor(self):
        with pytest.raises(ConfigurationError):
            micro_config(**{"head.upsample_scale": 4})

    def test_bad_branch_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            micro_config(forensic_branch="disabled")


class TestModel:
    def test_forward_contract(self):
        cfg = micro_config()
        model = ForgeryLocalizer(cfg)
        g = torch.Generator().manual_seed(0)
        img = torch.rand(3, 32, 32, generator=g)
        mask = model(img, torch.Generator().manual_seed(1))
        assert mask.shape == (1, 32, 32)
        assert (mask > 0).all() and (mask < 1).all()

    def test_forensic_removed_ignores_noise(self):
        cfg = micro_config(forensic_branch="removed")
        model = ForgeryLocalizer(cfg)
        g = torch.Generator().manual_seed(0)
        img = torch.rand(2, 3, 32, 32, generator=g)
        a = model(img, torch.Generator().manual_seed(1))
        b = model(img, torch.Generator().manual_seed(2))
        assert torch.equal(a, b)

    def test_zero_noise_mechanism_runs(self):
        cfg = micro_config(**{"noise.mechanism": "zero"})
        model = ForgeryLocalizer(cfg)
        img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(3))
        a = model(img, torch.Generator().manual_seed(1))
        b = model(img, torch.Generator().manual_seed(2))
        assert torch.equal(a, b)  # zero mechanism draws no noise

    def test_adapters_identity_at_init(self):
        img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(4))
        rng_seed = 7
        tuned = ForgeryLocalizer(micro_config())
        frozen = ForgeryLocalizer(micro_config(forensic_branch="frozen",
                                               semantic_branch="frozen"))
        a = tuned(img, torch.Generator().manual_seed(rng_seed))
        b = frozen(img, torch.Generator().manual_seed(rng_seed))
        assert torch.allclose(a, b, atol=1e-5)

    def test_trainable_policy(self):
        model = ForgeryLocalizer(micro_config())
        trainable = {n for n, p in model.named_parameters() if p.requires_grad}
        assert any(n.startswith("fuse.") for n in trainable)
        assert any(n.startswith("head.") for n in trainable)
        assert "sd.consolidate.weight" in trainable
        assert all(n.endswith(".A") or n.endswith(".B") or "consolidate" in n
                   for n in trainable if n.startswith("sd."))
        assert not any(n.startswith("ev.") for n in trainable)

    def test_frozen_branches_have_no_trainable_params(self):
        model = ForgeryLocalizer(micro_config(forensic_branch="frozen",
                                              semantic_branch="frozen"))
        trainable = {n for n, p in model.named_parameters() if p.requires_grad}
        assert all(n.startswith(("fuse.", "head.")) for n in trainable)

    def test_checkpoint_tensor_names(self):
        model = ForgeryLocalizer(micro_config())
        tensors = checkpoint_tensors(model)
        assert any(k.startswith("lora.sam.") and k.endswith(".A") for k in tensors)
        assert any(k.startswith("lora.sd.") and k.endswith(".B") for k in tensors)
        assert not any(".base." in k for k in tensors)
        roundtrip = ForgeryLocalizer(micro_config(seed=123))
        load_checkpoint_tensors(roundtrip, tensors)
        img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(5))
        a = model(img, torch.Generator().manual_seed(9))
        b = roundtrip(img, torch.Generator().manual_seed(9))
        assert torch.equal(a, b)


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("FORGELOC_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


class TestTraining:
    def test_smoke_writes_checkpoints_and_logs(self, workdir):
        result = train(micro_config())
        run = workdir / "runs/micro"
        assert (run / "checkpoint_best.pt").is_file()
        assert (run / "checkpoint_last.pt").is_file()
        assert (run / "train_steps.csv").read_text().startswith("step,epoch,bce")
        assert (run / "epochs.csv").read_text().count("\n") == 2  # header + 1 epoch
        assert 0.0 <= result["best_val_f1"] <= 1.0

    def test_frozen_sets_unchanged_trainable_changed(self, workdir):
        cfg = micro_config()
        before_model = ForgeryLocalizer(cfg)
        before = param_checksums(before_model)
        train(cfg)
        model, _, _ = load_checkpoint(workdir / "runs/micro/checkpoint_last.pt")
        after = param_checksums(model)
        frozen_names = [n for n, p in model.named_parameters() if not p.requires_grad]
        trainable_names = [n for n, p in model.named_parameters() if p.requires_grad]
        assert frozen_names and trainable_names
        for n in frozen_names:
            assert before[n] == after[n], f"frozen param {n} moved"
        assert any(before[n] != after[n] for n in trainable_names)

    def test_overfit_single_batch(self, workdir):
        cfg = micro_config()
        ensure_dataset(cfg)
        samples = read_dataset(workdir / "data/micro", split="train")[:4]
        images, masks = samples_to_tensors(samples)
        model = ForgeryLocalizer(cfg)
        opt = torch.optim.Adam(model.trainable_parameters(), lr=1e-3)
        rng = torch.Generator().manual_seed(0)
        losses = []
        for _ in range(51):
            pred = model(images, rng)
            loss = 0.5 * bce_loss(pred, masks) + 0.5 * dice_loss(pred, masks)
            losses.append(loss.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
        assert losses[50] < losses[0]

    def test_nan_aborts_with_diagnostic(self, workdir):
        cfg = micro_config()
        ensure_dataset(cfg)
        samples = read_dataset(workdir / "data/micro", split="train")[:4]
        images, masks = samples_to_tensors(samples)
        model = ForgeryLocalizer(cfg)
        with torch.no_grad():
            model.fuse.out.weight[0, 0, 0, 0] = float("nan")
        rng = torch.Generator().manual_seed(0)
        pred = model(images, rng)
        l_bce = bce_loss(pred, masks)
        assert not torch.isfinite(l_bce)
        from forgeloc.train import _first_nan_name
        name = _first_nan_name(model, pred, {"bce": l_bce})
        assert name == "bce"

    def test_nan_param_named(self, workdir):
        cfg = micro_config()
        model = ForgeryLocalizer(cfg)
        with torch.no_grad():
            model.fuse.out.weight[0, 0, 0, 0] = float("nan")
        from forgeloc.train import _first_nan_name
        name = _first_nan_name(model, torch.zeros(1), {"bce": torch.tensor(1.0)})
        assert name == "fuse.out.weight"


class TestEvaluate:
    def test_deterministic_repeat(self, workdir):
        result = train(micro_config())
        a = evaluate_checkpoint(result["best_checkpoint"], split="test")
        b = evaluate_checkpoint(result["best_checkpoint"], split="test")
        assert a.to_json() == b.to_json()

    def test_mask_dumps_written(self, workdir):
        result = train(micro_config())
        evaluate_checkpoint(result["best_checkpoint"], split="test")
        eval_dir = workdir / "runs/micro/eval_test"
        probs = list((eval_dir / "masks_prob").glob("*.png"))
        bins = list((eval_dir / "masks_bin").glob("*.png"))
        assert len(probs) == 6 and len(bins) == 6
        assert (eval_dir / "report.csv").is_file()
        assert (eval_dir / "report.json").is_file()

    def test_checkpoint_hash_guard(self, workdir):
        result = train(micro_config())
        path = workdir / "runs/micro/checkpoint_last.pt"
        data = torch.load(path, weights_only=False)
        data["config_hash"] = "0" * 64
        torch.save(data, path)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_expected_config_guard(self, workdir):
        result = train(micro_config())
        with pytest.raises(ConfigurationError):
            load_checkpoint(result["best_checkpoint"],
                            expect_cfg=micro_config(seed=55))

    def test_authentic_only_empty_predictions_score_one(self, workdir):
        cfg = micro_config(**{"dataset.counts": {"test": 4},
                              "dataset.mix": {"authentic": 1.0},
                              "data_dir": "data/authentic"})
        ensure_dataset(cfg)
        samples = read_dataset(workdir / "data/authentic", split="test")
        model = ForgeryLocalizer(cfg)
        with torch.no_grad():  # force confident empty predictions
            model.head.conv2.weight.zero_()
            model.head.conv2.bias.fill_(-10.0)
        report = evaluate_samples(model, cfg, samples)
        assert report.weighted_f1 == 1.0
        assert report.weighted_iou == 1.0


class TestDeterminism:
    def test_train_eval_repeat_identical_csvs(self, workdir):
        cfg_a = micro_config(output_dir="runs/det_a")
        cfg_b = micro_config(output_dir="runs/det_b")
        train(cfg_a)
        train(cfg_b)
        for name in ("train_steps.csv", "epochs.csv"):
            a = (workdir / "runs/det_a" / name).read_bytes()
            b = (workdir / "runs/det_b" / name).read_bytes()
            assert a == b, name
        ra = evaluate_checkpoint(workdir / "runs/det_a/checkpoint_last.pt")
        rb = evaluate_checkpoint(workdir / "runs/det_b/checkpoint_last.pt")
        assert ra.to_csv() == rb.to_csv()
