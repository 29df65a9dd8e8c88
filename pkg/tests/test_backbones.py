import pytest
import torch

from forgeloc.backbones import (
    Denoiser,
    DenoiserConfig,
    LatentEncoder,
    LatentEncoderConfig,
    SemanticEncoder,
    SemanticEncoderConfig,
    encode_latent,
    sinusoidal_time_embedding,
)
from forgeloc.errors import ConfigurationError, DimensionError
from forgeloc.lora import attach_qkv_adapters, trainable_fraction
from forgeloc.noise import NoiseConfig, NoisedLatentSet, make_noised_set


def rand_image(seed, size=64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(3, size, size, generator=g)


class TestLatentEncoder:
    def test_shape(self):
        cfg = LatentEncoderConfig()
        z = encode_latent(rand_image(0), cfg)
        assert z.shape == (4, 8, 8)

    def test_batched_shape(self):
        cfg = LatentEncoderConfig()
        imgs = torch.stack([rand_image(i) for i in range(3)])
        assert LatentEncoder(cfg)(imgs).shape == (3, 4, 8, 8)

    def test_frozen_deterministic(self):
        cfg = LatentEncoderConfig(weights_seed=7)
        img = rand_image(1)
        a = encode_latent(img, cfg)
        b = encode_latent(img, cfg)
        assert torch.equal(a, b)

    def test_seed_changes_weights(self):
        img = rand_image(2)
        a = encode_latent(img, LatentEncoderConfig(weights_seed=0))
        b = encode_latent(img, LatentEncoderConfig(weights_seed=1))
        assert not torch.equal(a, b)

    def test_not_constant_map(self):
        cfg = LatentEncoderConfig()
        img = rand_image(3)
        assert not torch.equal(encode_latent(img, cfg), encode_latent(0.999 * img, cfg))

    def test_indivisible_dims_raise(self):
        with pytest.raises(DimensionError):
            encode_latent(torch.rand(3, 60, 64), LatentEncoderConfig())

    def test_all_params_frozen(self):
        enc = LatentEncoder(LatentEncoderConfig())
        assert all(not p.requires_grad for p in enc.parameters())

    def test_output_bounded(self):
        z = encode_latent(rand_image(4), LatentEncoderConfig())
        assert z.abs().max() <= 1.0

    def test_bad_factor_rejected(self):
        with pytest.raises(ConfigurationError):
            LatentEncoderConfig(downsample_factor=6)


def make_noised(seed=0, mechanism="rf", levels=(0.25, 0.5, 0.75), cz=4, grid=8):
    g = torch.Generator().manual_seed(seed)
    z0 = torch.randn(cz, grid, grid, generator=g)
    return make_noised_set(z0, NoiseConfig(mechanism=mechanism, levels=levels), g)


class TestDenoiser:
    def test_consolidation_shape_trace(self):
        # 3 levels x 32-channel taps -> concat 96 -> 1x1 projection to 64
        cfg = DenoiserConfig(width=32, depth=3, out_channels=64)
        den = Denoiser(cfg, in_channels=4, grid_size=8, n_levels=3)
        assert den.consolidate.in_channels == 96
        out = den(make_noised(0))
        assert out.shape == (64, 8, 8)

    def test_single_level(self):
        cfg = DenoiserConfig(width=16, depth=2, out_channels=8)
        den = Denoiser(cfg, in_channels=4, grid_size=8, n_levels=1)
        out = den(make_noised(1, levels=(0.5,)))
        assert out.shape == (8, 8, 8)

    def test_empty_set_raises(self):
        den = Denoiser(DenoiserConfig(width=16, depth=2, out_channels=8),
                       in_channels=4, grid_size=8, n_levels=3)
        g = torch.Generator().manual_seed(0)
        empty = NoisedLatentSet(entries=[], source=torch.randn(4, 8, 8, generator=g))
        with pytest.raises(ConfigurationError):
            den(empty)

    def test_level_count_mismatch_raises(self):
        den = Denoiser(DenoiserConfig(width=16, depth=2, out_channels=8),
                       in_channels=4, grid_size=8, n_levels=3)
        with pytest.raises(DimensionError):
            den(make_noised(2, levels=(0.5,)))

    def test_deterministic_function_of_input(self):
        den = Denoiser(DenoiserConfig(width=16, depth=2, out_channels=8),
                       in_channels=4, grid_size=8, n_levels=3, seed=5)
        noised = make_noised(3)
        assert torch.equal(den(noised), den(noised))

    def test_time_embedding_sensitivity(self):
        den = Denoiser(DenoiserConfig(width=16, depth=2, out_channels=8),
                       in_channels=4, grid_size=8, n_levels=1)
        g = torch.Generator().manual_seed(4)
        z = torch.randn(4, 8, 8, generator=g)
        a = den(NoisedLatentSet(entries=[(0.3, z)], source=z))
        b = den(NoisedLatentSet(entries=[(0.7, z)], source=z))
        assert (a - b).abs().max() > 0

    def test_batched(self):
        den = Denoiser(DenoiserConfig(width=16, depth=2, out_channels=8),
                       in_channels=4, grid_size=8, n_levels=2, seed=1)
        g = torch.Generator().manual_seed(5)
        z0 = torch.randn(3, 4, 8, 8, generator=g)
        noised = make_noised_set(z0, NoiseConfig(levels=(0.3, 0.6)), g)
        assert den(noised).shape == (3, 8, 8, 8)

    def test_tap_layer_default_penultimate(self):
        assert DenoiserConfig(depth=3).tap_index == 1
        assert DenoiserConfig(depth=1).tap_index == 0
        assert DenoiserConfig(depth=4, tap_layer=3).tap_index == 3

    def test_bad_tap_rejected(self):
        with pytest.raises(ConfigurationError):
            DenoiserConfig(depth=2, tap_layer=2)

    def test_qkv_adapters_attach(self):
        den = Denoiser(DenoiserConfig(width=16, depth=3, out_channels=8),
                       in_channels=4, grid_size=8, n_levels=3)
        reg = attach_qkv_adapters(den, rank_r=2, alpha=2.0)
        assert len(reg.adapters) == 9
        out = den(make_noised(6))
        assert out.shape == (8, 8, 8)


class TestSemanticEncoder:
    def test_patch_grid_shape(self):
        cfg = SemanticEncoderConfig(patch_size=8, embed_dim=32, depth=2, out_channels=16)
        enc = SemanticEncoder(cfg, image_size=64)
        assert enc(rand_image(0)).shape == (16, 8, 8)

    def test_indivisible_raises(self):
        cfg = SemanticEncoderConfig(patch_size=8)
        enc = SemanticEncoder(cfg, image_size=64)
        with pytest.raises(DimensionError):
            enc(torch.rand(3, 60, 64))

    def test_zero_init_adapters_keep_output(self):
        cfg = SemanticEncoderConfig(patch_size=8, embed_dim=32, depth=2, out_channels=16)
        plain = SemanticEncoder(cfg, image_size=64, seed=9)
        adapted = SemanticEncoder(cfg, image_size=64, seed=9)
        attach_qkv_adapters(adapted, rank_r=4, alpha=4.0)
        img = rand_image(1)
        assert torch.allclose(plain(img), adapted(img), atol=1e-6)

    def test_channel_permutation_changes_output(self):
        cfg = SemanticEncoderConfig(patch_size=8, embed_dim=32, depth=2, out_channels=16)
        enc = SemanticEncoder(cfg, image_size=64)
        img = rand_image(2)
        assert not torch.allclose(enc(img), enc(img[[2, 0, 1]]), atol=1e-5)

    def test_batched(self):
        cfg = SemanticEncoderConfig(patch_size=8, embed_dim=32, depth=2, out_channels=16)
        enc = SemanticEncoder(cfg, image_size=64)
        imgs = torch.stack([rand_image(i) for i in range(2)])
        assert enc(imgs).shape == (2, 16, 8, 8)

    def test_trainable_fraction_under_5_percent(self):
        enc = SemanticEncoder(SemanticEncoderConfig(), image_size=64)
        reg = attach_qkv_adapters(enc, rank_r=4, alpha=4.0)
        assert trainable_fraction(reg, enc) < 0.05


class TestTimeEmbedding:
    def test_shape_and_determinism(self):
        e = sinusoidal_time_embedding(0.37, 64)
        assert e.shape == (64,)
        assert torch.equal(e, sinusoidal_time_embedding(0.37, 64))

    def test_distinct_levels_distinct_embeddings(self):
        a = sinusoidal_time_embedding(0.5, 64)
        b = sinusoidal_time_embedding(0.75, 64)
        assert (a - b).abs().max() > 0.1
