from pathlib import Path

import numpy as np
import pytest
import torch

from disco.backend import (
    LatentCode,
    factors_to_latent,
    generate,
    generate_array,
    load_adapter,
    make_oracle_generator,
    oracle_true_factors,
    parameter_hash,
    pattern_weights,
    sample_latent,
    sample_latent_array,
    true_factors_array,
)
from disco.errors import ConfigError, InputError, UnsupportedError

GOLDEN = Path(__file__).parent / "data" / "shapes_k4_center.npy"


def codes(gen, rows, tag="Z"):
    return [LatentCode(np.asarray(r, dtype=np.float64), tag) for r in rows]


class TestLatentCode:
    def test_rejects_non_finite(self):
        with pytest.raises(InputError):
            LatentCode(np.array([0.0, np.nan]), "Z")

    def test_rejects_unknown_tag(self):
        with pytest.raises(ConfigError):
            LatentCode(np.zeros(2), "Q")


class TestGenerate:
    def test_identity_oracle_pattern_weights_equal_factors(self, identity_gen, rng):
        f = rng.random((5, 4))
        images = generate(identity_gen, codes(identity_gen, f))
        assert images.shape == (5, 16, 16, 1)
        np.testing.assert_allclose(pattern_weights(identity_gen, images), f, atol=1e-12)

    def test_deterministic(self, entangled_gen, rng):
        z = sample_latent(entangled_gen, 3, rng)
        a = generate(entangled_gen, z + z)
        assert np.array_equal(a[:3], a[3:])
        assert np.array_equal(a, generate(entangled_gen, z + z))

    def test_pixel_range(self, rng):
        for kind in ("oracle_linear", "oracle_shapes"):
            gen = make_oracle_generator(4, kind, 3, True)
            img = generate_array(gen, rng.standard_normal((8, 4)) * 3)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_space_tag_mismatch(self, identity_gen):
        with pytest.raises(ConfigError):
            generate(identity_gen, codes(identity_gen, [[0.1] * 4], tag="W"))

    def test_empty_batch_and_bad_length(self, identity_gen):
        with pytest.raises(InputError):
            generate(identity_gen, [])
        with pytest.raises(InputError):
            generate(identity_gen, codes(identity_gen, [[0.1] * 3]))

    def test_non_finite_array(self, identity_gen):
        with pytest.raises(InputError):
            generate_array(identity_gen, np.array([[0.0, np.inf, 0.0, 0.0]]))

    def test_shapes_golden_image(self):
        gen = make_oracle_generator(4, "oracle_shapes", 0, False)
        img = generate_array(gen, np.array([[0.5, 0.5, 0.5, 0.0]]))[0]
        assert img.shape == (64, 64, 3)
        golden = np.load(GOLDEN)
        assert img.dtype == golden.dtype
        assert np.array_equal(img, golden)

    def test_shapes_golden_semantics(self):
        img = np.load(GOLDEN)
        # centred square: symmetric mask, red (hue 0) at the centre, dark background in the corners
        centre = img[32, 32]
        np.testing.assert_allclose(centre, [1.0, 0.0, 0.0], atol=1e-6)
        assert img[0, 0].max() < 1e-3
        red = img[:, :, 0]
        np.testing.assert_allclose(red, red[::-1, ::-1], atol=1e-12)
        inside = (red > 0.5).sum(axis=0).max()
        assert 16 <= inside <= 24  # half-size 0.5 * (8 + 24 * 0.5) = 10 px


class TestSampling:
    def test_reproducible(self, entangled_gen):
        a = sample_latent(entangled_gen, 3, np.random.default_rng(7))
        b = sample_latent(entangled_gen, 3, np.random.default_rng(7))
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))

    def test_count_zero(self, entangled_gen, rng):
        with pytest.raises(InputError):
            sample_latent(entangled_gen, 0, rng)

    def test_standard_normal_prior_moments(self, tmp_path):
        gen = load_adapter(_write_adapter(tmp_path))
        z = sample_latent_array(gen, 10_000, np.random.default_rng(0))
        assert np.all(np.abs(z.mean(axis=0)) < 0.05)
        assert np.all(np.abs(z.var(axis=0) - 1.0) < 0.1)

    def test_factor_prior_is_uniform_box(self, entangled_gen, rng):
        f = true_factors_array(entangled_gen, sample_latent_array(entangled_gen, 5000, rng))
        assert f.min() >= 0.0 and f.max() <= 1.0
        np.testing.assert_allclose(f.mean(axis=0), 0.5, atol=0.02)


class TestOracle:
    def test_rotation_orthogonal(self):
        gen = make_oracle_generator(2, "oracle_linear", 13, True)
        R = gen.mixing
        np.testing.assert_allclose(R.T @ R, np.eye(2), atol=1e-10)
        assert not np.allclose(np.abs(R), np.eye(2))

    def test_round_trip(self, entangled_gen, rng):
        f = rng.random((20, 4))
        z = factors_to_latent(entangled_gen, f)
        back = np.stack([oracle_true_factors(entangled_gen, LatentCode(row, "Z")) for row in z])
        np.testing.assert_allclose(back, f, atol=1e-10)

    def test_identity_axis_changes_one_factor(self, rng):
        gen = make_oracle_generator(2, "oracle_linear", 0, False)
        z = np.array([0.3, 0.6])
        for k in range(2):
            moved = z.copy()
            moved[k] += 0.2
            delta = true_factors_array(gen, moved)[0] - true_factors_array(gen, z)[0]
            assert delta[k] == pytest.approx(0.2)
            assert np.all(np.delete(delta, k) == 0)

    def test_mixing_is_seeded(self):
        a = make_oracle_generator(4, "oracle_linear", 5, True).mixing
        b = make_oracle_generator(4, "oracle_linear", 5, True).mixing
        c = make_oracle_generator(4, "oracle_linear", 6, True).mixing
        assert np.array_equal(a, b) and not np.allclose(a, c)

    def test_bad_arguments(self):
        with pytest.raises(UnsupportedError):
            make_oracle_generator(4, "stylegan")
        with pytest.raises(ConfigError):
            make_oracle_generator(9)
        with pytest.raises(ConfigError):
            make_oracle_generator(1)

    def test_true_factors_unsupported_for_adapter(self, tmp_path):
        gen = load_adapter(_write_adapter(tmp_path))
        with pytest.raises(UnsupportedError):
            oracle_true_factors(gen, LatentCode(np.zeros(3), "Z"))

    def test_render_is_differentiable_but_frozen(self, entangled_gen):
        z = torch.zeros(2, 4, dtype=torch.float64, requires_grad=True)
        entangled_gen.render(z + 0.1).sum().backward()
        assert z.grad is not None and torch.any(z.grad != 0)
        assert all(not p.requires_grad for p in entangled_gen.renderer.parameters())


class _TinyGenerator(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.fc = torch.nn.Linear(3, 8 * 8)

    def forward(self, z):
        return torch.tanh(self.fc(z))


def _write_adapter(root, prior=None):
    import json

    torch.manual_seed(0)
    torch.jit.script(_TinyGenerator()).save(str(root / "generator.pt"))
    manifest = {"latent_dim": 3, "latent_space_tag": "Z", "image_shape": [8, 8, 1], "kind": "torchscript",
                "output_range": [-1, 1]}
    if prior:
        manifest["prior"] = prior
    (root / "manifest.json").write_text(json.dumps(manifest))
    return root


class TestAdapter:
    def test_loads_and_renders(self, tmp_path, rng):
        gen = load_adapter(_write_adapter(tmp_path))
        assert gen.kind == "external_adapter" and gen.latent_dim == 3
        img = generate(gen, sample_latent(gen, 4, rng))
        assert img.shape == (4, 8, 8, 1) and img.min() >= 0 and img.max() <= 1

    def test_missing_fields(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"latent_dim": 3}')
        with pytest.raises(ConfigError):
            load_adapter(tmp_path)

    def test_unknown_backend(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            '{"latent_dim": 3, "latent_space_tag": "Z", "image_shape": [8, 8, 1], "kind": "onnx"}'
        )
        with pytest.raises(UnsupportedError):
            load_adapter(tmp_path)

    def test_w_space_needs_mapping(self, tmp_path):
        _write_adapter(tmp_path, prior="mapped_normal")
        with pytest.raises(ConfigError):
            load_adapter(tmp_path)


def test_parameter_hash_stable(entangled_gen):
    assert parameter_hash(entangled_gen) == parameter_hash(make_oracle_generator(4, "oracle_linear", 13, True))
    assert parameter_hash(entangled_gen) != parameter_hash(make_oracle_generator(4, "oracle_linear", 14, True))
