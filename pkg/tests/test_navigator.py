import numpy as np
import pytest
import torch

from disco.errors import ConfigError, DegenerateParameterError, InputError, UnsupportedError
from disco.navigator import Navigator, init_navigator, project_constraints, project_matrix

from conftest import identity_navigator


def seeded(kind, D, latent, seed=0):
    return init_navigator(kind, D, latent, torch.Generator().manual_seed(seed), torch.float64)


class TestShift:
    def test_identity_matrix(self):
        nav = identity_navigator(4)
        out = nav.shift(1, 0.5)
        assert torch.equal(out, torch.tensor([0.0, 0.5, 0.0, 0.0], dtype=torch.float64))

    @pytest.mark.parametrize("kind", ["unit_columns", "orthonormal", "mlp3"])
    def test_zero_shift(self, kind):
        nav = seeded(kind, 3, 5)
        assert torch.count_nonzero(nav.shift(2, 0.0)) == 0

    @pytest.mark.parametrize("kind", ["unit_columns", "orthonormal"])
    def test_homogeneous(self, kind):
        nav = seeded(kind, 3, 5)
        assert torch.equal(nav.shift(1, 2 * 0.37), 2 * nav.shift(1, 0.37))

    def test_out_of_range(self):
        nav = seeded("unit_columns", 3, 5)
        for d in (-1, 3):
            with pytest.raises(InputError):
                nav.shift(d, 1.0)
        with pytest.raises(InputError):
            nav.shift(0, float("nan"))

    def test_batched_matches_single(self):
        nav = seeded("mlp3", 4, 6)
        batch = nav(torch.tensor([0, 3, 1]), torch.tensor([0.5, -1.0, 2.0]))
        for row, (d, e) in zip(batch, [(0, 0.5), (3, -1.0), (1, 2.0)]):
            assert torch.allclose(row, nav.shift(d, e), atol=1e-15)

    @pytest.mark.parametrize("kind", ["unit_columns", "orthonormal", "mlp3"])
    def test_jacobian_finite_differences(self, kind):
        rng = np.random.default_rng(3)
        nav = seeded(kind, 4, 6)
        params = list(nav.parameters())
        worst = 0.0
        for _ in range(100):
            d, eps = int(rng.integers(4)), float(rng.uniform(-3, 3))
            out_idx = int(rng.integers(6))
            p = params[int(rng.integers(len(params)))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            (grad,) = torch.autograd.grad(nav.shift(d, eps)[out_idx], p, allow_unused=True)
            an = 0.0 if grad is None else float(grad[idx])
            h = 1e-6
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + h
                up = float(nav.shift(d, eps)[out_idx])
                p[idx] = orig - h
                down = float(nav.shift(d, eps)[out_idx])
                p[idx] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - an) / max(1.0, abs(fd), abs(an)))
        assert worst < 1e-4


class TestProjection:
    def test_unit_column_rescale(self):
        m = np.zeros((5, 2))
        m[:2, 0] = (3.0, 4.0)
        m[4, 1] = 2.0
        out = project_matrix(m, "unit_columns")
        np.testing.assert_allclose(out[:, 0], [0.6, 0.8, 0, 0, 0])
        np.testing.assert_allclose(out[:, 1], [0, 0, 0, 0, 1])

    def test_zero_column(self):
        with pytest.raises(DegenerateParameterError):
            project_matrix(np.zeros((3, 2)), "unit_columns")

    def test_orthonormal_random(self, rng):
        out = project_matrix(rng.standard_normal((8, 4)), "orthonormal")
        np.testing.assert_allclose(out.T @ out, np.eye(4), atol=1e-8)

    def test_orthonormal_unchanged(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
        np.testing.assert_allclose(project_matrix(q, "orthonormal"), q, atol=1e-10)

    @pytest.mark.parametrize("kind", ["unit_columns", "orthonormal"])
    def test_idempotent(self, kind):
        nav = seeded(kind, 4, 8)
        with torch.no_grad():
            nav.matrix.mul_(1.7).add_(0.3)
        once = project_constraints(nav)
        twice = project_constraints(once)
        assert float((once.matrix - twice.matrix).detach().abs().max()) < 1e-10
        assert once.constraint_violation() < 1e-10
        assert nav.constraint_violation() > 0.1  # original untouched

    def test_mlp_has_no_projection(self):
        with pytest.raises(UnsupportedError):
            project_constraints(seeded("mlp3", 3, 3))


class TestInit:
    def test_constraints_hold_after_init(self):
        assert seeded("unit_columns", 8, 4).constraint_violation() < 1e-6
        assert seeded("orthonormal", 4, 8).constraint_violation() < 1e-5

    def test_orthonormal_needs_enough_latent_dims(self):
        with pytest.raises(ConfigError):
            seeded("orthonormal", 8, 4)

    def test_seeded(self):
        assert torch.equal(seeded("unit_columns", 8, 4, 1).matrix, seeded("unit_columns", 8, 4, 1).matrix)
        assert not torch.equal(seeded("unit_columns", 8, 4, 1).matrix, seeded("unit_columns", 8, 4, 2).matrix)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            Navigator("spline", 2, 2)
