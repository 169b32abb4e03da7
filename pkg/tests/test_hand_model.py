import numpy as np
import pytest
import torch

from evhand.hand_model import (
    HandMesh,
    HandModelData,
    ManoParams,
    load_model,
    make_desk_model,
    mano_forward,
    mano_forward_torch,
    rodrigues,
    save_model,
    to_coarse,
)


@pytest.fixture(scope="module")
def model():
    return make_desk_model(np.random.default_rng(42))


class TestDeskModel:
    def test_invariants_hold(self, model):
        # construction re-validates everything in __post_init__
        HandModelData(**model.__dict__)

    def test_same_seed_same_model(self):
        a = make_desk_model(np.random.default_rng(7))
        b = make_desk_model(np.random.default_rng(7))
        np.testing.assert_array_equal(a.template, b.template)
        np.testing.assert_array_equal(a.j_reg, b.j_reg)
        np.testing.assert_array_equal(a.coarse_index, b.coarse_index)

    def test_rest_pose_is_template(self, model):
        mesh = mano_forward(ManoParams.rest(), model)
        np.testing.assert_allclose(mesh.vertices, model.template, atol=1e-6)

    def test_archive_round_trip(self, model, tmp_path):
        path = tmp_path / "hand.npz"
        save_model(path, model)
        back = load_model(path)
        np.testing.assert_array_equal(back.template, model.template)
        np.testing.assert_array_equal(back.skin_weights, model.skin_weights)
        assert back.upsample_residual == model.upsample_residual

    def test_loader_rejects_broken_archive(self, model, tmp_path):
        path = tmp_path / "broken.npz"
        bad = dict(model.__dict__)
        bad["skin_weights"] = bad["skin_weights"] * 2.0  # rows no longer sum to 1
        np.savez_compressed(
            path, **{k: np.asarray(v) for k, v in bad.items()}
        )
        with pytest.raises(ValueError, match="skin_weights"):
            load_model(path)

    def test_loader_rejects_missing_array(self, model, tmp_path):
        path = tmp_path / "partial.npz"
        arrays = {k: np.asarray(v) for k, v in model.__dict__.items()}
        arrays.pop("j_reg")
        np.savez_compressed(path, **arrays)
        with pytest.raises(ValueError, match="j_reg"):
            load_model(path)


class TestForward:
    def test_global_rotation_equivariance(self, model):
        rng = np.random.default_rng(0)
        theta = np.zeros(48)
        theta[:3] = rng.normal(0, 0.8, 3)
        mesh = mano_forward(ManoParams(theta, np.zeros(10)), model)
        rest = mano_forward(ManoParams.rest(), model)
        rot = rodrigues(torch.as_tensor(theta[:3], dtype=torch.float64)).numpy()
        root = rest.joints[0]
        expected = (rest.vertices - root) @ rot.T + root
        np.testing.assert_allclose(mesh.vertices, expected, atol=1e-5)

    def test_joints_match_matrix_oracle(self, model):
        rng = np.random.default_rng(1)
        for _ in range(5):
            params = ManoParams(rng.normal(0, 0.3, 48), rng.normal(0, 0.5, 10))
            mesh = mano_forward(params, model)
            oracle = np.zeros((21, 3))
            for j in range(21):
                for v in range(778):
                    oracle[j] += model.j_reg[j, v] * mesh.vertices[v]
            np.testing.assert_allclose(mesh.joints, oracle, atol=1e-6)

    def test_regression_linearity(self, model):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(778, 3))
        w = rng.normal(size=(778, 3))
        a, b = 2.5, -0.7
        left = model.j_reg @ (a * v + b * w)
        right = a * (model.j_reg @ v) + b * (model.j_reg @ w)
        np.testing.assert_allclose(left, right, atol=1e-9)

    def test_shape_blend_moves_vertices(self, model):
        mesh = mano_forward(ManoParams(np.zeros(48), np.ones(10) * 0.5), model)
        assert not np.allclose(mesh.vertices, model.template)

    def test_rejects_bad_shapes(self, model):
        with pytest.raises(ValueError):
            ManoParams(np.zeros(47), np.zeros(10))
        with pytest.raises(ValueError):
            ManoParams(np.zeros(48), np.zeros(9))
        with pytest.raises(ValueError):
            ManoParams(np.full(48, np.nan), np.zeros(10))


class TestGradients:
    @staticmethod
    def scalar_fn(theta, beta, model, probe):
        v, j = mano_forward_torch(theta, beta, model)
        return (v * probe[0]).sum() + (j * probe[1]).sum()

    def test_finite_difference_agreement(self, model):
        rng = np.random.default_rng(3)
        step = 1e-4
        for trial in range(20):
            theta0 = rng.normal(0, 0.4, 48)
            beta0 = rng.normal(0, 0.5, 10)
            probe = (
                torch.as_tensor(rng.normal(size=(778, 3))),
                torch.as_tensor(rng.normal(size=(21, 3))),
            )
            theta = torch.tensor(theta0, dtype=torch.float64, requires_grad=True)
            beta = torch.tensor(beta0, dtype=torch.float64, requires_grad=True)
            out = self.scalar_fn(theta, beta, model, probe)
            out.backward()

            for vec, grad, base in (
                (0, theta.grad.numpy(), theta0),
                (1, beta.grad.numpy(), beta0),
            ):
                idx = rng.integers(0, len(base), size=4)
                for i in idx:
                    plus = base.copy()
                    minus = base.copy()
                    plus[i] += step
                    minus[i] -= step
                    if vec == 0:
                        f_p = self.scalar_fn(
                            torch.as_tensor(plus), torch.as_tensor(beta0), model, probe
                        )
                        f_m = self.scalar_fn(
                            torch.as_tensor(minus), torch.as_tensor(beta0), model, probe
                        )
                    else:
                        f_p = self.scalar_fn(
                            torch.as_tensor(theta0), torch.as_tensor(plus), model, probe
                        )
                        f_m = self.scalar_fn(
                            torch.as_tensor(theta0), torch.as_tensor(minus), model, probe
                        )
                    fd = float(f_p - f_m) / (2 * step)
                    rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8)
                    assert rel < 1e-4, (trial, vec, i, fd, grad[i])


class TestCoarse:
    def test_gather_semantics(self, model):
        rng = np.random.default_rng(11)
        vertices = rng.normal(size=(778, 3))
        mesh = HandMesh(vertices, model.j_reg @ vertices)
        coarse = to_coarse(mesh, model)
        assert coarse.shape == (195, 3)
        np.testing.assert_array_equal(coarse, vertices[model.coarse_index])

    def test_rest_pose_rows_match_template(self, model):
        mesh = mano_forward(ManoParams.rest(), model)
        np.testing.assert_allclose(
            to_coarse(mesh, model), model.template[model.coarse_index], atol=1e-6
        )

    def test_upsample_reconstruction_bound(self, model):
        mesh = HandMesh(model.template, model.j_reg @ model.template)
        recon = model.upsample_matrix @ to_coarse(mesh, model)
        err = np.abs(recon - model.template).max()
        assert err <= model.upsample_residual + 1e-12

    def test_gather_ignores_nonselected_vertices(self, model):
        rng = np.random.default_rng(4)
        mesh = mano_forward(ManoParams.rest(), model)
        vertices = mesh.vertices.copy()
        outside = np.setdiff1d(np.arange(778), model.coarse_index)
        permuted = vertices.copy()
        permuted[outside] = vertices[rng.permutation(outside)]
        shuffled = HandMesh(permuted, mesh.joints)
        np.testing.assert_array_equal(
            to_coarse(shuffled, model), to_coarse(mesh, model)
        )
