import numpy as np
import pytest

from wahmvc import clustering_losses as cl
from wahmvc import geometry as geo
from wahmvc import lorentz_nn as nn
from wahmvc.errors import NumericalError


def small_stack(seed, input_dim=5, hidden=(6,), embed=4, lorentz=3, clusters=3):
    rng = np.random.default_rng(seed)
    return nn.init_view_encoder(rng, input_dim, hidden, embed, lorentz, clusters)


class TestDenseLayer:
    def test_identity_passthrough(self):
        layer = nn.DenseLayer(np.eye(4), np.zeros(4), "identity")
        x = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_relu_zeroes_negative_preactivations(self):
        layer = nn.DenseLayer(np.eye(2), np.array([-10.0, -10.0]), "relu")
        out = layer.forward(np.zeros((5, 2)))
        np.testing.assert_array_equal(out, np.zeros((5, 2)))

    def test_matches_matmul_oracle(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((4, 6))
        b = rng.standard_normal(4)
        x = rng.standard_normal((7, 6))
        layer = nn.DenseLayer(w, b, "identity")
        np.testing.assert_allclose(layer.forward(x), x @ w.T + b, atol=1e-12)

    def test_shape_mismatch(self):
        layer = nn.DenseLayer(np.eye(3), np.zeros(3), "relu")
        with pytest.raises(ValueError):
            layer.forward(np.zeros((2, 4)))


class TestExpMapLift:
    def test_zero_row_maps_to_origin(self):
        out = nn.lift_to_lorentz(np.zeros((1, 3)), -1.0)
        np.testing.assert_allclose(out[0], geo.origin(3), atol=1e-15)

    def test_unit_row_closed_form(self):
        out = nn.lift_to_lorentz(np.array([[1.0, 0.0]]), -1.0)
        np.testing.assert_allclose(out[0], [np.cosh(1), np.sinh(1), 0.0], atol=1e-12)

    def test_outputs_on_manifold(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((20, 5))
        out = nn.lift_to_lorentz(x, -1.0)
        assert np.max(geo.manifold_violation(out, -1.0)) <= 1e-9


class TestLorentzFc:
    def test_zero_weights_give_origin(self):
        layer = nn.LorentzFcLayer(np.zeros((3, 4)), np.zeros(3), "identity", -1.0)
        x = nn.lift_to_lorentz(np.random.default_rng(3).standard_normal((5, 3)), -1.0)
        out = layer.forward(x)
        np.testing.assert_allclose(out, np.tile(geo.origin(3), (5, 1)), atol=1e-12)

    def test_spatial_part_closed_form(self):
        layer = nn.LorentzFcLayer(np.zeros((2, 3)), np.array([1.0, 0.0]), "identity", -1.0)
        out = layer.forward(nn.lift_to_lorentz(np.zeros((1, 2)), -1.0))
        np.testing.assert_allclose(out[0], [np.sqrt(2.0), 1.0, 0.0], atol=1e-12)

    def test_outputs_on_manifold_for_random_layers(self):
        rng = np.random.default_rng(4)
        for curvature in (-1.0, -0.5, -2.0):
            layer = nn.LorentzFcLayer(
                rng.standard_normal((6, 5)), rng.standard_normal(6), "relu", curvature
            )
            x = nn.lift_to_lorentz(rng.standard_normal((8, 4)), curvature)
            out = layer.forward(x)
            assert np.max(geo.manifold_violation(out, curvature)) <= 1e-9


class TestLorentzMlr:
    def test_origin_with_zero_intercept(self):
        rng = np.random.default_rng(5)
        head = nn.LorentzMlrHead(np.zeros(3), 0.1 * rng.standard_normal((3, 4)), -1.0)
        logits = head.forward(geo.origin(4)[None, :])
        np.testing.assert_allclose(logits, np.zeros((1, 3)), atol=1e-12)

    def test_origin_closed_form(self):
        rng = np.random.default_rng(6)
        a = np.array([0.7, -1.2])
        z = rng.standard_normal((2, 3))
        head = nn.LorentzMlrHead(a, z, -1.0)
        logits = head.forward(geo.origin(3)[None, :])
        expected = -a * np.linalg.norm(z, axis=1)
        np.testing.assert_allclose(logits[0], expected, atol=1e-12)

    def test_softmax_rows(self):
        rng = np.random.default_rng(7)
        head = nn.LorentzMlrHead(rng.standard_normal(4), rng.standard_normal((4, 3)), -1.0)
        pts = geo.wrapped_normal_sample(geo.origin(3), 0.5, 10, -1.0, seed=8)
        probs = cl.soft_assignments(head.forward(pts))
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(10), atol=1e-12)
        uniform = cl.soft_assignments(np.zeros((2, 4)))
        np.testing.assert_allclose(uniform, np.full((2, 4), 0.25), atol=1e-15)

    def test_degenerate_class_rejected(self):
        head = nn.LorentzMlrHead(np.zeros(2), np.array([[0.0, 0.0], [1.0, 0.0]]), -1.0)
        with pytest.raises(NumericalError):
            head.forward(geo.origin(2)[None, :])


class TestEncoderStack:
    def test_embeddings_on_manifold_for_any_parameters(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            enc = small_stack(seed)
            x = 3.0 * rng.standard_normal((6, 5))
            z, _ = enc.forward(x)
            assert np.max(geo.manifold_violation(z, -1.0)) <= 1e-9

    def test_logits_invariant_to_time_recomputation(self):
        enc = small_stack(10)
        x = np.random.default_rng(11).standard_normal((4, 5))
        z, logits = enc.forward(x)
        z_fixed = geo.project_to_hyperboloid(z, -1.0)
        logits_fixed = enc.head.forward(z_fixed)
        np.testing.assert_allclose(logits, logits_fixed, atol=1e-9)

    def test_deterministic_forward(self):
        enc = small_stack(12)
        x = np.random.default_rng(13).standard_normal((4, 5))
        z1, l1 = enc.forward(x)
        z2, l2 = enc.forward(x)
        assert np.array_equal(z1, z2) and np.array_equal(l1, l2)

    def test_zero_upstream_gives_zero_grads(self):
        enc = small_stack(14)
        x = np.random.default_rng(15).standard_normal((3, 5))
        _, logits = enc.forward(x)
        enc.backward(np.zeros_like(logits), None)
        for _, _, grad in enc.parameters():
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_backward_before_forward_raises(self):
        enc = small_stack(16)
        with pytest.raises(RuntimeError):
            enc.backward(np.zeros((2, 3)), None)

    @pytest.mark.parametrize("seed", range(6))
    def test_parameter_gradients_match_finite_differences(self, seed):
        # linear functionals of both outputs exercise every backward path
        rng = np.random.default_rng(100 + seed)
        enc = small_stack(seed)
        x = rng.standard_normal((4, 5))
        z, logits = enc.forward(x)
        gz = rng.standard_normal(z.shape)
        gl = rng.standard_normal(logits.shape)

        def loss_with(enc):
            z, logits = enc.forward(x)
            return float(np.sum(gz * z) + np.sum(gl * logits))

        enc.zero_grads()
        enc.forward(x)
        enc.backward(gl, gz)
        h = 1e-5
        for name, param, grad in enc.parameters():
            flat_p = param.reshape(-1)
            flat_g = grad.reshape(-1)
            idx = rng.choice(flat_p.size, size=min(6, flat_p.size), replace=False)
            for i in idx:
                keep = flat_p[i]
                flat_p[i] = keep + h
                fp = loss_with(enc)
                flat_p[i] = keep - h
                fm = loss_with(enc)
                flat_p[i] = keep
                fd = (fp - fm) / (2 * h)
                denom = max(abs(fd), abs(flat_g[i]), 1e-6)
                assert abs(fd - flat_g[i]) / denom <= 1e-4, (name, i, fd, flat_g[i])


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        tensors = {
            "a.weight": rng.standard_normal((3, 4)),
            "a.bias": rng.standard_normal(3),
            "scalar": np.asarray(np.pi),
            "cube": rng.standard_normal((2, 2, 2)),
        }
        path = tmp_path / "model.wahm"
        nn.save_checkpoint(path, tensors)
        loaded = nn.load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert np.asarray(tensors[name]).shape == loaded[name].shape
            assert np.array_equal(np.asarray(tensors[name], dtype=float), loaded[name])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.wahm"
        path.write_bytes(b"NOPE!" + b"\x00" * 16)
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)

    def test_encoder_state_roundtrip(self, tmp_path):
        encoders = [small_stack(18), small_stack(19)]
        state = nn.encoders_state_dict(encoders, -1.0)
        path = tmp_path / "model.wahm"
        nn.save_checkpoint(path, state)
        rebuilt, curvature = nn.encoders_from_state(nn.load_checkpoint(path))
        assert curvature == -1.0
        x = np.random.default_rng(20).standard_normal((5, 5))
        for original, copy in zip(encoders, rebuilt):
            z0, l0 = original.forward(x)
            z1, l1 = copy.forward(x)
            assert np.array_equal(z0, z1) and np.array_equal(l0, l1)
