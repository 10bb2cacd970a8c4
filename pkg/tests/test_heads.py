import numpy as np
import pytest

import oracles
from cico.heads import (
    AnchorConfig,
    CmhWeights,
    ConvLayerSpec,
    CphConfig,
    CphWeights,
    anchor_count,
    cmh_forward,
    conv_forward,
    cph_forward,
    decode_boxes,
    deconv2x_forward,
    encode_boxes,
    generate_anchors,
    init_cph_weights,
)


def oracle_conv(x, layer):
    pt, ph, pw = layer.padding
    if layer.kind == "2d":
        pt = 0
    return np.array(oracles.conv_direct(x, layer.weight, layer.bias, pt, ph, pw, layer.relu))


class TestConv:
    def test_identity(self, rng):
        x = rng.normal(size=(2, 4, 4, 1))
        layer = ConvLayerSpec(np.ones((1, 1, 1, 1, 1)), np.zeros(1), relu=False)
        np.testing.assert_array_equal(conv_forward(x, layer), x)

    def test_zero_kernel_bias(self, rng):
        x = rng.normal(size=(3, 4, 5, 2))
        layer = ConvLayerSpec(np.zeros((3, 3, 3, 2, 2)), np.array([1.5, -2.0]), relu=False)
        out = conv_forward(x, layer)
        assert out.shape == (3, 4, 5, 2)
        np.testing.assert_array_equal(out[..., 0], 1.5)
        np.testing.assert_array_equal(out[..., 1], -2.0)

    @pytest.mark.parametrize("kind, kt", [("3d", 3), ("2d", 1)])
    def test_oracle(self, rng, kind, kt):
        x = rng.normal(size=(3, 5, 5, 2))
        layer = ConvLayerSpec(rng.normal(size=(kt, 3, 3, 2, 3)), rng.normal(size=3), kind=kind, relu=True)
        np.testing.assert_allclose(conv_forward(x, layer), oracle_conv(x, layer), atol=1e-10)

    def test_temporal_replicate_padding(self):
        # a single-frame kernel tap at dt=0 reads the replicated first frame
        x = np.arange(3.0).reshape(3, 1, 1, 1) + 1.0
        w = np.zeros((3, 1, 1, 1, 1))
        w[0] = 1.0
        out = conv_forward(x, ConvLayerSpec(w, np.zeros(1), relu=False))
        np.testing.assert_array_equal(out.ravel(), [1.0, 1.0, 2.0])

    def test_linearity(self, rng):
        layer = ConvLayerSpec(rng.normal(size=(3, 3, 3, 2, 2)), np.zeros(2), relu=False)
        a = rng.normal(size=(3, 4, 4, 2))
        b = rng.normal(size=(3, 4, 4, 2))
        np.testing.assert_allclose(conv_forward(2 * a - 3 * b, layer), 2 * conv_forward(a, layer) - 3 * conv_forward(b, layer), atol=1e-10)

    def test_validation(self):
        with pytest.raises(ValueError):
            ConvLayerSpec(np.zeros((3, 3, 3, 1, 1)), np.zeros(1), kind="2d")
        with pytest.raises(ValueError):
            ConvLayerSpec(np.zeros((1, 3, 3, 1, 2)), np.zeros(1))
        layer = ConvLayerSpec(np.zeros((1, 3, 3, 2, 1)), np.zeros(1))
        with pytest.raises(ValueError):
            conv_forward(np.zeros((1, 4, 4, 3)), layer)


def test_deconv2x():
    x = np.array([[[[1.0], [2.0]]]])  # (1, 1, 2, 1)
    w = np.arange(4.0).reshape(2, 2, 1, 1)
    out = deconv2x_forward(x, w, np.zeros(1), relu=False)
    assert out.shape == (1, 2, 4, 1)
    np.testing.assert_array_equal(out[0, :, :, 0], [[0, 1, 0, 2], [2, 3, 4, 6]])


class TestAnchors:
    def test_single(self):
        cfg = AnchorConfig(scales=(24,), ratios=(1,), strides=(8,))
        np.testing.assert_allclose(generate_anchors(cfg, [(1, 1)]), [[-8, -8, 16, 16]])

    def test_ratio_and_order(self):
        cfg = AnchorConfig(scales=(16,), ratios=(0.5, 1, 2), strides=(8,))
        a = generate_anchors(cfg, [(2, 3)])
        assert a.shape == (18, 4)
        w = a[:, 2] - a[:, 0]
        h = a[:, 3] - a[:, 1]
        np.testing.assert_allclose(w / h, np.tile([0.5, 1, 2], 6))
        np.testing.assert_allclose(w * h, 256.0)
        centers = (a[:, :2] + a[:, 2:]) / 2
        # row-major cells: second cell is one column to the right
        np.testing.assert_allclose(centers[3], [12, 4])
        np.testing.assert_allclose(centers[9], [4, 12])

    def test_counts(self):
        cfg = AnchorConfig()
        dims = [(8, 8), (4, 4), (2, 2), (1, 1), (1, 1)]
        assert len(generate_anchors(cfg, dims)) == anchor_count(dims, 3) == 3 * (64 + 16 + 4 + 1 + 1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            AnchorConfig(scales=(0,), strides=(8,))


class TestBoxCoding:
    def test_zero_regression(self):
        np.testing.assert_allclose(decode_boxes([0, 0, 10, 20], np.zeros(12)), np.tile([0, 0, 10, 20], (3, 1)))

    def test_doubling(self):
        reg = np.array([0, 0, np.log(2) / 0.2, np.log(2) / 0.2])
        np.testing.assert_allclose(decode_boxes([0, 0, 10, 20], reg), [[-5, -10, 15, 30]])

    def test_roundtrip(self, rng):
        anchor = [3.0, 4.0, 40.0, 30.0]
        reg = rng.normal(size=12)
        np.testing.assert_allclose(encode_boxes(anchor, decode_boxes(anchor, reg)), reg, atol=1e-9)


class TestCph:
    def test_shape_contract(self, rng):
        cfg = CphConfig(num_classes=5, embed_dim=6, mask_params=4)
        w = init_cph_weights(cfg, in_channels=4, T=3, rng=rng)
        (out,) = cph_forward([rng.normal(size=(3, 8, 8, 4))], cfg, w)
        assert len(out) == 192
        widths = out.class_logits.shape[1] + out.embeddings.shape[1] + out.box_regression.shape[1] + out.mask_params.shape[1]
        assert widths == 5 + 6 + 12 + 4

    def test_zero_weights_uniform(self, rng):
        cfg = CphConfig(num_classes=4, embed_dim=3, mask_params=2)
        w = init_cph_weights(cfg, 2, 3, rng, std=0.0)
        (out,) = cph_forward([rng.normal(size=(3, 4, 4, 2))], cfg, w)
        np.testing.assert_array_equal(out.class_logits, 0.0)

    def test_multiple_levels(self, rng):
        cfg = CphConfig(num_classes=2, embed_dim=3, mask_params=2)
        w = init_cph_weights(cfg, 2, 2, rng)
        outs = cph_forward([rng.normal(size=(2, 4, 4, 2)), rng.normal(size=(2, 2, 2, 2))], cfg, w)
        assert [len(o) for o in outs] == [48, 12]

    def test_temporal_constancy_reduction(self, rng):
        # a constant clip through 3d layers equals one frame through 2d layers whose
        # kernels are the temporal sums of the 3d kernels
        C, T = 3, 3
        cfg = CphConfig(num_classes=2, embed_dim=2, mask_params=3)
        w3 = init_cph_weights(cfg, C, T, rng, std=0.2)
        frame = rng.normal(size=(1, 6, 6, C))
        clip = np.repeat(frame, T, axis=0)
        (out3,) = cph_forward([clip], cfg, w3)

        def flat(layer, relu):
            return ConvLayerSpec(layer.weight.sum(axis=0, keepdims=True), layer.bias, kind="2d", relu=relu)

        x = frame
        for layer in w3.box_tower:
            x = conv_forward(x, flat(layer, True))
        ref = conv_forward(x, flat(w3.box_pred, False))[0]
        n_box = 4 * T + cfg.mask_params
        ref = ref.reshape(-1, n_box)
        np.testing.assert_allclose(out3.box_regression, ref[:, : 4 * T], atol=1e-10)
        np.testing.assert_allclose(out3.mask_params, ref[:, 4 * T:], atol=1e-10)

    def test_inconsistent_weights(self, rng):
        cfg = CphConfig(num_classes=2, embed_dim=2, mask_params=2)
        w = init_cph_weights(cfg, 2, 3, rng)
        with pytest.raises(ValueError):
            cph_forward([rng.normal(size=(3, 4, 4, 5))], cfg, w)
        other = CphConfig(num_classes=3, embed_dim=2, mask_params=2)
        with pytest.raises(ValueError):
            cph_forward([rng.normal(size=(3, 4, 4, 2))], other, w)

    def test_deterministic(self, rng):
        cfg = CphConfig(num_classes=2, embed_dim=2, mask_params=2)
        w = init_cph_weights(cfg, 2, 3, rng)
        x = rng.normal(size=(3, 4, 4, 2))
        a = cph_forward([x], cfg, w)[0]
        b = cph_forward([x], cfg, w)[0]
        np.testing.assert_array_equal(a.box_regression, b.box_regression)
        assert isinstance(w, CphWeights)


class TestCmh:
    def test_shape(self, rng):
        w = CmhWeights.random(32, 8, rng)
        out = cmh_forward(rng.normal(size=(3, 16, 16, 32)), w)
        assert out.shape == (3, 32, 32, 8)

    def test_zero(self, rng):
        w = CmhWeights.random(4, 3, rng, std=0.0)
        np.testing.assert_array_equal(cmh_forward(rng.normal(size=(2, 4, 4, 4)), w), 0.0)

    def test_temporal_constancy(self, rng):
        w = CmhWeights.random(4, 3, rng, std=0.3)
        frame = rng.normal(size=(1, 5, 5, 4))
        out = cmh_forward(np.repeat(frame, 4, axis=0), w)
        for t in range(1, 4):
            np.testing.assert_allclose(out[t], out[0], atol=1e-12)
