import math

import numpy as np
import pytest

from settledamage import networks as N
from settledamage.damage import SegmentationMask
from settledamage.errors import ConfigError, DataIOError, DimensionError, UsageError
from settledamage.tensor import Tensor


def resnet34_params(widths=(64, 128, 256, 512), blocks=(3, 4, 6, 3), cin=3, classes=2):
    """Closed-form parameter count: convs with bias, 1x1 projection when the shape changes."""
    total = cin * widths[0] * 49 + widths[0]
    prev = widths[0]
    for i, (w, n) in enumerate(zip(widths, blocks)):
        for j in range(n):
            c = prev if j == 0 else w
            total += c * w * 9 + w + w * w * 9 + w
            if j == 0 and (i > 0 or c != w):
                total += c * w + w
        prev = w
    return total + prev * classes + classes


def resnet34_macs(size=224, widths=(64, 128, 256, 512), blocks=(3, 4, 6, 3)):
    h = size // 2
    macs = 3 * widths[0] * 49 * h * h
    h //= 2
    prev = widths[0]
    for i, (w, n) in enumerate(zip(widths, blocks)):
        for j in range(n):
            stride = 2 if (i > 0 and j == 0) else 1
            ho = h // stride
            c = prev if j == 0 else w
            macs += c * w * 9 * ho * ho + w * w * 9 * ho * ho
            if stride == 2:
                macs += c * w * ho * ho
            h = ho
        prev = w
    return macs + prev * 2


TINY_PSP = N.PSPNetConfig(block_layers=(1, 1), growth=4, stem_channels=8, head_channels=8, input_size=24,
                          bins=(1, 2, 3))


def tiny_resnet(seed=0):
    return N.build_resnet(N.ResNetConfig(blocks=(1, 1, 1, 1), width_scale=1 / 16, seed=seed))


@pytest.fixture(scope="module")
def full():
    return N.build_resnet()


class TestResNet:
    def test_reference_output_sizes(self, full):
        shapes = dict(full.layer_shapes((224, 224)))
        assert shapes["conv1"][2:] == (112, 112)
        assert shapes["pool"][2:] == (56, 56)
        assert [shapes[f"conv{i}"][2:] for i in range(2, 6)] == [(56, 56), (28, 28), (14, 14), (7, 7)]
        assert shapes["avgpool"][2:] == (1, 1)
        assert [shapes[f"conv{i}"][1] for i in range(2, 6)] == [64, 128, 256, 512]

    def test_param_count(self, full):
        assert full.num_parameters() == resnet34_params()
        assert full.num_parameters() == pytest.approx(21.8e6, rel=0.05)

    def test_flops(self, full):
        assert N.flops_estimate(full, (224, 224)) == resnet34_macs()
        assert N.flops_estimate(full, (224, 224)) == pytest.approx(3.6e9, rel=0.15)

    def test_width_scale(self):
        m = N.build_resnet(N.ResNetConfig(width_scale=0.125))
        assert m.num_parameters() == resnet34_params(widths=(8, 16, 32, 64))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            N.build_resnet(N.ResNetConfig(blocks=(1, 1), widths=(8,)))
        with pytest.raises(ConfigError):
            N.build_resnet(N.ResNetConfig(width_scale=0))

    def test_residual_block_starts_as_identity(self):
        rng = np.random.default_rng(0)
        block = N.ResidualBlock(4, 4, 1, rng)
        x = rng.random((2, 4, 6, 6))
        np.testing.assert_allclose(block(Tensor(x)).data, x, rtol=1e-6)

    def test_zero_head_is_uniform(self):
        m = tiny_resnet()
        m.head.layers[1].weight.data[:] = 0
        c = N.forward_classify(m, np.random.default_rng(0).random((1, 3, 32, 32)))
        assert (c.disaster, c.non_disaster) == (0.5, 0.5)
        assert c.label == N.DISASTER

    def test_classify_probabilities(self):
        c = N.forward_classify(tiny_resnet(), np.random.default_rng(1).random((3, 32, 32)))
        assert c.disaster + c.non_disaster == pytest.approx(1.0)
        assert c.label == int(c.non_disaster > c.disaster)

    def test_wrong_arch(self):
        with pytest.raises(UsageError):
            N.forward_segment(tiny_resnet(), np.zeros((1, 3, 32, 32)))


class TestPSPNet:
    def test_default_shapes(self):
        m = N.build_pspnet()
        shapes = dict(m.layer_shapes((64, 64)))
        assert shapes["backbone"][2:] == (16, 16)
        assert shapes["ppm"][1] == m.feature_channels + 4 * (m.feature_channels // 4)
        assert shapes["output"] == (1, 2, 64, 64)
        out = m(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        assert out.shape == (1, 2, 64, 64)

    def test_ppm_constant_input(self):
        rng = np.random.default_rng(0)
        ppm = N.PyramidPooling(6, (1, 2, 3, 6), 2, rng)
        x = Tensor(np.full((1, 6, 12, 12), 0.7))
        out = ppm(x)
        assert out.shape == (1, 6 + 4 * 2, 12, 12)
        for branch in ppm.branches(x):
            assert np.ptp(branch.data, axis=(2, 3)).max() < 1e-12

    def test_ppm_bin_too_large(self):
        ppm = N.PyramidPooling(2, (1, 6), 1, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            ppm(Tensor(np.zeros((1, 2, 4, 4))))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            N.build_pspnet(N.PSPNetConfig(bins=(2, 1)))
        with pytest.raises(ConfigError):
            N.build_pspnet(N.PSPNetConfig(output_stride=3))
        with pytest.raises(ConfigError):
            N.build_pspnet(N.PSPNetConfig(input_size=16, bins=(1, 6)))

    def test_stride_mismatch(self):
        with pytest.raises(DimensionError):
            N.build_pspnet(TINY_PSP)(Tensor(np.zeros((1, 3, 26, 24))))

    def test_segment_returns_mask(self):
        m = N.build_pspnet(TINY_PSP)
        mask = N.forward_segment(m, np.random.default_rng(0).random((1, 3, 24, 24)))
        assert isinstance(mask, SegmentationMask) and (mask.height, mask.width) == (24, 24)

    def test_zero_head_ties_to_non_built(self):
        m = N.build_pspnet(TINY_PSP)
        for p in m.head.layers[2].parameters():
            p.data[:] = 0
        mask = N.forward_segment(m, np.random.default_rng(0).random((1, 3, 24, 24)))
        assert not mask.labels.any()

    def test_segmentation_ignores_logit_offset(self):
        m = N.build_pspnet(TINY_PSP)
        img = np.random.default_rng(2).random((1, 3, 24, 24))
        before = N.forward_segment(m, img)
        m.head.layers[2].bias.data += 3.0
        assert N.forward_segment(m, img) == before


class TestTraining:
    def data(self, n=8, seed=0):
        rng = np.random.default_rng(seed)
        return N.Dataset(rng.random((n, 3, 32, 32)), rng.integers(0, 2, n))

    def test_recipe_defaults(self):
        assert (N.CLASSIFIER_RECIPE.batch_size, N.CLASSIFIER_RECIPE.epochs, N.CLASSIFIER_RECIPE.lr) == (16, 30, 1e-5)
        assert (N.PARSER_RECIPE.batch_size, N.PARSER_RECIPE.epochs, N.PARSER_RECIPE.lr) == (4, 100, 1e-4)
        with pytest.raises(ConfigError):
            N.TrainingRecipe(0, 1, 1e-3).validate()

    def test_history_bit_identical(self):
        recipe = N.TrainingRecipe(4, 3, 1e-3, seed=7, augment=True, noise=0.2)
        _, h1 = N.train(tiny_resnet(), self.data(), recipe)
        _, h2 = N.train(tiny_resnet(), self.data(), recipe)
        assert h1 == h2 and len(h1) == 3

    def test_overfit_single_sample(self):
        data = self.data(1)
        _, hist = N.train(tiny_resnet(), data, N.TrainingRecipe(1, 50, 1e-3))
        assert hist[-1].loss < 0.05

    def test_parser_overfit(self):
        rng = np.random.default_rng(0)
        img = rng.random((1, 3, 24, 24))
        lab = (img[:, 0] > 0.5).astype(np.int64)
        _, hist = N.train(N.build_pspnet(TINY_PSP), N.Dataset(img, lab), N.TrainingRecipe(1, 60, 1e-2))
        assert hist[-1].loss < hist[0].loss

    def test_evaluate_counting(self):
        m = tiny_resnet()
        dense = m.head.layers[1]
        dense.weight.data[:] = 0
        dense.bias.data[:] = [0.0, 1.0]
        data = self.data(10, seed=3)
        acc, loss = N.evaluate(m, data)
        ones = int((data.targets == 1).sum())
        assert acc == ones / 10
        p1 = math.e / (1 + math.e)
        assert loss == pytest.approx(-(ones * math.log(p1) + (10 - ones) * math.log(1 - p1)) / 10, rel=1e-6)

    def test_empty_and_bad_targets(self):
        with pytest.raises(UsageError):
            N.evaluate(tiny_resnet(), N.Dataset(np.zeros((0, 3, 32, 32)), np.zeros(0)))
        with pytest.raises(UsageError):
            N.train(tiny_resnet(), N.Dataset(np.zeros((1, 3, 32, 32)), [5]), N.TrainingRecipe(1, 1, 1e-3))


class TestCheckpoint:
    def test_round_trip_and_bytes(self, tmp_path):
        for model in (tiny_resnet(3), N.build_pspnet(TINY_PSP)):
            a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
            N.save_checkpoint(model, a)
            N.save_checkpoint(model, b)
            assert a.read_bytes() == b.read_bytes()
            back = N.load_checkpoint(a)
            assert N.models_equal(model, back)

    def test_different_models_differ(self):
        assert not N.models_equal(tiny_resnet(0), tiny_resnet(1))

    def test_bad_file(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_text("not a zip")
        with pytest.raises(DataIOError):
            N.load_checkpoint(p)
        with pytest.raises(DataIOError):
            N.load_checkpoint(tmp_path / "missing.ckpt")
