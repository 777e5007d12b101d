import pytest
import torch

from rrdbsr.errors import ConfigurationError
from rrdbsr.features import (
    CONV_INDEX, FeatureTap, VGG19Extractor, activation_sparsity, extract_features, vgg19_features,
)


@pytest.fixture(scope="module")
def slim():
    return VGG19Extractor.random(0, width=0.125)


def test_layer_names():
    assert FeatureTap("54").layer_id == "conv5_4"
    assert FeatureTap("22").layer_id == "conv2_2"
    assert FeatureTap().pre_activation
    # conv5_4 is the last conv before the fifth pooling layer
    feats = vgg19_features()
    assert isinstance(feats[CONV_INDEX["conv5_4"]], torch.nn.Conv2d)
    assert isinstance(feats[CONV_INDEX["conv5_4"] + 2], torch.nn.MaxPool2d)
    assert CONV_INDEX["conv5_4"] + 3 == len(feats)
    with pytest.raises(ValueError):
        FeatureTap("conv6_1")
    with pytest.raises(ValueError):
        FeatureTap("conv2_3")


def test_conv5_4_shape_for_224_input():
    ex = VGG19Extractor.random(0)
    out = extract_features(ex, torch.rand(3, 224, 224), FeatureTap("conv5_4"))
    assert out.shape == (512, 14, 14)


def test_pre_and_post_activation_agree_where_positive(slim):
    x = torch.rand(2, 3, 48, 48)
    for layer in ("conv2_2", "conv3_4", "conv5_4"):
        pre = extract_features(slim, x, FeatureTap(layer, True))
        post = extract_features(slim, x, FeatureTap(layer, False))
        assert (post >= 0).all()
        mask = pre > 0
        assert torch.equal(pre[mask], post[mask])
        assert (post[~mask] == 0).all()


def test_taps_share_one_pass(slim):
    x = torch.rand(1, 3, 32, 32)
    both = slim.taps(x, ["conv2_2", "conv5_4"])
    assert torch.equal(both["conv2_2"], extract_features(slim, x, FeatureTap("conv2_2")))
    assert torch.equal(both["conv5_4"], extract_features(slim, x, FeatureTap("conv5_4")))


def test_deterministic(slim):
    x = torch.rand(1, 3, 32, 32)
    assert torch.equal(slim(x, FeatureTap()), slim(x, FeatureTap()))


def test_sparsity_bounds():
    assert activation_sparsity(-torch.ones(4, 4)) == 0.0
    assert activation_sparsity(torch.ones(4, 4)) == 1.0
    assert activation_sparsity(torch.tensor([-1.0, 0.0, 2.0, 3.0])) == 0.5
    with pytest.raises(ValueError):
        activation_sparsity(torch.zeros(0))


def test_weight_file_round_trip(tmp_path, slim):
    path = tmp_path / "vgg.pth"
    slim.save(path)
    loaded = VGG19Extractor.from_file(path)
    assert loaded.weights_sha256 and len(loaded.weights_sha256) == 64
    x = torch.rand(1, 3, 32, 32)
    assert torch.equal(loaded(x, FeatureTap("conv3_1")), slim(x, FeatureTap("conv3_1")))


def test_torchvision_style_keys(tmp_path, slim):
    path = tmp_path / "tv.pth"
    state = {f"features.{k}": v for k, v in slim.features.state_dict().items()}
    state["classifier.0.weight"] = torch.zeros(2, 2)
    torch.save(state, path)
    assert VGG19Extractor.from_file(path).features[0].out_channels == 8


def test_missing_or_bad_weights(tmp_path):
    with pytest.raises(ConfigurationError) as e:
        VGG19Extractor.from_file(tmp_path / "nope.pth")
    assert e.value.field == "losses.vgg_weights"
    torch.save({"foo": torch.zeros(1)}, tmp_path / "bad.pth")
    with pytest.raises(ConfigurationError):
        VGG19Extractor.from_file(tmp_path / "bad.pth")
    with pytest.raises(ConfigurationError):
        extract_features(None, torch.rand(1, 3, 8, 8), FeatureTap())


def test_extractor_is_frozen(slim):
    assert not any(p.requires_grad for p in slim.parameters())
    x = torch.rand(1, 3, 32, 32, requires_grad=True)
    slim(x, FeatureTap("conv2_2")).sum().backward()
    assert x.grad is not None and float(x.grad.abs().sum()) > 0
