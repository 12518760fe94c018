import pytest

from dsm_extract import ExtractError, ExtractorConfig


class TestExtractorConfig:
    def test_defaults(self):
        config = ExtractorConfig()
        assert config.network == "vgg16"
        assert config.max_side == 1024
        assert config.scale_factors == (1.0, 2.0 ** -0.5, 0.5)
        assert config.network_tag == "vgg16"

    def test_upsampled_resnet_tag_differs(self):
        config = ExtractorConfig(network="resnet101", upsample=True)
        assert config.network_tag == "resnet101-dil2"
        assert ExtractorConfig(network="resnet101").network_tag == "resnet101"

    def test_unknown_network_rejected(self):
        with pytest.raises(ExtractError, match="unknown network"):
            ExtractorConfig(network="alexnet")

    def test_upsample_is_resnet_only(self):
        with pytest.raises(ExtractError, match="resnet101 only"):
            ExtractorConfig(network="vgg16", upsample=True)

    def test_max_side_must_be_positive(self):
        with pytest.raises(ExtractError, match="max_side"):
            ExtractorConfig(max_side=0)

    def test_scale_factors_strictly_decreasing(self):
        with pytest.raises(ExtractError, match="strictly decreasing"):
            ExtractorConfig(scale_factors=(1.0, 0.5, 0.5))
        with pytest.raises(ExtractError, match="strictly decreasing"):
            ExtractorConfig(scale_factors=(0.5, 1.0))

    def test_scale_factors_positive_and_nonempty(self):
        with pytest.raises(ExtractError, match="positive"):
            ExtractorConfig(scale_factors=(1.0, -0.5))
        with pytest.raises(ExtractError, match="at least one"):
            ExtractorConfig(scale_factors=())
