import pytest

from irstd_toolkit.backbone import DownsamplingScheme, backbone_plan
from irstd_toolkit.errors import InvalidArgumentError


def test_resnet20_plan():
    plan = backbone_plan(3)
    assert plan.sizes() == (480, 480, 240, 120)
    assert plan.weight_layer_count == 19
    assert [stage.channels for stage in plan.stages] == [16, 16, 32, 64]


@pytest.mark.parametrize("b, layers", [(1, 7), (2, 13), (4, 25)])
def test_weight_layer_count(b, layers):
    assert backbone_plan(b).weight_layer_count == layers


@pytest.mark.parametrize("b", [1, 3, 5])
def test_adjusted_scheme_drops_resolution_twice(b):
    sizes = backbone_plan(b).sizes()[1:]
    assert [a // c for a, c in zip(sizes, sizes[1:])] == [2, 2]


def test_regular_scheme_is_four_times_smaller():
    plan = backbone_plan(3, scheme=DownsamplingScheme.REGULAR)
    assert plan.sizes() == (240, 120, 60, 30)


def test_fusion_points_pair_lateral_and_top_down_features():
    points = backbone_plan(3).fusion_points
    assert [(p.name, p.height, p.channels) for p in points] == [("UpStage-2", 240, 32), ("UpStage-1", 480, 16)]
    assert backbone_plan(3).to_dict()["fusion_points"][0]["high_level"] == "Stage-3"


def test_invalid_plans():
    with pytest.raises(InvalidArgumentError):
        backbone_plan(0)
    with pytest.raises(InvalidArgumentError):
        backbone_plan(3, input_size=(482, 480), scheme="regular")
