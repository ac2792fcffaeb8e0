import json

import numpy as np
import pytest

from nml import net


def test_bundled_vgg_census():
    c = net.census(net.bundled_spec("vgg16"))
    assert (c.n_scale, c.n_rescale, c.n_translation, c.n_params) == (0, 8323, 201, 18067464)
    c = net.census(net.bundled_spec("vgg16_bn"))
    assert (c.n_scale, c.n_rescale, c.n_translation, c.n_params) == (4227, 8323, 201, 18075912)


def test_mlp_census_counts_parameters_and_groups():
    c = net.census(net.mlp_spec([784, 128, 10]))
    assert c.n_params == 784 * 128 + 128 + 128 * 10 + 10
    assert (c.n_scale, c.n_rescale, c.n_translation) == (0, 128, 11)
    assert c.n_translation_groups == 129


def test_census_parameter_count_matches_built_layout():
    spec = net.mlp_spec([6, 5, 4, 3], batchnorm=True)
    assert net.census(spec).n_params == net.build(spec).layout.size


def test_spec_roundtrip_through_json():
    spec = net.mlp_spec([4, 8, 3], activation="leaky", batchnorm=True, bn_eps=1e-3)
    again = net.ArchSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec


@pytest.mark.parametrize(
    "layers, message",
    [
        ([], "minItems|no layers|should be non-empty"),
        ([{"type": "dense", "out": 3}, {"type": "activation", "fn": "softmax-head"}, {"type": "activation", "fn": "relu"}], "last"),
        ([{"type": "dense", "out": 5}], "num_classes"),
        ([{"type": "dense", "out": 3, "in": 7}], "incoming width"),
        ([{"type": "dense", "out": 3, "bogus": 1}], "Additional properties|not valid"),
        ([{"type": "conv-meta", "channels": 3}, {"type": "dense", "out": 3}], "flatten"),
    ],
)
def test_invalid_specs_are_rejected(layers, message):
    d = {"version": 1, "input_dim": 4, "num_classes": 3, "layers": layers}
    with pytest.raises(net.SpecError, match=message):
        net.ArchSpec.from_dict(d)


def test_load_spec_reports_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(net.SpecError, match="not valid JSON"):
        net.load_spec(p)


def test_census_only_specs_cannot_be_built():
    with pytest.raises(net.SpecError, match="census-only"):
        net.build(net.bundled_spec("vgg16"))


def test_build_is_seed_deterministic():
    spec = net.mlp_spec([4, 8, 3])
    a, b, c = net.build(spec, seed=1), net.build(spec, seed=1), net.build(spec, seed=2)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)


def test_dense_structure_flags():
    n = net.build(net.mlp_spec([4, 8, 8, 3], batchnorm=True))
    first, second, head = n.dense
    assert first.bn == "bn1" and first.activation == "relu" and not first.input_from_homogeneous
    assert second.input_from_homogeneous and second.bn == "bn4"
    assert head.activation == "softmax-head" and head.bn is None


def test_forward_rejects_wrong_input_width(relu_net):
    with pytest.raises(ValueError, match="expected"):
        relu_net.loss((np.zeros((4, 3)), np.zeros(4, dtype=int)))
