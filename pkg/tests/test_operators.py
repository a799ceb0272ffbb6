"""
Tests for operator construction, application and cost formulas.
"""

import numpy as np
import pytest

from src.autodiff.tensor import Tensor
from src.errors import ShapeError
from src.search_space.operators import (
    OPERATOR_SPACES,
    OperatorKind,
    OperatorSpace,
    build_operator,
    op_flop_count,
    op_norm_param_count,
    op_output_size,
    op_param_count,
)

SKIP = OperatorKind.SKIP_CONNECT
SEP3 = OperatorKind.SEP_CONV_3X3
DIL5 = OperatorKind.DIL_CONV_5X5


def test_operator_spaces_are_nested():
    assert OPERATOR_SPACES["O1"].kinds == (SKIP,)
    assert OPERATOR_SPACES["O2"].kinds == (SKIP, SEP3)
    assert OPERATOR_SPACES["O3"].kinds == (SKIP, SEP3, DIL5)
    assert OperatorSpace.from_id("o3") is OPERATOR_SPACES["O3"]


def test_unknown_operator_space_is_rejected():
    with pytest.raises(ValueError, match="Unknown operator space"):
        OperatorSpace.from_id("O9")


def test_duplicate_operator_space_is_rejected():
    with pytest.raises(ValueError, match="duplicates"):
        OperatorSpace("bad", (SKIP, SKIP))


@pytest.mark.parametrize("kind,channels,expected", [
    (SKIP, 16, 0),
    (SEP3, 16, 400),
    (DIL5, 8, 264),
])
def test_param_counts(kind, channels, expected):
    assert op_param_count(kind, channels, channels) == expected


def test_flop_counts():
    assert op_flop_count(SKIP, 16, 16, 8, 8) == 0
    assert op_flop_count(SEP3, 16, 16, 8, 8) == 51200
    assert op_flop_count(DIL5, 8, 8, 4, 4) == 8448


def test_projection_skip_has_parameters():
    assert op_param_count(SKIP, 8, 16, stride=2) == 128
    assert op_norm_param_count(SKIP, 8, 16, stride=2) == 32
    assert op_norm_param_count(SKIP, 8, 8, stride=1) == 0


@pytest.mark.parametrize("kind", [SKIP, SEP3, DIL5])
@pytest.mark.parametrize("in_ch,out_ch,stride", [(4, 4, 1), (4, 8, 2), (6, 3, 1)])
def test_built_operator_matches_formula(rng, kind, in_ch, out_ch, stride):
    op = build_operator(kind, in_ch, out_ch, stride, rng)
    assert sum(p.size for p in op.parameters) == op_param_count(kind, in_ch, out_ch, stride)
    assert sum(p.size for p in op.norm_parameters) == op_norm_param_count(kind, in_ch, out_ch, stride)


def test_identity_skip_returns_its_input(rng):
    op = build_operator(SKIP, 4, 4, 1, rng)
    x = Tensor(rng.normal(size=(2, 4, 5, 5)))
    assert op.is_identity
    assert op.apply(x) is x


def test_sep_conv_on_zero_input_is_zero(rng):
    op = build_operator(SEP3, 3, 3, 1, rng)
    out = op.apply(Tensor(np.zeros((1, 3, 6, 6))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_strided_dilated_conv_halves_resolution(rng):
    op = build_operator(DIL5, 8, 8, 2, rng)
    out = op.apply(Tensor(rng.normal(size=(1, 8, 16, 16))))
    assert out.shape == (1, 8, 8, 8)
    assert op_output_size(DIL5, 16, 2) == 8


@pytest.mark.parametrize("kind", [SKIP, SEP3, DIL5])
def test_output_size_is_shared_by_every_kind(kind):
    for size in (4, 5, 7, 8):
        assert op_output_size(kind, size, 1) == size
        assert op_output_size(kind, size, 2) == (size + 1) // 2


def test_wrong_input_channels_raise(rng):
    op = build_operator(SEP3, 4, 4, 1, rng)
    with pytest.raises(ShapeError, match="dim 1"):
        op.apply(Tensor(np.zeros((1, 3, 5, 5))))


def test_unsupported_stride_is_rejected(rng):
    with pytest.raises(ValueError, match="stride"):
        build_operator(SEP3, 4, 4, 3, rng)


def test_reinitialize_redraws_weights(rng):
    op = build_operator(SEP3, 4, 4, 1, rng)
    before = op.parameters[0].data.copy()
    op.norm_parameters[0].data[:] = 5.0
    op.reinitialize(rng)
    assert not np.array_equal(before, op.parameters[0].data)
    np.testing.assert_array_equal(op.norm_parameters[0].data, 1.0)
