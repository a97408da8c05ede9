from pathlib import Path

import pytest

from mmssl.distortions.grids import (
    DEFAULT_PARAMS,
    SEARCH_SPACE,
    Family,
    ParameterSpace,
    format_grids,
    get_grid,
)
from mmssl.errors import InvalidRange

GOLDEN = Path(__file__).parent / "golden" / "grids.txt"


def test_format_matches_golden_transcription():
    assert format_grids() == GOLDEN.read_text()


def test_fifteen_grids_over_nine_families():
    assert len(SEARCH_SPACE) == 15
    assert {g.family for g in SEARCH_SPACE} == set(Family)


@pytest.mark.parametrize(
    "ps, expected",
    [
        (ParameterSpace(0.5, 2.5, 10, float), [0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9, 2.1, 2.3, 2.5]),
        (ParameterSpace(-90, 90, 10, int), [-90, -72, -54, -36, -18, 0, 18, 36, 54, 72, 90]),
        (ParameterSpace(1, 8, 8, int), [1, 1, 2, 3, 4, 5, 6, 7, 8]),
    ],
)
def test_worked_examples(ps, expected):
    out = ps.enumerate()
    assert out == expected
    assert all(type(v) is type(expected[0]) for v in out)


def test_affine_scale_grid_has_eleven_values():
    assert len(get_grid("affine.scales").values) == 11


@pytest.mark.parametrize("g", SEARCH_SPACE, ids=lambda g: g.name)
def test_length_invariant(g):
    n = g.space.n_steps
    assert n - 1 <= len(g.values) <= n + 1


def test_invalid_ranges():
    with pytest.raises(InvalidRange):
        ParameterSpace(2, 2, 10)
    with pytest.raises(InvalidRange):
        ParameterSpace(3, 1, 10)
    with pytest.raises(InvalidRange):
        ParameterSpace(0, 1, 0)


def test_params_at_pins_interval_and_keeps_defaults():
    p = get_grid("ghost.intensity").params_at(0.42)
    assert p["intensity"] == (0.42, 0.42)
    assert p["num_ghosts"] == DEFAULT_PARAMS[Family.GHOST]["num_ghosts"]
    assert get_grid("bias.order").params_at(3)["order"] == 3
    assert get_grid("elastic.num_control_points").params_at(9)["num_control_points"] == 9


def test_unknown_grid():
    with pytest.raises(KeyError):
        get_grid("affine.shear")
