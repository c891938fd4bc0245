import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtled.errors import ModelFormatError
from mtled.materials import NeoHookeanParams, OgdenParams
from mtled.model_io import (
    load_model,
    models_equal,
    parse_model,
    save_model,
    serialize_model,
)

MINIMAL = """
# four nodes, one cell
NODES
0 0 0 0
1 1 0 0
2 0 1 0
3 0 0 1
CELLS
0 0 1 2 3
FIXED
0
DRIVEN
3 * * -0.1
MATERIAL neo_hookean
young 3000
poisson 0.49
density 1000
"""


def test_parse_minimal_model():
    model, config = parse_model(MINIMAL, name="mini")
    assert model.name == "mini"
    assert model.cloud.n_nodes == 4
    assert model.cloud.n_cells == 1
    assert isinstance(model.material, NeoHookeanParams)
    np.testing.assert_array_equal(model.boundary.fixed_nodes, [0])
    np.testing.assert_array_equal(model.boundary.driven_nodes, [3])
    t = model.boundary.driven_targets[0]
    assert math.isnan(t[0]) and math.isnan(t[1]) and t[2] == -0.1
    assert model.surface is None
    assert config.radius is None  # defaults left for the solver to resolve
    assert config.tau is None


def test_parse_config_and_surface_sections():
    text = MINIMAL + (
        "EBC_SURFACE\n0 1 2\nCONFIG\nradius 2.5\ntau 0.01\nscheme 4\n"
        "mode dynamic\nebc_method ebciem\n"
    )
    model, config = parse_model(text)
    np.testing.assert_array_equal(model.surface, [[0, 1, 2]])
    assert config.radius == 2.5
    assert config.tau == 0.01
    assert config.scheme == 4
    assert config.mode == "dynamic"
    assert config.ebc_method == "ebciem"


def test_parse_ogden_material():
    text = MINIMAL.replace(
        "MATERIAL neo_hookean\nyoung 3000\npoisson 0.49\ndensity 1000",
        "MATERIAL ogden\nmu1 643.6\na1 -1.1\nd1 1.2598e-4\ndensity 1000",
    )
    model, _ = parse_model(text)
    assert isinstance(model.material, OgdenParams)
    assert model.material.a1 == -1.1


def test_comments_and_blank_lines_ignored():
    noisy = MINIMAL.replace("NODES", "# leading comment\n\nNODES  # trailing")
    # trailing tokens after a section keyword are rejected, so strip that
    noisy = noisy.replace("NODES  # trailing", "NODES # trailing comment")
    model, _ = parse_model(noisy)
    assert model.cloud.n_nodes == 4


BAD_CASES = [
    ("data before section", MINIMAL.replace("NODES", "17 junk\nNODES", 1)),
    ("node arity", MINIMAL.replace("0 0 0 0", "0 0 0", 1)),
    ("node order", MINIMAL.replace("1 1 0 0", "5 1 0 0", 1)),
    ("cell arity", MINIMAL.replace("0 0 1 2 3", "0 0 1 2", 1)),
    ("cell node range", MINIMAL.replace("0 0 1 2 3", "0 0 1 2 9", 1)),
    ("non-numeric", MINIMAL.replace("0 0 0 0", "0 zero 0 0", 1)),
    ("non-finite", MINIMAL.replace("0 0 0 0", "0 inf 0 0", 1)),
    ("driven arity", MINIMAL.replace("3 * * -0.1", "3 * -0.1", 1)),
    ("all-free driven row", MINIMAL.replace("3 * * -0.1", "3 * * *", 1)),
    ("fixed/driven overlap", MINIMAL.replace("DRIVEN\n3", "DRIVEN\n0", 1)),
    ("unknown material", MINIMAL.replace("neo_hookean", "rubber", 1)),
    ("unknown constant", MINIMAL.replace("young 3000", "stiffness 3000", 1)),
    ("duplicate constant", MINIMAL.replace("young 3000", "young 3000\nyoung 1", 1)),
    ("missing constant", MINIMAL.replace("poisson 0.49\n", "", 1)),
    ("no material", MINIMAL.split("MATERIAL")[0]),
    ("no nodes", "CELLS\n0 0 1 2 3\nMATERIAL neo_hookean\nyoung 1\npoisson 0.3\ndensity 1"),
    ("material arity", MINIMAL.replace("MATERIAL neo_hookean", "MATERIAL neo_hookean extra", 1)),
    ("bad material value", MINIMAL.replace("poisson 0.49", "poisson 0.7", 1)),
    ("unknown config key", MINIMAL + "CONFIG\nwibble 3\n"),
    ("duplicate config key", MINIMAL + "CONFIG\ntau 0.1\ntau 0.2\n"),
    ("bad scheme", MINIMAL + "CONFIG\nscheme 5\n"),
    ("bad ebc method", MINIMAL + "CONFIG\nebc_method magic\n"),
    ("surface arity", MINIMAL + "EBC_SURFACE\n0 1\n"),
    ("surface node range", MINIMAL + "EBC_SURFACE\n0 1 99\n"),
    ("degenerate cell", MINIMAL.replace("3 0 0 1", "3 1 0 0", 1)),
]


@pytest.mark.parametrize("case", BAD_CASES, ids=[c[0] for c in BAD_CASES])
def test_malformed_models_rejected(case):
    label, text = case
    with pytest.raises(ModelFormatError):
        parse_model(text)


def test_error_carries_line_number():
    try:
        parse_model(MINIMAL.replace("0 0 0 0", "0 zero 0 0", 1))
    except ModelFormatError as exc:
        assert exc.line is not None
        assert exc.section == "NODES"
    else:
        pytest.fail("expected ModelFormatError")


# -- roundtrip ------------------------------------------------------------------


def test_serialize_parse_roundtrip():
    pair = parse_model(MINIMAL)
    text = serialize_model(*pair)
    again = parse_model(text)
    assert models_equal(pair, again)


def test_roundtrip_with_surface_and_config():
    text = MINIMAL + (
        "EBC_SURFACE\n0 1 2\n1 2 3\nCONFIG\nradius 0.37\ntau 0.05\n"
        "rule_order 3\nmode steady\n"
    )
    pair = parse_model(text)
    again = parse_model(serialize_model(*pair))
    assert models_equal(pair, again)


def test_save_and_load(tmp_path):
    pair = parse_model(MINIMAL)
    path = tmp_path / "mini.model"
    save_model(path, *pair)
    model, config = load_model(path)
    assert model.name == "mini"
    assert models_equal(pair, (model, config))


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    young=st.floats(1.0, 1e6),
    poisson=st.floats(0.0, 0.49),
    radius=st.floats(0.01, 10.0),
)
def test_roundtrip_random_models(seed, young, poisson, radius):
    r = np.random.default_rng(seed)
    base = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    nodes = base + r.normal(0, 0.05, (4, 3))
    lines = ["NODES"]
    for i, p in enumerate(nodes):
        lines.append(f"{i} {p[0]!r} {p[1]!r} {p[2]!r}")
    lines += ["CELLS", "0 0 1 2 3", "FIXED", "0", "DRIVEN", "2 * 0.01 *"]
    lines += [
        "MATERIAL neo_hookean",
        f"young {young!r}",
        f"poisson {poisson!r}",
        "density 1050.0",
        "CONFIG",
        f"radius {radius!r}",
    ]
    pair = parse_model("\n".join(lines))
    again = parse_model(serialize_model(*pair))
    assert models_equal(pair, again)
