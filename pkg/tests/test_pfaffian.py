import io
import math

import numpy as np
import pytest

from hgmfilter.errors import (
    DenominatorBelowThreshold,
    DimensionMismatch,
    DuplicateEntry,
    FormatError,
    MissingTransformVariable,
)
from hgmfilter.models import linear_transform_pfaffian
from hgmfilter.pfaffian import (
    InitialPointTable,
    derive_coefficient_rows,
    dumps_pfaffian,
    format_monomial,
    integrability_residual,
    load_fixture,
    load_pfaffian,
    loads_pfaffian,
    max_integrability_residual,
    parse_monomial,
    sample_box_points,
)
from hgmfilter.ratfun import parse_expression

FIXTURES = ("cos_example.pfn", "gauss1d.pfn", "linear_q1.pfn")

# transform of a bivariate Gaussian with mean (m1, m2) and fixed covariance:
# log T = xi.m + xi.V.xi / 2, so A_xi_i = m_i + (V xi)_i
GAUSS2 = """pfaffian v1
vars: xi1, xi2, m1, m2
nxi: 2
dim: 1
monomials: 1
matrix xi1:
(1,1) = m1 + 2*xi1 + 1/2*xi2
end
matrix xi2:
(1,1) = m2 + 1/2*xi1 + xi2
end
matrix m1:
(1,1) = xi1
end
matrix m2:
(1,1) = xi2
end
"""


def test_cos_fixture_loads():
    sys = load_fixture("cos_example.pfn")
    assert sys.variables == ("X1", "X2")
    assert sys.dim == 2
    assert sys.monomials == ((0, 0), (0, 1))
    assert sys.nxi == 0
    assert sys.name == "cos_example"


def test_gauss1d_fixture_loads():
    sys = load_fixture("gauss1d.pfn")
    assert sys.dim == 1
    assert sys.matrix("X")[0, 0] == parse_expression("-2*X", ("X",))


def test_load_from_binary_stream():
    text = load_fixture("gauss1d.pfn")
    data = dumps_pfaffian(text).encode("utf-8")
    sys = load_pfaffian(io.BytesIO(data))
    assert sys.matrix("X")[0, 0] == text.matrix("X")[0, 0]


def test_unlisted_entries_are_zero():
    sys = load_fixture("cos_example.pfn")
    assert sys.matrix("X2")[0, 0].is_zero()
    assert sys.matrix("X2")[1, 1].is_zero()


BASE = "pfaffian v1\nvars: X1, X2\nnxi: 0\ndim: 2\nmonomials: 1; dX2\n"


def test_entry_outside_dimension():
    with pytest.raises(FormatError) as info:
        loads_pfaffian(BASE + "matrix X1:\n(3,3) = X1\nend\n")
    assert info.value.line == 7


def test_duplicate_entry():
    with pytest.raises(DuplicateEntry):
        loads_pfaffian(BASE + "matrix X1:\n(1,2) = X1\n(1,2) = X2\nend\n")


def test_duplicate_matrix_block():
    with pytest.raises(DuplicateEntry):
        loads_pfaffian(BASE + "matrix X1:\nend\nmatrix X1:\nend\n")


def test_monomial_count_must_match_dim():
    with pytest.raises(DimensionMismatch):
        loads_pfaffian("pfaffian v1\nvars: X1\nnxi: 0\ndim: 2\nmonomials: 1\n")


@pytest.mark.parametrize(
    "text",
    [
        "pfaffian v2\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: one\nmonomials: 1\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: dX\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\nmatrix Y:\nend\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\nmatrix X:\n(1,1) = X +\nend\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\nmatrix X:\n(1,1) = X\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\nbox: X in [2, 1]\n",
        "pfaffian v1\nvars: X\nnxi: 2\ndim: 1\nmonomials: 1\n",
        "pfaffian v1\nvars: X\nnxi: 0\ndim: 1\nmonomials: 1\nsomething else\n",
    ],
)
def test_malformed_files(text):
    with pytest.raises(FormatError):
        loads_pfaffian(text)


def test_comments_ignored():
    text = "# leading comment\npfaffian v1\nvars: X  # one variable\nnxi: 0\ndim: 1\nmonomials: 1\nmatrix X:\n(1,1) = -2*X # entry\nend\n"
    assert loads_pfaffian(text).matrix("X")[0, 0] == parse_expression("-2*X", ("X",))


@pytest.mark.parametrize("name", FIXTURES)
def test_round_trip_identical(name):
    a = load_fixture(name)
    b = loads_pfaffian(dumps_pfaffian(a))
    assert a.variables == b.variables and a.monomials == b.monomials and a.boxes == b.boxes
    for v in a.variables:
        for r in range(a.dim):
            for c in range(a.dim):
                assert a.matrix(v)[r, c].identical(b.matrix(v)[r, c])


def test_monomial_notation():
    vs = ("xi", "z1", "z2", "z3", "z4")
    for text, multi in [("1", (0, 0, 0, 0, 0)), ("dz1^2", (0, 2, 0, 0, 0)), ("dz4*dz2", (0, 0, 1, 0, 1))]:
        assert parse_monomial(text, vs) == multi
    assert format_monomial((0, 0, 1, 0, 1), vs) == "dz2*dz4"
    assert parse_monomial(format_monomial((1, 2, 0, 0, 3), vs), vs) == (1, 2, 0, 0, 3)


def test_shipped_linear_fixture_matches_generator():
    a = load_fixture("linear_q1.pfn")
    b = linear_transform_pfaffian()
    for v in a.variables:
        assert a.matrix(v)[0, 0] == b.matrix(v)[0, 0]


# integrability


def test_cos_residual_at_point():
    sys = load_fixture("cos_example.pfn")
    assert integrability_residual(sys, "X1", "X2", [1.3, -0.7]) <= 1e-12


def test_gauss1d_residual_zero():
    sys = load_fixture("gauss1d.pfn")
    pts = sample_box_points(sys, 10, np.random.default_rng(0))
    assert max_integrability_residual(sys, pts) == 0.0
    assert integrability_residual(sys, "X", "X", [0.4]) == 0.0


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_integrable_over_box(name):
    sys = load_fixture(name)
    pts = sample_box_points(sys, 100, np.random.default_rng(7))
    assert max_integrability_residual(sys, pts) <= 1e-10


def test_residual_at_pole_raises():
    sys = load_fixture("cos_example.pfn")
    with pytest.raises(DenominatorBelowThreshold):
        integrability_residual(sys, "X1", "X2", [0.0, 1.0])


def test_perturbed_cos_fails():
    sys = load_fixture("cos_example.pfn")
    one = parse_expression("1", sys.variables)
    bad = sys.with_entry("X1", (1, 0), sys.matrix("X1")[1, 0] + one)
    pts = sample_box_points(bad, 100, np.random.default_rng(1))
    assert max_integrability_residual(bad, pts) >= 0.1


def test_sampled_points_respect_box():
    sys = load_fixture("linear_q1.pfn")
    pts = sample_box_points(sys, 50, np.random.default_rng(2))
    for j, v in enumerate(sys.variables):
        lo, hi = sys.box(v)
        assert np.all((pts[:, j] >= lo) & (pts[:, j] <= hi))


def test_default_box():
    sys = load_fixture("gauss1d.pfn")
    assert sys.box("X") == (-2.0, 2.0)


# coefficient rows


def test_rows_scalar_case():
    sys = linear_transform_pfaffian()
    rows = derive_coefficient_rows(sys, 1)
    a = sys.matrix("xi")[0, 0]
    assert rows.c1[0][0] == a
    assert rows.c2[0][0][0] == a.differentiate("xi") + a * a


def test_c0_selects_first_component():
    rows = derive_coefficient_rows(load_fixture("linear_q1.pfn"))
    v = np.array([3.25])
    c0, _, _ = rows.evaluate([0.0, 0.1, 0.2, 0.3, 1.0])
    assert c0 @ v == 3.25


def test_rows_dimensions_for_vector_system():
    sys = loads_pfaffian(GAUSS2)
    rows = derive_coefficient_rows(sys)
    assert rows.n == 2 and rows.q == 1
    c0, c1, c2 = rows.evaluate([0.1, -0.2, 0.5, 1.5])
    assert c0.shape == (1,) and c1.shape == (2, 1) and c2.shape == (2, 2, 1)


def test_c2_symmetric_at_random_points():
    sys = loads_pfaffian(GAUSS2)
    rows = derive_coefficient_rows(sys)
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = rng.uniform(-2, 2, size=4)
        _, _, c2 = rows.evaluate(p)
        assert c2[0, 1] == pytest.approx(c2[1, 0], rel=1e-9)


def test_rows_give_gaussian_moments():
    sys = loads_pfaffian(GAUSS2)
    rows = derive_coefficient_rows(sys)
    m = np.array([0.5, 1.5])
    V = np.array([[2.0, 0.5], [0.5, 1.0]])
    _, c1, c2 = rows.evaluate([0.0, 0.0, *m])
    # Q = T(0) = 1 for a normalised density
    assert np.allclose(c1[:, 0], m)
    assert np.allclose(c2[:, :, 0], V + np.outer(m, m))


def test_missing_transform_variable():
    with pytest.raises(MissingTransformVariable):
        derive_coefficient_rows(load_fixture("cos_example.pfn"))
    with pytest.raises(MissingTransformVariable):
        derive_coefficient_rows(load_fixture("linear_q1.pfn"), 2)


# initial-point table


def test_table_csv_round_trip():
    pts = np.array([[0.1, 1 / 3], [-2.0, math.pi]])
    vecs = np.array([[1e-300, 2.0 / 7.0], [np.exp(1), -0.0]])
    table = InitialPointTable(pts, vecs, ("y", "mu"))
    text = table.dumps()
    assert text.splitlines()[0] == "y,mu,Q1,Q2"
    back = InitialPointTable.from_csv(io.StringIO(text))
    assert np.array_equal(back.points, pts) and np.array_equal(back.vectors, vecs)
    assert back.z_names == ("y", "mu")


def test_nearest_with_ties():
    pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 3.0]])
    table = InitialPointTable(pts, np.ones((3, 1)), ("a", "b"))
    assert table.nearest([0.0, 0.0]) == 0
    assert table.nearest([-0.9, 0.1]) == 1
    assert table.nearest([0.0, 2.0]) == 2


def test_table_save_load(tmp_path):
    table = InitialPointTable(np.array([[0.5]]), np.array([[0.25]]), ("z",))
    path = tmp_path / "t.csv"
    table.save(path)
    assert InitialPointTable.load(path).vectors[0, 0] == 0.25


def test_table_rejects_bad_shapes():
    with pytest.raises(DimensionMismatch):
        InitialPointTable(np.zeros((2, 2)), np.zeros((3, 1)), ("a", "b"))
