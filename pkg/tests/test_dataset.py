"""Tabular data handling: construction, CSV round trips, subsetting."""

import numpy as np
import pytest

from errcal.dataset import Dataset, complete_cases, load_csv, write_csv
from errcal.errors import ParseError, SchemaError, UnknownColumnError


def test_from_columns_all_observed():
    d = Dataset.from_columns({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    assert d.names == ("a", "b")
    assert d.n_rows == 2
    assert d.observed("a").all()
    np.testing.assert_array_equal(d.values("b"), [3.0, 4.0])


def test_from_columns_nan_is_missing():
    d = Dataset.from_columns({"a": [1.0, np.nan, 3.0]})
    np.testing.assert_array_equal(d.observed("a"), [True, False, True])
    assert np.isnan(d.values("a")[1])


def test_from_columns_extra_mask_combines():
    d = Dataset.from_columns({"a": [1.0, 2.0, np.nan]}, {"a": [True, False, True]})
    np.testing.assert_array_equal(d.observed("a"), [True, False, False])


def test_from_columns_int_and_bool_coercion():
    d = Dataset.from_columns({"i": np.array([1, 2, 3]), "b": np.array([True, False, True])})
    assert d.values("i").dtype == np.float64
    np.testing.assert_array_equal(d.values("b"), [1.0, 0.0, 1.0])


def test_from_columns_huge_int_rejected():
    with pytest.raises(SchemaError):
        Dataset.from_columns({"i": np.array([2**53 + 1], dtype=np.int64)})


def test_from_columns_rejects_bad_shapes_and_names():
    with pytest.raises(SchemaError):
        Dataset.from_columns({"a": [[1.0, 2.0]]})
    with pytest.raises(SchemaError):
        Dataset.from_columns({"": [1.0]})
    with pytest.raises(SchemaError):
        Dataset.from_columns({"a": [1.0, 2.0], "b": [1.0]})
    with pytest.raises(SchemaError):
        Dataset.from_columns({})
    with pytest.raises(SchemaError):
        Dataset.from_columns({"a": ["x", "y"]})


def test_values_are_readonly():
    d = Dataset.from_columns({"a": [1.0, 2.0]})
    with pytest.raises(ValueError):
        d.values("a")[0] = 9.0
    with pytest.raises(ValueError):
        d.observed("a")[0] = False


def test_unknown_column():
    d = Dataset.from_columns({"a": [1.0]})
    assert "a" in d and "b" not in d
    with pytest.raises(UnknownColumnError):
        d.values("b")
    with pytest.raises(UnknownColumnError):
        d.observed("b")


def test_take_preserves_order_and_masks():
    d = Dataset.from_columns({"a": [1.0, 2.0, 3.0, np.nan]})
    sub = d.take([2, 0])
    np.testing.assert_array_equal(sub.values("a"), [3.0, 1.0])
    sub2 = d.take(np.array([True, False, True, True]))
    np.testing.assert_array_equal(sub2.observed("a"), [True, True, False])
    with pytest.raises(SchemaError):
        d.take(np.array([True, False]))


def test_complete_cases_identity_and_subset():
    d = Dataset.from_columns({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    same = complete_cases(d, ("a", "b"))
    assert same.n_rows == 2
    # empty column list is a vacuous filter
    assert complete_cases(d, ()).n_rows == 2

    ref = np.array([1.0] * 250 + [np.nan] * 750)
    big = Dataset.from_columns({"x": np.zeros(1000), "ref": ref})
    sub = complete_cases(big, ("x", "ref"))
    assert sub.n_rows == 250
    # idempotent
    assert complete_cases(sub, ("x", "ref")).n_rows == 250
    with pytest.raises(UnknownColumnError):
        complete_cases(d, ("a", "zzz"))


def test_load_csv_basic(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b,c\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n")
    d = load_csv(path)
    assert d.names == ("a", "b", "c")
    assert d.n_rows == 4
    assert all(d.observed(n).all() for n in d.names)


def test_load_csv_na_cells(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("X,Y\n1,1\n2,2\nNA,3\nNA,4\n")
    d = load_csv(path)
    np.testing.assert_array_equal(d.observed("X"), [True, True, False, False])
    assert d.observed("Y").all()
    # empty cells are missing too
    path.write_text("X,Y\n1,\n2,3\n")
    d = load_csv(path)
    np.testing.assert_array_equal(d.observed("Y"), [False, True])


def test_load_csv_parse_error_names_row_and_column(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("X,Y\n1,2\n3,abc\n")
    with pytest.raises(ParseError) as err:
        load_csv(path)
    assert err.value.row == 2
    assert err.value.column == "Y"


def test_load_csv_ragged_row(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("X,Y\n1,2,3\n")
    with pytest.raises(ParseError) as err:
        load_csv(path)
    assert err.value.row == 1


def test_load_csv_header_problems(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("X,X\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(path)
    path.write_text("X,\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(path)
    path.write_text("")
    with pytest.raises(SchemaError):
        load_csv(path)


def test_csv_round_trip_is_identity(tmp_path):
    rng = np.random.default_rng(42)
    values = rng.standard_normal(50) * 1e3
    values[7] = np.pi
    mask = rng.random(50) > 0.2
    d = Dataset.from_columns({"v": values, "w": rng.random(50)}, {"v": mask})
    path = tmp_path / "rt.csv"
    write_csv(d, path)
    back = load_csv(path)
    assert back.names == d.names
    np.testing.assert_array_equal(back.observed("v"), d.observed("v"))
    obs = d.observed("v")
    np.testing.assert_array_equal(back.values("v")[obs], d.values("v")[obs])
    np.testing.assert_array_equal(back.values("w"), d.values("w"))
