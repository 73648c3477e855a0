import numpy as np
import pytest

from hlix import (Attribute, AttributeSchema, Dataset, DatasetFormatError,
                  assemble, load_dataset, read_vec_file, save_dataset,
                  write_vec_file)


def toy_dataset(m=12, seed=0):
    rng = np.random.default_rng(seed)
    schema = AttributeSchema.of(("price", "numeric"), ("emb", "vector", 3),
                                ("year", "numeric"))
    cols = {"price": rng.normal(size=m), "emb": rng.normal(size=(m, 3)),
            "year": rng.integers(1990, 2020, size=m).astype(float)}
    return Dataset(schema, cols, name="toy")


def test_attribute_validation():
    with pytest.raises(ValueError):
        Attribute("x", "text")
    with pytest.raises(ValueError):
        Attribute("x", "numeric", dim=3)
    with pytest.raises(ValueError):
        Attribute("x", "vector", dim=0)
    with pytest.raises(ValueError):
        AttributeSchema.of(("a", "numeric"), ("a", "vector", 2))


def test_schema_header_round_trip():
    schema = AttributeSchema.of(("price", "numeric"), ("emb", "vector", 5))
    assert AttributeSchema.parse_header(schema.header_line()) == schema
    assert schema.flat_dim == 6
    assert "emb" in schema and "missing" not in schema
    with pytest.raises(DatasetFormatError):
        AttributeSchema.parse_header("#schema price:text")


def test_dataset_text_round_trip(tmp_path):
    ds = toy_dataset(m=17, seed=3)
    path = tmp_path / "toy.txt"
    save_dataset(path, ds)
    back = load_dataset(path)
    assert back.schema == ds.schema
    assert back.m == ds.m
    for a in ds.schema.attributes:
        # repr() of floats survives the text round trip exactly
        assert np.array_equal(back.columns[a.name], ds.columns[a.name])


def test_dataset_text_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("#schema a:numeric,v:vector:2\n1.0,0.5 0.5\n2.0\n")
    with pytest.raises(DatasetFormatError) as e:
        load_dataset(path)
    assert "row 1" in str(e.value)
    path.write_text("#schema a:numeric,v:vector:2\n1.0,0.5\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)
    path.write_text("1.0,2.0\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_empty_dataset_with_explicit_schema(tmp_path):
    schema = AttributeSchema.of(("a", "numeric"))
    path = tmp_path / "empty.txt"
    path.write_text("")
    ds = load_dataset(path, schema=schema)
    assert ds.m == 0
    fm = assemble(ds)
    assert fm.matrix.shape == (0, 1)


def test_assemble_layout_and_slices():
    ds = toy_dataset(m=9, seed=1)
    fm = assemble(ds)
    assert fm.matrix.shape == (9, 5)
    assert fm.column_map == [("price", 0), ("emb", 0), ("emb", 1),
                             ("emb", 2), ("year", 0)]
    assert np.array_equal(fm.matrix[:, fm.attr_slices["emb"]], ds.columns["emb"])
    part = assemble(ds, attrs=["emb", "year"])
    assert part.matrix.shape == (9, 4)
    assert part.column_map[0] == ("emb", 0)


def test_vec_file_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    mat = rng.normal(size=(23, 6)).astype(np.float32)
    path = tmp_path / "vectors.vec"
    write_vec_file(path, mat)
    back = read_vec_file(path)
    assert back.shape == (23, 6)
    assert np.allclose(back, mat, atol=0)
    # int32 dim prefix + float32 payload, little endian
    raw = path.read_bytes()
    assert len(raw) == 23 * (4 + 4 * 6)
    assert int.from_bytes(raw[:4], "little") == 6


def test_vec_file_rejects_truncation(tmp_path):
    path = tmp_path / "trunc.vec"
    rng = np.random.default_rng(0)
    write_vec_file(path, rng.normal(size=(4, 3)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-2])
    with pytest.raises(DatasetFormatError):
        read_vec_file(path)
