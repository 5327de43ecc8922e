import numpy as np
import pytest

from app.errors import ConfigError
from app.services.field import Repr, partial_ft
from app.utils.io import (
    build_manifest,
    dump_field,
    export_slice_csv,
    load_field,
    path_rows,
    read_csv,
    sha256_file,
    write_csv,
    write_json,
)


def test_field_dump_keeps_grid_and_representation(tmp_path, packet16):
    path = str(tmp_path / "f.hfld")
    dump_field(partial_ft(packet16), path)
    loaded = load_field(path)
    assert loaded.repr == Repr.PARTIAL
    assert loaded.grid.counts == packet16.grid.counts
    assert loaded.grid.extents == packet16.grid.extents
    # values are stored as complex64
    np.testing.assert_allclose(loaded.values, partial_ft(packet16).values, atol=1e-6)


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTAFIELD")
    with pytest.raises(ConfigError):
        load_field(str(path))


def test_csv_tables(tmp_path):
    path = str(tmp_path / "t.csv")
    write_csv(path, [{"n": 2, "err": 0.1}, {"n": 4, "err": 1 / 3}])
    rows = read_csv(path)
    assert rows[0] == {"n": "2", "err": "0.10000000000000001"}
    assert float(rows[1]["err"]) == 1 / 3


def test_slice_export(tmp_path, packet16):
    path = str(tmp_path / "slice.csv")
    export_slice_csv(packet16, path, 8)
    rows = read_csv(path)
    assert len(rows) == 16 * 16
    assert list(rows[0]) == ["x", "y", "re", "im"]
    assert float(rows[0]["x"]) == -6.0


def test_path_rows():
    rows = path_rows(np.array([0.0, 0.5]), np.array([[0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0, 4.0, 5.0]]))
    assert list(rows[1]) == ["time", "x1", "x2", "y1", "y2", "s"]
    assert rows[1]["y2"] == 4.0


def test_manifest_lists_hashes(tmp_path):
    write_json(str(tmp_path / "a.json"), {"b": 1, "a": [1.5]})
    (tmp_path / "sub").mkdir()
    write_csv(str(tmp_path / "sub" / "b.csv"), [{"x": 1}])
    write_json(str(tmp_path / "manifest.json"), [])
    entries = build_manifest(str(tmp_path))
    assert [e["file"] for e in entries] == ["a.json", "sub/b.csv"]
    assert entries[0]["sha256"] == sha256_file(str(tmp_path / "a.json"))
    assert entries[1]["bytes"] == len("x\n1\n")
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
