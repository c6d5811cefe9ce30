import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdpauth.dataset import (MANIFEST_NAME, Layout, export_layout, load_dataset, load_real_dataset,
                             read_manifest, save_dataset, split_dataset, split_sizes, synthesize,
                             validate_manifest, write_png)
from cdpauth.errors import ConfigError

from conftest import PROFILES


@pytest.fixture(scope="module")
def ten(small_tuples):
    return small_tuples[:10]


def _assert_close(a, b):
    assert a.id == b.id
    assert np.array_equal(a.template.pixels, b.template.pixels)
    assert set(a.originals) == set(b.originals) and set(a.fakes) == set(b.fakes)
    for k in a.originals:
        assert np.abs(a.originals[k].pixels - b.originals[k].pixels).max() <= 1 / 255
    for k in a.fakes:
        assert np.abs(a.fakes[k].pixels - b.fakes[k].pixels).max() <= 1 / 255
        assert b.fakes[k].attacker_printer == k[0] and b.fakes[k].defender_printer == k[1]


def test_save_load_round_trip(ten, tmp_path):
    save_dataset(ten, tmp_path, seed=3, estimator="otsu", attack_seed=5)
    # 1 template + 2 originals + 4 fakes per tuple
    assert len(list(tmp_path.glob("*.png"))) == 70
    back, manifest = load_dataset(tmp_path)
    for a, b in zip(ten, back):
        _assert_close(a, b)
    assert manifest.dimensions == (16, 16)
    assert manifest.defenders == ["vpA", "vpB"] and manifest.attackers == ["vpA", "vpB"]
    assert manifest.estimator == "otsu" and manifest.attack_seed == 5
    assert not (tmp_path / (MANIFEST_NAME + ".tmp")).exists()


def test_manifest_schema(ten, tmp_path):
    path = save_dataset(ten, tmp_path)
    data = json.loads(path.read_text())
    validate_manifest(data)
    assert data["tuples"][0]["fakes"]["vpB/vpA"] == "f_vpB_vpA_1.png"
    for mutate in (lambda d: d.pop("dimensions"), lambda d: d.update(version="one"),
                   lambda d: d["tuples"][1].update(id=7), lambda d: d.update(dimensions=[4, 4])):
        bad = json.loads(path.read_text())
        mutate(bad)
        with pytest.raises(ConfigError):
            validate_manifest(bad)
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        read_manifest(tmp_path)


def test_load_rejects_wrong_size(ten, tmp_path):
    save_dataset(ten, tmp_path)
    write_png(tmp_path / "x_vpA_3.png", np.zeros((8, 8)))
    with pytest.raises(ConfigError, match="x_vpA_3"):
        load_dataset(tmp_path)


def test_synthesize_deterministic():
    a = synthesize(3, 16, 0.5, PROFILES, seed=9)
    b = synthesize(3, 16, 0.5, PROFILES, seed=9)
    c = synthesize(3, 16, 0.5, PROFILES, seed=10)
    assert all(np.array_equal(x.originals["vpB"].pixels, y.originals["vpB"].pixels) for x, y in zip(a, b))
    assert not np.array_equal(a[0].template.pixels, c[0].template.pixels)
    with pytest.raises(ConfigError):
        synthesize(0, 16, 0.5, PROFILES, seed=9)


class TestSplit:
    def test_sizes(self):
        assert split_sizes(720) == (288, 72, 360)
        assert split_sizes(10) == (4, 1, 5)
        assert tuple(map(len, split_dataset(range(1, 721)))) == (288, 72, 360)

    def test_deterministic(self):
        assert split_dataset(range(1, 51), seed=4) == split_dataset(list(range(50, 0, -1)), seed=4)
        assert split_dataset(range(1, 51), seed=4) != split_dataset(range(1, 51), seed=5)

    @given(st.integers(10, 300), st.integers(0, 2**32 - 1))
    def test_partition(self, n, seed):
        parts = split_dataset(range(1, n + 1), seed=seed)
        joined = [i for p in parts for i in p]
        assert sorted(joined) == list(range(1, n + 1))
        assert all(p == sorted(p) for p in parts)
        assert tuple(map(len, parts)) == split_sizes(n)

    def test_errors(self):
        with pytest.raises(ValueError):
            split_dataset(range(9))
        with pytest.raises(ValueError):
            split_dataset([1, 1] + list(range(2, 12)))
        with pytest.raises(ValueError):
            split_sizes(10, (0.5, 0.5, 0.5))


class TestRealLayout:
    def test_export_ingest_equivalence(self, ten, tmp_path):
        layout = Layout.default(["vpA", "vpB"], ["vpA", "vpB"])
        export_layout(ten, tmp_path, layout)
        back, report = load_real_dataset(tmp_path, layout)
        assert report.n_tuples == 10 and report.dimensions == (16, 16)
        for a, b in zip(ten, back):
            _assert_close(a, b)

    def test_layout_ini_round_trip(self, tmp_path):
        layout = Layout("t", {"55": "o55"}, {("76", "55"): "f"}, "png")
        layout.write(tmp_path / "l.ini")
        assert Layout.read(tmp_path / "l.ini") == layout
        (tmp_path / "bad.ini").write_text("[layout]\ntemplate = t\nfake.76 = x\n")
        with pytest.raises(ConfigError):
            Layout.read(tmp_path / "bad.ini")
        with pytest.raises(ConfigError):
            Layout.read(tmp_path / "missing.ini")

    def test_empty_and_missing_dirs(self, tmp_path):
        layout = Layout("t", {"p": "o"}, {})
        with pytest.raises(ConfigError, match="missing role"):
            load_real_dataset(tmp_path, layout)
        (tmp_path / "t").mkdir()
        (tmp_path / "o").mkdir()
        with pytest.raises(ConfigError, match="no"):
            load_real_dataset(tmp_path, layout)

    def test_skips_mismatched_and_incomplete(self, ten, tmp_path):
        layout = Layout.default(["vpA"], [])
        export_layout(ten[:4], tmp_path, layout)
        write_png(tmp_path / "original_vpA" / "2.png", np.zeros((8, 8)))
        (tmp_path / "original_vpA" / "3.png").unlink()
        tuples, report = load_real_dataset(tmp_path, layout)
        assert report.skipped_dimension == ["2"] and report.skipped_incomplete == ["3"]
        assert [t.id for t in tuples] == [1, 2]
        assert np.array_equal(tuples[1].template.pixels, ten[3].template.pixels)
