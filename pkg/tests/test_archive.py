import numpy as np
import pytest

from latentpaint.archive import ArchiveFormatError, content_digest, load_archive, save_archive


def test_roundtrip_exact(tmp_path, rng):
    arrays = {
        "weights": rng.standard_normal((3, 4, 5)).astype(np.float32),
        "mask": (rng.random((8, 8)) > 0.5).astype(np.uint8),
        "big": rng.standard_normal(7).astype(np.float64),
    }
    path = tmp_path / "a.arc"
    save_archive(path, {"kind": "test", "note": 3}, arrays)
    manifest, loaded = load_archive(path)
    assert manifest["kind"] == "test" and manifest["note"] == 3
    for name, arr in arrays.items():
        assert loaded[name].dtype == arr.dtype
        assert np.array_equal(loaded[name], arr)


def test_same_content_same_bytes(tmp_path, rng):
    arrays = {"w": rng.standard_normal((4, 4)).astype(np.float32)}
    p1, p2 = tmp_path / "one.arc", tmp_path / "two.arc"
    save_archive(p1, {"kind": "test"}, arrays)
    save_archive(p2, {"kind": "test"}, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_rejected(tmp_path, rng):
    path = tmp_path / "a.arc"
    save_archive(path, {"kind": "test"}, {"w": rng.standard_normal(16).astype(np.float32)})
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ArchiveFormatError):
        load_archive(path)


def test_not_an_archive_rejected(tmp_path):
    path = tmp_path / "junk.arc"
    path.write_bytes(b"not a zip at all")
    with pytest.raises(ArchiveFormatError):
        load_archive(path)


def test_wrong_version_rejected(tmp_path, rng):
    import json
    import zipfile

    path = tmp_path / "a.arc"
    save_archive(path, {"kind": "test"}, {})
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
    manifest["format_version"] = 99
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest))
    with pytest.raises(ArchiveFormatError, match="version"):
        load_archive(path)


def test_blob_size_mismatch_rejected(tmp_path, rng):
    import json
    import zipfile

    path = tmp_path / "a.arc"
    save_archive(path, {"kind": "test"}, {"w": rng.standard_normal((2, 3)).astype(np.float32)})
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        blob = zf.read("arrays/w")
    manifest["arrays"]["w"]["shape"] = [2, 4]
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest))
        zf.writestr("arrays/w", blob)
    with pytest.raises(ArchiveFormatError, match="bytes"):
        load_archive(path)


def test_content_digest_sensitivity(rng):
    arrays = {"w": rng.standard_normal(8).astype(np.float32)}
    d1 = content_digest({"kind": "x"}, arrays)
    assert content_digest({"kind": "x"}, arrays) == d1
    assert content_digest({"kind": "y"}, arrays) != d1
    tweaked = {"w": arrays["w"].copy()}
    tweaked["w"][0] += 1
    assert content_digest({"kind": "x"}, tweaked) != d1
