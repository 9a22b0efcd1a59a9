import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from extract_adapter import BackboneUnavailable, ExtractionJob, ImageLoadError, extract
from extract_adapter.npyio import write_npy


@pytest.fixture()
def image_pair(tmp_path):
    rng = np.random.Generator(np.random.PCG64(123))
    base = rng.uniform(40, 200, (64, 64, 3))
    after = base.copy()
    after[20:44, 20:44, 0] = np.clip(after[20:44, 20:44, 0] + 70, 0, 255)
    after[20:44, 20:44, 2] = np.clip(after[20:44, 20:44, 2] - 50, 0, 255)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    Image.fromarray(base.astype(np.uint8)).save(a)
    Image.fromarray(after.astype(np.uint8)).save(b)
    return a, b


def job_for(image_pair, **kw):
    a, b = image_pair
    defaults = dict(
        image_a=str(a),
        image_b=str(b),
        vocabulary=["building", "tree", "water"],
        mode="mock",
        seed=9,
        resolution=112,
    )
    defaults.update(kw)
    return ExtractionJob(**defaults)


def dir_digest(path):
    h = hashlib.sha256()
    for f in sorted(path.rglob("*")):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def test_npy_writer_is_numpy_compatible(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_npy(tmp_path / "x.npy", arr)
    assert np.array_equal(np.load(tmp_path / "x.npy"), arr)


def test_mock_extraction_layout(image_pair, tmp_path):
    manifest_path = extract(job_for(image_pair), tmp_path / "out")
    data = json.loads(manifest_path.read_text())
    assert data["image_height"] == 64 and data["image_width"] == 64
    assert data["vocabulary"] == ["building", "tree", "water"]
    assert set(data["dates"]) == {"a", "b"}
    for date in ("a", "b"):
        entry = data["dates"][date]
        assert len(entry["instances"]) == 3
        assert len(entry["dense"]) == 3
        tokens = np.load(tmp_path / "out" / entry["tokens"])
        assert tokens.ndim == 3 and tokens.shape[0] == tokens.shape[1]
        for records in entry["instances"]:
            for rec in records:
                mask = np.load(tmp_path / "out" / rec["mask"])
                assert mask.min() >= 0.0 and mask.max() <= 1.0
                assert 0.0 <= rec["confidence"] <= 1.0
        for ref in entry["dense"]:
            if ref is not None:
                dense = np.load(tmp_path / "out" / ref)
                assert dense.shape == (64, 64)
                assert dense.min() >= 0.0 and dense.max() <= 1.0
    assert data["queried_prompt_sets"]["building"] == [0]


def test_same_seed_byte_identical(image_pair, tmp_path):
    extract(job_for(image_pair), tmp_path / "one")
    extract(job_for(image_pair), tmp_path / "two")
    assert dir_digest(tmp_path / "one") == dir_digest(tmp_path / "two")
    extract(job_for(image_pair, seed=10), tmp_path / "three")
    assert dir_digest(tmp_path / "one") != dir_digest(tmp_path / "three")


def test_s1_roundtrip_through_primary_cli(image_pair, tmp_path):
    manifest_path = extract(job_for(image_pair), tmp_path / "out")
    res = subprocess.run(
        [
            sys.executable, "-m", "ovchange.cli", "detect", str(manifest_path),
            "--class", "building", "--out-dir", str(tmp_path / "masks"),
            "--segments", "64",
        ],
        capture_output=True,
        text=True,
    )
    ok = res.returncode == 0 and (tmp_path / "masks").glob("*.mask.png")
    print(f"{'PASS' if ok else 'FAIL'} S1 adapter round-trip — primary CLI "
          f"exit {res.returncode}")
    assert res.returncode == 0, res.stderr
    masks = list((tmp_path / "masks").glob("*.mask.npy"))
    assert masks
    mask = np.load(masks[0])
    assert mask.shape == (64, 64)


def test_mock_evidence_localizes_change(tmp_path):
    rng = np.random.Generator(np.random.PCG64(5))
    base = rng.uniform(40, 200, (96, 96, 3))
    after = base.copy()
    after[30:70, 30:70, 0] = np.clip(after[30:70, 30:70, 0] + 80, 0, 255)
    a, b = tmp_path / "t0.png", tmp_path / "t1.png"
    Image.fromarray(base.astype(np.uint8)).save(a)
    Image.fromarray(after.astype(np.uint8)).save(b)
    job = ExtractionJob(
        image_a=str(a), image_b=str(b),
        vocabulary=["building", "tree", "water"], seed=3, resolution=112,
    )
    manifest_path = extract(job, tmp_path / "feats")
    res = subprocess.run(
        [
            sys.executable, "-m", "ovchange.cli", "detect", str(manifest_path),
            "--class", "building", "--out-dir", str(tmp_path / "m"),
            "--segments", "144", "--tau-u8", "40",
        ],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    mask = np.load(next((tmp_path / "m").glob("*.mask.npy")))
    assert mask.sum() > 0
    ys, xs = np.nonzero(mask)
    assert ys.min() >= 30 and ys.max() < 70 and xs.min() >= 30 and xs.max() < 70


def test_token_grids_respond_to_change(image_pair, tmp_path):
    manifest_path = extract(job_for(image_pair), tmp_path / "out")
    data = json.loads(manifest_path.read_text())
    ta = np.load(tmp_path / "out" / data["dates"]["a"]["tokens"])
    tb = np.load(tmp_path / "out" / data["dates"]["b"]["tokens"])
    assert ta.shape == tb.shape
    diff = np.abs(ta - tb).sum(axis=-1)
    g = ta.shape[0]
    changed_cells = diff > 1e-6
    # the repainted square occupies the grid interior, not the borders
    assert changed_cells.any()
    assert not changed_cells[0, :].any() and not changed_cells[:, 0].any()


def test_mock_requires_seed(image_pair):
    with pytest.raises(ValueError):
        job_for(image_pair, seed=None).validate()


def test_real_mode_unavailable(image_pair, tmp_path, monkeypatch):
    monkeypatch.delenv("EXTRACT_ADAPTER_SEG_MODEL", raising=False)
    monkeypatch.delenv("EXTRACT_ADAPTER_GEO_MODEL", raising=False)
    with pytest.raises(BackboneUnavailable):
        extract(job_for(image_pair, mode="real"), tmp_path / "real")


def test_real_mode_fallback(image_pair, tmp_path, monkeypatch):
    monkeypatch.delenv("EXTRACT_ADAPTER_SEG_MODEL", raising=False)
    monkeypatch.delenv("EXTRACT_ADAPTER_GEO_MODEL", raising=False)
    manifest = extract(
        job_for(image_pair, mode="real", fallback_to_mock=True), tmp_path / "fb"
    )
    assert manifest.is_file()


def test_image_errors(tmp_path):
    job = ExtractionJob(
        image_a=str(tmp_path / "missing.png"),
        image_b=str(tmp_path / "missing.png"),
        vocabulary=["x"],
        seed=1,
    )
    with pytest.raises(ImageLoadError):
        extract(job, tmp_path / "o")


def test_cli_mock_roundtrip(image_pair, tmp_path):
    a, b = image_pair
    res = subprocess.run(
        [
            sys.executable, "-m", "extract_adapter.cli",
            "--image-a", str(a), "--image-b", str(b),
            "--prompts", "building,tree", "--seed", "4",
            "--resolution", "112", "--out-dir", str(tmp_path / "cli"),
        ],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "cli" / "manifest.json").is_file()


def test_cli_config_file(image_pair, tmp_path):
    a, b = image_pair
    cfg = {
        "image_a": str(a),
        "image_b": str(b),
        "vocabulary": ["building"],
        "mode": "mock",
        "seed": 2,
        "resolution": 112,
        "prompt_banks": {"built-up": [0]},
    }
    cfg_path = tmp_path / "job.json"
    cfg_path.write_text(json.dumps(cfg))
    res = subprocess.run(
        [
            sys.executable, "-m", "extract_adapter.cli",
            "--config", str(cfg_path), "--out-dir", str(tmp_path / "cfg"),
        ],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    data = json.loads((tmp_path / "cfg" / "manifest.json").read_text())
    assert data["queried_prompt_sets"]["built-up"] == [0]


def test_cli_usage_error():
    res = subprocess.run(
        [sys.executable, "-m", "extract_adapter.cli", "--out-dir", "/tmp/never"],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 1
