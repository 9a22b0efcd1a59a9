import hashlib
import json

import numpy as np
import pytest

from ovchange import synth, tensorio
from ovchange.errors import SceneSpecError
from ovchange.gate import gate_from_tokens


def dir_digest(path):
    h = hashlib.sha256()
    for f in sorted(path.rglob("*")):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def test_same_seed_byte_identical(tmp_path):
    spec = synth.SceneSpec(seed=7, pseudo_change_noise=0.3)
    synth.gen_scene(spec, tmp_path / "one")
    synth.gen_scene(spec, tmp_path / "two")
    assert dir_digest(tmp_path / "one") == dir_digest(tmp_path / "two")


def test_different_seeds_differ(tmp_path):
    synth.gen_scene(synth.SceneSpec(seed=1), tmp_path / "one")
    synth.gen_scene(synth.SceneSpec(seed=2), tmp_path / "two")
    assert dir_digest(tmp_path / "one") != dir_digest(tmp_path / "two")


def test_outputs_pass_validation(tmp_path):
    manifest_path, gt = synth.gen_scene(synth.SceneSpec(seed=3), tmp_path)
    bundle = tensorio.load_pair_bundle(tensorio.read_manifest(manifest_path))
    assert bundle.manifest.queried_prompt_sets == {"target": [0]}
    assert gt.shape == (64, 64)


def test_planted_gt_reconstructible(tmp_path):
    region = synth.Region(10, 12, 30, 40)
    spec = synth.SceneSpec(seed=4, planted_region=region)
    _, gt = synth.gen_scene(spec, tmp_path)
    assert np.array_equal(gt, region.mask(64, 64))
    saved = tensorio.read_dense_array(tmp_path / "gt.npy")
    assert np.array_equal(saved, gt)


def test_ellipse_region():
    region = synth.Region(8, 8, 24, 40, kind="ellipse")
    mask = region.mask(32, 48)
    assert mask[16, 24] == 1  # center
    assert mask[8, 8] == 0  # bounding-box corner stays outside
    assert mask.sum() < (24 - 8) * (40 - 8)


def test_region_validation():
    with pytest.raises(SceneSpecError):
        synth.Region(0, 0, 80, 10).mask(64, 64)
    with pytest.raises(SceneSpecError):
        synth.Region(5, 5, 5, 10).mask(64, 64)
    with pytest.raises(SceneSpecError):
        synth.Region(0, 0, 4, 4, kind="hexagon").mask(8, 8)


def test_spec_validation():
    with pytest.raises(SceneSpecError):
        synth.SceneSpec(queried_class=9).validate()
    with pytest.raises(SceneSpecError):
        synth.SceneSpec(k=0).validate()
    with pytest.raises(SceneSpecError):
        synth.SceneSpec(competitor_strength=2.0).validate()


def test_token_rotation_drives_gate(tmp_path):
    angle = np.pi / 2
    spec = synth.SceneSpec(seed=5, token_change_magnitude=angle)
    manifest_path, _ = synth.gen_scene(spec, tmp_path)
    bundle = tensorio.load_pair_bundle(tensorio.read_manifest(manifest_path))
    gate = gate_from_tokens(bundle.a.tokens, bundle.b.tokens)
    # rotated cells sit near (1 - cos angle) / 2; untouched cells at 0
    changed = gate > 0.1
    assert changed.any()
    assert np.abs(gate[changed] - 0.5).max() < 1e-5
    assert np.abs(gate[~changed]).max() < 1e-12


def test_token_noise_only_outside(tmp_path):
    spec = synth.SceneSpec(seed=6, token_noise=0.05, token_change_magnitude=0.0)
    manifest_path, gt = synth.gen_scene(spec, tmp_path)
    bundle = tensorio.load_pair_bundle(tensorio.read_manifest(manifest_path))
    diff = np.abs(bundle.a.tokens - bundle.b.tokens).sum(axis=-1)
    assert (diff > 0).any()


def test_gen_dataset_layout(tmp_path):
    dataset_path = synth.gen_dataset(synth.SceneSpec(seed=0), 3, tmp_path)
    data = json.loads(dataset_path.read_text())
    assert len(data["pairs"]) == 3
    for entry in data["pairs"]:
        assert (tmp_path / entry["manifest"]).is_file()
        assert (tmp_path / entry["change_gt"]).is_file()
    assert data["class_ids"] == {"target": 1}
