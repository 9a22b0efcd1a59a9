import numpy as np
import pytest

from reference import ref_struct_filter
from ovchange.decode import (
    DecodeConfig,
    quantize_and_threshold,
    read_mask,
    struct_filter,
    write_mask_png,
)


def test_quantize_basic():
    assert quantize_and_threshold(np.array([[1.0]]), 127)[0, 0] == 1
    assert quantize_and_threshold(np.array([[0.0]]), 0)[0, 0] == 0
    # floor(255 * (127/255)) == 127, strict > keeps it negative
    assert quantize_and_threshold(np.array([[127.0 / 255.0]]), 127)[0, 0] == 0
    assert quantize_and_threshold(np.array([[128.0 / 255.0]]), 127)[0, 0] == 1


def test_threshold_monotonicity():
    rng = np.random.Generator(np.random.PCG64(51))
    pooled = rng.random((16, 16))
    t1, t2 = sorted(rng.integers(0, 256, size=2).tolist())
    if t1 == t2:
        t2 += 1
    m1 = quantize_and_threshold(pooled, t1)
    m2 = quantize_and_threshold(pooled, t2)
    assert (m1 >= m2).all()  # lower threshold gives a superset


def test_struct_filter_zero_fixed_point():
    cfg = DecodeConfig(min_component_area=2)
    out = struct_filter(np.zeros((8, 8), dtype=np.uint8), cfg)
    assert not out.any()


def test_struct_filter_speckle_removed():
    cfg = DecodeConfig(opening_radius=0, closing_radius=0, min_component_area=2)
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[3, 3] = 1
    assert not struct_filter(mask, cfg).any()


def test_struct_filter_square_preserved():
    cfg = DecodeConfig(opening_radius=1, closing_radius=1, min_component_area=16)
    mask = np.zeros((40, 40), dtype=np.uint8)
    mask[10:30, 10:30] = 1
    out = struct_filter(mask, cfg)
    assert np.array_equal(out, mask)
    ref = ref_struct_filter(mask, 1, 1, 16)
    assert np.array_equal(out, ref)


def test_struct_filter_matches_bruteforce():
    rng = np.random.Generator(np.random.PCG64(52))
    for radius in (0, 1, 2):
        mask = (rng.random((24, 24)) > 0.6).astype(np.uint8)
        cfg = DecodeConfig(
            opening_radius=radius, closing_radius=radius, min_component_area=5
        )
        ours = struct_filter(mask, cfg)
        ref = ref_struct_filter(mask, radius, radius, 5)
        assert np.array_equal(ours, ref)


def test_struct_filter_disabled_passthrough():
    rng = np.random.Generator(np.random.PCG64(53))
    mask = (rng.random((10, 10)) > 0.5).astype(np.uint8)
    out = struct_filter(mask, DecodeConfig(), enabled=False)
    assert np.array_equal(out, mask)


def test_struct_filter_idempotent_with_zero_radii():
    rng = np.random.Generator(np.random.PCG64(54))
    mask = (rng.random((20, 20)) > 0.55).astype(np.uint8)
    cfg = DecodeConfig(opening_radius=0, closing_radius=0, min_component_area=4)
    once = struct_filter(mask, cfg)
    twice = struct_filter(once, cfg)
    assert np.array_equal(once, twice)


def test_struct_filter_anti_extensive_and_identity():
    rng = np.random.Generator(np.random.PCG64(57))
    mask = (rng.random((20, 20)) > 0.5).astype(np.uint8)
    # opening + component removal only (no closing) never adds pixels
    cfg = DecodeConfig(opening_radius=1, closing_radius=0, min_component_area=3)
    out = struct_filter(mask, cfg)
    assert not (out & ~mask).any()
    # everything zeroed -> identity
    null_cfg = DecodeConfig(opening_radius=0, closing_radius=0, min_component_area=1)
    assert np.array_equal(struct_filter(mask, null_cfg), mask)


def test_struct_filter_binary_output():
    rng = np.random.Generator(np.random.PCG64(55))
    mask = (rng.random((15, 15)) > 0.4).astype(np.uint8)
    out = struct_filter(mask, DecodeConfig(min_component_area=3))
    assert set(np.unique(out)) <= {0, 1}


def test_min_area_scaling():
    cfg = DecodeConfig()
    assert cfg.resolved_min_area(512, 512) == 32
    assert cfg.resolved_min_area(64, 64) == 1  # floored, at least 1
    assert DecodeConfig(min_component_area=7).resolved_min_area(64, 64) == 7


def test_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(tau_u8=256)
    with pytest.raises(ValueError):
        DecodeConfig(opening_radius=-1)


def test_mask_png_roundtrip(tmp_path):
    rng = np.random.Generator(np.random.PCG64(56))
    mask = (rng.random((12, 12)) > 0.5).astype(np.uint8)
    path = tmp_path / "m.png"
    write_mask_png(path, mask)
    assert np.array_equal(read_mask(path), mask)
