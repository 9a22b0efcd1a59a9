import json

import numpy as np
import pytest

from ovchange import synth
from ovchange.tensorio import write_dense_array


@pytest.fixture(scope="session")
def scene(tmp_path_factory):
    """A default 64x64 scene: (manifest path, planted GT, spec)."""
    spec = synth.SceneSpec(seed=1)
    out = tmp_path_factory.mktemp("scene")
    manifest_path, gt = synth.gen_scene(spec, out)
    return manifest_path, gt, spec


def make_minimal_manifest(
    out_dir,
    height=8,
    width=8,
    vocabulary=("a-thing", "b-thing"),
    dense=None,
    token_shape=(2, 2, 4),
    instances=None,
    mirror_dates=True,
    token_shape_b=None,
):
    """Write a tiny hand-rolled manifest; dense of None omits the branch."""
    k = len(vocabulary)
    rng = np.random.Generator(np.random.PCG64(7))
    refs = {}
    for date in ("a", "b"):
        tshape = token_shape if date == "a" or token_shape_b is None else token_shape_b
        tokens = rng.normal(size=tshape).astype(np.float32)
        image = rng.uniform(0, 255, size=(height, width, 3)).astype(np.float32)
        if mirror_dates and date == "b":
            tokens = refs["a"]["tokens_arr"]
            image = refs["a"]["image_arr"]
            if token_shape_b is not None:
                tokens = rng.normal(size=token_shape_b).astype(np.float32)
        write_dense_array(out_dir / f"{date}_tokens.npy", tokens)
        write_dense_array(out_dir / f"{date}_image.npy", image)
        entry = {
            "instances": instances[date] if instances else [[] for _ in range(k)],
            "tokens": f"{date}_tokens.npy",
            "image": f"{date}_image.npy",
            "tokens_arr": tokens,
            "image_arr": image,
        }
        if dense is not None:
            paths = []
            for i, arr in enumerate(dense[date]):
                if arr is None:
                    paths.append(None)
                else:
                    write_dense_array(out_dir / f"{date}_dense_{i}.npy", arr.astype(np.float32))
                    paths.append(f"{date}_dense_{i}.npy")
            entry["dense"] = paths
        refs[date] = entry
    manifest = {
        "image_height": height,
        "image_width": width,
        "vocabulary": list(vocabulary),
        "queried_prompt_sets": {"thing": [0]},
        "dates": {
            d: {key: val for key, val in refs[d].items() if not key.endswith("_arr")}
            for d in ("a", "b")
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path
