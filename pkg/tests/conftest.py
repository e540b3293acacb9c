import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

TINY_CONFIG = {
    "train_scenes": ["sphere_box"],
    "test_scenes": ["checker"],
    "resolution": [32, 32],
    "epochs": 1,
    "batch": 1,
}


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Two scenes, one 20-frame clip each, 32x32, cheap references."""
    from rlpath import dataset
    from rlpath.scenegen.scene import get_scene

    root = tmp_path_factory.mktemp("tiny") / "data"
    dataset.generate([get_scene("sphere_box"), get_scene("checker")], root, seed=1, resolution=(32, 32),
                     frames=20, ref_spp=16)
    return root
