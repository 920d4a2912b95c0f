import os
import shutil
from pathlib import Path

import pytest

MICRO = """
model.dim = 16
model.heads = 4
model.layers = 2
model.grid_t = 3x3
model.grid_r = 3x3
model.mlp_hidden = 24
model.regressor_hidden = 24
data.scenes = 2
data.landmarks = 32
data.train_sizes = 16
data.test_sizes = 4
train.epochs = 2
train.diag_samples = 4
optim.lr = 1e-3
"""


@pytest.fixture
def micro_config(tmp_path: Path) -> Path:
    path = tmp_path / "micro.cfg"
    path.write_text(MICRO)
    return path


@pytest.fixture
def cli() -> str:
    exe = os.environ.get("QKALIGN_CLI") or shutil.which("qkalign")
    if not exe:
        pytest.skip("qkalign executable not available")
    return exe
