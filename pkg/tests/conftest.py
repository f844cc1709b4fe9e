"""Shared fixtures: the raw fixture corpus, a preprocessed desk-scale dataset,
and (for the acceptance suite) fully trained desk runs."""

from __future__ import annotations

from pathlib import Path

import pytest

from sketchseg.cli import main as cli_main
from sketchseg.dataset import DatasetManifest, load_sample
from sketchseg.schema import builtin_palette

FIXTURE_RAW = Path(__file__).resolve().parent / "fixtures" / "raw"

DESK_INI = """\
[model]
class_count = 25
canvas = 96
width_multiplier = 1/8
ate_enabled = {ate}

[train]
lr0 = 0.001
momentum = 0.9
decay_power = 0.9
batch_size = 5
epochs = {epochs}
split = 0.75
seed = 7
background_weight = {background_weight}

[prep]
canvas = 96
resize_min = 64
resize_max = 80
seed = 5
"""


def write_desk_config(path: Path, epochs=300, ate="true", background_weight=0) -> Path:
    path.write_text(
        DESK_INI.format(epochs=epochs, ate=ate, background_weight=background_weight),
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def raw_dir() -> Path:
    assert FIXTURE_RAW.is_dir(), "run tests/make_fixtures.py first"
    return FIXTURE_RAW


@pytest.fixture(scope="session")
def prep_dir(raw_dir, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("prep")
    cfg = write_desk_config(out / "desk.ini")
    rc = cli_main(
        ["preprocess", "--in", str(raw_dir), "--out", str(out / "data"), "--config", str(cfg)]
    )
    assert rc == 0
    return out / "data"


@pytest.fixture(scope="session")
def desk_samples(prep_dir):
    palette = builtin_palette()
    manifest = DatasetManifest.scan(prep_dir)
    return [load_sample(rec, palette) for rec in manifest.records]


def run_cli_train(prep_dir: Path, out_dir: Path, log_timing="none", **config_kwargs) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = write_desk_config(out_dir / "desk.ini", **config_kwargs)
    rc = cli_main(
        [
            "train",
            "--data",
            str(prep_dir),
            "--out",
            str(out_dir),
            "--config",
            str(cfg),
            "--log-timing",
            log_timing,
            "--threads",
            "1",
        ]
    )
    assert rc == 0
    return out_dir


@pytest.fixture(scope="session")
def desk_run_ate(prep_dir, tmp_path_factory) -> Path:
    """Full 300-epoch desk training with encoders enabled (the overfit run)."""
    return run_cli_train(prep_dir, tmp_path_factory.mktemp("run_ate"), log_timing="wall")


@pytest.fixture(scope="session")
def desk_run_no_ate(prep_dir, tmp_path_factory) -> Path:
    """Same budget with all affine transform encoders disabled."""
    return run_cli_train(
        prep_dir, tmp_path_factory.mktemp("run_noate"), log_timing="wall", ate="false"
    )
