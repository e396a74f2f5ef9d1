import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def ml_data(tmp_path_factory):
    """Synthetic stand-in with the MovieLens-100K shape (943/1682/100000)."""
    from grouprec import datagen

    path = tmp_path_factory.mktemp("data") / "synth_ml100k.data"
    datagen.write_movielens_like(path)
    return path


@pytest.fixture(scope="session")
def itm_data(tmp_path_factory):
    """Synthetic stand-in with the ITM shape (454/70/5230), generic CSV."""
    from grouprec import datagen

    path = tmp_path_factory.mktemp("data") / "synth_itm.csv"
    datagen.write_itm_like(path)
    return path


@pytest.fixture(scope="session")
def default_run(ml_data, tmp_path_factory):
    """One full default-config experiment, shared by the acceptance criteria."""
    from grouprec.experiment import ExperimentConfig, run_experiment

    out = tmp_path_factory.mktemp("results")
    config = ExperimentConfig(data_path=str(ml_data), out_dir=str(out))
    t0 = time.monotonic()
    report = run_experiment(config, log=None)
    elapsed = time.monotonic() - t0
    return report, config, out, elapsed
