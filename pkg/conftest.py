import numpy as np
import pytest

from calipersynth.data_model import Dataset


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='Also run the full-count property checks and Monte Carlo studies')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-count property checks and Monte Carlo studies (needs --runslow)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def build_dataset(treated, controls, y_treated=None, y_controls=None, columns=None):
    """Dataset with treated rows first (ids t1..), then controls (c1..).

    Flat lists are read as a single covariate.
    """
    Xt = np.asarray(treated, dtype=float)
    Xc = np.asarray(controls, dtype=float)
    Xt = Xt.reshape(-1, 1) if Xt.ndim == 1 else Xt
    Xc = Xc.reshape(-1, 1) if Xc.ndim == 1 else Xc
    n_t, n_c = Xt.shape[0], Xc.shape[0]
    y_t = np.zeros(n_t) if y_treated is None else np.asarray(y_treated, dtype=float)
    y_c = np.zeros(n_c) if y_controls is None else np.asarray(y_controls, dtype=float)
    columns = columns or tuple(f"x{k + 1}" for k in range(Xt.shape[1]))
    ids = tuple(f"t{i + 1}" for i in range(n_t)) + tuple(f"c{j + 1}" for j in range(n_c))
    return Dataset(
        ids=ids,
        X=np.vstack([Xt, Xc]),
        Z=np.concatenate([np.ones(n_t, dtype=int), np.zeros(n_c, dtype=int)]),
        Y=np.concatenate([y_t, y_c]),
        column_names=tuple(columns),
    )


@pytest.fixture
def make_dataset():
    return build_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    """Run from an empty directory with no CSM_* variables set, restoring them afterwards."""
    for name in ('CSM_CONFIG', 'CSM_WORKERS', 'CSM_LOG_LEVEL'):
        # setenv first so that anything a .env file loads is removed on teardown
        monkeypatch.setenv(name, 'unset')
        monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)
    return tmp_path
