import subprocess
import sys
from pathlib import Path
from typing import Generator

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker

from igdf.envs import family_spec, generate_dataset, make_env_pair
from igdf.mdp_core import DomainTag, EmpiricalMDP, make_rng
from igdf.models import Base, Experiment
from igdf.schemas import ContrastiveConfig, DaraConfig, FilterConfig, IqlConfig

PROJECT_ROOT = Path(__file__).resolve().parent.parent


# ---------------------------------------------------------------- environments and data

@pytest.fixture(scope="session")
def small_grid_spec():
    """3x3 slip-shift gridworld, goal in the far corner."""
    return family_spec("gridworld-slip", width=3, height=3, goal=(2, 2), horizon=20)


@pytest.fixture(scope="session")
def grid_pair(small_grid_spec):
    return make_env_pair(small_grid_spec)


@pytest.fixture(scope="session")
def grid_datasets(grid_pair):
    """(source, target) tabular datasets of 2000 transitions each."""
    d_src = generate_dataset(grid_pair, DomainTag.SOURCE, "medium_replay_mix", 2000, seed=0)
    d_tar = generate_dataset(grid_pair, DomainTag.TARGET, "expert_mix", 2000, seed=0)
    return d_src, d_tar


@pytest.fixture(scope="session")
def pointmass_pair():
    return make_env_pair(family_spec("pointmass-mass", horizon=20))


@pytest.fixture(scope="session")
def pointmass_datasets(pointmass_pair):
    d_src = generate_dataset(pointmass_pair, DomainTag.SOURCE, "medium_replay_mix", 1000, seed=0)
    d_tar = generate_dataset(pointmass_pair, DomainTag.TARGET, "expert_mix", 500, seed=0)
    return d_src, d_tar


@pytest.fixture
def random_empirical_pair():
    """
    Factory for full-support empirical pairs sharing one (s, a) distribution:
    source and target differ only in their Dirichlet(2) dynamics.
    """
    def _make(seed: int, n_states: int = 4, n_actions: int = 2) -> tuple[EmpiricalMDP, EmpiricalMDP]:
        rng = make_rng(seed, 99)
        sa_weights = rng.dirichlet(np.full(n_states * n_actions, 2.0)).reshape(n_states, n_actions)
        p_src = rng.dirichlet(np.full(n_states, 2.0), size=(n_states, n_actions))
        p_tar = rng.dirichlet(np.full(n_states, 2.0), size=(n_states, n_actions))
        return EmpiricalMDP.from_joint(sa_weights, p_src), EmpiricalMDP.from_joint(sa_weights, p_tar)

    return _make


# ---------------------------------------------------------------- tiny configs

@pytest.fixture
def tiny_contrastive_cfg():
    return ContrastiveConfig(
        dim=4, negatives_per_positive=7, batch_size=16, update_count=20, hidden_dims=(8,), log_every=10,
    )


@pytest.fixture
def tiny_iql_cfg():
    return IqlConfig(
        td_steps=10, policy_steps=10, batch_size=16, hidden_dims=(8,), log_every=5, discount=0.9,
    )


@pytest.fixture
def tiny_filter_cfg():
    return FilterConfig(xi=0.25, alpha=1.0, batch_size=16)


@pytest.fixture
def tiny_dara_cfg():
    return DaraConfig(hidden_dims=(8,), update_count=20, batch_size=16, log_every=10)


@pytest.fixture
def tiny_experiment_dict(tmp_path):
    """A complete experiment config small enough for a few seconds of work."""
    return {
        "schema_version": 1,
        "name": "tiny",
        "env": {"kind": "gridworld", "name": "tiny-grid", "width": 3, "height": 3, "goal": [2, 2], "horizon": 10},
        "n_source": 400,
        "n_target": 200,
        "target_data_ratio": 0.5,
        "contrastive": {"dim": 4, "negatives_per_positive": 7, "batch_size": 16, "update_count": 10,
                        "hidden_dims": [8], "log_every": 5},
        "filter": {"xi": 0.5, "alpha": 1.0, "batch_size": 16},
        "iql": {"td_steps": 10, "policy_steps": 10, "batch_size": 16, "hidden_dims": [8], "log_every": 5},
        "dara": {"hidden_dims": [8], "update_count": 10, "batch_size": 16, "log_every": 5},
        "n_seeds": 2,
        "eval_episodes": 3,
        "output_dir": str(tmp_path / "experiment"),
        "mode": "igdf",
    }


# ---------------------------------------------------------------- run registry database

@pytest.fixture(scope="session")
def engine() -> Generator:
    """
    Creates a SQLAlchemy engine on an in-memory SQLite database.
    """
    engine = create_engine("sqlite://", echo=False)
    try:
        yield engine
    finally:
        engine.dispose()


@pytest.fixture(scope="session")
def SessionLocal(engine) -> Generator:
    """
    Creates a sessionmaker bound to the test engine.
    """
    Session = sessionmaker(bind=engine)
    yield Session


@pytest.fixture(scope="session", autouse=True)
def setup_database(engine):
    """
    Creates all tables before tests and drops them after all tests.
    """
    Base.metadata.create_all(engine)
    yield
    Base.metadata.drop_all(engine)


@pytest.fixture(scope="function")
def db_session(SessionLocal) -> Generator:
    """
    Provides a SQLAlchemy session for a test and closes it afterwards.
    """
    session = SessionLocal()
    try:
        yield session
    except SQLAlchemyError as e:
        session.rollback()
        raise e
    finally:
        session.close()


@pytest.fixture(scope="function")
def test_experiment(db_session) -> Experiment:
    """
    Creates an experiment row with a minimal config.
    """
    experiment = Experiment(name="registry-test", config={"schema_version": 1}, config_hash="0" * 64, version="test")
    db_session.add(experiment)
    db_session.commit()
    db_session.refresh(experiment)
    return experiment


# ---------------------------------------------------------------- command line

@pytest.fixture(scope="session")
def run_cli():
    """
    Runs ``python -m igdf`` in a subprocess from the project root.
    """
    def _run(*args: str) -> subprocess.CompletedProcess:
        return subprocess.run(
            [sys.executable, "-m", "igdf", "--log-level", "WARNING", *args],
            cwd=PROJECT_ROOT,
            capture_output=True,
            text=True,
            timeout=600,
        )

    return _run
