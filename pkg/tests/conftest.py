"""Shared fixtures: a default world, metric/mpc configs, tiny scenarios."""

import numpy as np
import pytest

from herdplan.geometry import Point2
from herdplan.mpc import MpcConfig
from herdplan.sim import MetricsConfig, WorldConfig


@pytest.fixture(scope="session")
def world_config() -> WorldConfig:
    return WorldConfig()


@pytest.fixture(scope="session")
def metrics_config() -> MetricsConfig:
    return MetricsConfig(dilation=0.006)


@pytest.fixture(scope="session")
def mpc_config() -> MpcConfig:
    return MpcConfig(d_min=0.03)


@pytest.fixture()
def tmp_scenario(tmp_path):
    """Write a scenario file from a dict of sections and return its path."""

    def write(sections: dict, name: str = "tiny.scn") -> str:
        lines = []
        for section, keys in sections.items():
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {value}")
            lines.append("")
        path = tmp_path / name
        path.write_text("\n".join(lines))
        return str(path)

    return write


TINY_SECTIONS = {
    "world": {
        "arena": "0 0 1.2 0.9",
        "gate": "0.6 0.15",
        "gate_width": "0.18",
        "particle_radius": "0.01",
        "crossbar": "0.12",
        "stem": "0.10",
        "substep": "0.005",
        "seed": "0",
    },
    "distribution": {
        "shape": "disc",
        "count": "12",
        "center": "0.6 0.42",
        "radius": "0.05",
    },
    "metrics": {
        "harmonics": "5",
        "boundary_samples": "256",
        "metric_samples": "64",
        "dilation": "0.006",
        "resolution": "0.0025",
        "gap_epsilon": "0.01",
    },
    "mpc": {
        "horizon": "50",
        "dt": "0.1",
        "d_min": "0.03",
        "v_max": "0.5",
        "omega_max": "2.0",
        "penalty": "10",
        "max_iterations": "400",
        "step_size": "0.002",
    },
    "planner": {
        "push_count": "10",
        "push_distance": "0.36",
        "zeta_threshold": "55.0",
        "targets": "5",
        "max_actions": "200",
    },
    "run": {"policy": "herding"},
}


def tiny_sections() -> dict:
    """Deep-copied tiny 12-particle scenario sections for editing."""
    return {k: dict(v) for k, v in TINY_SECTIONS.items()}


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
