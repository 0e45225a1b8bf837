import json
from pathlib import Path

import pytest

from sharpld.dist import GeneralizedNormal, SymmetricRV, Constant
from sharpld.model import Exponential, PortfolioModel, Uniform01, BoundedGrid, model_from_dict

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# lines collected by the acceptance suite and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def load(name: str) -> PortfolioModel:
    return model_from_dict(json.loads((CONFIGS / f"{name}.json").read_text()))


@pytest.fixture(scope="session")
def gauss_model():
    return load("table_e1")


@pytest.fixture(scope="session")
def pareto_model():
    return load("table_e2")


@pytest.fixture(scope="session")
def boundary_model():
    return load("table_e2_literal")


@pytest.fixture(scope="session")
def degenerate_model():
    return load("degenerate")


@pytest.fixture(scope="session")
def exp_model():
    return PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5), U=Exponential(2.0), b=0.5)


@pytest.fixture(scope="session")
def grid_model():
    return PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5),
                          U=BoundedGrid((0.2, 0.5, 1.0), (0.3, 0.5, 0.2)), b=0.5)


@pytest.fixture(scope="session")
def rv_model():
    return PortfolioModel(Z=SymmetricRV(2.0, Constant(1.0), 1.0), eps=SymmetricRV(3.0, Constant(1.0), 1.0),
                          U=Uniform01(), b=0.5)
