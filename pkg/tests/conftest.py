import time

import numpy as np
import pytest

from ocpdiss.models import (REACTOR_INPUT_BOX, REACTOR_STATE_BOX, cost_from_polynomial, economic_cost,
                            parse_polynomial, polynomial_system, polynomialize_reactor, reactor_system)
from ocpdiss.ocp import optimal_steady_state


def poly_cost(expr, names, n_x):
    return cost_from_polynomial(parse_polynomial(expr, names), n_x)


@pytest.fixture(scope="session")
def toy():
    """dx/dt = -x + u on [-2, 2]^2 with F = (x - 1)^2 + u^2."""
    sys = polynomial_system(["x"], ["u"], ["-x + u"], [(-2, 2)], [(-2, 2)], "toy")
    return sys, poly_cost("(x - 1)^2 + u^2", ("x", "u"), 1)


@pytest.fixture(scope="session")
def toy_steady(toy):
    return optimal_steady_state(*toy)


@pytest.fixture(scope="session")
def clean_toy():
    """dx/dt = -x + u with F = x^2 + u^2, optimal at the origin."""
    sys = polynomial_system(["x"], ["u"], ["-x + u"], [(-2, 2)], [(-2, 2)], "clean")
    return sys, poly_cost("x^2 + u^2", ("x", "u"), 1)


@pytest.fixture(scope="session")
def integrator():
    """dx/dt = u on [-1, 1]^2 with F = x^2 + u^2."""
    sys = polynomial_system(["x"], ["u"], ["u"], [(-1, 1)], [(-1, 1)], "integrator")
    return sys, poly_cost("x^2 + u^2", ("x", "u"), 1)


@pytest.fixture(scope="session")
def reactor():
    return reactor_system(), economic_cost()


@pytest.fixture(scope="session")
def reactor_poly():
    return polynomialize_reactor().to_system(REACTOR_STATE_BOX, REACTOR_INPUT_BOX, "reactor-polynomial")


@pytest.fixture(scope="session")
def reactor_steady(reactor):
    return optimal_steady_state(*reactor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reactor_cert(reactor_poly, reactor, reactor_steady):
    """Reactor certificate; degree 5 is requested and reduced to fit the dense cap."""
    from ocpdiss.dissipativity import synthesize_certificate
    return synthesize_certificate(reactor_poly, reactor[1], reactor_steady, 5, reduce_degree=True)


ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def reactor_run(tmp_path_factory):
    """The shipped reactor configuration run end to end through the CLI."""
    from click.testing import CliRunner
    from ocpdiss.cli import main
    out = tmp_path_factory.mktemp("reactor")
    start = time.perf_counter()
    res = CliRunner().invoke(main, ["run", "--config", str(ROOT / "examples/configs/reactor.yaml"),
                                    "--out", str(out), "--jobs", "4"])
    RUN_SECONDS["reactor"] = time.perf_counter() - start
    return res, out


RUN_SECONDS: dict = {}
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def pytest_collection_modifyitems(items):
    # pipeline-backed tests and the acceptance module take minutes
    for item in items:
        if "reactor_run" in getattr(item, "fixturenames", ()) or item.module.__name__.endswith("test_acceptance"):
            item.add_marker(pytest.mark.slow)
