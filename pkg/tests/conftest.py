import numpy as np
import pytest

from aggrefeed.graph import NetworkGraph
from aggrefeed.model import AgentModel, NetworkModel
from aggrefeed.scenarios import QuadraticConfig, quadratic_benchmark, single_integrator_plant


def scalar_agent(beta=1.0, cost_weight=0.0, target=0.0):
    """Single integrator with ``f(x, s) = w (x - target)^2 + w (x - s)^2`` and ``phi = beta x``."""
    plant, h, h_jac, _ = single_integrator_plant(1)
    return AgentModel(
        state_dim=1, input_dim=1, agg_dim=1, plant=plant, steady_state=h, steady_state_jac=h_jac,
        grad1=lambda x, s: 2 * cost_weight * (x - target) + 2 * cost_weight * (x - s),
        grad2=lambda x, s: -2 * cost_weight * (x - s),
        cost=lambda x, s: float(cost_weight * ((x - target) ** 2 + (x - s) ** 2).sum()),
        phi=lambda x: beta * x,
        phi_jac=lambda x: np.array([[beta]]),
    )


def pair_graph():
    return NetworkGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))


def cycle_graph(n):
    return NetworkGraph.from_edges(n, [(j, (j + 1) % n, 1.0) for j in range(n)])


@pytest.fixture
def pair_model():
    return NetworkModel([scalar_agent(), scalar_agent()], pair_graph())


@pytest.fixture
def zero_model():
    return NetworkModel([scalar_agent(beta=0.0) for _ in range(3)], cycle_graph(3))


@pytest.fixture(scope="session")
def quadratic():
    return quadratic_benchmark(QuadraticConfig(), seed=0)


def random_state(model, rng, scale=5.0):
    from aggrefeed.controller import NetworkState

    nd = model.n_agents * model.agg_dim
    return NetworkState(rng.uniform(-scale, scale, model.n), rng.uniform(-scale, scale, model.m),
                        rng.uniform(-scale, scale, nd), rng.uniform(-scale, scale, nd))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
