import numpy as np
import pytest

from modeplan import (
    AgentSpec,
    BarrierConfig,
    ClusterConfig,
    FilterConfig,
    GameSpec,
    assemble_potential,
    build_scenario,
    build_virtual_model,
    cluster_modes,
    enumerate_modes,
    preset,
    run_filter,
)
from modeplan.clustering import position_layout
from modeplan.registry import DynamicsModel, register_dynamics

SEED = 1234


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def _scalar_linear_factory(a=0.95, b=0.4):
    def factory(dt):
        def step(x, u):
            return a * np.asarray(x, dtype=float) + b * np.asarray(u, dtype=float)

        def jacobian(x, u):
            x = np.asarray(x, dtype=float)
            batch = x.shape[:-1]
            A = np.broadcast_to(np.array([[a]]), batch + (1, 1)).copy()
            B = np.broadcast_to(np.array([[b]]), batch + (1, 1)).copy()
            return A, B

        return DynamicsModel("scalar_linear", 1, 1, step, jacobian)

    return factory


register_dynamics("scalar_linear", _scalar_linear_factory())


def scalar_agent(tau, q=1.0, q_tau=1.0, r=1.0, ref=None):
    reference = np.zeros((tau + 1, 1)) if ref is None else np.asarray(ref, dtype=float)
    return AgentSpec(
        Q=np.array([[q]]),
        Q_tau=np.array([[q_tau]]),
        R=np.array([[r]]),
        reference=reference,
        dynamics_id="scalar_linear",
    )


def double_integrator_agent(tau, q=(4.0, 1.0), q_tau=(40.0, 10.0), r=0.5, ref=None):
    reference = np.zeros((tau + 1, 2)) if ref is None else np.asarray(ref, dtype=float)
    return AgentSpec(
        Q=np.diag(q),
        Q_tau=np.diag(q_tau),
        R=np.array([[r]]),
        reference=reference,
        dynamics_id="double_integrator",
    )


@pytest.fixture
def scalar_game():
    tau = 8
    ref = np.linspace(0.0, 2.0, tau + 1)[:, None]
    agent = scalar_agent(tau, q=2.0, q_tau=8.0, r=1.0, ref=ref)
    return GameSpec(agents=(agent,), horizon=tau, dt=0.1, x0=np.zeros(1))


@pytest.fixture
def three_agent_game(rng):
    tau = 6
    agents = []
    for q, qt, r in ((2.0, 3.0, 1.0), (3.0, 5.0, 2.0), (5.0, 7.0, 0.5)):
        ref = rng.normal(size=(tau + 1, 1))
        agents.append(scalar_agent(tau, q=q, q_tau=qt, r=r, ref=ref))
    x0 = rng.normal(size=3)
    return GameSpec(agents=tuple(agents), horizon=tau, dt=0.1, x0=x0)


@pytest.fixture(scope="session")
def head_on_game():
    return build_scenario(preset("head_on"))


@pytest.fixture(scope="session")
def head_on_modes(head_on_game):
    """Full pipeline output on the head-on preset, shared across tests."""
    return enumerate_modes(head_on_game, filter_cfg=FilterConfig(seed=7))


@pytest.fixture(scope="session")
def head_on_filtered(head_on_game):
    pp = assemble_potential(head_on_game)
    vm = build_virtual_model(pp, 200.0, BarrierConfig(alpha=5.0))
    return run_filter(vm, FilterConfig(seed=7))
