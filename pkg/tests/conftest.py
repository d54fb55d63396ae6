import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adaptive_ac.basis import CosineBasis
from adaptive_ac.environments import GarnetSpec, garnet_actor_features, generate_ergodic_garnet
from adaptive_ac.mdp import FiniteMdp, SoftmaxPolicy

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def uniform_policy(num_states, num_actions):
    """Softmax policy with one-hot action features and theta = 0."""
    xi = np.zeros((num_states, num_actions, num_actions))
    xi[:, np.arange(num_actions), np.arange(num_actions)] = 1.0
    return SoftmaxPolicy(np.zeros(num_actions), xi)


def random_mdp(rng, n, u, dense=True):
    rng = np.random.default_rng(rng)
    P = rng.uniform(0.05, 1.0, size=(u, n, n)) if dense else rng.uniform(size=(u, n, n))
    P /= P.sum(axis=2, keepdims=True)
    return FiniteMdp(P, rng.normal(size=n))


def random_policy(rng, n, u, k=3, scale=1.0):
    rng = np.random.default_rng(rng)
    xi = rng.normal(size=(n, u, k))
    return SoftmaxPolicy(rng.normal(scale=scale, size=k), xi)


def garnet_case(spec, seed, k_r, theta_scale=0.5):
    """Ergodic Garnet instance, cosine basis and a random block softmax policy."""
    inst = generate_ergodic_garnet(spec, seed)
    rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), 17])
    basis = CosineBasis.random(spec.num_states, k_r, rng)
    xi = garnet_actor_features(basis, basis.initial_params(), spec.num_actions)
    policy = SoftmaxPolicy(rng.normal(scale=theta_scale, size=xi.shape[2]), xi)
    return inst, basis, policy, rng


@pytest.fixture
def hand_mdp():
    """3 states, 2 actions; under the uniform policy D = (9, 3, 7)/19, eta = 2/19."""
    P0 = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
    P1 = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
    return FiniteMdp(np.array([P0, P1]), np.array([1.0, 0.0, -1.0]))


@pytest.fixture
def small_garnet():
    return garnet_case(GarnetSpec(8, 3, 2, 0.1), 5, 3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
