import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_ac.environments import (
    BlockRbfPolicy,
    GarnetInstance,
    GarnetSpec,
    MountainCarParams,
    MountainCarState,
    UniformStream,
    garnet_actor_features,
    generate_ergodic_garnet,
    generate_garnet,
    mountain_car_reset,
    mountain_car_step,
    sample_trajectory,
)
from adaptive_ac.basis import CosineBasis
from adaptive_ac.errors import InvalidAction, NonErgodicChain
from adaptive_ac.mdp import FiniteMdp, induced_chain

from conftest import uniform_policy

seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------------------
# Garnet generation

def test_garnet_row_structure():
    inst = generate_garnet(GarnetSpec(30, 4, 2, 0.1), 0)
    P = inst.mdp.transitions
    assert P.shape == (4, 30, 30)
    assert np.all((P > 0).sum(axis=2) == 2)
    assert np.allclose(P.sum(axis=2), 1.0, atol=1e-12)


def test_garnet_full_branching_dense():
    P = generate_garnet(GarnetSpec(6, 2, 6, 0.0), 1).mdp.transitions
    assert np.all(P > 0)


@given(seeds, st.integers(1, 12), st.integers(1, 4), st.data())
def test_garnet_rows_have_b_nonzeros(seed, X, U, data):
    B = data.draw(st.integers(1, X))
    P = generate_garnet(GarnetSpec(X, U, B, 0.1), seed).mdp.transitions
    assert np.all((P > 0).sum(axis=2) == B)
    assert np.allclose(P.sum(axis=2), 1.0, atol=1e-12)


def test_garnet_regeneration_is_byte_identical():
    a = generate_garnet(GarnetSpec(10, 3, 2, 0.1), [4, 2])
    b = generate_garnet(GarnetSpec(10, 3, 2, 0.1), [4, 2])
    assert a.mdp.transitions.tobytes() == b.mdp.transitions.tobytes()
    assert a.mdp.rewards.tobytes() == b.mdp.rewards.tobytes()
    assert a.mean_rewards.tobytes() == b.mean_rewards.tobytes()


def test_garnet_json_round_trip():
    inst = generate_ergodic_garnet(GarnetSpec(10, 3, 2, 0.1), 3)
    for full in (False, True):
        back = GarnetInstance.from_json(inst.to_json(include_matrices=full))
        assert np.array_equal(back.mdp.transitions, inst.mdp.transitions)
        assert np.array_equal(back.mean_rewards, inst.mean_rewards)


def test_garnet_json_tamper_detected():
    import json
    inst = generate_garnet(GarnetSpec(5, 2, 2, 0.1), 0)
    d = json.loads(inst.to_json(include_matrices=True))
    d["rewards"][0] += 1.0
    with pytest.raises(ValueError):
        GarnetInstance.from_json(json.dumps(d))


@pytest.mark.parametrize("args", [(0, 1, 1, 0.1), (3, 1, 4, 0.1), (3, 1, 0, 0.1), (3, 1, 1, -1.0)])
def test_garnet_spec_validation(args):
    with pytest.raises(ValueError):
        GarnetSpec(*args)


def test_ergodic_generator_returns_ergodic_instance():
    spec = GarnetSpec(10, 1, 1, 0.0)  # B = 1 is usually reducible
    try:
        inst = generate_ergodic_garnet(spec, 0, max_tries=200)
    except NonErgodicChain:
        return
    induced_chain(inst.mdp, uniform_policy(10, 1))


def test_actor_features_blocks():
    b = CosineBasis.random(30, 4, 0)
    xi = garnet_actor_features(b, b.initial_params(), 4)
    assert xi.shape == (30, 4, 16)
    for x in (0, 7, 29):
        phi = b.features(b.initial_params(), x)
        for u in range(4):
            assert np.array_equal(xi[x, u, 4 * u:4 * u + 4], phi)
            for v in range(4):
                if v != u:
                    assert xi[x, u] @ xi[x, v] == 0.0


def test_actor_features_single_action():
    b = CosineBasis.random(5, 3, 0)
    xi = garnet_actor_features(b, [0.5], 1)
    assert np.array_equal(xi[:, 0, :], np.stack([b.features([0.5], x) for x in range(5)]))


# ---------------------------------------------------------------------------
# Garnet sampling

def test_deterministic_single_state_stream():
    mdp = FiniteMdp(np.ones((1, 1, 1)), np.array([0.25]))
    inst = GarnetInstance(GarnetSpec(1, 1, 1, 0.0), 0, mdp, np.array([[0.25]]))
    out = list(sample_trajectory(inst, uniform_policy(1, 1), 50, 0))
    assert out == [(0, 0, 0.25, 0)] * 50


def test_trajectory_rerun_identical():
    inst = generate_ergodic_garnet(GarnetSpec(10, 3, 2, 0.1), 1)
    pol = uniform_policy(10, 3)
    a = list(sample_trajectory(inst, pol, 5000, [1, 2]))
    b = list(sample_trajectory(inst, pol, 5000, [1, 2]))
    assert a == b
    # consecutive samples chain
    assert all(a[i].y == a[i + 1].x for i in range(len(a) - 1))


def test_visitation_matches_stationary_distribution():
    inst = generate_ergodic_garnet(GarnetSpec(10, 3, 2, 0.1), 2)
    pol = uniform_policy(10, 3)
    D = induced_chain(inst.mdp, pol).stationary
    xs = np.fromiter((t.x for t in sample_trajectory(inst, pol, 10**6, 9)), dtype=np.int64)
    freq = np.bincount(xs, minlength=10) / xs.size
    assert np.max(np.abs(freq - D)) <= 0.01


def test_transition_frequencies_match_rows():
    inst = generate_ergodic_garnet(GarnetSpec(6, 2, 3, 0.1), 4)
    pol = uniform_policy(6, 2)
    counts = np.zeros((2, 6, 6))
    for t in sample_trajectory(inst, pol, 2 * 10**5, 5):
        counts[t.u, t.x, t.y] += 1
    n = counts.sum(axis=2, keepdims=True)
    P = inst.mdp.transitions
    ok = n[..., 0] > 2000
    emp = counts / np.maximum(n, 1)
    se = np.sqrt(P * (1 - P) / np.maximum(n, 1))
    assert np.all(np.abs(emp - P)[ok] <= 4 * se[ok] + 1e-12)
    # no sampled transition has zero probability
    assert np.all(P[counts > 0] > 0)


def test_uniform_policy_action_frequencies():
    inst = generate_ergodic_garnet(GarnetSpec(5, 3, 2, 0.1), 0)
    us = np.fromiter((t.u for t in sample_trajectory(inst, uniform_policy(5, 3), 30000, 1)), dtype=np.int64)
    freq = np.bincount(us, minlength=3) / us.size
    assert np.all(np.abs(freq - 1 / 3) <= 3 * math.sqrt(2 / 9 / us.size))


@pytest.mark.parametrize("mode", ["state", "state-action"])
def test_reward_means(mode):
    sigma = 0.5
    inst = generate_ergodic_garnet(GarnetSpec(4, 2, 2, sigma), 6)
    samples = list(sample_trajectory(inst, uniform_policy(4, 2), 2 * 10**5, 7, reward_mode=mode))
    by_pair = {}
    for t in samples:
        by_pair.setdefault((t.x, t.u), []).append(t.g)
    checked = 0
    for (x, u), gs in by_pair.items():
        if len(gs) < 10**4:
            continue
        gs = np.asarray(gs[:10**4])
        target = inst.mean_rewards[x, u] if mode == "state-action" else inst.mdp.rewards[x]
        assert abs(gs.mean() - target) <= 3 * sigma / 100
        assert abs(gs.std(ddof=1) - sigma) < 0.05
        checked += 1
    assert checked > 0


def test_bad_reward_mode():
    inst = generate_garnet(GarnetSpec(3, 1, 1, 0.1), 0)
    with pytest.raises(ValueError):
        next(sample_trajectory(inst, uniform_policy(3, 1), 1, 0, reward_mode="bogus"))


def test_unsupported_environment():
    with pytest.raises(TypeError):
        sample_trajectory(object(), None, 1, 0)


# ---------------------------------------------------------------------------
# random stream

def test_stream_position_resumes_exactly():
    s = UniformStream(3, 4, block=64)
    s.take(100)
    pos = s.position()
    a = s.take(50)
    b = UniformStream.from_position(pos).take(50)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# mountain car

def test_equilibrium_at_minus_pi_over_six():
    st0 = MountainCarState(-math.pi / 6, 0.0)
    nxt, reward, goal = mountain_car_step(st0, 0)
    assert abs(nxt.velocity) < 1e-15
    assert abs(nxt.position - st0.position) < 1e-15
    assert reward == -1.0 and not goal


def test_full_throttle_from_rest_cannot_climb():
    st0 = MountainCarState(-math.pi / 6, 0.0)
    best = st0.position
    for _ in range(100):
        st0, _, goal = mountain_car_step(st0, 1)
        assert not goal
        best = max(best, st0.position)
    assert best < 0.5


def test_oscillation_reaches_goal():
    # bang-bang on the sign of velocity is the textbook solution
    st0 = MountainCarState(-0.5, 0.0)
    for k in range(1000):
        a = 1 if st0.velocity >= 0 else -1
        st0, reward, goal = mountain_car_step(st0, a)
        if goal:
            assert reward == 0.0
            break
    assert goal and k < 200


def test_left_wall_stops_car():
    nxt, _, _ = mountain_car_step(MountainCarState(-1.19, -0.05), -1)
    assert nxt.position == -1.2 and nxt.velocity == 0.0


def test_hand_step():
    p, v = -0.3, 0.01
    nxt, _, _ = mountain_car_step(MountainCarState(p, v), 1)
    v2 = v + 0.001 - 0.0025 * math.cos(3 * p)
    assert abs(nxt.velocity - v2) < 1e-15 and abs(nxt.position - (p + v2)) < 1e-15


@pytest.mark.parametrize("a", [2, -2, 0.5, None])
def test_invalid_action(a):
    with pytest.raises(InvalidAction):
        mountain_car_step(MountainCarState(0.0, 0.0), a)


@given(st.floats(-1.2, 0.6), st.floats(-0.07, 0.07), st.sampled_from([-1, 0, 1]))
def test_state_stays_in_box(p, v, a):
    nxt, _, _ = mountain_car_step(MountainCarState(p, v), a)
    assert -1.2 <= nxt.position <= 0.6
    assert -0.07 <= nxt.velocity <= 0.07


def test_coasting_speed_bounded():
    st0 = MountainCarState(-1.0, 0.0)
    for _ in range(5000):
        st0, _, goal = mountain_car_step(st0, 0)
        assert abs(st0.velocity) <= 0.07 and not goal


def test_reset_range():
    assert mountain_car_reset(0.0) == (-1.2, 0.0)
    r = mountain_car_reset(1.0)
    assert abs(r.position - 0.5) < 1e-15 and r.velocity == 0.0


def test_custom_constants():
    params = MountainCarParams(force=0.002)
    nxt, _, _ = mountain_car_step(MountainCarState(-math.pi / 6, 0.0), 1, params)
    assert abs(nxt.velocity - 0.002) < 1e-15
    assert MountainCarParams.from_dict(params.to_dict()) == params


def test_car_stream_continuing_and_deterministic():
    params = MountainCarParams()
    pol = BlockRbfPolicy.grid(params, 4)
    a = list(sample_trajectory(params, pol, 3000, 0))
    b = list(sample_trajectory(params, pol, 3000, 0))
    assert a == b
    for t in a:
        assert -1.2 <= t.y.position <= 0.6 and abs(t.y.velocity) <= 0.07
        assert t.g in (-1.0, 0.0)
        assert t.u in (0, 1, 2)


def test_block_policy_score_fd():
    params = MountainCarParams()
    rng = np.random.default_rng(0)
    pol = BlockRbfPolicy.grid(params, 3, theta=rng.normal(size=27))
    x = np.array([-0.4, 0.01])
    for u in range(3):
        score = pol.likelihood_ratio(x, u)
        fd = np.zeros(27)
        for i in range(27):
            e = np.zeros(27)
            e[i] = 1e-6
            fd[i] = (np.log(pol.with_theta(pol.theta + e).probs(x)[u])
                     - np.log(pol.with_theta(pol.theta - e).probs(x)[u])) / 2e-6
        assert np.max(np.abs(score - fd)) < 1e-7
