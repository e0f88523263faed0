import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seeds_mdp.mdp import (
    DeterministicPolicy,
    LayeredMdp,
    chain_mdp,
    expected_episode_loss,
    load_mdp,
    occupancy_of_policy,
    random_mdp,
    run_episode,
    save_mdp,
    simulate_episodes,
    validate_mdp,
)
from seeds_mdp.occupancy import validate_occupancy
from seeds_mdp.rng import RngStream

from conftest import two_way_mdp


def coin_mdp(p):
    P0 = np.array([[[p, 1 - p]]])
    return LayeredMdp((1, 2, 1), 1, (P0, np.ones((2, 1, 1))))


def test_validate_accepts_valid_mdp():
    assert validate_mdp(random_mdp((1, 3, 1), 2, 0)) == []


def test_validate_names_bad_row():
    P0 = np.array([[[0.5, 0.4], [0.5, 0.5]]])
    mdp = LayeredMdp((1, 2, 1), 2, (P0, np.ones((2, 2, 1))))
    report = validate_mdp(mdp)
    assert len(report) == 1
    assert "h=0, s=0, a=0" in report[0]


def test_validate_names_terminal_layer():
    P0 = np.array([[[1.0, 0.0]]])
    mdp = LayeredMdp((1, 2), 1, (P0,))
    report = validate_mdp(mdp)
    assert any("terminal" in r for r in report)


def test_layered_mdp_rejects_wrong_shapes():
    with pytest.raises(ValueError):
        LayeredMdp((1, 2, 1), 2, (np.ones((1, 2, 3)), np.ones((2, 2, 1))))


def test_json_round_trip(tmp_path):
    mdp = random_mdp((1, 2, 3, 1), 2, 5)
    path = tmp_path / "m.json"
    save_mdp(mdp, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"H", "layer_sizes", "A", "P"}
    back = load_mdp(path)
    assert back.layer_sizes == mdp.layer_sizes
    for a, b in zip(back.P, mdp.P):
        np.testing.assert_array_equal(a, b)


def test_deterministic_mdp_trajectory_ignores_rng():
    mdp = chain_mdp(3, 2)
    pi = DeterministicPolicy([1, 0, 1])
    loss = np.full(mdp.shape, 0.2)
    trajs = [run_episode(mdp, pi, loss, seed) for seed in range(5)]
    assert all(t == trajs[0] for t in trajs)
    assert trajs[0].actions == (1, 0, 1)


def test_forced_path_steps():
    mdp = two_way_mdp()
    loss = np.arange(6, dtype=float).reshape(3, 2) / 10
    tr = run_episode(mdp, DeterministicPolicy([0, 0, 0]), loss, 1)
    # s0 -> x (global 1), both with action 0
    assert [(s, a) for s, a, _ in tr.steps(mdp)] == [(0, 0), (1, 0)]
    assert tr.losses == (0.0, 0.2)


def test_visit_frequency_monte_carlo():
    p, n = 0.3, 100_000
    mdp = coin_mdp(p)
    states, _, _ = simulate_episodes(mdp, DeterministicPolicy([0, 0, 0]), np.zeros((n, 3, 1)), RngStream(3))
    freq = np.mean(states[:, 1] == 0)
    se = np.sqrt(p * (1 - p) / n)
    assert abs(freq - p) < 3 * se


def test_trajectories_stay_in_layers():
    mdp = random_mdp((1, 3, 2, 4, 1), 3, 9)
    pi = DeterministicPolicy(np.random.default_rng(0).integers(0, 3, mdp.n_states))
    states, actions, observed = simulate_episodes(mdp, pi, np.random.default_rng(1).random((500, mdp.n_states, 3)), 2)
    for h, size in enumerate(mdp.layer_sizes):
        assert states[:, h].min() >= 0 and states[:, h].max() < size
    assert np.all(states[:, -1] == 0)


def test_observed_loss_is_visited_pair_loss():
    mdp = random_mdp((1, 3, 2, 1), 2, 4)
    losses = np.random.default_rng(5).random((50, mdp.n_states, 2))
    pi = DeterministicPolicy([1, 0, 1, 0, 1, 1])
    states, actions, observed = simulate_episodes(mdp, pi, losses, 6)
    g = states[:, :-1] + mdp.offsets[:-1]
    np.testing.assert_array_equal(observed, losses[np.arange(50)[:, None], g, actions])


def test_rng_stream_reproducible():
    a = RngStream(42, 3).generator().random(5)
    b = RngStream(42, 3).generator().random(5)
    c = RngStream(42, 4).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_occupancy_forced_path():
    mdp = chain_mdp(3, 2)
    q = occupancy_of_policy(mdp, DeterministicPolicy([1, 1, 0])).q
    np.testing.assert_array_equal(q, [[0, 1], [0, 1], [1, 0]])


def test_occupancy_symmetric_split():
    mdp = two_way_mdp()
    q = occupancy_of_policy(mdp, np.full((3, 2), 0.5)).q
    np.testing.assert_allclose(q[0], [0.5, 0.5])
    assert q[1].sum() == pytest.approx(0.5)
    assert q[2].sum() == pytest.approx(0.5)


def test_occupancy_matches_simulation():
    mdp = random_mdp((1, 2, 3, 1), 2, 11)
    pi = DeterministicPolicy([0, 1, 0, 1, 1, 0])
    q = occupancy_of_policy(mdp, pi).q
    n = 1_000_000
    states, actions, _ = simulate_episodes(mdp, pi, np.zeros((n, mdp.n_states, 2)), RngStream(8))
    g = states[:, :-1] + mdp.offsets[:-1]
    freq = np.zeros_like(q)
    np.add.at(freq, (g.ravel(), actions.ravel()), 1.0)
    freq /= n
    se = np.sqrt(q * (1 - q) / n) + 1e-12
    assert np.all(np.abs(freq - q) <= 3 * se + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(1, 3), st.integers(0, 10_000))
def test_policy_occupancy_is_feasible(inner, A, seed):
    sizes = (1, *inner, 1)
    mdp = random_mdp(sizes, A, seed)
    gen = np.random.default_rng(seed)
    pi = gen.dirichlet(np.ones(A), size=mdp.n_states)
    rep = validate_occupancy(occupancy_of_policy(mdp, pi), mdp.P)
    assert rep.max < 1e-10


def test_expected_loss_examples():
    mdp = random_mdp((1, 2, 2, 1), 2, 1)
    q = occupancy_of_policy(mdp, DeterministicPolicy([0, 1, 1, 0, 0]))
    assert expected_episode_loss(q, np.zeros(mdp.shape)) == 0.0
    assert expected_episode_loss(q, np.ones(mdp.shape)) == pytest.approx(mdp.H)
    chain = chain_mdp(2, 2)
    qc = occupancy_of_policy(chain, DeterministicPolicy([0, 1]))
    assert expected_episode_loss(qc, np.full(chain.shape, 0.25)) == pytest.approx(0.5)


def test_expected_loss_shape_mismatch():
    with pytest.raises(ValueError):
        expected_episode_loss(np.ones((2, 2)), np.ones((3, 2)))


def test_expected_loss_matches_empirical_mean():
    mdp = random_mdp((1, 3, 2, 1), 2, 21)
    loss = np.random.default_rng(2).random(mdp.shape)
    pi = DeterministicPolicy([1, 0, 1, 1, 0, 0])
    n = 200_000
    _, _, observed = simulate_episodes(mdp, pi, np.broadcast_to(loss, (n, *mdp.shape)), 12)
    totals = observed.sum(axis=1)
    exact = expected_episode_loss(occupancy_of_policy(mdp, pi), loss)
    assert abs(totals.mean() - exact) < 3 * totals.std(ddof=1) / np.sqrt(n)
