import numpy as np
import pytest

from seeds_mdp.adversary import AdversarySpec, KINDS, default_swap_period, generate_losses, lower_bound_mdp
from seeds_mdp.mdp import DeterministicPolicy, simulate_episodes, validate_mdp
from seeds_mdp.seeds import SeedsParams, run_seeds


def test_zero_noise_stochastic_is_constant():
    L = generate_losses(AdversarySpec("stochastic", {"means": 0.5, "noise": 0.0}, 1), (3, 2), 20)
    np.testing.assert_array_equal(L, 0.5)


def test_alternating_schedule():
    L0 = np.full((2, 2), 0.1)
    L1 = np.full((2, 2), 0.9)
    L = generate_losses(AdversarySpec("alternating", {"L0": L0, "L1": L1, "period": 1}), (2, 2), 7)
    for t in range(7):
        np.testing.assert_array_equal(L[t], L0 if t % 2 == 0 else L1)


@pytest.mark.parametrize("kind", KINDS)
def test_all_kinds_in_range(kind):
    L = generate_losses(AdversarySpec(kind, {"noise": 0.7}, 3), lower_bound_mdp(6, 3, 2), 100_000)
    assert L.shape == (100_000, 5, 2)
    assert L.min() >= 0.0 and L.max() <= 1.0


def test_generation_is_oblivious():
    mdp = lower_bound_mdp(4, 3, 2)
    spec = AdversarySpec("piecewise", {"period": 7}, 5)
    before = generate_losses(spec, mdp, 300)
    run_seeds(mdp, spec, SeedsParams(0.1, 3), 300, rng=0)
    after = generate_losses(spec, mdp, 300)
    np.testing.assert_array_equal(before, after)
    other = generate_losses(AdversarySpec("piecewise", {"period": 7}, 6), mdp, 300)
    assert not np.array_equal(before, other)


def test_piecewise_blocks_share_means():
    L = generate_losses(AdversarySpec("piecewise", {"period": 5, "noise": 0.0}, 2), (2, 2), 20)
    for b in range(4):
        block = L[5 * b : 5 * b + 5]
        assert np.all(block == block[0])
    assert not np.array_equal(L[0], L[5])


def test_worst_case_swap_rotation():
    mdp = lower_bound_mdp(6, 3, 3)
    L = generate_losses(AdversarySpec("worst_case_swap", {"period": 4}), mdp, 24)
    for t in range(24):
        # exactly one zero-loss arm per state, all others at 1
        assert np.all((L[t] == 0).sum(axis=1) == 1)
        assert np.all((L[t] == 1).sum(axis=1) == 2)
    good = L.argmin(axis=2)
    assert np.all(good[:4] == good[0])
    assert not np.array_equal(good[0], good[4])
    assert default_swap_period(1000) == 100


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        AdversarySpec("random_walk")
    with pytest.raises(ValueError):
        generate_losses(AdversarySpec("stochastic", {"means": 1.5}), (2, 2), 3)
    with pytest.raises(ValueError):
        generate_losses(AdversarySpec("stochastic"), (2, 2), 0)


def test_spec_round_trip():
    spec = AdversarySpec("alternating", {"L0": np.zeros((1, 2)), "period": 2}, 9)
    back = AdversarySpec.from_dict(spec.to_dict())
    assert back.kind == "alternating" and back.seed == 9 and back.params["period"] == 2


def test_lower_bound_minimal_instance():
    mdp = lower_bound_mdp(4, 3, 2)
    assert mdp.layer_sizes == (1, 1, 1, 1)
    assert mdp.n_states_total == 4


def test_lower_bound_two_chains():
    mdp = lower_bound_mdp(6, 3, 2)
    assert mdp.layer_sizes == (1, 2, 2, 1)
    np.testing.assert_array_equal(mdp.P[1][0], [[1, 0], [1, 0]])
    np.testing.assert_array_equal(mdp.P[1][1], [[0, 1], [0, 1]])
    np.testing.assert_allclose(mdp.P[0][0], 0.5)


@pytest.mark.parametrize("S,H,A", [(S, H, A) for H in (2, 3, 4, 5) for S in range(H + 1, 16) if (S - 2) % (H - 1) == 0 for A in (1, 2, 3)])
def test_lower_bound_grid_valid(S, H, A):
    mdp = lower_bound_mdp(S, H, A)
    assert validate_mdp(mdp) == []
    assert mdp.n_states_total == S and mdp.H == H


def test_lower_bound_divisibility_error():
    with pytest.raises(ValueError, match="multiple of H - 1"):
        lower_bound_mdp(5, 3, 2)
    with pytest.raises(ValueError):
        lower_bound_mdp(4, 1, 2)


def test_chains_are_isolated():
    mdp = lower_bound_mdp(11, 4, 2)
    pi = DeterministicPolicy(np.random.default_rng(0).integers(0, 2, mdp.n_states))
    states, _, _ = simulate_episodes(mdp, pi, np.zeros((2000, *mdp.shape)), 1)
    assert np.all(states[:, 1:-1] == states[:, [1]])
    assert set(states[:, 1]) == {0, 1, 2}
