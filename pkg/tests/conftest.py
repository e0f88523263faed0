import itertools
import sys
import warnings

import numpy as np
import pytest

from seeds_mdp.mdp import DeterministicPolicy, LayeredMdp, occupancy_of_policy, random_mdp


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def two_way_mdp():
    """H=2: action 0 at s0 leads to x, action 1 to y."""
    P0 = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    P1 = np.ones((2, 2, 1))
    return LayeredMdp((1, 2, 1), 2, (P0, P1))


def all_policies(mdp):
    for combo in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        yield DeterministicPolicy(np.array(combo))


def enumerate_best(mdp, L):
    return min(float((occupancy_of_policy(mdp, p).q * L).sum()) for p in all_policies(mdp))


def enumerate_max_reach(mdp):
    return np.max([occupancy_of_policy(mdp, p).q.sum(axis=1) for p in all_policies(mdp)], axis=0)


def cvx_project_known(q_tilde, mdp):
    """Independent oracle: KL projection onto C(P) with a conic solver."""
    import cvxpy as cp

    N, A = mdp.shape
    x = cp.Variable((N, A), nonneg=True)
    cons = []
    for h in range(mdp.H):
        sl = mdp.layer_slice(h)
        cons.append(cp.sum(x[sl]) == 1)
        if h >= 1:
            prev = mdp.layer_slice(h - 1)
            for j in range(mdp.layer_sizes[h]):
                cons.append(cp.sum(cp.multiply(x[prev], mdp.P[h - 1][:, :, j])) == cp.sum(x[sl.start + j, :]))
    obj = cp.sum(cp.rel_entr(x, q_tilde)) - cp.sum(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cp.Problem(cp.Minimize(obj), cons).solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return x.value


def cvx_project_confidence(blocks, lo, hi):
    """Independent oracle for the triple projection with interval constraints."""
    import cvxpy as cp

    xs = [cp.Variable(b.size, nonneg=True) for b in blocks]
    cons, obj = [], 0
    for x, b, l, u in zip(xs, blocks, lo, hi):
        S, A, Sn = b.shape
        cons.append(cp.sum(x) == 1)
        X = cp.reshape(x, (S * A, Sn), order="C")
        m = cp.reshape(cp.sum(X, axis=1), (S * A, 1), order="C") @ np.ones((1, Sn))
        cons += [X <= cp.multiply(u.reshape(S * A, Sn), m), X >= cp.multiply(l.reshape(S * A, Sn), m)]
        obj += cp.sum(cp.rel_entr(x, b.ravel())) - cp.sum(x)
    for h in range(1, len(blocks)):
        S, A, Sn = blocks[h].shape
        Sp, Ap, _ = blocks[h - 1].shape
        inflow = cp.sum(cp.reshape(xs[h - 1], (Sp * Ap, S), order="C"), axis=0)
        outflow = cp.sum(cp.reshape(xs[h], (S, A * Sn), order="C"), axis=1)
        cons.append(inflow == outflow)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cp.Problem(cp.Minimize(obj), cons).solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return [x.value.reshape(b.shape) for x, b in zip(xs, blocks)]


def random_counts(mdp, gen, low=50, high=3000):
    from seeds_mdp.seeds_ut import Counts

    M = []
    for P in mdp.P:
        S, A, _ = P.shape
        M.append(np.stack([[gen.multinomial(gen.integers(low, high), P[s, a]) for a in range(A)] for s in range(S)]))
    return Counts(tuple(M))


__all__ = ["random_mdp"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.summary_lines():
            terminalreporter.write_line(line)
