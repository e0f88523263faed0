"""Invariant suite run by ``seeds-mdp validate`` on small built-in instances."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .adversary import AdversarySpec, generate_losses, lower_bound_mdp
from .mdp import DeterministicPolicy, occupancy_of_policy, random_mdp, validate_mdp
from .occupancy import best_fixed_policy, kl_unnormalized, validate_occupancy
from .omd import project_confidence, project_known
from .rng import RngStream
from .seeds import run_seeds, seeds_params
from .seeds_ut import ConfidenceSet, Counts, build_confidence_set, max_reach


def all_policies(mdp):
    for combo in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        yield DeterministicPolicy(np.array(combo))


def _lower_bound_instances():
    ok = all(not validate_mdp(lower_bound_mdp(S, H, A)) for S, H, A in [(4, 3, 2), (6, 3, 2), (8, 4, 3), (3, 2, 2)])
    return ok, "lower-bound MDPs are row-stochastic with singleton end layers"


def _occupancy_feasible():
    gen = RngStream(11).generator()
    worst = 0.0
    for _ in range(10):
        mdp = random_mdp((1, 3, 2, 1), 2, gen)
        pi = gen.dirichlet(np.ones(2), size=mdp.n_states)
        worst = max(worst, validate_occupancy(occupancy_of_policy(mdp, pi), mdp.P).max)
    return worst < 1e-10, f"max residual {worst:.2e}"


def _comparator_enumeration():
    gen = RngStream(12).generator()
    worst = 0.0
    for _ in range(5):
        mdp = random_mdp((1, 2, 2, 1), 2, gen)
        L = gen.random(mdp.shape) * 10
        _, value = best_fixed_policy(mdp, L)
        brute = min(float((occupancy_of_policy(mdp, p).q * L).sum()) for p in all_policies(mdp))
        worst = max(worst, abs(value - brute))
    return worst < 1e-9, f"max gap {worst:.2e}"


def _upper_occupancy_enumeration():
    gen = RngStream(13).generator()
    worst = 0.0
    for _ in range(5):
        mdp = random_mdp((1, 2, 2, 1), 2, gen)
        reach = max_reach(ConfidenceSet.exact(mdp.P))
        brute = np.max([occupancy_of_policy(mdp, p).q.sum(axis=1) for p in all_policies(mdp)], axis=0)
        worst = max(worst, float(np.abs(reach - brute).max()))
    return worst < 1e-12, f"max gap {worst:.2e}"


def _projection_optimality():
    gen = RngStream(14).generator()
    mdp = random_mdp((1, 3, 1), 3, gen)
    q_prev = occupancy_of_policy(mdp, gen.dirichlet(np.ones(3), size=mdp.n_states))
    lhat = gen.random(mdp.shape) * 3
    eta = 0.7
    q_star, rep = project_known(q_prev.q * np.exp(-eta * lhat), mdp)
    obj = lambda q: eta * float((q * lhat).sum()) + kl_unnormalized(q, q_prev.q)
    best = obj(q_star.q)
    worse = all(best <= obj(occupancy_of_policy(mdp, gen.dirichlet(np.ones(3), size=mdp.n_states)).q) + 1e-9 for _ in range(50))
    return worse and rep.residual < 1e-9, f"residual {rep.residual:.2e}"


def _confidence_projection_feasible():
    gen = RngStream(15).generator()
    mdp = random_mdp((1, 3, 2, 1), 2, gen)
    M = tuple(
        np.stack([[gen.multinomial(200, P[s, a]) for a in range(2)] for s in range(P.shape[0])]) for P in mdp.P
    )
    cset = build_confidence_set(Counts(M), 1, 0.5)
    q3, rep = project_confidence(tuple(gen.random(P.shape) + 0.01 for P in mdp.P), cset)
    return rep.residual < 1e-8, f"residual {rep.residual:.2e}"


def _switch_bound():
    mdp = lower_bound_mdp(4, 3, 2)
    T = 300
    losses = generate_losses(AdversarySpec("worst_case_swap"), mdp, T)
    ok = True
    for tau in (1, 3, 7, 300):
        params = seeds_params(T, mdp.H, mdp.n_states_total, 2)
        params = type(params)(params.eta, tau)
        rec = run_seeds(mdp, losses, params, rng=RngStream(5))
        ok &= rec.n_switches <= math.ceil(T / tau)
    return ok, "switches <= ceil(T / tau)"


CHECKS = [
    ("lower-bound instances valid", _lower_bound_instances),
    ("policy occupancy feasible", _occupancy_feasible),
    ("comparator equals enumeration", _comparator_enumeration),
    ("upper occupancy equals enumeration", _upper_occupancy_enumeration),
    ("known-P projection optimal", _projection_optimality),
    ("confidence projection feasible", _confidence_projection_feasible),
    ("switch count bound", _switch_bound),
]


def run_checks():
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # reported, not raised: validate is a report
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
