import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scamp.coupling import BaseMatrix, build_base_matrix
from scamp.priors import SignalPrior, amp_threshold, mmse
from scamp.state_evolution import (check_seed_bounds, predicted_mse, run_modified_se,
                                   run_state_evolution, run_uncoupled_se, se_map_phi, se_map_psi)


def naive_se(W, prior, sigma2, delta, steps):
    """Loop-by-loop recursion, one mmse lookup per column."""
    R, C = W.shape
    psi = [math.inf] * C
    out_phi, out_psi = [], [list(psi)]
    for _ in range(steps):
        phi = []
        for a in range(R):
            acc, hit = 0.0, False
            for i in range(C):
                if W[a, i] > 0:
                    if math.isinf(psi[i]):
                        hit = True
                    else:
                        acc += W[a, i] * psi[i]
            phi.append(math.inf if hit else sigma2 + acc / delta)
        new = []
        for i in range(C):
            s = sum(W[a, i] / phi[a] for a in range(R) if W[a, i] > 0 and not math.isinf(phi[a]))
            new.append(float(prior.mmse_table(np.array([s]))[0]))
        psi = new
        out_phi.append(phi)
        out_psi.append(list(psi))
    return np.array(out_phi), np.array(out_psi)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_naive_loops(seed, bg):
    rng = np.random.default_rng(seed)
    W = rng.uniform(0, 1, (10, 12)) * (rng.uniform(size=(10, 12)) < 0.6)
    W[np.arange(10), np.arange(10)] += 0.5       # every row and most columns covered
    W[:, 10:] += 0.1
    base = BaseMatrix.from_array(W)
    traj = run_state_evolution(base, bg, 1e-3, 0.5, t_max=15, stop_tol=0.0)
    phi, psi = naive_se(W, bg, 1e-3, 0.5, 15)
    np.testing.assert_allclose(traj.phi[:15], phi, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(traj.psi[:16], psi, rtol=1e-12, atol=1e-15)


def test_first_iterate_and_infinite_handling(bg):
    base = build_base_matrix(10, 1, 2)
    traj = run_state_evolution(base, bg, 1e-4, 0.5, t_max=3)
    assert np.all(np.isinf(traj.psi[0]))
    # a row touching any column at psi = inf carries no information; an all-zero
    # row at the right edge sees pure noise
    live = base.W.sum(axis=1) > 0
    assert np.all(np.isinf(traj.phi[0, live]))
    assert np.all(traj.phi[0, ~live] == 1e-4)
    np.testing.assert_allclose(traj.psi[1], bg.variance, rtol=1e-12)
    assert np.all(np.isfinite(traj.phi[1]))
    # seed rows see a single column: phi = sigma^2 + psi / delta
    np.testing.assert_allclose(traj.phi[1, : base.n_seed_rows], 1e-4 + bg.variance / 0.5)


@pytest.fixture(scope="module")
def coupled_traj():
    base = build_base_matrix(30, 3, 5)
    prior = SignalPrior.bernoulli_gaussian(0.1)
    return base, prior, run_state_evolution(base, prior, 1e-4, 0.25, t_max=500)


def test_monotone_in_time(coupled_traj):
    _, _, traj = coupled_traj
    psi = np.where(np.isinf(traj.psi), 1e300, traj.psi)
    assert np.all(np.diff(psi, axis=0) <= 1e-14)
    phi = np.where(np.isinf(traj.phi), 1e300, traj.phi)
    assert np.all(np.diff(phi, axis=0) <= 1e-14)


def test_converges_and_decodes(coupled_traj):
    _, _, traj = coupled_traj
    assert traj.converged
    assert traj.mse(traj.t_last) < 1e-3
    assert traj.mse(10 ** 6) == traj.mse(traj.t_last)


def test_monotone_in_noise(bg):
    base = build_base_matrix(20, 2, 4)
    lo = run_state_evolution(base, bg, 1e-4, 0.3, t_max=60, stop_tol=0.0)
    hi = run_state_evolution(base, bg, 1e-3, 0.3, t_max=60, stop_tol=0.0)
    finite = np.isfinite(hi.psi)
    assert np.all(lo.psi[finite] <= hi.psi[finite] + 1e-15)


@given(scale=st.floats(1.0, 5.0), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_maps_are_monotone(scale, seed):
    base = build_base_matrix(8, 1, 2)
    prior = SignalPrior.bernoulli_gaussian(0.2)
    rng = np.random.default_rng(seed)
    phi = rng.uniform(1e-3, 1.0, base.L_r)
    assert np.all(se_map_psi(base, prior, phi) <= se_map_psi(base, prior, scale * phi) + 1e-15)
    psi = rng.uniform(0, 0.2, base.L_c)
    assert np.all(se_map_phi(base, psi, 1e-3, 0.4) <= se_map_phi(base, scale * psi, 1e-3, 0.4))


def test_uncoupled_dichotomy():
    prior = SignalPrior.bernoulli_gaussian(0.1)
    thr = amp_threshold(prior)
    above = run_uncoupled_se(prior, 0.0, thr + 0.03, t_max=5000)
    below = run_uncoupled_se(prior, 0.0, thr - 0.03, t_max=5000)
    assert above.limit_psi < 1e-8
    assert below.limit_psi > 1e-3
    assert np.isinf(above.phi[0]) and np.isinf(above.psi[0])


def test_predicted_mse(coupled_traj):
    base, prior, traj = coupled_traj
    per, avg = predicted_mse(base, prior, traj.phi[4])
    np.testing.assert_allclose(per, traj.psi[5], rtol=1e-14)
    assert avg == pytest.approx(traj.mse(5))


def test_csv_shape(bg):
    base = build_base_matrix(4, 1, 2)
    traj = run_state_evolution(base, bg, 1e-3, 0.5, t_max=3, stop_tol=0.0)
    lines = traj.to_csv().strip().splitlines()
    assert lines[0] == "t,group,phi,psi"
    assert len(lines) == 1 + traj.phi.shape[0] * base.L_r
    assert lines[1].endswith(",inf")


# -- seed bounds ---------------------------------------------------------------

def test_seed_bounds_hold(bg):
    base = build_base_matrix(20, 5, 4)
    traj = run_state_evolution(base, bg, 1e-4, 0.8, t_max=400)
    rep = check_seed_bounds(traj, base, bg, raise_on_violation=True)
    assert rep.ok and rep.t0 is not None
    assert rep.phi_bound == pytest.approx((1 + 2 / 4.0) * 1e-4)


def test_seed_bounds_point_mass():
    p = SignalPrior.point_mass()
    base = build_base_matrix(10, 5, 2)
    traj = run_state_evolution(base, p, 1e-4, 1.0, t_max=10)
    rep = check_seed_bounds(traj, base, p)
    assert rep.ok and rep.seed_bound == 0.0 and rep.floor == 0.0


def test_seed_bounds_precondition(bg):
    base = build_base_matrix(10, 1, 2)
    traj = run_state_evolution(base, bg, 1e-4, 1.0, t_max=5)
    with pytest.raises(ValueError):
        check_seed_bounds(traj, base, bg)


# -- modified recursion --------------------------------------------------------

@pytest.fixture(scope="module")
def modified_pair():
    prior = SignalPrior.bernoulli_gaussian(0.1)
    base = build_base_matrix(25, 5, 4)
    full = run_state_evolution(base, prior, 1e-4, 0.8, t_max=40, stop_tol=0.0)
    mod = run_modified_se(base, prior, 1e-4, 0.8, t_max=40, stop_tol=0.0)
    return base, full, mod


def test_modified_dominates(modified_pair, bg):
    base, full, mod = modified_pair
    t0 = check_seed_bounds(full, base, bg).t0
    assert t0 is not None
    for t in range(t0, full.psi.shape[0]):
        real = full.psi[t, base.c0_slice]
        bound = mod.psi[t - t0]
        ok = np.isinf(bound) | (real <= bound * (1 + 1e-9) + 1e-15)
        assert np.all(ok), t


def test_modified_spatially_monotone(modified_pair):
    _, _, mod = modified_pair
    for psi in mod.psi[1:]:
        p = np.where(np.isinf(psi), 1e300, psi)
        assert np.all(np.diff(p) >= -1e-12 * p[1:])


def test_modified_noiseless_warns(bg):
    base = build_base_matrix(10, 2, 2)
    with pytest.warns(RuntimeWarning):
        mod = run_modified_se(base, bg, 0.0, 0.5, t_max=5)
    assert mod.degenerate_boundary and mod.boundary_psi == 0.0
