"""Fast numerical invariant checks, run by ``scamp validate``."""

from __future__ import annotations

import numpy as np

from .amp import compute_q
from .harness import ExperimentConfig, generate_instance, trial_seed
from .coupling import sample_sensing_matrix
from .priors import SignalPrior, mmse, mutual_information
from .state_evolution import run_state_evolution


def _mmse_bounds(prior: SignalPrior):
    s = np.logspace(-3, 6, 200)
    m = mmse(prior, s)
    ok = bool(np.all(m >= 0) and np.all(m <= np.minimum(prior.variance, 1 / s) * (1 + 1e-9)))
    return ok, f"min {m.min():.3g}, max s*mmse {np.max(s * m):.4f}"


def _info_derivative(prior: SignalPrior):
    worst = 0.0
    for s in (0.1, 1.0, 10.0, 100.0):
        h = 1e-4 * s
        fd = (mutual_information(prior, s + h) - mutual_information(prior, s - h)) / (2 * h)
        worst = max(worst, abs(fd - 0.5 * float(mmse(prior, s, exact=True))))
    return worst < 1e-5, f"max |dI/ds - mmse/2| = {worst:.2e}"


def _denoiser_derivative(prior: SignalPrior):
    v = np.linspace(-3, 3, 41)
    s = 5.0
    h = 1e-6
    fd = (prior.denoise(v + h, s) - prior.denoise(v - h, s)) / (2 * h)
    _, d = prior.denoise_with_derivative(v, np.full_like(v, s))
    err = float(np.max(np.abs(fd - d) / np.maximum(np.abs(d), 1e-3)))
    return err < 1e-6, f"max relative error {err:.2e}"


def _se_monotone(cfg: ExperimentConfig):
    traj = run_state_evolution(cfg.base(), cfg.signal_prior, cfg.sigma ** 2, cfg.delta_nominal, 400)
    psi = traj.psi[1:]
    ok = bool(np.all(np.diff(psi, axis=0) <= 1e-12 * (1 + psi[:-1])))
    return ok, f"{traj.t_last} iterations"


def _q_identity(cfg: ExperimentConfig):
    base = cfg.base()
    rng = np.random.default_rng(0)
    phi = rng.uniform(0.01, 2.0, base.L_r)
    q = compute_q(base, phi).qtilde
    err = float(np.max(np.abs((base.W * q).sum(axis=0) - 1)))
    return err < 1e-12, f"max deviation {err:.1e}"


def _determinism(cfg: ExperimentConfig):
    base = cfg.base()
    a = sample_sensing_matrix(base, cfg.N, cfg.delta_nominal, trial_seed(cfg.master_seed, 0))
    b = sample_sensing_matrix(base, cfg.N, cfg.delta_nominal, trial_seed(cfg.master_seed, 0))
    ya = generate_instance(cfg, a, 7).y
    yb = generate_instance(cfg, b, 7).y
    ok = a.to_bytes() == b.to_bytes() and ya.tobytes() == yb.tobytes()
    return ok, "matrix and measurements byte-identical"


def run_invariant_suite(cfg: ExperimentConfig):
    """Yield (name, passed, detail) for each check."""
    priors = {"config": cfg.signal_prior,
              "bg(0.3)": SignalPrior.bernoulli_gaussian(0.3),
              "three-point": SignalPrior.discrete([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])}
    for name, p in priors.items():
        yield (f"mmse bounds [{name}]", *_mmse_bounds(p))
    yield ("dI/ds = mmse/2", *_info_derivative(cfg.signal_prior))
    yield ("denoiser derivative", *_denoiser_derivative(cfg.signal_prior))
    yield ("SE monotone in t", *_se_monotone(cfg))
    yield ("Q weighted average", *_q_identity(cfg))
    yield ("seeded determinism", *_determinism(cfg))
