"""Bayes-optimal approximate message passing for spatially coupled matrices.

All vectors are handled internally in group-contiguous order (see
:class:`~scamp.coupling.SensingMatrix`); inputs and outputs use the actual
coordinate order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .coupling import BaseMatrix, SensingMatrix
from .priors import SignalPrior
from .state_evolution import SETrajectory

PHI_FLOOR = 1e-20
SNR_CEIL = 1e20
DIVERGENCE_LIMIT = 1e12
INV_NORMAL_Q3 = 0.6744897501960817


class AmpDivergence(ArithmeticError):
    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class QMatrix:
    qtilde: np.ndarray
    t: int | None = None
    degenerate: bool = False


def _inverse_phi(base: BaseMatrix, phi) -> np.ndarray:
    """1/phi with inf -> 0, floored phi, and empty rows carrying no weight."""
    phi = np.maximum(np.asarray(phi, dtype=float), PHI_FLOOR)
    inv = 1.0 / phi
    inv[base.W.sum(axis=1) == 0] = 0.0
    return inv


def effective_snr(base: BaseMatrix, phi) -> np.ndarray:
    """s_u = sum_r W_{r,u} / phi_r for every column group u."""
    return base.W.T @ _inverse_phi(base, phi)


def compute_q(base: BaseMatrix, phi, t: int | None = None) -> QMatrix:
    """Block values Q_{r,u} = phi_r^{-1} / sum_k W_{k,u} phi_k^{-1}."""
    W = base.W
    if np.any(W.sum(axis=0) == 0):
        raise ValueError("a column group has zero total weight")
    inv = _inverse_phi(base, phi)
    s = W.T @ inv
    degenerate = bool(np.any(s == 0))
    if degenerate:
        # every row reciprocal is zero (phi = inf): spread uniformly over the support
        count = (W > 0).sum(axis=0)
        uniform = (W > 0) / count[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(s[None, :] > 0, inv[:, None] / s[None, :], uniform)
    else:
        q = inv[:, None] / s[None, :]
    return QMatrix(q, t, degenerate)


def onsager(base: BaseMatrix, qtilde_prev: QMatrix, eta_prime_avgs, delta: float) -> np.ndarray:
    """b_r = (1/delta) sum_u W_{r,u} Q_{r,u} <eta'>_u for every row group r."""
    return (base.W * qtilde_prev.qtilde) @ np.asarray(eta_prime_avgs, dtype=float) / delta


def estimate_phi_empirical(r_grouped, M: int, robust: bool = False) -> np.ndarray:
    """Per-row-group noise level from the residual, ||r_R(a)||^2 / M.

    The robust variant rescales the (M/2)-th largest absolute entry by the
    normal quartile, which ignores a minority of outliers.
    """
    r = np.asarray(r_grouped, dtype=float).reshape(-1, M)
    if not robust:
        return np.sum(r * r, axis=1) / M
    if M < 2:
        raise ValueError("robust estimate needs M >= 2")
    k = M // 2
    # k-th largest = (M-k)-th smallest
    mags = np.partition(np.abs(r), M - k, axis=1)[:, M - k]
    return (mags / INV_NORMAL_Q3) ** 2


def pool_phi(base: BaseMatrix, phi_hat, window: int = 2) -> np.ndarray:
    """Average per-group estimates over groups that share the same noise level.

    Seed row groups attached to one column group are pooled together, and
    each coupled row group is averaged with its ``window`` neighbours on
    either side (phi varies smoothly along the chain). Uncoupled base
    matrices are returned unchanged.
    """
    phi_hat = np.asarray(phi_hat, dtype=float)
    if not base.is_coupled:
        return phi_hat.copy()
    out = phi_hat.copy()
    ns = base.n_seed_rows
    out[:ns] = np.repeat(phi_hat[:ns].reshape(-1, base.L0).mean(axis=1), base.L0)
    if window > 0:
        chain = phi_hat[ns:]
        k = np.ones(2 * window + 1)
        out[ns:] = (np.convolve(chain, k, "same")
                    / np.convolve(np.ones_like(chain), k, "same"))
    return out


PHI_SOURCES = ("se", "empirical", "robust", "pooled")


@dataclass
class AmpState:
    """Iterate x^t plus what the next residual needs from step t-1
    (r^{t-1}, Q^{t-1}, <eta'_{t-1}>); all vectors in grouped order."""

    x: np.ndarray
    r_prev: np.ndarray | None
    eta_prime_avgs: np.ndarray | None
    q_prev: QMatrix | None
    t: int
    phi_source: str = "se"


def _block_mean(v: np.ndarray, width: int) -> np.ndarray:
    return v.reshape(-1, width).mean(axis=1)


def initial_state(A: SensingMatrix, prior: SignalPrior, phi_source: str = "se") -> AmpState:
    return AmpState(np.full(A.n, prior.mean), None, None, None, 1, phi_source)


def residual(state: AmpState, A: SensingMatrix, y_grouped: np.ndarray, delta: float,
             mode: str = "full") -> np.ndarray:
    """r^t = y - A x^t + b^t * r^{t-1} (grouped order)."""
    r = y_grouped - A.blocks @ state.x
    if mode == "full" and state.r_prev is not None:
        b = onsager(A.base, state.q_prev, state.eta_prime_avgs, delta)
        r = r + np.repeat(b, A.M) * state.r_prev
    elif mode not in ("full", "naive"):
        raise ValueError(f"unknown mode {mode!r}")
    return r


def amp_step(state: AmpState, A: SensingMatrix, y_grouped: np.ndarray, prior: SignalPrior,
             phi_t=None, mode: str = "full", robust: bool = False,
             guard: bool = False, pool: int | None = None) -> AmpState:
    """One AMP iteration t -> t+1.

    ``phi_t`` is the SE profile phi(t); leave it as None to estimate it from
    the residual (``robust`` picks the quantile estimator, ``pool`` the
    half-width passed to :func:`pool_phi`).
    """
    base = A.base
    delta = A.delta
    r = residual(state, A, y_grouped, delta, mode)
    if not np.all(np.isfinite(r)) or np.max(np.abs(r), initial=0.0) > DIVERGENCE_LIMIT:
        raise AmpDivergence(f"residual diverged at iteration {state.t}", state.t)
    if phi_t is None:
        phi_t = estimate_phi_empirical(r, A.M, robust)
        if pool is not None:
            phi_t = pool_phi(base, phi_t, pool)
    elif guard:
        phi_t = np.maximum(phi_t, estimate_phi_empirical(r, A.M, robust))
    inv = _inverse_phi(base, phi_t)
    s = np.minimum(base.W.T @ inv, SNR_CEIL)
    if np.any(s <= 0):
        raise AmpDivergence(f"a column group receives no information at iteration {state.t}", state.t)
    # (Q * A)^T r factorizes as diag(1/s) A^T diag(1/phi) r
    back = A.blocks.T @ (np.repeat(inv, A.M) * r)
    s_coord = np.repeat(s, A.N)
    v = state.x + back / s_coord
    x_new, d = prior.denoise_with_derivative(v, s_coord)
    if not np.all(np.isfinite(x_new)):
        raise AmpDivergence(f"estimate diverged at iteration {state.t}", state.t)
    q = QMatrix(inv[:, None] / s[None, :], state.t)
    return AmpState(x_new, r, _block_mean(d, A.N), q, state.t + 1, state.phi_source)


@dataclass
class AmpResult:
    estimates: list[np.ndarray]        # x^t for t = 1..T+1, actual order
    mse: list[float] = field(default_factory=list)
    group_mse: list[np.ndarray] = field(default_factory=list)
    phi_used: list[np.ndarray] = field(default_factory=list)
    eta_prime: list[np.ndarray] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.estimates[-1]

    def report(self, config: dict | None = None, seed: int | None = None) -> str:
        return json.dumps({
            "config": config or {}, "seed": seed,
            "mse": [float(m) for m in self.mse],
        }, sort_keys=True)


def run_amp(A: SensingMatrix, y, prior: SignalPrior, se: SETrajectory | None = None,
            t_max: int = 50, mode: str = "full", phi_source: str = "se",
            x_true=None, denoiser_prior: SignalPrior | None = None,
            keep_estimates: bool = False, pool_window: int = 2) -> AmpResult:
    """Run AMP for ``t_max`` iterations.

    ``phi_source`` is "se" (use ``se.phi_at(t)``), "empirical", "robust" or
    "pooled" (the residual estimate smoothed by :func:`pool_phi`).
    ``denoiser_prior`` runs the denoiser matched to a different prior than
    the one generating the data (``prior`` still sets the initial guess).
    With ``x_true`` the per-iteration MSE of x^1 .. x^{t_max+1} is recorded.
    """
    if phi_source == "se" and se is None:
        raise ValueError("phi_source='se' needs a state-evolution trajectory")
    if phi_source not in PHI_SOURCES:
        raise ValueError(f"unknown phi_source {phi_source!r}")
    robust = phi_source == "robust"
    pool = pool_window if phi_source == "pooled" else None
    eta_prior = denoiser_prior or prior
    yg = A.y_to_grouped(np.asarray(y, dtype=float))
    xt = None if x_true is None else A.x_to_grouped(np.asarray(x_true, dtype=float))
    state = initial_state(A, prior, phi_source)
    res = AmpResult([])

    def record(st):
        if keep_estimates:
            res.estimates.append(A.x_from_grouped(st.x))
        if xt is not None:
            err = (st.x - xt) ** 2
            res.mse.append(float(err.mean()))
            res.group_mse.append(_block_mean(err, A.N))

    record(state)
    for t in range(1, t_max + 1):
        phi_t = se.phi_at(t) if phi_source == "se" else None
        state = amp_step(state, A, yg, eta_prior, phi_t, mode, robust=robust, pool=pool)
        if phi_t is None:
            phi_t = estimate_phi_empirical(state.r_prev, A.M, robust)
            if pool is not None:
                phi_t = pool_phi(A.base, phi_t, pool)
        res.phi_used.append(np.asarray(phi_t, dtype=float))
        res.eta_prime.append(state.eta_prime_avgs)
        record(state)
    if not keep_estimates:
        res.estimates.append(A.x_from_grouped(state.x))
    return res


def reconstruct_augmented(A_tilde: SensingMatrix, y, prior: SignalPrior,
                          se: SETrajectory | None = None, t_max: int = 50,
                          phi_source: str = "se", x_true=None) -> tuple[np.ndarray, AmpResult]:
    """Run AMP on the coupled rows, then overwrite the directly measured
    trailing column groups with their identity measurements."""
    if not A_tilde.augmented:
        raise ValueError("reconstruct_augmented needs an augmented matrix")
    y = np.asarray(y, dtype=float)
    y1, y2 = y[: A_tilde.m_base], y[A_tilde.m_base:]
    res = run_amp(A_tilde, y1, prior, se, t_max, "full", phi_source, x_true)
    xg = A_tilde.x_to_grouped(res.final)
    xg[A_tilde.n - len(y2):] = y2
    return A_tilde.x_from_grouped(xg), res
