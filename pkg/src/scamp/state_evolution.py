"""Deterministic recursions tracking per-group noise (phi) and error (psi)."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .coupling import BaseMatrix, coupling_weight
from .priors import SignalPrior, mmse


class SeedBoundError(AssertionError):
    pass


@dataclass
class StateProfile:
    phi: np.ndarray
    psi: np.ndarray
    t: int
    sigma2: float
    delta: float


def weighted_precision(W: np.ndarray, phi) -> np.ndarray:
    """s_i = sum_b W_{b,i} / phi_b, with 1/inf = 0 and zero weights ignored."""
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        inv = 1.0 / phi
        terms = np.where(W > 0, W * inv[:, None], 0.0)
        return terms.sum(axis=0)


def se_map_psi(base: BaseMatrix, prior: SignalPrior, phi) -> np.ndarray:
    return mmse(prior, weighted_precision(base.W, phi))


def se_map_phi(base: BaseMatrix, psi, sigma2: float, delta: float) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    W = base.W
    hit_inf = np.any((W > 0) & np.isinf(psi)[None, :], axis=1)
    finite = np.where(np.isinf(psi), 0.0, psi)
    phi = sigma2 + (W @ finite) / delta
    phi[hit_inf] = np.inf
    return phi


@dataclass
class SETrajectory:
    """phi[t] = T''(psi[t]) and psi[t+1] = T'(phi[t]); psi[0] = inf."""

    phi: np.ndarray   # (T+1, L_r)
    psi: np.ndarray   # (T+1, L_c)
    sigma2: float
    delta: float
    converged: bool

    @property
    def t_last(self) -> int:
        return self.phi.shape[0] - 1

    def profile(self, t: int) -> StateProfile:
        t = min(t, self.t_last)
        return StateProfile(self.phi[t], self.psi[t], t, self.sigma2, self.delta)

    def phi_at(self, t: int) -> np.ndarray:
        """phi(t), holding the last iterate once the recursion has stopped."""
        return self.phi[min(t, self.t_last)]

    def psi_at(self, t: int) -> np.ndarray:
        return self.psi[min(t, self.t_last)]

    def mse(self, t: int) -> float:
        """MSE_SE(t), the column average of psi(t)."""
        return float(np.mean(self.psi_at(t)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,group,phi,psi\n")
        T, L_r = self.phi.shape
        L_c = self.psi.shape[1]
        for t in range(T):
            for g in range(max(L_r, L_c)):
                ph = repr(float(self.phi[t, g])) if g < L_r else ""
                ps = repr(float(self.psi[t, g])) if g < L_c else ""
                buf.write(f"{t},{g},{ph},{ps}\n")
        return buf.getvalue()


def _max_change(new, old) -> float:
    both_inf = np.isinf(new) & np.isinf(old)
    d = np.abs(np.where(both_inf, 0.0, new - np.where(both_inf, 0.0, old)))
    return float(np.max(d)) if d.size else 0.0


def run_state_evolution(base: BaseMatrix, prior: SignalPrior, sigma2: float, delta: float,
                        t_max: int = 2000, stop_tol: float = 1e-10) -> SETrajectory:
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    psi = np.full(base.L_c, np.inf)
    phis, psis = [], [psi]
    converged = False
    for _ in range(t_max):
        phi = se_map_phi(base, psi, sigma2, delta)
        phis.append(phi)
        nxt = se_map_psi(base, prior, phi)
        step = _max_change(nxt, psi)
        psi = nxt
        psis.append(psi)
        if step < stop_tol:
            converged = True
            break
    phis.append(se_map_phi(base, psi, sigma2, delta))
    return SETrajectory(np.array(phis), np.array(psis), sigma2, delta, converged)


@dataclass
class ScalarTrajectory:
    phi: np.ndarray
    psi: np.ndarray
    converged: bool

    @property
    def limit_phi(self) -> float:
        return float(self.phi[-1])

    @property
    def limit_psi(self) -> float:
        return float(self.psi[-1])


def run_uncoupled_se(prior: SignalPrior, sigma2: float, delta: float,
                     t_max: int = 2000, stop_tol: float = 1e-10) -> ScalarTrajectory:
    """phi = sigma2 + psi/delta, psi' = mmse(1/phi), from psi = inf."""
    psi = np.inf
    phis, psis = [], [psi]
    converged = False
    for _ in range(t_max):
        phi = np.inf if np.isinf(psi) else sigma2 + psi / delta
        phis.append(phi)
        s = 0.0 if np.isinf(phi) else (np.inf if phi == 0 else 1.0 / phi)
        nxt = float(mmse(prior, s))
        step = abs(nxt - psi) if np.isfinite(psi) else np.inf
        psi = nxt
        psis.append(psi)
        if step < stop_tol:
            converged = True
            break
    phis.append(sigma2 + psi / delta)
    return ScalarTrajectory(np.array(phis), np.array(psis), converged)


def predicted_mse(base: BaseMatrix, prior: SignalPrior, phi_prev) -> tuple[np.ndarray, float]:
    """Per-column-group mmse(sum_a W_{a,i}/phi_a(t-1)) and its average over C."""
    per_group = se_map_psi(base, prior, phi_prev)
    return per_group, float(np.mean(per_group))


# -- seed bounds ---------------------------------------------------------------

@dataclass
class SeedBoundReport:
    t0: int | None
    seed_bound: float
    phi_bound: float
    floor: float
    violations: list[tuple[str, int, int]]

    @property
    def ok(self) -> bool:
        return self.t0 is not None and not self.violations


def check_seed_bounds(traj: SETrajectory, base: BaseMatrix, prior: SignalPrior,
                      rtol: float = 1e-6, raise_on_violation: bool = False) -> SeedBoundReport:
    """Seed-column and seed-row bounds past the first t where they hold,
    plus the interior floor psi_i >= mmse(2/sigma^2) on C_0."""
    sigma2, delta, L0 = traj.sigma2, traj.delta, base.L0
    if not delta * L0 > 3:
        raise ValueError(f"seed bounds need delta*L0 > 3, got {delta * L0}")
    seed_cols = slice(0, 2 * base.rho_inv)
    seed_rows = slice(0, base.n_seed_rows)
    bound = float(mmse(prior, L0 / (2 * sigma2))) if sigma2 > 0 else 0.0
    phi_bound = (1 + 2 / (delta * L0)) * sigma2
    floor = float(mmse(prior, 2 / sigma2)) if sigma2 > 0 else 0.0
    slack = lambda v: v * (1 + rtol) + 1e-300  # noqa: E731

    def holds(t):
        return (np.all(traj.psi[t, seed_cols] <= slack(bound))
                and np.all(traj.phi[t, seed_rows] <= slack(phi_bound)))

    T = traj.t_last
    t0 = next((t for t in range(1, T + 1) if holds(t)), None)
    violations = []
    if t0 is not None:
        for t in range(t0, T + 1):
            for i in np.flatnonzero(traj.psi[t, seed_cols] > slack(bound)):
                violations.append(("seed_psi", t, int(i) - 2 * base.rho_inv))
            for a in np.flatnonzero(traj.phi[t, seed_rows] > slack(phi_bound)):
                violations.append(("seed_phi", t, int(a)))
    for t in range(1, T + 1):
        for i in np.flatnonzero(traj.psi[t, base.c0_slice] < floor * (1 - rtol)):
            violations.append(("floor", t, int(i)))
    report = SeedBoundReport(t0, bound, phi_bound, floor, violations)
    if raise_on_violation and not report.ok:
        raise SeedBoundError(f"seed bounds violated (t0={t0}): {violations[:10]}")
    return report


# -- modified recursion on (R_0, C_0) -------------------------------------------

@dataclass
class ModifiedTrajectory:
    phi: np.ndarray   # (T+1, |R_0|), row a = k - 1/rho
    psi: np.ndarray   # (T+1, L), column i = k
    boundary_psi: float
    degenerate_boundary: bool


def run_modified_se(base: BaseMatrix, prior: SignalPrior, sigma2: float, delta: float,
                    t_max: int = 2000, stop_tol: float = 1e-10) -> ModifiedTrajectory:
    """Recursion restricted to R_0 x C_0 with psi = mmse(L0/(2 sigma^2)) to the
    left of the chain and psi = inf to the right."""
    if not base.is_coupled:
        raise ValueError("modified recursion needs a coupled base matrix")
    L, K = base.L, base.rho_inv
    degenerate = sigma2 <= 0
    if degenerate:
        warnings.warn("sigma2 = 0: using boundary psi = 0", RuntimeWarning, stacklevel=2)
        psi_b = 0.0
    else:
        psi_b = float(mmse(prior, base.L0 / (2 * sigma2)))
    a = np.arange(L + 2 * K) - K
    cols = np.arange(L)
    Wm = coupling_weight(base.shape, K, a[:, None] - cols[None, :])
    # weight each row puts on the left boundary (i <= -1) and on the right (i >= L)
    left_cols = np.arange(-2 * K, 0)
    right_cols = np.arange(L, L + 2 * K)
    w_left = coupling_weight(base.shape, K, a[:, None] - left_cols[None, :]).sum(axis=1)
    w_right = coupling_weight(base.shape, K, a[:, None] - right_cols[None, :]).sum(axis=1)
    right_inf = w_right > 0

    psi = np.full(L, np.inf)
    phis, psis = [], [psi]
    for _ in range(t_max):
        hit = np.any((Wm > 0) & np.isinf(psi)[None, :], axis=1) | right_inf
        phi = sigma2 + (Wm @ np.where(np.isinf(psi), 0.0, psi) + w_left * psi_b) / delta
        phi[hit] = np.inf
        phis.append(phi)
        nxt = mmse(prior, weighted_precision(Wm, phi))
        done = _max_change(nxt, psi) < stop_tol
        psi = nxt
        psis.append(psi)
        if done:
            break
    phi = sigma2 + (Wm @ psi + w_left * psi_b) / delta
    phi[right_inf] = np.inf
    phis.append(phi)
    return ModifiedTrajectory(np.array(phis), np.array(psis), psi_b, degenerate)
