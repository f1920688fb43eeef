"""Continuum limit of the coupled recursion, its free energy and potentials.

Profiles live on a uniform mesh of [-1, l+1]. ``phi`` is only finite on
[-1, l-1] (its kernel reaches psi = inf beyond l), and ``psi`` is only free on
[0, l]; to the left it is pinned to mmse(L0 / (2 sigma^2)). Integrals use the
trapezoid rule on those two sub-meshes, so the discrete energy, its gradient
and the discrete fixed-point map are mutually consistent.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .coupling import ShapeFunction, build_shape
from .priors import SignalPrior, mmse, mutual_information


class ContinuumError(ValueError):
    pass


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def boundary_psi(sigma2: float, L0: int, prior: SignalPrior) -> float:
    """mmse(L0 / (2 sigma^2)); 0 when sigma2 = 0."""
    return float(mmse(prior, L0 / (2 * sigma2))) if sigma2 > 0 else 0.0


def sigma_eff(x, sigma2: float, delta: float, L0: int, shape: ShapeFunction,
              prior: SignalPrior):
    """sigma^2 plus the seed contribution integrated over the region x <= 0."""
    return sigma2 + shape.tail(np.asarray(x, dtype=float)) * boundary_psi(sigma2, L0, prior) / delta


@dataclass(frozen=True)
class ContinuumGrid:
    ell: float
    h: float
    sigma2: float
    delta: float
    L0: int
    prior: SignalPrior
    shape: ShapeFunction

    def __post_init__(self):
        if self.h > 0.05:
            raise ContinuumError("mesh step must be at most 0.05")
        for name, v in (("1/h", 1 / self.h), ("l/h", self.ell / self.h)):
            if abs(v - round(v)) > 1e-9:
                raise ContinuumError(f"{name} must be an integer so kernel edges hit nodes")

    @cached_property
    def _n(self) -> tuple[int, int]:
        return int(round(1 / self.h)), int(round(self.ell / self.h))

    @cached_property
    def x(self) -> np.ndarray:
        """Full mesh on [-1, l+1]."""
        k, m = self._n
        return -1.0 + self.h * np.arange(m + 2 * k + 1)

    @cached_property
    def x_phi(self) -> np.ndarray:
        """Nodes of [-1, l-1]."""
        k, m = self._n
        return self.x[: m + 1]

    @cached_property
    def x_psi(self) -> np.ndarray:
        """Nodes of [0, l]."""
        k, m = self._n
        return self.x[k: k + m + 1]

    @cached_property
    def w_phi(self) -> np.ndarray:
        return _trapezoid_weights(len(self.x_phi), self.h)

    @cached_property
    def w_psi(self) -> np.ndarray:
        return _trapezoid_weights(len(self.x_psi), self.h)

    @cached_property
    def sigma_eff(self) -> np.ndarray:
        return sigma_eff(self.x_phi, self.sigma2, self.delta, self.L0, self.shape, self.prior)

    @cached_property
    def kernel_to_phi(self) -> np.ndarray:
        """K[y, x] = w_x * W(y - x), y on [-1, l-1], x on [0, l]."""
        return self.shape(self.x_phi[:, None] - self.x_psi[None, :]) * self.w_psi[None, :]

    @cached_property
    def kernel_to_psi(self) -> np.ndarray:
        """K[x, z] = w_z * W(x - z), x on [0, l], z on [-1, l-1]."""
        return self.shape(self.x_psi[:, None] - self.x_phi[None, :]) * self.w_phi[None, :]

    def precision(self, phi) -> np.ndarray:
        """(W * phi^{-1})(x) for x on [0, l]."""
        return self.kernel_to_psi @ (1.0 / np.asarray(phi))

    def phi_from_psi(self, psi) -> np.ndarray:
        return self.sigma_eff + self.kernel_to_phi @ np.asarray(psi) / self.delta

    def psi_from_phi(self, phi) -> np.ndarray:
        return mmse(self.prior, self.precision(phi))


def make_grid(ell: float, sigma2: float, delta: float, L0: int, prior: SignalPrior,
              h: float = 0.01, shape: ShapeFunction | None = None) -> ContinuumGrid:
    return ContinuumGrid(ell, h, sigma2, delta, L0, prior, shape or build_shape())


@dataclass
class ContinuumProfile:
    """phi(t) on [-1, l-1] and psi(t) on [0, l], with phi(t) = F''(psi(t))."""

    grid: ContinuumGrid
    phi: np.ndarray
    psi: np.ndarray
    t: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,phi,psi\n")
        g = self.grid
        phi = dict(zip(np.round(g.x_phi, 12), self.phi))
        psi = dict(zip(np.round(g.x_psi, 12), self.psi))
        for x in np.round(g.x, 12):
            ph = repr(float(phi[x])) if x in phi else "inf"
            if x in psi:
                ps = repr(float(psi[x]))
            else:
                ps = repr(boundary_psi(g.sigma2, g.L0, g.prior)) if x < 0 else "inf"
            buf.write(f"{x!r},{ph},{ps}\n")
        return buf.getvalue()


def initial_profile(grid: ContinuumGrid) -> ContinuumProfile:
    """State at t = 1: phi(0) is infinite almost everywhere, so psi(1) = Var(X)."""
    psi = np.full(len(grid.x_psi), grid.prior.variance)
    return ContinuumProfile(grid, grid.phi_from_psi(psi), psi, 1)


def continuum_step(profile: ContinuumProfile) -> ContinuumProfile:
    g = profile.grid
    psi = g.psi_from_phi(profile.phi)
    return ContinuumProfile(g, g.phi_from_psi(psi), psi, profile.t + 1)


@dataclass
class FixedPointResult:
    profile: ContinuumProfile
    converged: bool
    history: list[ContinuumProfile]


def run_continuum(grid: ContinuumGrid, t_max: int = 5000, stop_tol: float = 1e-12,
                  keep: tuple[int, ...] = ()) -> FixedPointResult:
    """Iterate from t = 1 until the profile stops moving; ``keep`` lists the
    iteration numbers whose profiles are returned in ``history``."""
    prof = initial_profile(grid)
    hist = [prof] if 1 in keep else []
    converged = False
    while prof.t < t_max:
        nxt = continuum_step(prof)
        change = float(np.max(np.abs(nxt.phi - prof.phi)))
        prof = nxt
        if prof.t in keep:
            hist.append(prof)
        if change < stop_tol:
            converged = True
            break
    return FixedPointResult(prof, converged, hist)


# -- energies ---------------------------------------------------------------

def potential(phi, sigma2: float, delta: float, prior: SignalPrior, method: str = "entropy"):
    """V(phi) = (delta/2)(sigma^2/phi + log phi) + I(1/phi)."""
    phi = np.asarray(phi, dtype=float)
    return potential_rob(phi, sigma2, delta) + mutual_information(prior, 1.0 / phi, method)


def potential_rob(phi, sigma2: float, delta: float):
    phi = np.asarray(phi, dtype=float)
    return 0.5 * delta * (sigma2 / phi + np.log(phi))


def _check_phi(phi):
    if np.any(~(np.asarray(phi) > 0)):
        raise ContinuumError("free energy needs phi > 0 everywhere")


def free_energy(profile: ContinuumProfile, phi=None) -> float:
    g = profile.grid
    phi = profile.phi if phi is None else np.asarray(phi, dtype=float)
    _check_phi(phi)
    local = 0.5 * g.delta * np.sum(g.w_phi * (g.sigma_eff / phi + np.log(phi)))
    coupled = np.sum(g.w_psi * mutual_information(g.prior, g.precision(phi), "table"))
    return float(local + coupled)


@dataclass
class EnergyDecomposition:
    potential: float
    seed: float
    remainder: float
    robust: bool

    @property
    def total(self) -> float:
        return self.potential + self.seed + self.remainder


def energy_decomposition(profile: ContinuumProfile, robust: bool = False) -> EnergyDecomposition:
    """Split the energy into the integrated potential, the seed correction
    (delta/2) int (sigma_eff^2 - sigma^2)/phi and the coupling remainder."""
    g = profile.grid
    phi = profile.phi
    _check_phi(phi)
    info_local = mutual_information(g.prior, 1.0 / phi, "table")
    info_coupled = mutual_information(g.prior, g.precision(phi), "table")
    v = potential_rob(phi, g.sigma2, g.delta)
    if not robust:
        v = v + info_local
    seed = 0.5 * g.delta * np.sum(g.w_phi * (g.sigma_eff - g.sigma2) / phi)
    rem = np.sum(g.w_psi * info_coupled)
    if not robust:
        rem -= np.sum(g.w_phi * info_local)
    return EnergyDecomposition(float(np.sum(g.w_phi * v)), float(seed), float(rem), robust)


def energy_gradient(profile: ContinuumProfile, phi=None) -> np.ndarray:
    """Functional derivative of the energy on [-1, l-1].

    For interior nodes the partial derivative of :func:`free_energy` with
    respect to phi_j equals ``w_j`` times this value.
    """
    g = profile.grid
    phi = profile.phi if phi is None else np.asarray(phi, dtype=float)
    back = g.kernel_to_phi @ mmse(g.prior, g.precision(phi))
    return 0.5 * g.delta / phi ** 2 * (phi - g.sigma_eff - back / g.delta)


def gradient_scale(sigma2: float, delta: float) -> float:
    """delta / (2 sigma^4), the natural size of the gradient prefactor."""
    return 0.5 * delta / sigma2 ** 2


@dataclass
class PhiStar:
    value: float
    degenerate: bool


def phi_star(sigma2: float, delta: float, L0: int, prior: SignalPrior) -> PhiStar:
    """sigma^2 + mmse(L0 / (2 sigma^2)) / delta, the seeded plateau level."""
    if not delta * L0 > 3:
        raise ContinuumError(f"phi_star needs delta*L0 > 3, got {delta * L0}")
    value = sigma2 + boundary_psi(sigma2, L0, prior) / delta
    upper = (1 + 2 / (delta * L0)) * sigma2
    if value > upper * (1 + 1e-12):
        raise ContinuumError(f"phi_star {value} exceeds (1 + 2/(delta L0)) sigma^2 = {upper}")
    return PhiStar(value, degenerate=not value > sigma2)


def profile_summary(result: FixedPointResult) -> dict:
    p = result.profile
    g = p.grid
    grad = energy_gradient(p)
    return {
        "ell": g.ell, "h": g.h, "sigma2": g.sigma2, "delta": g.delta, "L0": g.L0,
        "t": p.t, "converged": result.converged,
        "phi_min": float(p.phi.min()), "phi_max": float(p.phi.max()),
        "free_energy": free_energy(p),
        "max_gradient_scaled": float(np.max(np.abs(grad)) / gradient_scale(g.sigma2, g.delta)),
    }


def with_phi(profile: ContinuumProfile, phi) -> ContinuumProfile:
    return replace(profile, phi=np.asarray(phi, dtype=float))


