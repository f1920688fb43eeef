"""Scalar signal priors: Bayes-optimal denoisers, mmse curves, mutual information.

Every prior handled here is a finite mixture of point masses and (at most) one
Gaussian component. Observations are modelled as ``v = X + s**-0.5 * Z`` for
the denoiser and ``Y = sqrt(s) X + Z`` for ``mmse``/``mutual_information``;
both are the same channel up to scaling.

Extended non-negative reals (``[0, inf]``) are represented by Python/numpy
floats with ``math.inf`` standing for the point at infinity; use
:func:`reciprocal` to map between noise variances and signal-to-noise ratios.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline

INF = math.inf
LOG_2PI = math.log(2.0 * math.pi)


class PriorError(ValueError):
    """Invalid prior specification or out-of-domain argument."""


class QuadratureError(ArithmeticError):
    """Quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved abs error {achieved:.3e})")
        self.achieved = achieved


def reciprocal(x):
    """Reciprocal on the completed half-line: 1/inf = 0 and 1/0 = inf."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise PriorError("reciprocal is defined on [0, inf] only")
    with np.errstate(divide="ignore"):
        out = np.where(np.isinf(arr), 0.0, 1.0 / np.where(arr == 0.0, 0.0, arr))
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SignalPrior:
    """Mixture of point masses plus an optional Gaussian component.

    ``atoms`` are ``(location, mass)`` pairs; ``eps`` is the mass of the
    Gaussian N(``mu``, ``var``) part. Construct through the helpers
    :meth:`bernoulli_gaussian`, :meth:`discrete` or :meth:`mixture`.
    """

    kind: str
    atoms: tuple[tuple[float, float], ...] = ()
    eps: float = 0.0
    mu: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bernoulli_gaussian", "discrete", "mixture"):
            raise PriorError(f"unknown prior kind {self.kind!r}")
        if not 0.0 <= self.eps <= 1.0:
            raise PriorError(f"eps must lie in [0, 1], got {self.eps}")
        if self.eps > 0 and not self.var > 0:
            raise PriorError("Gaussian component needs positive variance")
        masses = [m for _, m in self.atoms]
        if any(m < 0 for m in masses):
            raise PriorError("atom masses must be nonnegative")
        total = sum(masses) + self.eps
        if abs(total - 1.0) > 1e-12:
            raise PriorError(f"masses sum to {total!r}, expected 1")

    # -- constructors -----------------------------------------------------

    @classmethod
    def bernoulli_gaussian(cls, eps: float, mu: float = 0.0, var: float = 1.0) -> "SignalPrior":
        atoms = ((0.0, 1.0 - eps),) if eps < 1.0 else ()
        return cls("bernoulli_gaussian", atoms, float(eps), float(mu), float(var))

    @classmethod
    def discrete(cls, atoms: Iterable[tuple[float, float]]) -> "SignalPrior":
        atoms = tuple((float(c), float(m)) for c, m in atoms)
        if not atoms:
            raise PriorError("discrete prior needs at least one atom")
        return cls("discrete", atoms, 0.0)

    @classmethod
    def mixture(cls, atoms: Iterable[tuple[float, float]], eps: float,
                mu: float = 0.0, var: float = 1.0) -> "SignalPrior":
        atoms = tuple((float(c), float(m)) for c, m in atoms)
        return cls("mixture", atoms, float(eps), float(mu), float(var))

    @classmethod
    def point_mass(cls, c: float = 0.0) -> "SignalPrior":
        return cls.discrete([(c, 1.0)])

    # -- serialization ----------------------------------------------------

    def to_config(self) -> dict:
        if self.kind == "bernoulli_gaussian":
            return {"kind": self.kind, "eps": self.eps, "mu": self.mu, "var": self.var}
        cfg = {"kind": self.kind, "atoms": [[c, m] for c, m in self.atoms]}
        if self.kind == "mixture":
            cfg.update(eps=self.eps, mu=self.mu, var=self.var)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "SignalPrior":
        try:
            kind = cfg["kind"]
            if kind == "bernoulli_gaussian":
                return cls.bernoulli_gaussian(cfg["eps"], cfg.get("mu", 0.0), cfg.get("var", 1.0))
            if kind == "discrete":
                return cls.discrete(cfg["atoms"])
            if kind == "mixture":
                return cls.mixture(cfg["atoms"], cfg["eps"], cfg.get("mu", 0.0), cfg.get("var", 1.0))
        except (KeyError, TypeError) as exc:
            raise PriorError(f"malformed prior config {cfg!r}") from exc
        raise PriorError(f"unknown prior kind {kind!r}")

    # -- moments ----------------------------------------------------------

    @cached_property
    def _locs(self) -> np.ndarray:
        return np.array([c for c, m in self.atoms if m > 0], dtype=float)

    @cached_property
    def _masses(self) -> np.ndarray:
        return np.array([m for c, m in self.atoms if m > 0], dtype=float)

    @property
    def has_gaussian(self) -> bool:
        return self.eps > 0

    @cached_property
    def mean(self) -> float:
        m = float(np.dot(self._locs, self._masses))
        return m + self.eps * self.mu

    @cached_property
    def second_moment(self) -> float:
        m2 = float(np.dot(self._locs ** 2, self._masses))
        return m2 + self.eps * (self.var + self.mu ** 2)

    @cached_property
    def fourth_moment(self) -> float:
        m4 = float(np.dot(self._locs ** 4, self._masses))
        mu, v = self.mu, self.var
        return m4 + self.eps * (mu ** 4 + 6 * mu ** 2 * v + 3 * v ** 2)

    @cached_property
    def variance(self) -> float:
        return max(self.second_moment - self.mean ** 2, 0.0)

    @property
    def is_degenerate(self) -> bool:
        """True when X is almost surely constant."""
        return self.variance == 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        labels = rng.choice(len(self._locs) + 1, size=size,
                            p=np.append(self._masses, self.eps))
        out = np.empty(size)
        is_atom = labels < len(self._locs)
        out[is_atom] = self._locs[labels[is_atom]]
        n_cont = int(np.count_nonzero(~is_atom))
        out[~is_atom] = self.mu + math.sqrt(self.var) * rng.standard_normal(n_cont)
        return out

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for c, m in zip(self._locs, self._masses):
            out += m * (z >= c)
        if self.has_gaussian:
            out += self.eps * special.ndtr((z - self.mu) / math.sqrt(self.var))
        return out

    # -- posterior in the channel v = X + sqrt(tau) Z ----------------------

    def _posterior(self, v, tau):
        """Posterior component weights, means and variances given v.

        ``tau`` is the noise variance (scalar or broadcastable to ``v``).
        """
        v = np.asarray(v, dtype=float)
        tau = np.asarray(tau, dtype=float)
        logw, means, variances = [], [], []
        for c, m in zip(self._locs, self._masses):
            logw.append(math.log(m) - 0.5 * (v - c) ** 2 / tau - 0.5 * np.log(tau))
            means.append(np.broadcast_to(c, np.broadcast(v, tau).shape))
            variances.append(np.zeros(np.broadcast(v, tau).shape))
        if self.has_gaussian:
            tot = tau + self.var
            logw.append(math.log(self.eps) - 0.5 * (v - self.mu) ** 2 / tot - 0.5 * np.log(tot))
            means.append((self.var * v + tau * self.mu) / tot)
            variances.append(self.var * tau / tot)
        logw = np.stack(np.broadcast_arrays(*logw))
        pi = np.exp(logw - logw.max(axis=0))
        pi /= pi.sum(axis=0)
        return pi, np.stack(np.broadcast_arrays(*means)), np.stack(np.broadcast_arrays(*variances))

    def _check_snr(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise PriorError("denoiser SNR must be positive and finite")
        return s

    def denoise(self, v, s):
        """Posterior mean E[X | X + s^{-1/2} Z = v]."""
        s = self._check_snr(s)
        pi, means, _ = self._posterior(v, 1.0 / s)
        out = np.sum(pi * means, axis=0)
        return float(out) if out.ndim == 0 else out

    def posterior_variance(self, v, s):
        s = self._check_snr(s)
        pi, means, variances = self._posterior(v, 1.0 / s)
        mean = np.sum(pi * means, axis=0)
        out = np.sum(pi * (variances + (means - mean) ** 2), axis=0)
        return float(out) if out.ndim == 0 else out

    def denoise_with_derivative(self, v, s):
        """Return ``(eta(v), eta'(v))``; the derivative is s * Var[X | v]."""
        s = self._check_snr(s)
        pi, means, variances = self._posterior(v, 1.0 / s)
        mean = np.sum(pi * means, axis=0)
        var = np.sum(pi * (variances + (means - mean) ** 2), axis=0)
        return mean, s * var

    def denoise_derivative(self, v, s):
        s = self._check_snr(s)
        out = s * self.posterior_variance(v, s)
        return float(out) if np.ndim(out) == 0 else out

    # -- mmse -------------------------------------------------------------

    def _mixture_in_v(self, tau: float):
        """Components of the marginal of v = X + sqrt(tau) Z: (weight, centre, var)."""
        comps = [(m, c, tau) for c, m in zip(self._locs, self._masses)]
        if self.has_gaussian:
            comps.append((self.eps, self.mu, tau + self.var))
        return comps

    @staticmethod
    def _crossings(comps) -> list[float]:
        """Points where two weighted component densities are equal."""
        pts = []
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                wi, mi, si = comps[i]
                wj, mj, sj = comps[j]
                # log wi - (v-mi)^2/(2si) - log(si)/2 = same for j
                a = 0.5 / sj - 0.5 / si
                b = mi / si - mj / sj
                c = (math.log(wi) - math.log(wj) - 0.5 * math.log(si / sj)
                     - 0.5 * mi ** 2 / si + 0.5 * mj ** 2 / sj)
                if abs(a) < 1e-300 * max(1.0, abs(b)):
                    if b != 0:
                        pts.append(-c / b)
                    continue
                disc = b * b - 4 * a * c
                if disc >= 0:
                    r = math.sqrt(disc)
                    pts.extend([(-b - r) / (2 * a), (-b + r) / (2 * a)])
        return pts

    @staticmethod
    def _ladder(comps, centre: float, sd: float, span: float) -> set[float]:
        """Breakpoints (in the coordinate u = (v - centre)/sd) spaced
        geometrically away from every component centre, bridging the gap
        between narrow and wide components."""
        pts = set()
        for _, c2, v2 in comps:
            sd2 = math.sqrt(v2)
            step = 0.25 * sd2
            u0 = (c2 - centre) / sd
            if -span < u0 < span:
                pts.add(u0)
            while step / sd < 2 * span:
                for sign in (-1.0, 1.0):
                    u = (c2 + sign * step - centre) / sd
                    if -span < u < span:
                        pts.add(u)
                step *= 2.0
        return pts

    def mmse_exact(self, s: float, epsabs: float = 1e-15, epsrel: float = 1e-11) -> float:
        """mmse(s) by adaptive quadrature of the posterior variance.

        The integral is split per mixture component (in that component's
        standardized coordinate) and broken at every point where two
        components exchange dominance, so that the narrow posterior
        transitions are resolved.
        """
        s = float(s)
        if math.isnan(s) or s < 0:
            raise PriorError("mmse needs s >= 0")
        if s == 0.0:
            return self.variance
        if math.isinf(s) or self.is_degenerate:
            return 0.0
        tau = 1.0 / s
        comps = self._mixture_in_v(tau)
        cross = self._crossings(comps)
        span = 12.0
        total, err = 0.0, 0.0
        for w, centre, var in comps:
            sd = math.sqrt(var)
            pts = set()
            for p in cross:
                u = (p - centre) / sd
                if -span < u < span:
                    pts.add(u)
            pts.update(self._ladder(comps, centre, sd, span))
            edges = [-span] + sorted(pts) + [span]

            def integrand(u, centre=centre, sd=sd):
                return math.exp(-0.5 * u * u) * self._pvar_scalar(centre + sd * u, tau)

            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi - lo <= 0:
                    continue
                # quad's own warnings are superseded by the error check below
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", integrate.IntegrationWarning)
                    val, e = integrate.quad(integrand, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=200)
                total += w * val
                err += w * e
        total /= math.sqrt(2 * math.pi)
        err /= math.sqrt(2 * math.pi)
        tol = max(1e-9 * min(1.0, self.variance), 1e-6 * total, 1e-14)
        if err > tol:
            raise QuadratureError(f"mmse({s}) did not converge", err)
        return min(max(total, 0.0), self.variance, 1.0 / s)

    def _pvar_scalar(self, v: float, tau: float) -> float:
        # scalar fast path of posterior_variance, used inside quad
        best = -INF
        terms = []
        for c, m in zip(self._locs, self._masses):
            lw = math.log(m) - 0.5 * (v - c) ** 2 / tau - 0.5 * math.log(tau)
            terms.append((lw, c, 0.0))
            best = max(best, lw)
        if self.has_gaussian:
            tot = tau + self.var
            lw = math.log(self.eps) - 0.5 * (v - self.mu) ** 2 / tot - 0.5 * math.log(tot)
            terms.append((lw, (self.var * v + tau * self.mu) / tot, self.var * tau / tot))
            best = max(best, lw)
        z = 0.0
        m1 = 0.0
        for lw, mean, _ in terms:
            p = math.exp(lw - best)
            z += p
            m1 += p * mean
        m1 /= z
        out = 0.0
        for lw, mean, var in terms:
            out += math.exp(lw - best) * (var + (mean - m1) ** 2)
        return out / z

    @property
    def mmse_table(self) -> "MmseTable":
        tab = _TABLES.get(self)
        if tab is None:
            tab = _TABLES[self] = MmseTable(self)
        return tab

    # -- information-theoretic functionals --------------------------------

    def info_dimension(self) -> float:
        """Renyi information dimension: mass of the absolutely continuous part."""
        return self.eps

    def mutual_information_exact(self, s: float) -> float:
        """I(X; sqrt(s) X + Z) in nats, as h(Y) - h(Z) by quadrature."""
        s = float(s)
        if s < 0 or math.isnan(s):
            raise PriorError("mutual information needs s >= 0")
        if s == 0.0 or self.is_degenerate:
            return 0.0
        if math.isinf(s):
            return INF if self.has_gaussian else self._entropy_atoms()
        # work in v = X + sqrt(tau) Z; I is invariant to this rescaling
        tau = 1.0 / s
        comps = self._mixture_in_v(tau)
        cross = self._crossings(comps)
        span = 12.0
        total, err = 0.0, 0.0
        for w, centre, var in comps:
            sd = math.sqrt(var)
            pts = {(p - centre) / sd for p in cross if -span < (p - centre) / sd < span}
            pts.update(self._ladder(comps, centre, sd, span))
            edges = [-span] + sorted(pts) + [span]

            def integrand(u, centre=centre, sd=sd):
                v = centre + sd * u
                return math.exp(-0.5 * u * u) * self._log_marginal(v, tau)

            for lo, hi in zip(edges[:-1], edges[1:]):
                val, e = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=200)
                total += w * val
                err += w * e
        total /= math.sqrt(2 * math.pi)
        h_v = -total
        return max(h_v - 0.5 * (LOG_2PI + 1.0 + math.log(tau)), 0.0)

    def _log_marginal(self, v: float, tau: float) -> float:
        # log density of v = X + sqrt(tau) Z, via log-sum-exp
        u_terms = []
        for c, m in zip(self._locs, self._masses):
            u_terms.append(math.log(m) - 0.5 * (v - c) ** 2 / tau - 0.5 * math.log(2 * math.pi * tau))
        if self.has_gaussian:
            tot = tau + self.var
            u_terms.append(math.log(self.eps) - 0.5 * (v - self.mu) ** 2 / tot - 0.5 * math.log(2 * math.pi * tot))
        best = max(u_terms)
        return best + math.log(sum(math.exp(t - best) for t in u_terms))

    def _entropy_atoms(self) -> float:
        m = self._masses
        return float(-np.sum(m * np.log(m)))


_TABLES: dict[SignalPrior, "MmseTable"] = {}


class MmseTable:
    """Cached spline of s*mmse(s) over log s for fast vectorized evaluation.

    Nodes span ``[S_MIN, S_MAX]`` log-uniformly; below ``S_MIN`` the curve is
    continued linearly to mmse(0) = Var(X), above ``S_MAX`` by a constant
    s*mmse(s) (the MMSE-dimension tail).
    """

    S_MIN = 1e-6
    S_MAX = 1e14
    PER_DECADE = 40

    def __init__(self, prior: SignalPrior):
        self.prior = prior
        self.variance = prior.variance
        n = int(round(math.log10(self.S_MAX / self.S_MIN) * self.PER_DECADE)) + 1
        self.log_s = np.linspace(math.log(self.S_MIN), math.log(self.S_MAX), n)
        if prior.is_degenerate:
            self.g = np.zeros(n)
        else:
            self.g = np.array([math.exp(ls) * prior.mmse_exact(math.exp(ls)) for ls in self.log_s])
        self._spline = CubicSpline(self.log_s, self.g)
        self._g_lo = self.g[0] / self.S_MIN
        self._g_hi = self.g[-1]
        # discrete priors decay exponentially; do not extrapolate a 1/s tail
        if not prior.has_gaussian:
            self._g_hi = 0.0

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        out = np.empty_like(s_arr)
        if self.variance == 0.0:
            out[...] = 0.0
            return float(out) if out.ndim == 0 else out
        inf = np.isinf(s_arr)
        lo = s_arr < self.S_MIN
        hi = (s_arr > self.S_MAX) & ~inf
        mid = ~(lo | hi | inf)
        out[inf] = 0.0
        out[lo] = self.variance + (self._g_lo - self.variance) * s_arr[lo] / self.S_MIN
        out[hi] = self._g_hi / s_arr[hi]
        sm = s_arr[mid]
        g = self._spline(np.log(sm))
        out[mid] = np.clip(g / sm, 0.0, np.minimum(self.variance, 1.0 / sm))
        return float(out) if out.ndim == 0 else out

    def information(self, s):
        """I(s) = (1/2) int_0^s mmse, integrated from the same interpolant."""
        s_arr = np.asarray(s, dtype=float)
        out = np.zeros_like(s_arr)
        if self.variance == 0.0:
            return float(out) if out.ndim == 0 else out
        if not hasattr(self, "_anti"):
            self._anti = self._spline.antiderivative()
            self._i_lo = 0.5 * (self.variance * self.S_MIN + (self._g_lo - self.variance) * self.S_MIN / 2)
            self._i_hi = self._i_lo + 0.5 * float(self._anti(self.log_s[-1]) - self._anti(self.log_s[0]))
        lo = s_arr <= self.S_MIN
        hi = s_arr > self.S_MAX
        mid = ~(lo | hi)
        sl = s_arr[lo]
        out[lo] = 0.5 * (self.variance * sl + (self._g_lo - self.variance) * sl * sl / (2 * self.S_MIN))
        out[mid] = self._i_lo + 0.5 * (self._anti(np.log(s_arr[mid])) - self._anti(self.log_s[0]))
        with np.errstate(invalid="ignore"):
            tail = self._g_hi * np.log(s_arr[hi] / self.S_MAX) if self._g_hi > 0 else 0.0
        out[hi] = self._i_hi + 0.5 * tail
        return float(out) if out.ndim == 0 else out


# -- module-level API ------------------------------------------------------

def denoise(prior: SignalPrior, v, s):
    return prior.denoise(v, s)


def denoise_derivative(prior: SignalPrior, v, s):
    return prior.denoise_derivative(v, s)


def mmse(prior: SignalPrior, s, exact: bool = False):
    """Minimum mean-square error of X from sqrt(s) X + Z, for s in [0, inf].

    By default scalars are evaluated by direct quadrature and arrays through
    the prior's cached spline table (pass ``exact=True`` to force quadrature
    for every entry).
    """
    if np.ndim(s) == 0 and not exact:
        return prior.mmse_exact(float(s))
    if exact:
        arr = np.asarray(s, dtype=float)
        return np.vectorize(prior.mmse_exact, otypes=[float])(arr)
    return prior.mmse_table(s)


def mutual_information(prior: SignalPrior, s, method: str = "entropy"):
    """I(s) = I(X; sqrt(s) X + Z) in nats.

    ``method="entropy"`` evaluates h(Y) - h(Z) by quadrature;
    ``method="integral"`` integrates mmse(u)/2 over [0, s];
    ``method="table"`` integrates the cached mmse spline (vectorized, fast).
    """
    if method == "table":
        return prior.mmse_table.information(s)
    if np.ndim(s) > 0:
        return np.array([mutual_information(prior, float(x), method) for x in np.ravel(s)]).reshape(np.shape(s))
    s = float(s)
    if method == "entropy":
        return prior.mutual_information_exact(s)
    if method != "integral":
        raise PriorError(f"unknown method {method!r}")
    if s < 0:
        raise PriorError("mutual information needs s >= 0")
    if s == 0.0:
        return 0.0
    # integrate in log-s above 1 where mmse ~ 1/s
    f = lambda u: 0.5 * prior.mmse_exact(u)
    val, _ = integrate.quad(f, 0.0, min(s, 1.0), epsabs=1e-13, epsrel=1e-10, limit=200)
    if s > 1.0:
        g = lambda t: 0.5 * math.exp(t) * prior.mmse_exact(math.exp(t))
        v2, _ = integrate.quad(g, 0.0, math.log(s), epsabs=1e-13, epsrel=1e-10, limit=200)
        val += v2
    return val


def info_dimension(prior: SignalPrior) -> float:
    return prior.info_dimension()


def mmse_dimension_estimate(prior: SignalPrior, s_grid: Sequence[float]) -> tuple[float, float]:
    """Return ``(s * mmse(s) at the largest grid point, analytic MMSE dimension)``."""
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(np.diff(s_grid) <= 0):
        raise PriorError("s_grid must be increasing")
    if s_grid[-1] < 1e6:
        raise PriorError("s_grid must reach at least 1e6")
    s_top = float(s_grid[-1])
    return s_top * prior.mmse_exact(s_top), prior.info_dimension()


def amp_threshold(prior: SignalPrior, n_grid: int = 400, s_lo: float = 1e-4,
                  s_hi: float = 1e8, return_grid_sup: bool = False):
    """sup_s s*mmse(s): undersampling below which uncoupled AMP stalls.

    Grid search on a log grid followed by bounded refinement around the
    grid argmax.
    """
    if prior.is_degenerate:
        return (0.0, 0.0) if return_grid_sup else 0.0
    log_s = np.linspace(math.log(s_lo), math.log(s_hi), n_grid)
    vals = np.array([math.exp(t) * prior.mmse_exact(math.exp(t)) for t in log_s])
    k = int(np.argmax(vals))
    grid_sup = float(vals[k])
    lo = log_s[max(k - 1, 0)]
    hi = log_s[min(k + 1, n_grid - 1)]
    res = optimize.minimize_scalar(lambda t: -math.exp(t) * prior.mmse_exact(math.exp(t)),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-8})
    refined = max(grid_sup, float(-res.fun))
    if return_grid_sup:
        return refined, grid_sup
    return refined
