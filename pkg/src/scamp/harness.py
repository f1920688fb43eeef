"""Experiment configuration, instance generation and the reproducible experiments."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .amp import PHI_SOURCES, AmpDivergence, reconstruct_augmented, run_amp
from .coupling import (BaseMatrix, SensingMatrix, augment_identity, build_base_matrix, build_shape,
                       sample_sensing_matrix)
from .priors import SignalPrior
from .state_evolution import run_state_evolution, run_uncoupled_se
from .svg import Chart


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    prior: dict = field(default_factory=lambda: {"kind": "bernoulli_gaussian", "eps": 0.1,
                                                 "mu": 0.0, "var": 1.0})
    sigma: float = 0.01
    rho_inv: int = 10
    L: int = 50
    L0: int = 5
    N: int = 100
    delta: float | None = 0.2
    M: int | None = None
    t_max: int = 100
    trials: int = 10
    master_seed: int = 0
    mode: str = "full"
    augmented: bool = False
    phi_source: str = "pooled"
    mismatched_prior: dict | None = None
    shape: str = "raised_cosine"
    se_t_max: int = 2000
    success_threshold: float = 1e-4   # relative to Var(X)
    check_seed_bounds: bool = False
    workers: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if min(self.rho_inv, self.L, self.L0, self.N) < 1:
            raise ConfigError("rho_inv, L, L0, N must be positive")
        if (self.delta is None) == (self.M is None):
            raise ConfigError("give exactly one of delta or M")
        if self.mode not in ("full", "naive"):
            raise ConfigError(f"mode must be 'full' or 'naive', got {self.mode!r}")
        if self.phi_source not in PHI_SOURCES:
            raise ConfigError(f"unknown phi_source {self.phi_source!r}")
        if self.check_seed_bounds and not self.delta_nominal * self.L0 > 3:
            raise ConfigError("seed-bound checks need delta * L0 > 3")
        try:
            SignalPrior.from_config(self.prior)
            if self.mismatched_prior:
                SignalPrior.from_config(self.mismatched_prior)
        except Exception as exc:  # prior validation errors come in several types
            raise ConfigError(f"bad prior: {exc}") from exc

    @property
    def group_rows(self) -> int:
        return self.M if self.M is not None else int(round(self.N * self.delta))

    @property
    def delta_nominal(self) -> float:
        return self.group_rows / self.N

    @property
    def signal_prior(self) -> SignalPrior:
        return SignalPrior.from_config(self.prior)

    @property
    def denoiser_prior(self) -> SignalPrior | None:
        return SignalPrior.from_config(self.mismatched_prior) if self.mismatched_prior else None

    def base(self) -> BaseMatrix:
        return build_base_matrix(self.L, self.L0, self.rho_inv, build_shape(self.shape))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def replace(self, **kw) -> "ExperimentConfig":
        d = asdict(self)
        d.update(kw)
        if "M" in kw and kw["M"] is not None and "delta" not in kw:
            d["delta"] = None
        if "delta" in kw and kw["delta"] is not None and "M" not in kw:
            d["M"] = None
        return ExperimentConfig.from_dict(d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def trial_seed(master: int, trial: int, stream: int = 0) -> int:
    """Independent, order-free seed for (trial, stream) under a master seed."""
    return int(np.random.SeedSequence([master, trial, stream]).generate_state(1, np.uint64)[0])


@dataclass
class Instance:
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    seed: int


def generate_instance(config: ExperimentConfig, A: SensingMatrix, seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    x = config.signal_prior.sample(rng, A.n)
    w = config.sigma * rng.standard_normal(A.m) if config.sigma > 0 else np.zeros(A.m)
    y = A.matvec(x) + w
    return Instance(x, w, y, seed)


def second_moment_ok(x, prior: SignalPrior, n_se: float = 5.0) -> bool:
    """Empirical E[X^2] within n_se standard errors of the prior's."""
    x = np.asarray(x)
    m2 = prior.second_moment
    se = np.sqrt(max(prior.fourth_moment - m2 ** 2, 0.0) / len(x))
    return abs(float(np.mean(x * x)) - m2) <= n_se * se + 1e-15


# -- helpers -----------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _parallel_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_outputs(out_dir, name: str, config: ExperimentConfig, files: dict[str, str]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fname, text in files.items():
        (out / fname).write_text(text, encoding="utf-8")
    manifest = {"experiment": name, "config_sha256": config.digest(),
                "config": json.loads(config.to_json()), "files": sorted(files)}
    (out / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# -- profile -------------------------------------------------------------------

@dataclass
class ProfileResult:
    times: list[int]
    phi: dict[int, np.ndarray]
    empirical: dict[int, np.ndarray]
    fronts: dict[int, int]
    csv: str
    svg: str


def wave_front(phi: np.ndarray, lo: float, hi: float) -> int:
    """First index where phi exceeds the geometric midpoint between the two
    plateaus (len(phi) when it never does). The plateaus differ by orders of
    magnitude, so the arithmetic midpoint would sit almost on the upper one."""
    mid = np.sqrt(lo * hi)
    above = np.flatnonzero(phi > mid)
    return int(above[0]) if above.size else len(phi)


def experiment_profile(config: ExperimentConfig, times=(5, 20, 50), overlay: bool = False) -> ProfileResult:
    prior = config.signal_prior
    base = config.base()
    delta = config.delta_nominal
    traj = run_state_evolution(base, prior, config.sigma ** 2, delta, config.se_t_max)
    r0 = base.r0_slice
    hi = config.sigma ** 2 + prior.variance / delta
    phi = {t: traj.phi_at(t)[r0] for t in times}
    fronts = {t: wave_front(phi[t], config.sigma ** 2, hi) for t in times}
    empirical = {}
    if overlay:
        A = sample_sensing_matrix(base, config.N, delta, trial_seed(config.master_seed, 0, 0))
        inst = generate_instance(config, A, trial_seed(config.master_seed, 0, 1))
        # the overlay shows the residual-based estimate whatever drives the run
        source = "empirical" if config.phi_source == "se" else config.phi_source
        res = run_amp(A, inst.y, prior, traj, max(times), config.mode, source)
        for t in times:
            empirical[t] = res.phi_used[t - 1][r0]
    labels = base.row_labels[r0]
    rows = []
    for t in times:
        for k, (a, v) in enumerate(zip(labels, phi[t])):
            rows.append([t, int(a), float(v), float(empirical[t][k]) if t in empirical else ""])
    chart = Chart("state-evolution profile", "row group a", "phi_a(t)", logy=True)
    for t in times:
        chart.add(f"t={t}", [float(a) for a in labels], [float(v) for v in phi[t]])
        if t in empirical:
            chart.add(f"AMP t={t}", [float(a) for a in labels], [float(v) for v in empirical[t]],
                      dashed=True)
    return ProfileResult(list(times), phi, empirical, fronts,
                         _csv(["t", "a", "phi_se", "phi_amp"], rows), chart.render())


# -- SE agreement ----------------------------------------------------------

def _agreement_trial(args):
    config, trial, traj, t_max = args
    prior = config.signal_prior
    base = config.base()
    A = sample_sensing_matrix(base, config.N, config.delta_nominal,
                              trial_seed(config.master_seed, trial, 0))
    inst = generate_instance(config, A, trial_seed(config.master_seed, trial, 1))
    try:
        res = run_amp(A, inst.y, prior, traj, t_max, config.mode, config.phi_source,
                      x_true=inst.x, denoiser_prior=config.denoiser_prior)
        return res.mse, None
    except AmpDivergence as exc:
        return None, exc.iteration


@dataclass
class AgreementResult:
    t: np.ndarray
    mse_se: np.ndarray
    mse_amp: np.ndarray          # trials x T (nan after divergence)
    diverged: list[int | None]
    csv: str
    svg: str

    @property
    def mean(self) -> np.ndarray:
        return np.mean(self.mse_amp, axis=0)

    @property
    def stderr(self) -> np.ndarray:
        k = self.mse_amp.shape[0]
        return np.std(self.mse_amp, axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.zeros(len(self.t))

    def within(self, rel: float = 0.1, n_se: float = 2.0, t_stop: float | None = None) -> np.ndarray:
        """Per-t flag: |mean - SE| <= max(n_se * stderr, rel * SE), over the
        iterations before MSE_SE first drops below ``t_stop``."""
        ok = np.abs(self.mean - self.mse_se) <= np.maximum(n_se * self.stderr, rel * self.mse_se)
        ok &= np.isfinite(self.mean)
        if t_stop is not None:
            below = np.flatnonzero(self.mse_se < t_stop)
            if below.size:
                ok = ok[: below[0]]
        return ok


def experiment_se_agreement(config: ExperimentConfig, t_max: int | None = None) -> AgreementResult:
    if config.trials < 2:
        raise ConfigError("SE agreement needs at least two trials")
    prior = config.signal_prior
    base = config.base()
    traj = run_state_evolution(base, prior, config.sigma ** 2, config.delta_nominal, config.se_t_max)
    T = t_max or config.t_max
    out = _parallel_map(_agreement_trial, [(config, k, traj, T) for k in range(config.trials)],
                        config.workers)
    mse = np.full((config.trials, T + 1), np.nan)
    div = []
    for k, (m, d) in enumerate(out):
        if m is not None:
            mse[k] = m
        div.append(d)
    t = np.arange(1, T + 2)
    se_curve = np.array([traj.mse(int(k)) for k in t])
    res = AgreementResult(t, se_curve, mse, div, "", "")
    rows = [[int(tt), float(s), float(mu), float(sd)] for tt, s, mu, sd in
            zip(t, se_curve, res.mean, res.stderr)]
    res.csv = _csv(["t", "mse_se", "mse_amp_mean", "mse_amp_stderr"], rows)
    chart = Chart("AMP vs state evolution", "iteration t", "MSE", logy=True)
    chart.add("MSE_SE", t.tolist(), se_curve.tolist())
    chart.add("MSE_AMP", t.tolist(), res.mean.tolist(), err=res.stderr.tolist(), markers=True)
    res.svg = chart.render()
    return res


# -- phase diagram ---------------------------------------------------------

@dataclass
class LogitFit:
    intercept: float
    slope: float
    delta50: float | None
    degenerate: bool
    advisory: str = ""


def fit_logistic(deltas, successes) -> LogitFit:
    """Maximum-likelihood fit of P(success) = 1 / (1 + exp(-(b0 + b1 delta)))."""
    d = np.asarray(deltas, dtype=float)
    s = np.asarray(successes, dtype=float)
    if s.min() == s.max():
        what = "success" if s[0] else "failure"
        return LogitFit(np.nan, np.nan, None, True, f"all trials are {what}; widen the delta grid")
    # separable data has no finite MLE; flag it and report the midpoint of the gap
    lo_fail = d[s == 0].max()
    hi_succ = d[s == 1].min()
    if lo_fail < hi_succ:
        mid = 0.5 * (lo_fail + hi_succ)
        return LogitFit(np.nan, np.inf, float(mid), True,
                        "perfectly separated; delta50 is the midpoint of the gap")
    scale = max(float(d.std()), 1e-12)
    dc = (d - d.mean()) / scale

    def nll(beta):
        z = beta[0] + beta[1] * dc
        return float(np.sum(np.logaddexp(0.0, z) - s * z))

    def grad(beta):
        p = special.expit(beta[0] + beta[1] * dc)
        return np.array([np.sum(p - s), np.sum((p - s) * dc)])

    sol = optimize.minimize(nll, np.zeros(2), jac=grad, method="BFGS")
    b0c, b1c = sol.x
    b1 = b1c / scale
    b0 = b0c - b1c * d.mean() / scale
    d50 = -b0 / b1 if b1 != 0 else None
    return LogitFit(float(b0), float(b1), None if d50 is None else float(d50), False)


def _phase_trial(args):
    config, eps, M, trial = args
    cfg = config.replace(prior={**config.prior, "eps": eps}, M=M)
    prior = cfg.signal_prior
    base = cfg.base()
    seed_key = int(round(eps * 1e6)) * 100_003 + M
    A = sample_sensing_matrix(base, cfg.N, cfg.delta_nominal, trial_seed(cfg.master_seed, trial, 2 * seed_key))
    inst = generate_instance(cfg, A, trial_seed(cfg.master_seed, trial, 2 * seed_key + 1))
    traj = None
    if cfg.phi_source == "se":
        traj = run_state_evolution(base, prior, cfg.sigma ** 2, cfg.delta_nominal, cfg.se_t_max)
    try:
        res = run_amp(A, inst.y, prior, traj, cfg.t_max, cfg.mode, cfg.phi_source, x_true=inst.x)
        final = res.mse[-1]
    except AmpDivergence:
        final = np.inf
    return eps, M, trial, final


@dataclass
class PhaseResult:
    rows: list[tuple]          # (eps, delta, trial, final_mse, success)
    fits: dict[float, LogitFit]
    csv: str
    svg: str


def parse_grid(spec: str) -> list[float]:
    """'a:b:step' (inclusive) or a comma-separated list."""
    if ":" in spec:
        a, b, step = (float(v) for v in spec.split(":"))
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return [round(a + k * step, 12) for k in range(n)]
    return [float(v) for v in spec.split(",") if v.strip()]


def experiment_phase_diagram(config: ExperimentConfig, eps_list, delta_grid) -> PhaseResult:
    if config.sigma > 1e-6:
        raise ConfigError("phase diagram runs need sigma <= 1e-6")
    tasks = []
    for eps in eps_list:
        Ms = sorted({max(1, int(round(config.N * d))) for d in delta_grid})
        for M in Ms:
            for trial in range(config.trials):
                tasks.append((config, float(eps), M, trial))
    out = _parallel_map(_phase_trial, tasks, config.workers)
    rows, fits = [], {}
    for eps in eps_list:
        var = SignalPrior.from_config({**config.prior, "eps": eps}).variance
        sel = [(M / config.N, k, f) for e, M, k, f in out if e == eps]
        succ = [(d, int(f < config.success_threshold * var)) for d, _, f in sel]
        for (d, k, f), (_, ok) in zip(sel, succ):
            rows.append((float(eps), d, k, f, ok))
        fits[float(eps)] = fit_logistic([d for d, _ in succ], [s for _, s in succ])
    csv_text = _csv(["eps", "delta", "trial", "final_mse", "success"], rows)
    chart = Chart("empirical phase transition", "eps", "delta_50")
    es = [e for e in fits if fits[e].delta50 is not None]
    chart.add("delta_50 (logit fit)", es, [fits[e].delta50 for e in es], markers=True)
    chart.add("delta = eps", [0.0, 1.0], [0.0, 1.0], dashed=True)
    return PhaseResult(rows, fits, csv_text, chart.render())


# -- uncoupled vs coupled ------------------------------------------------------

@dataclass
class ComparisonRow:
    delta: float
    uncoupled_phi: float
    uncoupled_psi: float
    coupled_phi_interior: float
    coupled_mse: float
    coupled_converged: bool


def experiment_uncoupled_comparison(config: ExperimentConfig, deltas) -> tuple[list[ComparisonRow], str]:
    prior = config.signal_prior
    base = config.base()
    s2 = config.sigma ** 2
    rows = []
    interior = slice(base.n_seed_rows + base.rho_inv, base.n_seed_rows + base.rho_inv + base.L)
    for d in deltas:
        unc = run_uncoupled_se(prior, s2, d, config.se_t_max)
        cp = run_state_evolution(base, prior, s2, d, config.se_t_max)
        fin = cp.phi_at(cp.t_last)
        rows.append(ComparisonRow(float(d), unc.limit_phi, unc.limit_psi,
                                  float(np.mean(fin[interior])), cp.mse(cp.t_last), cp.converged))
    text = _csv(["delta", "uncoupled_phi", "uncoupled_psi", "coupled_phi_interior", "coupled_mse",
                 "coupled_converged"],
                [[r.delta, r.uncoupled_phi, r.uncoupled_psi, r.coupled_phi_interior, r.coupled_mse,
                  int(r.coupled_converged)] for r in rows])
    return rows, text


# -- robustness sweep with the augmented scheme ----------------------------------

def _robust_trial(args):
    config, trial = args
    prior = config.signal_prior
    base = config.base()
    A = augment_identity(sample_sensing_matrix(base, config.N, config.delta_nominal,
                                               trial_seed(config.master_seed, trial, 0)))
    inst = generate_instance(config, A, trial_seed(config.master_seed, trial, 1))
    traj = None
    if config.phi_source == "se":
        traj = run_state_evolution(base, prior, config.sigma ** 2, config.delta_nominal, config.se_t_max)
    x_hat, _ = reconstruct_augmented(A, inst.y, prior, traj, config.t_max, config.phi_source)
    return float(np.mean((x_hat - inst.x) ** 2))


def experiment_robustness(config: ExperimentConfig, sigmas) -> list[tuple[float, float, float]]:
    """(sigma, mean MSE, MSE / sigma^2) for the augmented scheme."""
    out = []
    for s in sigmas:
        cfg = config.replace(sigma=float(s), augmented=True)
        mses = _parallel_map(_robust_trial, [(cfg, k) for k in range(cfg.trials)], cfg.workers)
        m = float(np.mean(mses))
        out.append((float(s), m, m / s ** 2))
    return out


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
