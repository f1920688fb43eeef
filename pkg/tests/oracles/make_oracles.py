"""Regenerate frozen_values.json from implementations that share no code
with the package (mpmath quadrature and plain Monte Carlo).

    python3 tests/oracles/make_oracles.py
"""

import json
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 40
EPS = mp.mpf("0.1")


def bg_density(y, s, eps=EPS):
    # Y = sqrt(s) X + Z with X ~ (1-eps) delta_0 + eps N(0,1)
    return (1 - eps) * mp.npdf(y) + eps * mp.npdf(y, 0, mp.sqrt(1 + s))


def bg_post_mean(y, s, eps=EPS):
    slab = eps * mp.npdf(y, 0, mp.sqrt(1 + s))
    return slab / bg_density(y, s, eps) * mp.sqrt(s) * y / (1 + s)


def _breaks(s):
    w = mp.sqrt(1 + s)
    pts = sorted({0, 1, 3, 8, 3 * w, 8 * w, 14 * w, 40})
    return [-p for p in reversed(pts) if p > 0] + pts


def bg_mmse(s, eps=EPS):
    s = mp.mpf(s)
    second = mp.quad(lambda y: bg_density(y, s, eps) * bg_post_mean(y, s, eps) ** 2, _breaks(s))
    return eps - second


def bg_info(s, eps=EPS):
    """I(X; sqrt(s) X + Z) = h(Y) - h(Z)."""
    s = mp.mpf(s)
    hy = mp.quad(lambda y: -bg_density(y, s, eps) * mp.log(bg_density(y, s, eps)), _breaks(s))
    return hy - mp.log(2 * mp.pi * mp.e) / 2


def golden_sup(f, lo, hi, iters=200):
    g = (mp.sqrt(5) - 1) / 2
    a, b = mp.mpf(lo), mp.mpf(hi)
    c, d = b - g * (b - a), a + g * (b - a)
    for _ in range(iters):
        if f(c) > f(d):
            b = d
        else:
            a = c
        c, d = b - g * (b - a), a + g * (b - a)
    x = (a + b) / 2
    return x, f(x)


def main():
    out = {}
    rng = np.random.default_rng(20240611)

    # posterior mean of BG(0.1) at v=2, s=4 by importance weighting
    n = 10_000_000
    x = np.where(rng.random(n) < 0.1, rng.standard_normal(n), 0.0)
    w = np.exp(-0.5 * 4.0 * (2.0 - x) ** 2)
    num, den = np.mean(x * w), np.mean(w)
    est = num / den
    # delta-method standard error of a ratio estimator
    se = np.std(x * w - est * w) / (den * np.sqrt(n))
    # closed form: v = X + Z / sqrt(s) corresponds to y = sqrt(s) v
    out["bg_denoise_v2_s4"] = {"mc_mean": float(est), "mc_stderr": float(se),
                               "closed_form": float(bg_post_mean(2 * mp.sqrt(4), 4))}

    # binary +-1 prior: mmse(1) = 1 - E tanh^2(s + sqrt(s) Z)
    z = rng.standard_normal(1_000_000)
    out["binary_mmse_s1_mc"] = float(1 - np.mean(np.tanh(1 + z) ** 2))
    out["binary_mmse_s1_quad"] = float(1 - mp.quad(lambda u: mp.npdf(u) * mp.tanh(1 + u) ** 2,
                                                   [-mp.inf, -5, 0, 5, mp.inf]))

    grid = [0.01, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e6]
    out["bg_mmse"] = {repr(s): float(bg_mmse(s)) for s in grid}
    out["bg_info"] = {repr(s): float(bg_info(s)) for s in [0.1, 1.0, 10.0, 100.0]}

    # sup_s s mmse(s) for BG(0.1): scan in log s, then golden refinement
    f = lambda ls: mp.exp(ls) * bg_mmse(mp.exp(ls))  # noqa: E731
    lsg = [mp.log(10) * k / 8 for k in range(-8, 40)]
    vals = [f(v) for v in lsg]
    k = int(np.argmax([float(v) for v in vals]))
    ls_star, sup = golden_sup(f, lsg[max(k - 1, 0)], lsg[min(k + 1, len(lsg) - 1)], 80)
    out["bg_amp_threshold"] = {"s_star": float(mp.exp(ls_star)), "value": float(sup)}

    # seeded plateau for BG(0.1), sigma = 0.01, delta = 0.2, L0 = 50
    s2 = mp.mpf("1e-4")
    out["bg_phi_star_L0_50"] = float(s2 + bg_mmse(50 / (2 * s2)) / mp.mpf("0.2"))

    path = Path(__file__).with_name("frozen_values.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
