"""Command-line entry point: ``scamp <command> [--config FILE] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
1 when ``validate`` finds a failing invariant.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .amp import AmpDivergence, reconstruct_augmented, run_amp
from .coupling import augment_identity, sample_sensing_matrix
from .harness import ConfigError, ExperimentConfig
from .priors import PriorError
from .state_evolution import run_state_evolution

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if getattr(args, "trials", None) is not None:
        updates["trials"] = args.trials
    return cfg.replace(**updates) if updates else cfg


def cmd_se(cfg: ExperimentConfig, args) -> int:
    traj = run_state_evolution(cfg.base(), cfg.signal_prior, cfg.sigma ** 2, cfg.delta_nominal,
                               cfg.se_t_max)
    harness.write_outputs(cfg.out_dir, "se", cfg, {"se.csv": traj.to_csv()})
    print(f"SE stopped at t={traj.t_last} (converged={traj.converged}), "
          f"final MSE {traj.mse(traj.t_last):.4g}")
    return EXIT_OK


def cmd_amp(cfg: ExperimentConfig, args) -> int:
    prior = cfg.signal_prior
    base = cfg.base()
    A = sample_sensing_matrix(base, cfg.N, cfg.delta_nominal, harness.trial_seed(cfg.master_seed, 0, 0))
    if cfg.augmented:
        A = augment_identity(A)
    inst = harness.generate_instance(cfg, A, harness.trial_seed(cfg.master_seed, 0, 1))
    traj = None
    if cfg.phi_source == "se":
        traj = run_state_evolution(base, prior, cfg.sigma ** 2, cfg.delta_nominal, cfg.se_t_max)
    if cfg.augmented:
        x_hat, res = reconstruct_augmented(A, inst.y, prior, traj, cfg.t_max, cfg.phi_source, inst.x)
    else:
        res = run_amp(A, inst.y, prior, traj, cfg.t_max, cfg.mode, cfg.phi_source, x_true=inst.x,
                      denoiser_prior=cfg.denoiser_prior)
        x_hat = res.final
    final = float(np.mean((x_hat - inst.x) ** 2))
    report = json.loads(res.report(json.loads(cfg.to_json()), cfg.master_seed))
    report["final_mse"] = final
    harness.write_outputs(cfg.out_dir, "amp", cfg,
                          {"amp.json": json.dumps(report, sort_keys=True, indent=1) + "\n"})
    print(f"AMP final MSE {final:.4g} (m/n = {A.undersampling:.4f})")
    return EXIT_OK


def cmd_profile(cfg: ExperimentConfig, args) -> int:
    times = [int(t) for t in args.times.split(",")]
    res = harness.experiment_profile(cfg, times, overlay=args.overlay)
    harness.write_outputs(cfg.out_dir, "profile", cfg, {"profile.csv": res.csv, "profile.svg": res.svg})
    print("wave front:", ", ".join(f"t={t}: {res.fronts[t]}" for t in res.times))
    return EXIT_OK


def cmd_agreement(cfg: ExperimentConfig, args) -> int:
    res = harness.experiment_se_agreement(cfg)
    harness.write_outputs(cfg.out_dir, "agreement", cfg,
                          {"agreement.csv": res.csv, "agreement.svg": res.svg})
    ok = res.within(t_stop=1e-5)
    print(f"agreement holds at {int(ok.sum())}/{len(ok)} iterations before MSE_SE < 1e-5")
    if any(d is not None for d in res.diverged):
        print(f"diverged trials: {[d for d in res.diverged if d is not None]}")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_phase(cfg: ExperimentConfig, args) -> int:
    eps = [float(e) for e in args.eps.split(",")]
    deltas = harness.parse_grid(args.deltas)
    cfg = cfg.replace(sigma=0.0) if cfg.sigma > 1e-6 else cfg
    res = harness.experiment_phase_diagram(cfg, eps, deltas)
    harness.write_outputs(cfg.out_dir, "phase", cfg, {"phase.csv": res.csv, "phase.svg": res.svg})
    for e, fit in res.fits.items():
        note = f" [{fit.advisory}]" if fit.advisory else ""
        d50 = "n/a" if fit.delta50 is None else f"{fit.delta50:.4f}"
        print(f"eps={e:g}: delta_50={d50}{note}")
    return EXIT_OK


def cmd_uncoupled(cfg: ExperimentConfig, args) -> int:
    deltas = harness.parse_grid(args.deltas)
    _, text = harness.experiment_uncoupled_comparison(cfg, deltas)
    harness.write_outputs(cfg.out_dir, "uncoupled", cfg, {"uncoupled.csv": text})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    from .validation import run_invariant_suite
    failures = 0
    for name, ok, detail in run_invariant_suite(cfg):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    return EXIT_OK if failures == 0 else EXIT_INVALID


COMMANDS = {"se": cmd_se, "amp": cmd_amp, "profile": cmd_profile, "agreement": cmd_agreement,
            "phase": cmd_phase, "uncoupled": cmd_uncoupled, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scamp", description="Spatially coupled AMP experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults to the desk config)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("se", "amp", "validate"):
        sub.add_parser(name, parents=[common])
    sp = sub.add_parser("profile", parents=[common])
    sp.add_argument("--times", default="5,20,50")
    sp.add_argument("--overlay", action="store_true", help="overlay the AMP residual estimate")
    sp = sub.add_parser("agreement", parents=[common])
    sp.add_argument("--trials", type=int)
    sp = sub.add_parser("phase", parents=[common])
    sp.add_argument("--eps", default="0.1,0.3,0.5")
    sp.add_argument("--deltas", default="0.05:0.7:0.05", help="a:b:step or a comma list")
    sp.add_argument("--trials", type=int)
    sp = sub.add_parser("uncoupled", parents=[common])
    sp.add_argument("--deltas", default="0.12,0.15,0.2,0.3")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, PriorError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AmpDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
