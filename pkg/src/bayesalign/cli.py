"""Command-line entry point: ``bayesalign {fit,simulate,laplace,validate}``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    correct_match_count,
    generate_sim_instance,
    laplace_diagnostic,
    simulation_sweep,
    truth_candidates,
)
from .io import (
    ConfigError,
    DataError,
    LaplaceRunConfig,
    RunConfig,
    SimRunConfig,
    INIT_KEYWORDS,
    ensure_dir,
    read_match,
    read_pointset,
    read_truth,
    write_json,
    write_laplace,
    write_match_probs,
    write_sim_results,
    write_threshold_match,
    write_trace,
)
from .model import MatchMatrix
from .sampler_config import AngleProposalConfig
from .sampler_procrustes import ProposalConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _load_run(path):
    cfg = RunConfig.load(path)
    X = read_pointset(cfg.path("x"))
    mu = read_pointset(cfg.path("mu"))
    truth = read_truth(cfg.path("truth"), X, mu) if cfg.truth is not None else None
    init = cfg.init if cfg.init in INIT_KEYWORDS else read_match(cfg.path("init"), X, mu)
    cfg.estimator()  # parameter check
    return cfg, X, mu, truth, init


def cmd_validate(args):
    cfg, X, mu, truth, _ = _load_run(args.config)
    print(f"ok: {cfg.model_kind}, M={len(X)}, N={len(mu)}, n_iter={cfg.n_iter}")
    return EXIT_OK


def cmd_fit(args):
    cfg, X, mu, truth, init = _load_run(args.config)
    out = ensure_dir(args.output or cfg.path("output_dir"))
    est = cfg.estimator()
    est.fit(X, mu, init=init)
    tr = est.trace_
    write_trace(out / "trace.csv", tr)
    write_match_probs(out / "match_probs.csv", est.match_probabilities_, X.ids, mu.ids)
    write_threshold_match(out / "threshold_match.csv", est.threshold_match_, est.match_probabilities_, X.ids, mu.ids)
    summary = {
        "model_kind": cfg.model_kind,
        "seed": cfg.seed,
        "n_iter": cfg.n_iter,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "volume_A": est.volume_A_,
        "tau_mean": est.tau_mean_,
        "sigma_mean": est.sigma_mean_,
        "acceptance_rates": est.acceptance_rates_,
        "threshold_n_matched": est.threshold_match_.n_matched,
    }
    if getattr(est, "jump_log_", None):
        counts = {}
        for _, kind in est.jump_log_:
            counts[kind] = counts.get(kind, 0) + 1
        summary["jump_proposals"] = counts
    if truth is not None:
        N = len(mu)
        summary["correct_matches"] = {
            "iteration": [int(i) for i in tr.iteration],
            "count": [correct_match_count(MatchMatrix(a, N), truth) for a in tr.assignments],
            "threshold": correct_match_count(est.threshold_match_, truth),
            "n_true_pairs": len(truth.pairs),
        }
    write_json(out / "summary.json", summary)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = SimRunConfig.load(args.config)
    out = ensure_dir(args.output or cfg.base_dir / cfg.output_dir)
    p = cfg.proposal
    results = simulation_sweep(
        cfg.sim,
        cfg.s_values,
        cfg.model_kinds,
        seed=cfg.seed,
        cfg=cfg.model.to_model_config(cfg.model.volume_A or cfg.sim.volume),
        prop_cfg=ProposalConfig(p.p_reject, p.fast_ratio, 0, p.lambda_updates),
        ap=AngleProposalConfig(p.width12, p.width13, p.width23),
    )
    write_sim_results(out / "sim_results.csv", results)
    for r in results:
        print(f"{r.model_kind:13s} s={r.s:<5g} matched={r.matched_mean:.3f} unmatched={r.unmatched_mean:.3f}")
    return EXIT_OK


def run_laplace(cfg: LaplaceRunConfig):
    """Laplace diagnostic for a parsed config. Returns ``(estimates, spearman_rho)``."""
    from scipy.stats import spearmanr

    rng = np.random.default_rng(cfg.seed)
    data_rng, cand_rng, mc_rng = rng.spawn(3)
    if cfg.x is not None:
        X = read_pointset(cfg.path("x"))
        mu = read_pointset(cfg.path("mu"))
        truth = read_truth(cfg.path("truth"), X, mu)
    else:
        mu, X, truth = generate_sim_instance(cfg.sim, data_rng)
    Xa = np.asarray(X) - np.asarray(X).mean(axis=0)
    mua = np.asarray(mu) - np.asarray(mu).mean(axis=0)
    volume = cfg.model.volume_A or cfg.sim.volume
    cands = truth_candidates(truth, len(X), len(mu), cand_rng, cfg.n_wrong)
    est = laplace_diagnostic(
        Xa, mua, cands, cfg.tau, cfg.model.to_model_config(volume), cfg.n_mc, mc_rng, gamma_mode=cfg.gamma_mode
    )
    rho = spearmanr([e.log_pi_c for e in est], [e.log_pi_p for e in est]).statistic
    return est, float(rho)


def cmd_laplace(args):
    cfg = LaplaceRunConfig.load(args.config)
    out = ensure_dir(args.output or cfg.base_dir / cfg.output_dir)
    est, rho = run_laplace(cfg)
    write_laplace(out / "laplace.csv", est)
    print(f"{len(est)} candidates, Spearman rho = {rho:.4f}")
    return EXIT_OK


def build_parser():
    ap = _Parser(prog="bayesalign", description="Bayesian matching of unlabelled 3-D point sets.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn, help_ in (
        ("fit", cmd_fit, "run one chain and write trace, match probabilities and summary"),
        ("simulate", cmd_simulate, "run the synthetic simulation sweep"),
        ("laplace", cmd_laplace, "compare integrated and maximised posteriors"),
        ("validate", cmd_validate, "check a run config and its data files without sampling"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        if name != "validate":
            p.add_argument("--output", type=Path, default=None, help="override the config's output_dir")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 -- report, do not trace back
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
