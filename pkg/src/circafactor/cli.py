"""Batch command-line front end: simulate benchmark data, fit chains,
summarize archives, and evaluate score files against ground truth.

Exit codes: 0 ok, 2 invalid input, 3 numerical failure, 4 resume mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as cfio
from .basis import make_designs
from .model import HyperParams
from .sampler import ChainConfig, PosteriorArchive, ResumeMismatchError, run_chain
from .summaries import (
    amplitude_phase_quantiles,
    fdr_select,
    marginal_correlation,
    resolve_target_pair,
    rhythm_scores,
    roc_and_fdr_curves,
)
from .synth import SynthConfig, generate_dependent, independent_config

logger = logging.getLogger(__name__)

_HYPER_KEYS = (
    "a_sigma", "b_sigma", "rho", "a1", "a2",
    "a_theta", "b_theta", "a_gamma", "b_gamma", "k_init",
)
_CHAIN_KEYS = (
    "n_iter", "burn_in", "thin", "seed", "adapt", "adapt_c0", "adapt_c1",
    "adapt_start", "adapt_eps", "min_k", "record_lambda_every",
    "checkpoint_every", "log_every",
)
_BASIS_KEYS = ("periods_hours", "n_local", "kernel_kind", "bandwidth")
_SYNTH_KEYS = (
    "p", "seed", "times_hours", "periods_hours", "n_local", "kernel_kind",
    "bandwidth", "sigma2", "k_true", "loading_sd", "loading_count_range",
    "theta_threshold_range", "gamma_threshold_range",
    "target_circadian_range", "max_resample",
)


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require_seed(cfg: dict, path) -> int:
    if "seed" not in cfg:
        raise ValueError(
            f"{path}: an explicit integer 'seed' is required for reproducibility"
        )
    return int(cfg["seed"])


def _check_keys(cfg: dict, allowed, path) -> None:
    extra = sorted(set(cfg) - set(allowed))
    if extra:
        raise ValueError(f"{path}: unknown config fields {extra}")


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    _check_keys(cfg, set(_SYNTH_KEYS) | {"independent"}, args.config)
    _require_seed(cfg, args.config)
    independent = bool(cfg.pop("independent", False))
    for tuple_key in ("theta_threshold_range", "gamma_threshold_range",
                      "loading_count_range", "target_circadian_range"):
        if cfg.get(tuple_key) is not None:
            cfg[tuple_key] = tuple(cfg[tuple_key])
    if "periods_hours" in cfg:
        cfg["periods_hours"] = tuple(cfg["periods_hours"])
    if "times_hours" in cfg:
        cfg["times_hours"] = np.asarray(cfg["times_hours"], dtype=float)
    if independent:
        config = independent_config(**cfg)
    else:
        config = SynthConfig(**cfg)
    data, truth = generate_dependent(config)

    os.makedirs(args.out, exist_ok=True)
    cfio.write_dataset_csv(os.path.join(args.out, "dataset.csv"), data)
    resolved = {
        k: (v.tolist() if isinstance(v, np.ndarray) else v)
        for k, v in config.__dict__.items()
    }
    resolved["independent"] = independent
    resolved["realized_circadian"] = truth.n_circadian
    resolved["realized_simple_periodic"] = truth.n_simple_periodic
    cfio.write_truth_json(
        os.path.join(args.out, "truth.json"), truth, config.seed,
        probe_ids=data.probe_ids, extra=resolved,
    )
    cfio.write_text(
        os.path.join(args.out, "config_resolved.json"),
        json.dumps(resolved, sort_keys=True, indent=1, default=str) + "\n",
    )
    print(f"wrote {data.n_probes}x{data.n_times} dataset; "
          f"{truth.n_circadian} circadian, {truth.n_simple_periodic} simple-periodic")
    return 0


def _fit_pieces(cfg: dict, path):
    hyper = HyperParams(**{k: cfg[k] for k in _HYPER_KEYS if k in cfg})
    chain_kwargs = {k: cfg[k] for k in _CHAIN_KEYS if k in cfg}
    config = ChainConfig(**chain_kwargs)
    basis = {
        "periods_hours": tuple(cfg.get("periods_hours", (4.0, 6.0, 8.0, 12.0, 24.0))),
        "n_local": int(cfg.get("n_local", 10)),
        "kernel_kind": cfg.get("kernel_kind", "gaussian"),
        "bandwidth": cfg.get("bandwidth", 25.0),
    }
    return hyper, config, basis


def cmd_fit(args) -> int:
    cfg = _load_json(args.config)
    _check_keys(cfg, set(_HYPER_KEYS) | set(_CHAIN_KEYS) | set(_BASIS_KEYS), args.config)
    _require_seed(cfg, args.config)
    data = cfio.read_dataset_csv(args.data)
    hyper, config, basis = _fit_pieces(cfg, args.config)
    designs = make_designs(data.grid.times_hours, **basis)
    os.makedirs(args.out, exist_ok=True)
    checkpoint = os.path.join(args.out, "checkpoint.npz")
    resume_from = None
    if args.resume:
        if not os.path.exists(checkpoint):
            raise ValueError(f"--resume requested but {checkpoint} does not exist")
        resume_from = checkpoint
    archive = run_chain(
        data, designs, hyper, config, mode=args.mode, init=args.init,
        checkpoint_path=checkpoint, resume_from=resume_from,
        halt_after_sweep=args.halt_after,
    )
    if archive is None:
        print(f"halted after sweep {args.halt_after}; checkpoint at {checkpoint}")
        return 0
    archive.save(args.out)
    print(f"archive: {archive.n_retained} retained draws "
          f"({archive.mode} mode, seed {config.seed}) -> {args.out}")
    return 0


def cmd_summarize(args) -> int:
    archive = PosteriorArchive.load(args.archive)
    target = resolve_target_pair(archive, args.target_period)
    scores = rhythm_scores(archive, target_period=args.target_period)
    periods = archive.periods_hours
    qs = (0.025, 0.5, 0.975)

    header = ["probe_id"]
    header += [f"pct_shrunk_{periods[m]:g}h" for m in range(len(periods)) if m != target]
    header += [f"pct_active_{args.target_period:g}h", "prob_circadian", "beta",
               "prob_periodic"]
    header += [f"prob_only_{w:g}h" for w in periods]
    header += [f"amplitude_q{100 * q:g}" for q in qs]
    header += [f"phase_q{100 * q:g}" for q in qs]
    header += [f"phase_corrected_q{100 * q:g}" for q in qs]
    rows = []
    pct_off = 100.0 * (1.0 - archive.theta_mask.mean(axis=0))  # (p, q)
    pct_on = 100.0 * archive.theta_mask.mean(axis=0)
    for i, sc in enumerate(scores):
        row = [sc.probe_id]
        row += [float(pct_off[i, m]) for m in range(len(periods)) if m != target]
        row += [float(pct_on[i, target]), sc.prob_circadian, sc.beta, sc.prob_periodic]
        row += [float(v) for v in sc.prob_per_period]
        ap = amplitude_phase_quantiles(archive, i, target, probs=qs)
        row += [float(v) for v in ap["amplitude"]]
        row += [float(v) for v in ap["phase"]]
        row += [float(v) for v in ap["phase_corrected"]]
        rows.append(row)
    os.makedirs(args.out, exist_ok=True)
    cfio.write_csv(os.path.join(args.out, "summary.csv"), header, rows)

    betas = np.array([sc.beta for sc in scores])
    discovery = fdr_select(betas, args.k_star)
    disc_rows = [
        [archive.probe_ids[i], float(betas[i])] for i in discovery.selected
    ]
    cfio.write_csv(
        os.path.join(args.out, "discoveries.csv"),
        ["probe_id", "beta"], disc_rows,
    )
    cfio.write_text(
        os.path.join(args.out, "discoveries_meta.json"),
        json.dumps({
            "k_star": discovery.k_star,
            "kappa": discovery.kappa,
            "n_selected": len(discovery.selected),
            "expected_fdr": discovery.expected_fdr,
        }, sort_keys=True, indent=1) + "\n",
    )

    _, edges = marginal_correlation(archive, threshold=args.corr_threshold)
    edge_rows = [
        [archive.probe_ids[i], archive.probe_ids[j], float(c)] for i, j, c in edges
    ]
    cfio.write_csv(
        os.path.join(args.out, "edges.csv"),
        ["probe_a", "probe_b", "correlation"], edge_rows,
    )

    cfio.write_scores_csv(
        os.path.join(args.out, "scores.csv"),
        archive.probe_ids,
        [sc.prob_periodic for sc in scores],
        direction="higher",
    )
    print(f"summaries for {archive.n_probes} probes -> {args.out} "
          f"({len(discovery.selected)} discoveries at k*={args.k_star:g}, "
          f"{len(edges)} edges at |corr|>={args.corr_threshold:g})")
    return 0


def cmd_evaluate(args) -> int:
    truth = cfio.read_truth_json(args.truth)
    labels = np.asarray(truth["simple_periodic"], dtype=bool)
    truth_ids = truth.get("probe_ids")
    os.makedirs(args.out, exist_ok=True)
    auc_rows = []
    for score_arg in args.scores:
        if "=" not in score_arg:
            raise ValueError(f"score argument {score_arg!r} must look like name=path")
        name, path = score_arg.split("=", 1)
        ids, scores = cfio.read_scores_csv(path)
        if truth_ids is not None:
            index = {pid: i for i, pid in enumerate(ids)}
            missing = [pid for pid in truth_ids if pid not in index]
            if missing:
                raise ValueError(f"{path}: missing scores for probes {missing[:5]}...")
            scores = scores[[index[pid] for pid in truth_ids]]
        elif len(ids) != labels.size:
            raise ValueError(f"{path}: {len(ids)} scores for {labels.size} truth labels")
        roc = roc_and_fdr_curves(scores, labels)
        cfio.write_csv(
            os.path.join(args.out, f"roc_{name}.csv"),
            ["fpr", "tpr"],
            [[float(a), float(b)] for a, b in zip(roc.fpr, roc.tpr)],
        )
        cfio.write_csv(
            os.path.join(args.out, f"fdr_{name}.csv"),
            ["power", "fdr"],
            [[float(a), float(b)] for a, b in zip(roc.power, roc.fdr)],
        )
        auc_rows.append([name, float(roc.auc)])
    cfio.write_csv(os.path.join(args.out, "auc.csv"), ["method", "auc"], auc_rows)
    for name, auc in auc_rows:
        print(f"AUC[{name}] = {auc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circafactor",
        description="Periodicity detection in dependent expression time courses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a benchmark dataset with truth")
    p_sim.add_argument("--config", required=True, help="SynthConfig JSON (seed required)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="run the MCMC sampler on a dataset CSV")
    p_fit.add_argument("--data", required=True, help="dataset CSV")
    p_fit.add_argument("--config", required=True, help="chain/hyper JSON (seed required)")
    p_fit.add_argument("--mode", choices=("dependent", "independent"), default="dependent")
    p_fit.add_argument("--init", choices=("neutral", "prior"), default="neutral",
                       help="chain start: neutral (ridge, zero factors) or a prior draw")
    p_fit.add_argument("--out", required=True, help="output directory for the archive")
    p_fit.add_argument("--resume", action="store_true",
                       help="continue from the checkpoint in the output directory")
    p_fit.add_argument("--halt-after", type=int, default=None,
                       help="stop after this sweep, leaving a checkpoint (for preemption)")
    p_fit.set_defaults(func=cmd_fit)

    p_sum = sub.add_parser("summarize", help="turn an archive into summary tables")
    p_sum.add_argument("--archive", required=True, help="directory with archive.npz")
    p_sum.add_argument("--out", required=True)
    p_sum.add_argument("--target-period", type=float, default=24.0)
    p_sum.add_argument("--k-star", type=float, default=0.05)
    p_sum.add_argument("--corr-threshold", type=float, default=0.30)
    p_sum.set_defaults(func=cmd_summarize)

    p_eval = sub.add_parser("evaluate", help="ROC/FDR comparison of score files")
    p_eval.add_argument("--truth", required=True, help="truth JSON from simulate")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("scores", nargs="+", metavar="name=path",
                        help="score CSVs to compare")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ResumeMismatchError as exc:
        print(f"resume mismatch: {exc}", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
