"""Command-line interface: fit, diagnose, simulate.

Exit codes: 0 success, 2 input error, 3 partial failure (some chains or
replicates aborted), 4 consistency error (digest mismatch), 5 internal error.
Errors are printed to stderr as one JSON object per failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .data import ingest_dataset, summarize_dataset
from .diagnostics import (
    complier_prob_grid,
    default_x_grid,
    psrf_report,
    shaded_histogram,
    PSRF_THRESHOLD,
)
from .engine import ModelConfig, run_model
from .errors import (
    CacegibbsError,
    CalibrationError,
    DigestMismatchError,
    EmptyArmError,
    EmptyPatternError,
    InsufficientDrawsError,
    ParseError,
    TooLargeError,
    ValidationError,
)
from . import runio
from .simulation import run_monte_carlo

log = logging.getLogger("cacegibbs")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PARTIAL = 3
EXIT_CONSISTENCY = 4
EXIT_INTERNAL = 5

_INPUT_ERRORS = (
    ParseError,
    ValidationError,
    EmptyArmError,
    CalibrationError,
    TooLargeError,
    EmptyPatternError,
    InsufficientDrawsError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


def _setup_logging(verbose: bool) -> None:
    level_name = os.environ.get("CACEGIBBS_LOG", "DEBUG" if verbose else "INFO")
    level = getattr(logging, level_name.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def _emit_error(exc: BaseException) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _load_model_config(args) -> ModelConfig:
    data = runio.load_json_config(args.config) if args.config else {}
    config = runio.config_from_dict(data)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.chains is not None:
        overrides["n_chains"] = args.chains
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.marginal_missing_y:
        overrides["marginal_missing_y"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _progress_logger(chain_index, iteration, total, n_c):
    log.debug("chain %d: iteration %d/%d, %d compliers", chain_index, iteration, total, n_c)


def cmd_fit(args) -> int:
    dataset = ingest_dataset(args.dataset)
    config = _load_model_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info(
        "fitting variant %s: %d chains x (%d burn-in + %d kept, thin %d) on %d records",
        config.variant,
        config.n_chains,
        config.burn_in,
        config.kept,
        config.thin,
        dataset.n,
    )
    fit = run_model(dataset, config, n_workers=args.workers, progress=_progress_logger)
    for failure in fit.failures:
        log.error("chain %d failed: %s", failure.chain_index, failure.message)

    outputs = {}
    draws_path = out / runio.DRAWS_NAME
    runio.write_draws_csv(fit, draws_path)
    outputs[runio.DRAWS_NAME] = runio.file_digest(draws_path)
    if fit.chains:
        summary_path = out / "summary.json"
        runio.write_json(summary_path, runio.summary_payload(fit))
        outputs["summary.json"] = runio.file_digest(summary_path)

    manifest = runio.make_manifest(
        command="fit",
        dataset_path=args.dataset,
        config_dict=runio.config_to_dict(config),
        seeds={
            "seed": config.seed,
            "chain_stream_ids": list(range(config.n_chains)),
        },
        outputs=outputs,
        extra={
            "failures": [dataclasses.asdict(f) for f in fit.failures],
            "n_records": dataset.n,
        },
    )
    runio.write_json(out / runio.MANIFEST_NAME, manifest)
    log.info("wrote %s", ", ".join([*outputs, runio.MANIFEST_NAME]))
    return EXIT_PARTIAL if fit.failures else EXIT_OK


def cmd_diagnose(args) -> int:
    draws_dir = Path(args.draws)
    manifest = runio.read_manifest(draws_dir)
    if manifest.get("command") != "fit":
        raise ValidationError("manifest does not describe a fit run")
    config = runio.config_from_dict(manifest["config"])

    # both inputs must match the digests the fit recorded
    runio.check_digest(args.dataset, manifest["dataset"]["sha256"], "dataset")
    draws_path = draws_dir / runio.DRAWS_NAME
    runio.check_digest(
        draws_path, manifest["outputs"][runio.DRAWS_NAME], "draws table"
    )

    dataset = ingest_dataset(args.dataset)
    fit = runio.read_draws_csv(draws_path, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}

    summaries = summarize_dataset(dataset)
    grid = default_x_grid(dataset, args.grid_points)
    from .data import ObservedPattern

    for z, pattern in (
        (0, ObservedPattern.MIXTURE_CONTROL_ARM),
        (1, ObservedPattern.MIXTURE_TREATED_ARM),
    ):
        stats = summaries[pattern]
        y_eval = stats.y_mean
        if y_eval is None:
            pooled = dataset.y[~dataset.y_missing]
            y_eval = float(pooled.mean())
        curve = complier_prob_grid(fit, dataset, z, y_eval, grid)
        name = f"complier_grid_z{z}.csv"
        with open(out / name, "w", newline="") as handle:
            handle.write("x,mean,lo,hi\n")
            for j in range(curve.x.size):
                handle.write(
                    ",".join(
                        runio.fmt(v)
                        for v in (curve.x[j], curve.mean[j], curve.lo[j], curve.hi[j])
                    )
                    + "\n"
                )
        outputs[name] = runio.file_digest(out / name)

        hist = shaded_histogram(fit, dataset, z, n_bins=args.bins)
        name = f"shaded_hist_z{z}.csv"
        with open(out / name, "w", newline="") as handle:
            handle.write("bin_lo,bin_hi,count,shading\n")
            for j in range(hist.counts.size):
                handle.write(
                    f"{runio.fmt(hist.bin_lo[j])},{runio.fmt(hist.bin_hi[j])},"
                    f"{int(hist.counts[j])},{runio.fmt(hist.shading[j])}\n"
                )
        outputs[name] = runio.file_digest(out / name)

    name = "psrf.csv"
    try:
        report = psrf_report(fit)
        with open(out / name, "w", newline="") as handle:
            handle.write("parameter,psrf,above_threshold\n")
            for pname, entry in report.items():
                value = "inf" if entry.value == float("inf") else runio.fmt(entry.value)
                handle.write(f"{pname},{value},{int(entry.above_threshold)}\n")
        outputs[name] = runio.file_digest(out / name)
    except InsufficientDrawsError as exc:
        log.warning("skipping psrf.csv: %s", exc)

    manifest_out = runio.make_manifest(
        command="diagnose",
        dataset_path=args.dataset,
        config_dict=runio.config_to_dict(config),
        seeds={"source_fit_seed": config.seed},
        outputs=outputs,
        extra={
            "source_draws": str(draws_path),
            "source_draws_sha256": manifest["outputs"][runio.DRAWS_NAME],
            "psrf_threshold": PSRF_THRESHOLD,
        },
    )
    runio.write_json(out / runio.MANIFEST_NAME, manifest_out)
    log.info("wrote %s", ", ".join([*outputs, runio.MANIFEST_NAME]))
    return EXIT_OK


def cmd_simulate(args) -> int:
    data = runio.load_json_config(args.config) if args.config else {}
    mc = runio.mc_config_from_dict(data)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.reps is not None:
        overrides["reps"] = args.reps
    if overrides:
        mc = dataclasses.replace(mc, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(cell_index, corr, variant, done, total):
        log.debug(
            "cell %d (corr=%g, %s): replicate %d/%d",
            cell_index, corr, variant, done, total,
        )

    log.info(
        "simulating %d cells x %d replicates (n=%d per dataset)",
        len(mc.corr_grid) * len(mc.variants),
        mc.reps,
        mc.dgp.n,
    )
    result = run_monte_carlo(mc, progress=progress)

    outputs = {}
    for name, writer in (
        ("mc_results.csv", runio.write_mc_results_csv),
        ("mc_replicates.csv", runio.write_mc_replicates_csv),
    ):
        writer(result, out / name)
        outputs[name] = runio.file_digest(out / name)

    manifest = runio.make_manifest(
        command="simulate",
        dataset_path=None,
        config_dict=runio.mc_config_to_dict(mc),
        seeds={"master_seed": mc.master_seed},
        outputs=outputs,
        extra={"cells_failed": sum(c.n_failed for c in result.cells)},
    )
    runio.write_json(out / runio.MANIFEST_NAME, manifest)
    log.info("wrote %s", ", ".join([*outputs, runio.MANIFEST_NAME]))
    return EXIT_PARTIAL if result.any_failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cacegibbs",
        description=(
            "Bayesian complier average causal effect estimation under "
            "two-sided noncompliance"
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    fit.add_argument("--dataset", required=True, help="patient CSV (id,z,d_obs,y_obs,x)")
    fit.add_argument("--config", help="JSON model config")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--seed", type=int, help="override the config seed")
    fit.add_argument("--chains", type=int, help="override the chain count")
    fit.add_argument(
        "--variant",
        choices=["A", "Astar", "B", "Cstar", "D"],
        help="override the model variant",
    )
    fit.add_argument(
        "--marginal-missing-y",
        action="store_true",
        help="drop the outcome factor from membership draws of missing-outcome patients",
    )
    fit.add_argument("--workers", type=int, default=1, help="concurrent chains")
    fit.set_defaults(func=cmd_fit)

    diag = sub.add_parser("diagnose", help="membership curves, histograms, PSRF")
    diag.add_argument("--dataset", required=True, help="the CSV the fit used")
    diag.add_argument("--draws", required=True, help="directory with draws.csv + manifest.json")
    diag.add_argument("--out", required=True, help="output directory")
    diag.add_argument("--grid-points", type=int, default=101, help="curve grid size")
    diag.add_argument("--bins", type=int, default=None, help="histogram bins (default Sturges)")
    diag.set_defaults(func=cmd_diagnose)

    sim = sub.add_parser("simulate", help="repeated-sampling bias study")
    sim.add_argument("--config", help="JSON simulation config")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, help="override the master seed")
    sim.add_argument("--reps", type=int, help="override replicates per cell")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except DigestMismatchError as exc:
        _emit_error(exc)
        return EXIT_CONSISTENCY
    except _INPUT_ERRORS as exc:
        _emit_error(exc)
        return EXIT_INPUT
    except CacegibbsError as exc:
        _emit_error(exc)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - map anything unexpected to exit 5
        _emit_error(exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
