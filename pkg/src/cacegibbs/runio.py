"""File formats for runs: saved-draw tables, summaries, manifests, digests.

Numeric CSV fields are rendered with 17 significant digits so a rerun with
the same inputs reproduces the files byte for byte; undefined values render
as empty fields.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import PSRF_THRESHOLD, psrf_report, summarize_fit
from .engine import (
    Chain,
    ModelConfig,
    ModelFit,
    PriorConfig,
    default_param_names,
)
from .errors import (
    DigestMismatchError,
    InsufficientDrawsError,
    ParseError,
    ValidationError,
)
from .simulation import DgpConfig, McConfig, McResult, XLaw

MANIFEST_NAME = "manifest.json"
DRAWS_NAME = "draws.csv"


def fmt(value) -> str:
    """Full-precision decimal rendering; empty for undefined."""
    v = float(value)
    if math.isnan(v):
        return ""
    return format(v, ".17g")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# model config round trip


def config_to_dict(config: ModelConfig) -> dict:
    d = dataclasses.asdict(config)
    d["priors"]["dirichlet_concentration"] = list(
        d["priors"]["dirichlet_concentration"]
    )
    return d


def config_from_dict(data: dict) -> ModelConfig:
    data = dict(data)
    priors_data = dict(data.pop("priors", {}))
    if "dirichlet_concentration" in priors_data:
        priors_data["dirichlet_concentration"] = tuple(
            priors_data["dirichlet_concentration"]
        )
    try:
        priors = PriorConfig(**priors_data)
        return ModelConfig(priors=priors, **data)
    except TypeError as exc:
        raise ValidationError(f"bad model config: {exc}")


def mc_config_to_dict(mc: McConfig) -> dict:
    d = dataclasses.asdict(mc)
    d["corr_grid"] = list(d["corr_grid"])
    d["variants"] = list(d["variants"])
    d["fit"]["priors"]["dirichlet_concentration"] = list(
        d["fit"]["priors"]["dirichlet_concentration"]
    )
    if d["dgp"]["stratum_base"] is not None:
        d["dgp"]["stratum_base"] = list(d["dgp"]["stratum_base"])
    return d


def mc_config_from_dict(data: dict) -> McConfig:
    data = dict(data)
    try:
        dgp_data = dict(data.pop("dgp", {}))
        x_law = XLaw(**dgp_data.pop("x_law", {}))
        if dgp_data.get("stratum_base") is not None:
            dgp_data["stratum_base"] = tuple(dgp_data["stratum_base"])
        dgp = DgpConfig(x_law=x_law, **dgp_data)
        fit = config_from_dict(data.pop("fit", {}))
        if "corr_grid" in data:
            data["corr_grid"] = tuple(data["corr_grid"])
        if "variants" in data:
            data["variants"] = tuple(data["variants"])
        return McConfig(dgp=dgp, fit=fit, **data)
    except TypeError as exc:
        raise ValidationError(f"bad simulation config: {exc}")


def load_json_config(path) -> dict:
    try:
        with open(path, "r") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ValidationError("config root must be a JSON object")
    return data


# ---------------------------------------------------------------------------
# draws table


def write_draws_csv(fit: ModelFit, path) -> None:
    """One row per saved draw: chain, iteration, parameters, effect, count."""
    names = fit.param_names
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["chain", "iteration", *names, "cace", "n_c"])
        for chain in fit.chains:
            iterations = chain.saved_iterations
            for i in range(chain.n_saved):
                row = [str(chain.chain_index), str(int(iterations[i]))]
                row.extend(fmt(v) for v in chain.params[i])
                row.append(fmt(chain.cace[i]))
                row.append(str(int(chain.n_compliers[i])))
                writer.writerow(row)


def read_draws_csv(path, config: ModelConfig) -> ModelFit:
    """Rebuild a ModelFit (scalar draws only) from a draws table."""
    names = default_param_names(config.variant)
    expected = ["chain", "iteration", *names, "cace", "n_c"]
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("draws table is empty")
        if header != expected:
            raise ValidationError(
                "draws table header does not match the configured variant"
            )
        by_chain: dict[int, list] = {}
        for i, row in enumerate(reader, start=1):
            if len(row) != len(expected):
                raise ParseError("wrong field count", row=i)
            try:
                chain_idx = int(row[0])
                params = [float(v) for v in row[2 : 2 + len(names)]]
                cace = math.nan if row[-2] == "" else float(row[-2])
                n_c = int(row[-1])
            except ValueError as exc:
                raise ParseError(str(exc), row=i)
            by_chain.setdefault(chain_idx, []).append((params, cace, n_c))

    chains = []
    for chain_idx in sorted(by_chain):
        rows = by_chain[chain_idx]
        n_saved = len(rows)
        params = np.array([r[0] for r in rows])
        chains.append(
            Chain(
                chain_index=chain_idx,
                variant=config.variant,
                seed=config.seed,
                stream_id=chain_idx,
                burn_in=config.burn_in,
                kept=config.kept,
                thin=config.thin,
                n_patients=0,
                param_names=names,
                params=params,
                cace=np.array([r[1] for r in rows]),
                n_compliers=np.array([r[2] for r in rows], dtype=np.int32),
                complier_bits=np.zeros((n_saved, 0), dtype=np.uint8),
                cf_trt_bits=np.zeros((n_saved, 0), dtype=np.uint8),
            )
        )
    if not chains:
        raise ValidationError("draws table has no data rows")
    return ModelFit(config=config, chains=tuple(chains), failures=())


# ---------------------------------------------------------------------------
# summaries and manifests


def summary_payload(fit: ModelFit) -> dict:
    summaries = summarize_fit(fit)
    parameters = {}
    for name, s in summaries.items():
        entry = {
            "mean": s.mean,
            "sd": s.sd,
            "q2.5": s.q2_5,
            "q97.5": s.q97_5,
            "n_draws": s.n_draws,
        }
        if name == "cace":
            entry["n_undefined"] = s.n_undefined
        parameters[name] = entry
    if "cace" not in parameters:
        # every draw had zero compliers; record that instead of a summary
        n_undef = int(sum(c.n_undefined_cace for c in fit.chains))
        parameters["cace"] = {
            "mean": None,
            "sd": None,
            "q2.5": None,
            "q97.5": None,
            "n_draws": 0,
            "n_undefined": n_undef,
        }
    cace_entry = parameters.pop("cace")
    payload = {
        "variant": fit.config.variant,
        "n_chains": len(fit.chains),
        "n_pooled_draws": int(sum(c.n_saved for c in fit.chains)),
        "parameters": parameters,
        "cace": cace_entry,
    }
    try:
        report = psrf_report(fit)
        payload["psrf"] = {
            "threshold": PSRF_THRESHOLD,
            "values": {
                # non-finite values are not valid JSON numbers
                name: {
                    "value": e.value if math.isfinite(e.value) else "inf",
                    "above_threshold": e.above_threshold,
                }
                for name, e in report.items()
            },
        }
    except InsufficientDrawsError as exc:
        payload["psrf"] = {"threshold": PSRF_THRESHOLD, "unavailable": str(exc)}
    return payload


def write_json(path, payload) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, allow_nan=False)
        handle.write("\n")


def make_manifest(command: str, dataset_path, config_dict, seeds, outputs, extra=None):
    """Everything needed to reproduce and verify a run.

    ``outputs`` maps file names to their digests; the manifest itself is
    written after all other outputs so the digests are final.
    """
    payload = {
        "tool": "cacegibbs",
        "version": __version__,
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config_dict,
        "seeds": seeds,
        "outputs": outputs,
    }
    if dataset_path is not None:
        payload["dataset"] = {
            "path": str(dataset_path),
            "sha256": file_digest(dataset_path),
        }
    if extra:
        payload.update(extra)
    return payload


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ValidationError(f"no {MANIFEST_NAME} in {directory}")
    with open(path, "r") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest is not valid JSON: {exc}")


def check_digest(path, recorded: str, what: str) -> None:
    actual = file_digest(path)
    if actual != recorded:
        raise DigestMismatchError(
            f"{what} digest {actual} does not match manifest value {recorded}"
        )


# ---------------------------------------------------------------------------
# simulation results


def write_mc_results_csv(result: McResult, path) -> None:
    """Cell-level table: replicate-averaged interval and exclusion rate."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "corr_xy",
                "variant",
                "mean_cace",
                "lo",
                "hi",
                "frac_excluding_zero",
                "reps",
                "failed",
            ]
        )
        for cell in result.cells:
            writer.writerow(
                [
                    fmt(cell.corr_xy),
                    cell.variant,
                    fmt(cell.mean_cace),
                    fmt(cell.lo),
                    fmt(cell.hi),
                    fmt(cell.frac_excluding_zero),
                    str(cell.reps_done),
                    str(cell.n_failed),
                ]
            )


def write_mc_replicates_csv(result: McResult, path) -> None:
    """Replicate-level table behind the cell averages."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "corr_xy",
                "variant",
                "rep",
                "dataset_seed",
                "fit_seed",
                "post_mean",
                "q2.5",
                "q97.5",
                "n_undefined",
                "realized_cace",
            ]
        )
        for cell in result.cells:
            for r in cell.replicates:
                writer.writerow(
                    [
                        fmt(cell.corr_xy),
                        cell.variant,
                        str(r.rep),
                        str(r.dataset_seed),
                        str(r.fit_seed),
                        fmt(r.post_mean),
                        fmt(r.q2_5),
                        fmt(r.q97_5),
                        str(r.n_undefined),
                        fmt(r.realized_cace),
                    ]
                )
