"""Command-line entry point: ``specstack {preprocess,benchmark,analyze,report}``.

Exit codes: 0 success, 2 user or configuration error, 3 internal error.
Errors go to stderr as ``error[<id>]: <message>`` so scripts can match the id.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .config import ConfigError, build_preprocess_config, build_run_config, read_config
from .data_pipeline import (
    DataError,
    drop_noise_regions,
    load_table,
    make_dataset,
    save_dataset,
    to_absorbance,
    transform_dataset_traits,
)
from .feature_selection import SelectionError
from .harness import HarnessError, read_table, run_benchmark, write_table
from .lme import LmeError, LmeSpec, effect_estimates, fit_lme, posthoc_pairwise, variance_ratio, wald_test
from .report import ReportError, render_report
from .splits import SplitError

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 2, 3

log = logging.getLogger("specstack")


class CliError(Exception):
    def __init__(self, err_id: str, message: str):
        super().__init__(message)
        self.err_id = err_id


_USER_ERRORS = (
    (DataError, "data"),
    (ConfigError, "config"),
    (SplitError, "splits"),
    (SelectionError, "selection"),
    (HarnessError, "harness"),
    (LmeError, "lme"),
    (ReportError, "report"),
)


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(args, flat: dict | None = None, default: str = "results") -> Path:
    out = args.out or (flat or {}).get("out") or default
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    flat = read_config(args.config)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    pc = build_preprocess_config(flat, out)
    table = load_table(pc.input, pc.target_roles) if pc.kind == "transmittance" else None
    if table is None:
        raise ConfigError("preprocess.kind=absorbance inputs are already processed; use them as the dataset directly")
    data = make_dataset(to_absorbance(table), pc.label_column)
    n_before = len(data.wavenumbers)
    data = drop_noise_regions(data, pc.noise_regions)
    if pc.log_transform and data.task == "regression":
        data = transform_dataset_traits(data, pc.skewness_cutoff)
    pc.output.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, pc.output)
    prov = {
        "input": pc.input.name,
        "input_sha256": _sha256(pc.input),
        "output": pc.output.name,
        "output_sha256": _sha256(pc.output),
        "n_samples": data.n_samples,
        "n_wavenumbers_in": n_before,
        "n_wavenumbers_kept": len(data.wavenumbers),
        "noise_regions": [list(r) for r in pc.noise_regions],
        "removed_wavenumbers": [float(w) for w in data.removed_wavenumbers],
        "transforms": ["transmittance_to_absorbance", "drop_noise_regions"]
        + (["log_skewed_traits"] if any(data.transform_log.values()) else []),
        "skewness_cutoff": pc.skewness_cutoff,
        "log_transformed": dict(data.transform_log),
        "task": data.task,
        "classes": list(data.classes),
    }
    side = pc.output.with_suffix(".provenance.json")
    _write_json(prov, side)
    print(f"wrote {pc.output} ({data.n_samples} samples, {len(data.wavenumbers)} wavenumbers) and {side.name}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    flat = read_config(args.config, overrides)
    cfg = build_run_config(flat)
    out = _out_dir(args, flat)
    jobs = max(int(args.jobs or flat.get("jobs") or 1), 1)
    res = run_benchmark(cfg, jobs=jobs)
    write_table(res.table, out / "performance.csv")
    _write_json(res.manifest, out / "manifest.json")
    if res.predictions is not None:
        write_table(res.predictions, out / "predictions.csv")
        write_table(res.oof, out / "oof_predictions.csv")
    m = res.manifest
    print(f"{len(m['models'])} models x {m['n_splits']} splits x {len(m['traits'])} traits = "
          f"{m['n_records']} records; {m['n_failed_cells']} failed cells; "
          f"{m['n_convergence_warnings']} convergence warnings")
    summary = res.table.groupby("model_id", sort=False)["value"].mean()
    for model, v in summary.items():
        print(f"  {model:<16s} {v:.6g}")
    print(f"wrote {out / 'performance.csv'} and {out / 'manifest.json'}")
    return EXIT_OK


def _analysis_spec(table: pd.DataFrame, args) -> LmeSpec:
    if args.fixed:
        fixed = tuple(args.fixed)
    elif "trait_id" in table.columns and table["trait_id"].dropna().nunique() > 1:
        fixed = ("model_id", "trait_id", "model_id:trait_id")
    else:
        fixed = ("model_id",)
    return LmeSpec(args.response, fixed, args.group)


def cmd_analyze(args) -> int:
    path = Path(args.table)
    if not path.exists():
        raise CliError("analyze.missing_table", f"performance table not found: {path}")
    try:
        table = read_table(path)
    except (pd.errors.ParserError, UnicodeDecodeError) as err:
        raise CliError("analyze.unparseable", f"cannot parse {path}: {err}") from err
    metrics = table["metric"].dropna().unique()
    if args.metric is not None:
        table = table[table["metric"] == args.metric]
        if table.empty:
            raise CliError("analyze.metric", f"no rows with metric {args.metric!r}")
    elif len(metrics) > 1:
        raise CliError("analyze.metric", f"table mixes metrics {sorted(metrics)}; pass --metric")
    spec = _analysis_spec(table, args)
    out = _out_dir(args, default="analysis")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_lme(table, spec)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    eff = effect_estimates(fit, ("model_id",))
    pd.DataFrame([{"model_id": e.cell[0], "estimate": e.estimate, "se": e.se, "lower": e.lower,
                   "upper": e.upper} for e in eff]).pipe(write_table, out / "effects_model.csv")
    if "trait_id" in spec.factors:
        cells = effect_estimates(fit, ("model_id", "trait_id"))
        pd.DataFrame([{"model_id": e.cell[0], "trait_id": e.cell[1], "estimate": e.estimate, "se": e.se,
                       "lower": e.lower, "upper": e.upper} for e in cells]).pipe(write_table, out / "effects_cells.csv")
    else:
        (out / "effects_cells.csv").unlink(missing_ok=True)

    contrast_cols = ["level_a", "level_b", "difference", "se", "t", "p_raw", "p_holm", "significant"]
    if len(fit.design.levels["model_id"]) < 2:
        print("warning: only one model in the table; contrasts file is empty", file=sys.stderr)
        contrasts = pd.DataFrame(columns=contrast_cols)
    else:
        contrasts = posthoc_pairwise(fit, "model_id")
    write_table(contrasts, out / "contrasts.csv")

    vc = {
        "spec": {"response": spec.response, "fixed": list(spec.fixed), "random_intercept": spec.random_intercept},
        "sigma2_split": fit.sigma2_split,
        "sigma2_resid": fit.sigma2_resid,
        "variance_ratio": variance_ratio(fit) if fit.sigma2_resid > 0 else None,
        "gamma": fit.gamma,
        "reml_loglik": None if not np.isfinite(fit.reml_loglik) else fit.reml_loglik,
        "n_obs": fit.n_obs,
        "n_groups": fit.n_groups,
        "n_dropped": fit.n_dropped,
        "df": fit.df,
        "boundary": fit.boundary,
        "degenerate": fit.degenerate,
        "interaction_test": None,
    }
    inter = [t for t in spec.fixed if ":" in t]
    if inter and not fit.degenerate:
        wt = wald_test(fit, inter[0])
        vc["interaction_test"] = {"term": wt.term, "f_stat": wt.f_stat, "df_num": wt.df_num,
                                  "df_den": wt.df_den, "p_value": wt.p_value}
    _write_json(vc, out / "variance_components.json")
    if path.resolve() != (out / "performance.csv").resolve():
        shutil.copyfile(path, out / "performance.csv")
    print(f"analysed {fit.n_obs} records ({fit.n_dropped} dropped) over {fit.n_groups} splits; "
          f"{len(eff)} model effects, {len(contrasts)} contrasts; wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.analysis)
    out = Path(args.out) if args.out else src
    written = render_report(src, out)
    print("wrote " + ", ".join(p.name for p in written))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes; results do not depend on it")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="specstack", description="Stacking benchmarks for spectral data.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("preprocess", parents=[common], help="raw table to processed dataset")
    p.set_defaults(func=cmd_preprocess)
    p = sub.add_parser("benchmark", parents=[common], help="repeated-split benchmark")
    p.set_defaults(func=cmd_benchmark)
    p = sub.add_parser("analyze", parents=[common], help="mixed-model analysis of a performance table")
    p.add_argument("table", help="performance.csv from the benchmark command")
    p.add_argument("--fixed", nargs="+", help="fixed terms, e.g. model_id trait_id model_id:trait_id")
    p.add_argument("--response", default="value")
    p.add_argument("--group", default="split_id", help="random-intercept column")
    p.add_argument("--metric", help="metric to analyse when the table holds several")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("report", parents=[common], help="SVG figures and markdown from an analysis directory")
    p.add_argument("analysis", help="directory written by the analyze command")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USER if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("preprocess", "benchmark") and not args.config:
        print(f"error[config.missing]: {args.command} requires --config", file=sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except CliError as err:
        print(f"error[{err.err_id}]: {err}", file=sys.stderr)
        return EXIT_USER
    except Exception as err:  # noqa: BLE001
        for cls, err_id in _USER_ERRORS:
            if isinstance(err, cls):
                if err_id == "lme" and "rank-deficient" in str(err):
                    err_id = "lme.rank_deficient"
                print(f"error[{err_id}]: {err}", file=sys.stderr)
                return EXIT_USER
        log.debug("internal error", exc_info=True)
        print(f"error[internal]: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
