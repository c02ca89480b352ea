"""End-to-end demonstration on synthetic spectra.

Writes a raw transmittance table and a config, then runs
preprocess -> benchmark -> analyze -> report through the CLI.

    python3 scripts/run_synthetic_benchmark.py --task regression --out runs/reg --splits 5
"""

import argparse
from pathlib import Path

import yaml

from specstack import cli
from specstack.presets import synthetic_classification, synthetic_regression
from specstack.synthetic import classification_spectra, regression_spectra, transmittance_table


def nest(flat: dict) -> dict:
    out: dict = {}
    for key, v in flat.items():
        node = out
        *head, last = key.split(".")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = v
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", choices=["regression", "classification"], default="regression")
    ap.add_argument("--out", default="runs/synthetic")
    ap.add_argument("--splits", type=int, default=20)
    ap.add_argument("--traits", type=int, default=1, help="regression traits")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.task == "regression":
        data = regression_spectra(n=400, p=150, n_traits=args.traits, seed=args.data_seed)
        flat = synthetic_regression(args.seed, args.splits)
    else:
        data = classification_spectra(seed=args.data_seed)
        flat = synthetic_classification(args.seed, args.splits)
        flat["task"] = "classification"
    transmittance_table(data).to_csv(out / "raw.csv", index=False)
    flat.update({"dataset": "dataset.csv", "preprocess.input": "raw.csv", "preprocess.output": "dataset.csv",
                 "preprocess.noise_regions": [], "preprocess.log_transform": False})
    if args.task == "classification":
        flat["label_column"] = "label"
    cfg = out / "config.yaml"
    cfg.write_text(yaml.safe_dump(nest(flat), sort_keys=True))

    steps = [
        ["preprocess", "--config", str(cfg)],
        ["benchmark", "--config", str(cfg), "--out", str(out / "benchmark"), "--jobs", str(args.jobs)],
        ["analyze", str(out / "benchmark" / "performance.csv"), "--out", str(out / "analysis")],
        ["report", str(out / "analysis")],
    ]
    for step in steps:
        code = cli.main(step)
        if code:
            return code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
