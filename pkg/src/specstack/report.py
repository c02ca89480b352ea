"""Static SVG figures and a markdown summary from an analysis directory."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

REQUIRED = ("effects_model.csv", "contrasts.csv", "variance_components.json", "performance.csv")

_RC = {
    "svg.hashsalt": "specstack",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


class ReportError(ValueError):
    pass


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)


def _metric_label(perf: pd.DataFrame) -> str:
    metrics = perf["metric"].dropna().unique()
    return {"rmse": "RMSE", "acc": "accuracy"}.get(metrics[0], metrics[0]) if len(metrics) else "value"


def plot_model_effects(effects: pd.DataFrame, path: Path, label: str) -> None:
    """Dot plot of model means with 95% interval bars, best first."""
    ascending = label != "accuracy"
    eff = effects.sort_values("estimate", ascending=not ascending, kind="stable").reset_index(drop=True)
    fig, ax = plt.subplots(figsize=(5.5, 0.25 * len(eff) + 1.2))
    y = np.arange(len(eff))
    ax.errorbar(eff["estimate"], y, xerr=[eff["estimate"] - eff["lower"], eff["upper"] - eff["estimate"]],
                fmt="o", color="black", ecolor="grey", capsize=2, markersize=3)
    ax.set_yticks(y)
    ax.set_yticklabels(eff["model_id"])
    ax.set_xlabel(f"estimated mean {label} (95% CI)")
    _save(fig, path)


def plot_interaction(cells: pd.DataFrame, path: Path, label: str) -> None:
    """Cell means per trait, one line with an interval ribbon per model."""
    traits = list(dict.fromkeys(cells["trait_id"]))
    models = list(dict.fromkeys(cells["model_id"]))
    x = np.arange(len(traits))
    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * len(traits) + 2), 4))
    cmap = plt.get_cmap("tab20")
    for i, m in enumerate(models):
        sub = cells[cells["model_id"] == m].set_index("trait_id").loc[traits]
        col = cmap(i % 20)
        ax.plot(x, sub["estimate"], marker="o", markersize=2, linewidth=0.8, color=col, label=m)
        ax.fill_between(x, sub["lower"], sub["upper"], color=col, alpha=0.12, linewidth=0)
    ax.set_xticks(x)
    ax.set_xticklabels(traits, rotation=45, ha="right")
    ax.set_ylabel(f"estimated mean {label}")
    ax.legend(fontsize=6, ncol=2, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    _save(fig, path)


def plot_per_split(perf: pd.DataFrame, path: Path, label: str) -> None:
    """Metric per split (averaged over traits), one line per model."""
    models = list(dict.fromkeys(perf["model_id"]))
    mean = perf.groupby(["model_id", "split_id"], sort=True)["value"].mean()
    fig, ax = plt.subplots(figsize=(6, 4))
    cmap = plt.get_cmap("tab20")
    for i, m in enumerate(models):
        s = mean.loc[m]
        ax.plot(s.index.to_numpy(), s.to_numpy(), linewidth=0.8, marker=".", markersize=2,
                color=cmap(i % 20), label=m)
    ax.set_xlabel("split id")
    ax.set_ylabel(label)
    ax.legend(fontsize=6, ncol=2, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    _save(fig, path)


def _md_table(df: pd.DataFrame, digits: int = 4) -> str:
    cols = list(df.columns)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in df.itertuples(index=False):
        cells = [f"{v:.{digits}f}" if isinstance(v, (float, np.floating)) else str(v) for v in row]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def render_report(analysis_dir, out_dir=None) -> list[Path]:
    """Write the SVG figures and ``report.md``; returns the written paths."""
    src = Path(analysis_dir)
    out = Path(out_dir) if out_dir is not None else src
    missing = [f for f in REQUIRED if not (src / f).exists()]
    if missing:
        raise ReportError(f"analysis directory {src} lacks {missing[0]}")
    out.mkdir(parents=True, exist_ok=True)
    effects = pd.read_csv(src / "effects_model.csv", dtype={"model_id": str})
    contrasts = pd.read_csv(src / "contrasts.csv")
    perf = pd.read_csv(src / "performance.csv", dtype={"model_id": str, "trait_id": str})
    perf = perf.dropna(subset=["value"])
    vc = json.loads((src / "variance_components.json").read_text())
    cells_path = src / "effects_cells.csv"
    cells = pd.read_csv(cells_path, dtype={"model_id": str, "trait_id": str}) if cells_path.exists() else None
    label = _metric_label(perf)
    written = []
    notes = []
    with plt.rc_context(_RC):
        p = out / "model_effects.svg"
        plot_model_effects(effects, p, label)
        written.append(p)
        if cells is not None and cells["trait_id"].nunique() > 1:
            p = out / "interaction.svg"
            plot_interaction(cells, p, label)
            written.append(p)
        else:
            notes.append("Interaction plot omitted: the analysis covers a single trait.")
        p = out / "per_split.svg"
        plot_per_split(perf, p, label)
        written.append(p)

    md = ["# Benchmark report", ""]
    md += [f"Metric: {label}. Records analysed: {vc.get('n_obs')} "
           f"({vc.get('n_dropped', 0)} missing dropped). Splits: {vc.get('n_groups')}.", ""]
    md += ["## Model estimates (95% CI)", "", _md_table(effects[["model_id", "estimate", "lower", "upper"]]), ""]
    md += ["## Variance components", ""]
    md += [f"- split variance: {vc['sigma2_split']:.6g}",
           f"- residual variance: {vc['sigma2_resid']:.6g}"]
    if vc.get("variance_ratio") is not None:
        md.append(f"- split sd / residual sd: {vc['variance_ratio']:.4f}")
    if vc.get("interaction_test"):
        it = vc["interaction_test"]
        md.append(f"- Wald F test of {it['term']}: F({it['df_num']}, {it['df_den']}) = {it['f_stat']:.4f}, "
                  f"p = {it['p_value']:.4g}")
    md.append("")
    md += ["## Pairwise contrasts", ""]
    if len(contrasts):
        n_sig = int(contrasts["significant"].astype(bool).sum())
        md.append(f"{n_sig} of {len(contrasts)} contrasts significant at 0.05 after Holm adjustment.")
    else:
        md.append("No contrasts: fewer than two models.")
    md.append("")
    if notes:
        md += ["## Notes", ""] + [f"- {n}" for n in notes] + [""]
    md += ["## Figures", ""] + [f"- ![{p.stem}]({p.name})" for p in written] + [""]
    rp = out / "report.md"
    rp.write_text("\n".join(md))
    written.append(rp)
    return written
