"""Run outputs: delimited tables, markdown mirrors, and rendered figures.

Every score table lands in three forms next to each other: a CSV with
four-decimal score fields, a markdown table with the best row per
(train, test) group bolded, and a PNG chart. Timing fields never enter
summary.csv so that repeated runs under one seed stay byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .training import RunSummary  # noqa: E402

F1_FMT = "{:.4f}"


def _fmt(x: float) -> str:
    return F1_FMT.format(x)


# ---------------------------------------------------------------------------
# single run


def summary_csv_text(summary: RunSummary) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["fold", "precision", "recall", "f1", "best_epoch", "seed"])
    for f in summary.folds:
        writer.writerow([f.fold, _fmt(f.precision), _fmt(f.recall), _fmt(f.f1),
                         f.best_epoch, f.seed])
    writer.writerow(["macro", _fmt(summary.macro_precision),
                     _fmt(summary.macro_recall), _fmt(summary.macro_f1), "", ""])
    return out.getvalue()


def summary_md_text(summary: RunSummary) -> str:
    lines = [
        f"# {summary.variant} / {summary.preprocessing}: "
        f"train {summary.train_name}, test {summary.test_name}",
        "",
        "| fold | precision | recall | f1 | best epoch |",
        "| --- | --- | --- | --- | --- |",
    ]
    for f in summary.folds:
        lines.append(f"| {f.fold} | {_fmt(f.precision)} | {_fmt(f.recall)} | "
                     f"{_fmt(f.f1)} | {f.best_epoch} |")
    lines.append(f"| macro | {_fmt(summary.macro_precision)} | "
                 f"{_fmt(summary.macro_recall)} | **{_fmt(summary.macro_f1)}** | |")
    return "\n".join(lines) + "\n"


def plot_fold_scores(summary: RunSummary, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    folds = [f.fold for f in summary.folds]
    ax.bar(folds, [f.f1 for f in summary.folds], color="#4878a8")
    ax.axhline(summary.macro_f1, color="#a84848", linestyle="--",
               label=f"macro F1 = {_fmt(summary.macro_f1)}")
    ax.set_xlabel("fold")
    ax.set_ylabel("token F1")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{summary.variant}/{summary.preprocessing} "
                 f"({summary.train_name} -> {summary.test_name})")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_outputs(run_dir, summary: RunSummary, save_figures: bool = True) -> dict:
    """Write summary.csv, summary.md, per-fold JSON and the fold chart."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": run_dir / "summary.csv", "md": run_dir / "summary.md"}
    paths["csv"].write_text(summary_csv_text(summary))
    paths["md"].write_text(summary_md_text(summary))
    for f in summary.folds:
        fold_path = run_dir / f"fold{f.fold}.json"
        payload = f.deterministic_dict()
        payload["duration_s"] = f.duration_s  # full precision, timing kept out of csv
        fold_path.write_text(json.dumps(payload, indent=2) + "\n")
    (run_dir / "run.json").write_text(
        json.dumps(summary.deterministic_dict(), indent=2) + "\n")
    if save_figures:
        paths["fig"] = run_dir / "fold_f1.png"
        plot_fold_scores(summary, paths["fig"])
    return paths


# ---------------------------------------------------------------------------
# comparison across runs: one row per (variant, preprocessing, train, test)


def comparison_rows(summaries) -> list:
    """Score rows plus diff-to-best within each (train, test) group."""
    rows = []
    best = {}
    for s in summaries:
        key = (s.train_name, s.test_name)
        best[key] = max(best.get(key, 0.0), s.macro_f1)
    for s in summaries:
        key = (s.train_name, s.test_name)
        rows.append({
            "variant": s.variant, "preprocessing": s.preprocessing,
            "train": s.train_name, "test": s.test_name,
            "precision": s.macro_precision, "recall": s.macro_recall,
            "f1": s.macro_f1, "diff_to_best": s.macro_f1 - best[key],
            "best": s.macro_f1 == best[key],
        })
    return rows


def comparison_csv_text(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["variant", "preprocessing", "train", "test", "precision",
                     "recall", "f1", "diff_to_best", "best"])
    for r in rows:
        writer.writerow([r["variant"], r["preprocessing"], r["train"], r["test"],
                         _fmt(r["precision"]), _fmt(r["recall"]), _fmt(r["f1"]),
                         _fmt(r["diff_to_best"]), "yes" if r["best"] else ""])
    return out.getvalue()


def comparison_md_text(rows) -> str:
    lines = ["| variant | preprocessing | train | test | f1 | diff to best |",
             "| --- | --- | --- | --- | --- | --- |"]
    for r in rows:
        f1 = _fmt(r["f1"])
        if r["best"]:
            f1 = f"**{f1}**"
        lines.append(f"| {r['variant']} | {r['preprocessing']} | {r['train']} | "
                     f"{r['test']} | {f1} | {_fmt(r['diff_to_best'])} |")
    return "\n".join(lines) + "\n"


def parse_comparison_md(text: str) -> list:
    """Read back f1/diff values from the markdown table (round-trip checks)."""
    rows = []
    for line in text.splitlines()[2:]:
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        if len(cells) != 6:
            continue
        rows.append({"variant": cells[0], "preprocessing": cells[1],
                     "train": cells[2], "test": cells[3],
                     "f1": cells[4].strip("*"), "diff_to_best": cells[5]})
    return rows


def plot_comparison(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    labels = [f"{r['variant']}/{r['preprocessing']}\n{r['train']}->{r['test']}"
              for r in rows]
    colors = ["#a84848" if r["best"] else "#4878a8" for r in rows]
    ax.bar(range(len(rows)), [r["f1"] for r in rows], color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=30, ha="right")
    ax.set_ylabel("macro token F1")
    ax.set_ylim(0, 1.05)
    ax.set_title("model comparison (best per train/test group highlighted)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_comparison(out_dir, summaries, save_figures: bool = True) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = comparison_rows(summaries)
    paths = {"csv": out_dir / "comparison.csv", "md": out_dir / "comparison.md"}
    paths["csv"].write_text(comparison_csv_text(rows))
    paths["md"].write_text(comparison_md_text(rows))
    if save_figures:
        paths["fig"] = out_dir / "comparison.png"
        plot_comparison(rows, paths["fig"])
    return paths


# ---------------------------------------------------------------------------
# benchmark table


def bench_csv_text(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["variant", "batch_size", "median_s", "per_sample_ms"])
    for r in rows:
        writer.writerow([r["variant"], r["batch_size"],
                         f"{r['median_s']:.6f}", f"{r['per_sample_ms']:.3f}"])
    return out.getvalue()


def plot_bench(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    variants = sorted({r["variant"] for r in rows})
    for v in variants:
        pts = sorted((r["batch_size"], r["median_s"]) for r in rows if r["variant"] == v)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=v)
    ax.set_xlabel("batch size")
    ax.set_ylabel("median forward time (s)")
    ax.set_title("inference wall-clock by variant")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_bench(out_dir, rows, save_figures: bool = True) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / "bench.csv"}
    paths["csv"].write_text(bench_csv_text(rows))
    if save_figures:
        paths["fig"] = out_dir / "bench.png"
        plot_bench(rows, paths["fig"])
    return paths
