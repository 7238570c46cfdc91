"""Result serialization: per-seed and aggregate CSV, markdown tables shaped
like the tables in common backdoor-attack writeups, and rendered figures.

The per-seed CSV schema is fixed:

    dataset,model,p,t,seed,acc_clean,acc_backdoor,asr,cad

with p stored as a fraction and floats written via repr so every row parses
back to the exact same values (and re-serializes to the exact same bytes).
Markdown is the only place values are formatted as percentages. A small
side file (``*_context.csv``) records the clean model's target-label rate
on the attack set per seed, which the fixed schema has no column for.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import DataError, UsageError
from .harness import MetricsRow, SeedRunResult

SEED_HEADER = "dataset,model,p,t,seed,acc_clean,acc_backdoor,asr,cad"
CONTEXT_HEADER = "dataset,model,p,t,seed,clean_asr"
AGGREGATE_HEADER = ("dataset,model,p,t,seeds,acc_clean_mean,acc_backdoor_mean,"
                    "asr_mean,asr_min,asr_max,cad_mean,clean_asr_mean")


def fmt(x: float) -> str:
    """repr-based float formatting: shortest string that round-trips."""
    return repr(float(x))


@dataclass(frozen=True)
class CsvSeedRow:
    """One parsed per-seed CSV row; to_line() reproduces the exact line it
    was parsed from."""

    dataset: str
    model: str
    p: float
    t: int
    seed: int
    acc_clean: float
    acc_backdoor: float
    asr: float
    cad: float

    def to_line(self) -> str:
        return ",".join([
            self.dataset, self.model, fmt(self.p), str(self.t), str(self.seed),
            fmt(self.acc_clean), fmt(self.acc_backdoor), fmt(self.asr), fmt(self.cad),
        ])


def seed_csv_lines(rows) -> list[str]:
    lines = [SEED_HEADER]
    for row in rows:
        for run in row.runs:
            lines.append(CsvSeedRow(row.dataset, row.model, row.p, row.t, run.seed,
                                    run.acc_clean, run.acc_backdoor, run.asr, run.cad).to_line())
    return lines


def write_seed_csv(rows, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(seed_csv_lines(rows)) + "\n")


def parse_seed_csv(path: str) -> list[CsvSeedRow]:
    """Strict parser for the per-seed schema; validates the header, the
    column count, and that the stored cad equals acc_clean - acc_backdoor."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != SEED_HEADER:
        raise DataError(f"{path}: missing or wrong header, expected {SEED_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 9:
            raise DataError(f"{path}:{lineno}: expected 9 columns, got {len(parts)}")
        try:
            row = CsvSeedRow(parts[0], parts[1], float(parts[2]), int(parts[3]), int(parts[4]),
                             float(parts[5]), float(parts[6]), float(parts[7]), float(parts[8]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if row.cad != row.acc_clean - row.acc_backdoor:
            raise DataError(f"{path}:{lineno}: cad column disagrees with acc_clean - acc_backdoor")
        rows.append(row)
    return rows


def write_context_csv(rows, path: str) -> None:
    lines = [CONTEXT_HEADER]
    for row in rows:
        for run in row.runs:
            lines.append(",".join([row.dataset, row.model, fmt(row.p), str(row.t), str(run.seed),
                                   fmt(run.clean_asr)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def aggregate_csv_lines(rows) -> list[str]:
    lines = [AGGREGATE_HEADER]
    for r in rows:
        lines.append(",".join([
            r.dataset, r.model, fmt(r.p), str(r.t), str(r.seed_count),
            fmt(r.acc_clean_mean), fmt(r.acc_backdoor_mean),
            fmt(r.asr_mean), fmt(r.asr_min), fmt(r.asr_max),
            fmt(r.cad_mean), fmt(r.clean_asr_mean),
        ]))
    return lines


def write_aggregate_csv(rows, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(aggregate_csv_lines(rows)) + "\n")


# ---------------------------------------------------------------------------
# Markdown


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def spct(x: float) -> str:
    """Signed percent, for accuracy drops that can be negative."""
    return f"{100.0 * x:+.2f}"


def markdown_sweep_table(rows, var: str) -> str:
    """Sweep table in the usual layout: the swept variable, both benign
    accuracies, attack success, and the accuracy drop, all in percent
    (mean over seeds; ASR also as min-max)."""
    label = "p (%)" if var == "p" else "t"
    lines = [
        f"| {label} | ACC_c (%) | ACC_b (%) | ASR (%) | ASR min-max | CAD (%) |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for r in rows:
        head = f"{100.0 * r.p:g}" if var == "p" else str(r.t)
        lines.append(
            f"| {head} | {pct(r.acc_clean_mean)} | {pct(r.acc_backdoor_mean)} | {pct(r.asr_mean)} "
            f"| {pct(r.asr_min)}-{pct(r.asr_max)} | {spct(r.cad_mean)} |"
        )
    return "\n".join(lines) + "\n"


def markdown_baseline_table(pairs) -> str:
    """``pairs`` is a list of (semantic row, subgraph-baseline row)."""
    lines = [
        "| Dataset | Model | ASR (%) semantic | CAD (%) semantic | ASR (%) subgraph | CAD (%) subgraph |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for sem, er in pairs:
        if (sem.dataset, sem.p, sem.t) != (er.dataset, er.p, er.t):
            raise UsageError("baseline table rows must pair identical (dataset, p, t) cells")
        lines.append(
            f"| {sem.dataset} | {sem.model} | {pct(sem.asr_mean)} | {spct(sem.cad_mean)} "
            f"| {pct(er.asr_mean)} | {spct(er.cad_mean)} |"
        )
    return "\n".join(lines) + "\n"


def markdown_transfer_table(rows) -> str:
    """Cross-architecture results; the GAT row is a documented gap, not a
    number."""
    lines = [
        "| Dataset | Model | ASR (%) | CAD (%) |",
        "| --- | --- | --- | --- |",
    ]
    for r in rows:
        lines.append(f"| {r.dataset} | {r.model} | {pct(r.asr_mean)} | {spct(r.cad_mean)} |")
    datasets = sorted({r.dataset for r in rows})
    for name in datasets:
        lines.append(f"| {name} | gat | not implemented | not implemented |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Figures


def _band(rows, attr_mean, attr_min, attr_max):
    means = [100.0 * getattr(r, attr_mean) for r in rows]
    lo = [m - 100.0 * getattr(r, attr_min) for r, m in zip(rows, means)]
    hi = [100.0 * getattr(r, attr_max) - m for r, m in zip(rows, means)]
    return means, [lo, hi]


def save_sweep_figure(rows, var: str, path: str) -> None:
    """Two panels: ASR (with min-max bars) and CAD against the swept
    variable."""
    xs = [100.0 * r.p for r in rows] if var == "p" else [r.t for r in rows]
    xlabel = "poisoning rate (%)" if var == "p" else "trigger size"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    asr, asr_err = _band(rows, "asr_mean", "asr_min", "asr_max")
    ax1.errorbar(xs, asr, yerr=asr_err, marker="o", capsize=3)
    ax1.set_xlabel(xlabel)
    ax1.set_ylabel("ASR (%)")
    ax1.set_ylim(0, 105)
    ax1.grid(alpha=0.3)
    ax2.plot(xs, [100.0 * r.cad_mean for r in rows], marker="s", color="tab:red")
    ax2.axhline(0.0, color="gray", linewidth=0.8)
    ax2.set_xlabel(xlabel)
    ax2.set_ylabel("CAD (%)")
    ax2.grid(alpha=0.3)
    title = f"{rows[0].dataset} / {rows[0].model}"
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_baseline_figure(pairs, path: str) -> None:
    """Grouped bars: semantic vs subgraph-baseline ASR per dataset."""
    import numpy as np

    labels = [sem.dataset for sem, _ in pairs]
    x = np.arange(len(labels))
    width = 0.36
    fig, ax = plt.subplots(figsize=(1.6 + 1.6 * len(labels), 3.4))
    ax.bar(x - width / 2, [100.0 * sem.asr_mean for sem, _ in pairs], width, label="semantic")
    ax.bar(x + width / 2, [100.0 * er.asr_mean for _, er in pairs], width, label="subgraph baseline")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("ASR (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Directory-level report


def _group_key(row: CsvSeedRow) -> tuple:
    return (row.dataset, row.model, row.p, row.t)


def render_report(out_dir: str) -> str:
    """Merge every ``*_seeds.csv`` under out_dir into one report.md with a
    table and a figure per (dataset, model) group. Returns the report path.

    Aggregation here is over the stored per-seed rows; clean-model context
    columns are merged from the ``*_context.csv`` side files when present.
    """
    if not os.path.isdir(out_dir):
        raise DataError(f"output directory not found: {out_dir}")
    seed_files = sorted(f for f in os.listdir(out_dir) if f.endswith("_seeds.csv"))
    if not seed_files:
        raise DataError(f"no *_seeds.csv files in {out_dir}")

    cells: dict = {}
    for fname in seed_files:
        for row in parse_seed_csv(os.path.join(out_dir, fname)):
            cells.setdefault(_group_key(row), {})[row.seed] = row

    # context side files: (dataset, model, p, t, seed) -> clean_asr
    context: dict = {}
    for fname in sorted(f for f in os.listdir(out_dir) if f.endswith("_context.csv")):
        with open(os.path.join(out_dir, fname)) as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
        if not lines or lines[0] != CONTEXT_HEADER:
            raise DataError(f"{fname}: wrong context header")
        for line in lines[1:]:
            ds, model, p, t, seed, clean_asr = line.split(",")
            context[(ds, model, float(p), int(t), int(seed))] = float(clean_asr)

    rows = []
    for (ds, model, p, t), by_seed in sorted(cells.items()):
        runs = tuple(
            SeedRunResult(seed=seed, acc_clean=r.acc_clean, acc_backdoor=r.acc_backdoor, asr=r.asr,
                          clean_asr=context.get((ds, model, p, t, seed), 0.0))
            for seed, r in sorted(by_seed.items())
        )
        rows.append(MetricsRow(dataset=ds, model=model, p=p, t=t, runs=runs))

    write_aggregate_csv(rows, os.path.join(out_dir, "report_agg.csv"))

    sections = ["# Results\n"]
    by_group: dict = {}
    for r in rows:
        by_group.setdefault((r.dataset, r.model), []).append(r)
    for (ds, model), group in sorted(by_group.items()):
        group.sort(key=lambda r: (r.p, r.t))
        sections.append(f"## {ds} / {model}\n")
        p_vals = {r.p for r in group}
        t_vals = {r.t for r in group}
        if len(p_vals) > 1 and len(t_vals) > 1:
            # mixed sweeps in one directory: one p-table per trigger size,
            # otherwise rows with equal p but different t would collide
            parts = [(f"t = {t}", [r for r in group if r.t == t], "p")
                     for t in sorted(t_vals)]
        else:
            parts = [(None, group, "p" if len(p_vals) > 1 else "t")]
        for heading, rows_part, var in parts:
            if heading is not None:
                sections.append(f"### {heading}\n")
            sections.append(markdown_sweep_table(rows_part, var))
            if len(rows_part) > 1:
                suffix = "" if heading is None else "_" + heading.replace(" = ", "")
                fig_name = f"{ds}_{model}_{var}{suffix}_figure.png"
                save_sweep_figure(rows_part, var, os.path.join(out_dir, fig_name))
                sections.append(f"\n![{ds} {model} {heading or var}]({fig_name})\n")
        mean_context = [r.clean_asr_mean for r in group if any(run.clean_asr for run in r.runs)]
        if mean_context:
            sections.append(f"\nClean-model target-label rate on the attack set (context): "
                            f"mean {pct(float(sum(mean_context) / len(mean_context)))}%.\n")
    report_path = os.path.join(out_dir, "report.md")
    with open(report_path, "w") as fh:
        fh.write("\n".join(sections))
    return report_path


def write_cell_outputs(rows, out_dir: str, stem: str, var: str | None = None,
                       pairs=None, transfer: bool = False) -> list[str]:
    """Standard output bundle for one command: per-seed CSV, context CSV,
    aggregate CSV, markdown table, and a figure when there is something to
    plot. Returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def emit(name, writer):
        path = os.path.join(out_dir, name)
        writer(path)
        paths.append(path)

    emit(f"{stem}_seeds.csv", lambda p: write_seed_csv(rows, p))
    emit(f"{stem}_context.csv", lambda p: write_context_csv(rows, p))
    emit(f"{stem}_agg.csv", lambda p: write_aggregate_csv(rows, p))
    if pairs is not None:
        emit(f"{stem}_table.md", lambda p: _write_text(p, markdown_baseline_table(pairs)))
        emit(f"{stem}_figure.png", lambda p: save_baseline_figure(pairs, p))
    elif transfer:
        emit(f"{stem}_table.md", lambda p: _write_text(p, markdown_transfer_table(rows)))
    else:
        emit(f"{stem}_table.md", lambda p: _write_text(p, markdown_sweep_table(rows, var or "p")))
        if len(rows) > 1 and var is not None:
            emit(f"{stem}_figure.png", lambda p: save_sweep_figure(rows, var, p))
    return paths


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)
