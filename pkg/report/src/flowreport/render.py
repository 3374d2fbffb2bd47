"""Render a torusflow output directory into figures, tables and an index.

Contract: the renderer only understands the versioned artifact schemas

    torusflow.summary.v1        scenario / rung summary JSON
    torusflow.table.v1          scenario-level table CSV
    torusflow.diagnostics.v1    flow time series CSV
    torusflow.conjugate.v1      backward-transport series CSV
    torusflow.pairing.v1        per-test-function pairing rows CSV
    torusflow.mollification.v1  kernel-radius error sequences CSV
    torusflow.cutoff.v1         cutoff gradient-integral rows CSV

and never recomputes physics: the only derived numbers are least-squares
slopes re-fitted from the raw series, written next to the recorded ones
so drift between pipeline and report is visible.  Tables are plain text
and byte-identical across re-runs; figures may embed timestamps only.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KNOWN_CSV_SCHEMAS = {
    "torusflow.table.v1",
    "torusflow.diagnostics.v1",
    "torusflow.conjugate.v1",
    "torusflow.pairing.v1",
    "torusflow.mollification.v1",
    "torusflow.cutoff.v1",
    "torusflow.field.v1",
}
SUMMARY_SCHEMA = "torusflow.summary.v1"

QUANTITY_COLUMNS = {"grad_g": "sup_grad_g", "grad2_g": "sup_grad2_g", "rm": "sup_rm"}


class SchemaUnknown(Exception):
    """Artifact carries a schema this renderer does not understand."""


class EmptyDirectory(Exception):
    """No scenario summaries found under the input directory."""


# ---------------------------------------------------------------------------
# artifact parsing
# ---------------------------------------------------------------------------

def read_csv(path: Path):
    """Parse a schema-versioned CSV into (schema, columns, column arrays)."""
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema:"):
            raise SchemaUnknown(f"{path}: missing schema header")
        schema = first.split(":", 1)[1].strip()
        if schema not in KNOWN_CSV_SCHEMAS:
            raise SchemaUnknown(f"{path}: unknown schema {schema!r}")
        columns = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = {}
    for j, name in enumerate(columns):
        vals = [r[j] if j < len(r) else "" for r in rows]
        try:
            data[name] = np.array([float(v) for v in vals])
        except ValueError:
            data[name] = np.array(vals)
    return schema, columns, data


def read_summary(path: Path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != SUMMARY_SCHEMA:
        raise SchemaUnknown(f"{path}: unknown summary schema {payload.get('schema')!r}")
    return payload


@dataclass
class ScenarioArtifacts:
    name: str
    root: Path
    summary: dict
    table: tuple | None                    # (columns, data)
    rungs: dict = field(default_factory=dict)   # rung label -> {file: (schema, cols, data)}
    rung_summaries: dict = field(default_factory=dict)


def discover(in_dir: Path):
    """Find scenario directories (a summary.json directly below the root)."""
    in_dir = Path(in_dir)
    scenarios = []
    if not in_dir.is_dir():
        raise EmptyDirectory(f"{in_dir} is not a directory")
    for child in sorted(in_dir.iterdir()):
        summary_path = child / "summary.json"
        if not (child.is_dir() and summary_path.exists()):
            continue
        summary = read_summary(summary_path)
        table = None
        table_path = child / "table.csv"
        if table_path.exists():
            _, cols, data = read_csv(table_path)
            table = (cols, data)
        art = ScenarioArtifacts(name=summary.get("scenario", child.name),
                                root=child, summary=summary, table=table)
        for rung_dir in sorted(p for p in child.iterdir() if p.is_dir()):
            files = {}
            for csv_path in sorted(rung_dir.glob("*.csv")):
                files[csv_path.name] = read_csv(csv_path)
            art.rungs[rung_dir.name] = files
            rs = rung_dir / "summary.json"
            if rs.exists():
                art.rung_summaries[rung_dir.name] = read_summary(rs)
        scenarios.append(art)
    if not scenarios:
        raise EmptyDirectory(f"no scenario summaries under {in_dir}")
    return scenarios


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _save(fig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def refit_slope(t: np.ndarray, v: np.ndarray, window) -> float | None:
    mask = (t >= window[0]) & (t <= window[1]) & (t > 0) & (v > 0)
    if mask.sum() < 2:
        return None
    return float(np.polyfit(np.log(t[mask]), np.log(v[mask]), 1)[0])


def _figure_flow_series(name, rung, data, out_path, fit_window=None, recorded=None):
    t = data["t"]
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.4))
    axes[0].plot(t, data["min_R"], label="min R")
    axes[0].plot(t, data["max_R"], label="max R")
    axes[0].set_xlabel("t")
    axes[0].legend(fontsize=8)
    axes[0].set_title(f"{name}/{rung}: scalar curvature range", fontsize=9)

    pos = t > 0
    for key, label in (("sup_grad_g", "sup |grad g|"), ("sup_grad2_g", "sup |grad2 g|"),
                       ("sup_rm", "sup |Rm|")):
        vals = data[key]
        keep = pos & (vals > 0)
        if keep.any():
            axes[1].loglog(t[keep], vals[keep], label=label)
    if fit_window and recorded:
        txt = []
        for qty, rec in recorded.items():
            slope = refit_slope(t, data[QUANTITY_COLUMNS[qty]], fit_window)
            if slope is not None and rec is not None:
                txt.append(f"{qty}: refit {slope:.3f} / recorded {rec:.3f}")
        if txt:
            axes[1].set_title("\n".join(txt), fontsize=7)
    axes[1].set_xlabel("t")
    axes[1].legend(fontsize=8)

    axes[2].plot(t, data["fairness_eps"], label="fairness eps")
    axes[2].plot(t, data["sup_dev_init"], label="sup |g - g(0)|")
    axes[2].set_xlabel("t")
    axes[2].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)


def _figure_conjugate(name, rung, fname, data, out_path):
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.2))
    axes[0].plot(data["t"], data["M"])
    axes[0].set_title(f"{name}/{rung}/{fname}: M(t)", fontsize=9)
    axes[0].set_xlabel("t")
    axes[1].plot(data["t"], data["E"])
    axes[1].set_title("gradient energy", fontsize=9)
    axes[1].set_xlabel("t")
    axes[2].plot(data["t"], data["mass"], label="mass")
    axes[2].plot(data["t"], data["min_phi"], label="min phi")
    axes[2].legend(fontsize=8)
    axes[2].set_xlabel("t")
    fig.tight_layout()
    _save(fig, out_path)


def _figure_decay_rows(name, xcol, ycols, data, out_path, loglog=True):
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    for ycol in ycols:
        if loglog:
            ax.loglog(data[xcol], data[ycol], marker="o", label=ycol)
        else:
            ax.plot(data[xcol], data[ycol], marker="o", label=ycol)
    slope = refit_slope(np.asarray(data[xcol], float),
                        np.asarray(data[ycols[0]], float),
                        (min(data[xcol]), max(data[xcol]))) if loglog else None
    title = name if slope is None else f"{name} (fitted slope {slope:.3f})"
    ax.set_title(title, fontsize=9)
    ax.set_xlabel(xcol)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)


# ---------------------------------------------------------------------------
# tables and pages
# ---------------------------------------------------------------------------

def _md_table(columns, data) -> str:
    lines = ["| " + " | ".join(columns) + " |",
             "| " + " | ".join("---" for _ in columns) + " |"]
    n = len(next(iter(data.values()))) if data else 0
    for i in range(n):
        cells = []
        for c in columns:
            v = data[c][i]
            cells.append(f"{v:.6g}" if isinstance(v, (float, np.floating)) else str(v))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def _html_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _md_to_html(title: str, body_md: str) -> str:
    # minimal fixed translation: headings, tables, images, code spans
    lines_out = []
    for line in body_md.splitlines():
        if line.startswith("### "):
            lines_out.append(f"<h3>{_html_escape(line[4:])}</h3>")
        elif line.startswith("## "):
            lines_out.append(f"<h2>{_html_escape(line[3:])}</h2>")
        elif line.startswith("# "):
            lines_out.append(f"<h1>{_html_escape(line[2:])}</h1>")
        elif line.startswith("!["):
            alt, src = line[2:].split("](", 1)
            lines_out.append(f'<img src="{src.rstrip(")")}" alt="{_html_escape(alt)}" '
                             f'style="max-width:100%">')
        elif line.startswith("|"):
            lines_out.append(f"<pre>{_html_escape(line)}</pre>")
        elif line.startswith("- "):
            lines_out.append(f"<li>{_html_escape(line[2:])}</li>")
        else:
            lines_out.append(f"<p>{_html_escape(line)}</p>" if line.strip() else "")
    return ("<!DOCTYPE html><html><head><meta charset='utf-8'>"
            f"<title>{_html_escape(title)}</title></head><body>"
            + "\n".join(lines_out) + "</body></html>\n")


@dataclass
class ReportBundle:
    """Everything rendered from one output directory."""

    scenarios: list
    pages: dict          # relative path -> text
    figures: list        # relative figure paths


def build(in_dir, out_dir, fmt: str = "md") -> ReportBundle:
    """Render every discovered scenario; idempotent over the inputs."""
    if fmt not in ("md", "html"):
        raise ValueError(f"format must be 'md' or 'html', got {fmt!r}")
    scenarios = discover(in_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".md" if fmt == "md" else ".html"
    pages = {}
    figures = []

    index_lines = ["# torusflow run report", ""]
    for art in scenarios:
        status = "PASS" if art.summary.get("passed") else "FAIL"
        index_lines.append(f"- [{art.name}]({art.name}{ext}) : {status}")
        body = [f"# {art.name}", "", f"verdict: **{status}**", ""]

        checks = art.summary.get("checks", {})
        if checks:
            body.append("## checks")
            for key in sorted(checks):
                body.append(f"- {key}: {checks[key]}")
            body.append("")

        if art.table is not None:
            body.append("## ladder table")
            body.append(_md_table(*art.table))
            body.append("")

        for rung, files in art.rungs.items():
            rung_summary = art.rung_summaries.get(rung, {})
            fit_window = rung_summary.get("window")
            recorded = {f["quantity"]: f["slope"] for f in rung_summary.get("fits", [])} \
                if "fits" in rung_summary else None
            for fname, (schema, cols, data) in files.items():
                stem = f"{art.name}_{rung}_{Path(fname).stem}"
                fig_path = out_dir / "figures" / f"{stem}.png"
                if schema == "torusflow.diagnostics.v1":
                    _figure_flow_series(art.name, rung, data, fig_path,
                                        fit_window=fit_window, recorded=recorded)
                elif schema == "torusflow.conjugate.v1":
                    _figure_conjugate(art.name, rung, Path(fname).stem, data, fig_path)
                elif schema == "torusflow.mollification.v1":
                    _figure_decay_rows(stem, "delta",
                                       ["c0_error", "w1p_error", "pairing_error"],
                                       data, fig_path)
                elif schema == "torusflow.cutoff.v1":
                    _figure_decay_rows(stem, "eps", ["gradient_integral"], data, fig_path)
                elif schema == "torusflow.pairing.v1":
                    body.append(f"## {rung}/{fname}")
                    body.append(_md_table(cols, data))
                    body.append("")
                    continue
                else:
                    continue
                figures.append(f"figures/{stem}.png")
                body.append(f"![{stem}](figures/{stem}.png)")
                body.append("")

        if recorded_fits := _refit_block(art):
            body.append("## decay slopes: recorded vs re-fitted")
            body.append(recorded_fits)
            body.append("")
        pages[f"{art.name}{ext}"] = "\n".join(body) + "\n"

    pages[f"index{ext}"] = "\n".join(index_lines) + "\n"

    for rel, text in pages.items():
        if fmt == "html":
            text = _md_to_html(rel, text)
        with open(out_dir / rel, "w") as fh:
            fh.write(text)
    return ReportBundle(scenarios=scenarios, pages=pages, figures=figures)


def _refit_block(art: ScenarioArtifacts) -> str | None:
    """Re-fit decay slopes from the raw flow series and tabulate both."""
    rows = []
    for rung, files in art.rungs.items():
        rung_summary = art.rung_summaries.get(rung, {})
        if "fits" not in rung_summary or "diagnostics.csv" not in files:
            continue
        _, _, data = files["diagnostics.csv"]
        window = rung_summary["window"]
        for fit in rung_summary["fits"]:
            refit = refit_slope(data["t"], data[QUANTITY_COLUMNS[fit["quantity"]]], window)
            rows.append((rung, fit["quantity"], fit["slope"], refit))
    if not rows:
        return None
    lines = ["| rung | quantity | recorded | refit |", "| --- | --- | --- | --- |"]
    for rung, qty, rec, refit in rows:
        lines.append(f"| {rung} | {qty} | {rec:.6f} | {refit:.6f} |")
    return "\n".join(lines)


def render(in_dir, out_dir, fmt: str = "md") -> ReportBundle:
    return build(in_dir, out_dir, fmt)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowreport",
                                     description="render lab output into a static report")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render an output directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--format", dest="fmt", choices=("html", "md"), default="md")
    args = parser.parse_args(argv)
    try:
        bundle = render(args.in_dir, args.out_dir, args.fmt)
    except (EmptyDirectory, SchemaUnknown) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"rendered {len(bundle.scenarios)} scenario(s), "
          f"{len(bundle.figures)} figure(s) into {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
