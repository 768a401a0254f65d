"""Render an AnalysisReport to CSV tables, a markdown summary and SVG figures.

Output bytes depend only on the report contents: numbers are written with a
fixed format, SVG ids use a fixed hash salt and carry no date, and text stays
as text so the files diff cleanly.
"""
from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path
from typing import Iterable

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .analysis import AnalysisReport, FigureSpec

FORMATS = ("csv", "markdown", "svg")

_SVG_RC = {
    "svg.hashsalt": "oipharness",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
}


class UnsupportedFormat(ValueError):
    pass


def fmt(x) -> str:
    """Stable text form for numbers in every rendered file."""
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if x != x:
            return "nan"
        return format(x, ".10g")
    return str(x)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_")


def _level_text(levels: dict) -> str:
    return "/".join(str(v) for v in levels.values())


def _write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def _csv_files(report: AnalysisReport, out: Path) -> list[Path]:
    written = []
    p = out / "f_tests.csv"
    _write_csv(p, ["table", "term", "F", "df_num", "df_den", "p_value"],
               ([t, r.term, r.F, r.df_num, r.df_den, r.p_value] for t, rows in report.f_tables.items() for r in rows))
    written.append(p)
    for name, rows in report.emm_tables.items():
        p = out / f"emm_{_slug(name)}.csv"
        _write_csv(p, ["level", "estimate", "se"], ([_level_text(r.levels), r.estimate, r.se] for r in rows))
        written.append(p)
    if report.contrast_tables:
        p = out / "contrasts.csv"
        _write_csv(p, ["table", "contrast", "within", "estimate", "se", "t", "df", "p_unadjusted", "p_adjusted",
                       "adjustment", "family_size"],
                   ([t, r.description, _level_text(r.within), r.estimate, r.se, r.t, r.df, r.p_unadjusted,
                     r.p_adjusted, r.adjustment, r.family_size]
                    for t, rows in report.contrast_tables.items() for r in rows))
        written.append(p)
    if report.correlation_tables:
        p = out / "correlations.csv"
        _write_csv(p, ["table", "label", "r", "n", "t", "df", "p", "ci_low", "ci_high"],
                   ([t, lab, r.r, r.n, r.t, r.df, r.p, r.ci95[0], r.ci95[1]]
                    for t, rows in report.correlation_tables.items() for lab, r in rows))
        written.append(p)
    if report.codes:
        p = out / "codes.csv"
        rows = []
        for c in report.codes:
            g = c.get("grouped", {})
            rows.append([c["provider"], c["code"], " ".join(c["tie_sets"]), c["overflow"], c["fully_tied"],
                         g.get("code", ""), "".join(g.get("equivalent", [])), "; ".join(g.get("occupations", [])),
                         "; ".join(c["occupations"]), " ".join(c["uncovered"]),
                         " ".join(f"{k}:{v}" for k, v in c.get("replication_codes", {}).items())])
        _write_csv(p, ["provider", "code", "tie_sets", "overflow", "fully_tied", "grouped_code", "equivalent",
                       "grouped_occupations", "occupations", "uncovered", "replication_codes"], rows)
        written.append(p)
    return written


def _md_table(header: list[str], rows: Iterable[list]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        lines.append("| " + " | ".join(fmt(v) for v in row) + " |")
    return lines + [""]


def _p(p: float) -> str:
    return "< .0001" if p < 1e-4 else format(p, ".4f")


def render_markdown(report: AnalysisReport) -> str:
    lines = [f"# {report.name}", ""]
    lines += ["Inputs: " + json.dumps(report.inputs, sort_keys=True, ensure_ascii=False), ""]
    if report.model:
        m = report.model
        lines += [f"Model: cell means over {', '.join(m['factors'])}; random intercept per item; "
                  f"n = {m['n_obs']}, items = {m['n_groups']}, sigma2 = {fmt(m['sigma2'])}, "
                  f"tau2 = {fmt(m['tau2'])}, df method = {m['df_method']}.", ""]
    for w in report.warnings:
        lines += [f"> warning: {w}", ""]
    for name, rows in report.f_tables.items():
        lines += [f"## F tests ({name})", ""]
        lines += _md_table(["term", "F", "df", "p"],
                           ([r.term, format(r.F, ".3f"), f"({r.df_num}, {fmt(r.df_den)})", _p(r.p_value)]
                            for r in rows))
    for name, rows in report.emm_tables.items():
        lines += [f"## EMM ({name})", ""]
        lines += _md_table(["level", "estimate", "se", "df"],
                           ([_level_text(r.levels), format(r.estimate, ".3f"), format(r.se, ".3f"), fmt(r.df)]
                            for r in rows))
    for name, rows in report.contrast_tables.items():
        lines += [f"## Contrasts ({name})", ""]
        lines += _md_table(["contrast", "within", "estimate", "se", "t", "df", "p", "p adj"],
                           ([r.description, _level_text(r.within) or "-", format(r.estimate, ".3f"),
                             format(r.se, ".3f"), format(r.t, ".3f"), fmt(r.df), _p(r.p_unadjusted),
                             f"{_p(r.p_adjusted)} ({r.adjustment})"] for r in rows))
    for name, rows in report.correlation_tables.items():
        lines += [f"## Correlations ({name})", ""]
        lines += _md_table(["pair", "r", "t", "df", "p", "95% CI"],
                           ([lab, format(r.r, ".3f"), format(r.t, ".3f"), r.df, _p(r.p),
                             f"[{r.ci95[0]:.3f}, {r.ci95[1]:.3f}]"] for lab, r in rows))
    if report.codes:
        lines += ["## Holland codes", ""]
        rows = []
        for c in report.codes:
            g = c.get("grouped")
            rows.append([c["provider"], c["code"], " ".join(c["tie_sets"]),
                         f"{g['code']} ({''.join(g['equivalent'])} tied)" if g else "-",
                         "; ".join((g or c)["occupations"]) or "uncovered"])
        lines += _md_table(["provider", "code", "tie sets", "with test-based ties", "occupations"], rows)
    if report.figures:
        lines += ["## Figures", ""] + [f"- [{f.title}]({f.name}.svg)" for f in report.figures] + [""]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# figures


def _radar(fig: Figure, spec: FigureSpec) -> None:
    import numpy as np

    axes = spec.data["axes"]
    angles = np.linspace(0, 2 * np.pi, len(axes), endpoint=False).tolist()
    ax = fig.add_subplot(projection="polar")
    for label, values in spec.data["series"].items():
        ax.plot(angles + angles[:1], list(values) + list(values[:1]), marker="o", linewidth=1.2, label=label)
    ax.set_xticks(angles)
    ax.set_xticklabels(axes)
    ax.set_ylim(1, 5)
    ax.legend(loc="upper right", bbox_to_anchor=(1.35, 1.1), fontsize=7)


def _heatmap(fig: Figure, spec: FigureSpec) -> None:
    import numpy as np

    d = spec.data
    vals = np.asarray(d["values"], dtype=float)
    ax = fig.add_subplot()
    im = ax.imshow(vals, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(d["cols"])))
    ax.set_xticklabels(d["cols"], rotation=90)
    ax.set_yticks(range(len(d["rows"])))
    ax.set_yticklabels(d["rows"])
    for i in range(vals.shape[0]):
        for j in range(vals.shape[1]):
            ax.text(j, i, format(vals[i, j], ".2f"), ha="center", va="center", fontsize=6,
                    color="white" if vals[i, j] < 0.5 else "black")
    fig.colorbar(im, ax=ax, label=d.get("value_label", ""))


def _bars(fig: Figure, spec: FigureSpec) -> None:
    import numpy as np

    d = spec.data
    groups, series = d["groups"], d["series"]
    x = np.arange(len(groups))
    width = 0.8 / max(1, len(series))
    ax = fig.add_subplot()
    for i, (label, values) in enumerate(series.items()):
        err = d.get("errors", {}).get(label)
        ax.bar(x + (i - (len(series) - 1) / 2) * width, values, width, yerr=err, capsize=2, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(groups, rotation=30 if max(len(str(g)) for g in groups) > 4 else 0, ha="right")
    ax.set_ylabel(d.get("value_label", ""))
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend(fontsize=7)


_DRAW = {"radar": _radar, "heatmap": _heatmap, "bars": _bars}


def render_svg(spec: FigureSpec) -> str:
    """SVG text for one figure with the plotted numbers embedded as a comment."""
    if spec.kind not in _DRAW:
        raise UnsupportedFormat(f"unknown figure kind {spec.kind!r}")
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(6.4, 4.8))
        _DRAW[spec.kind](fig, spec)
        fig.suptitle(spec.title)
        fig.tight_layout()
        buf = io.StringIO()
        FigureCanvasSVG(fig).print_svg(buf, metadata={"Date": None, "Creator": None})
    svg = buf.getvalue()
    payload = json.dumps({"kind": spec.kind, "title": spec.title, "data": spec.data},
                         sort_keys=True, ensure_ascii=False, default=float).replace("--", "- -")
    head, sep, rest = svg.partition("<svg ")
    return f"{head}<!-- data: {payload} -->\n{sep}{rest}"


def render_report(report: AnalysisReport, out_dir, formats=FORMATS) -> list[Path]:
    """Write ``report`` under ``out_dir/<report.name>/`` and return the file paths."""
    formats = tuple(formats)
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise UnsupportedFormat(f"unsupported format(s) {bad}; expected a subset of {FORMATS}")
    out = Path(out_dir) / report.name
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "csv" in formats:
        written += _csv_files(report, out)
    if "markdown" in formats:
        p = out / "report.md"
        p.write_text(render_markdown(report), encoding="utf-8", newline="")
        written.append(p)
    if "svg" in formats:
        for spec in report.figures:
            p = out / f"{spec.name}.svg"
            p.write_text(render_svg(spec), encoding="utf-8", newline="")
            written.append(p)
    return written
