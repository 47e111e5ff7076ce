"""Result presentation: error tables, metrics CSV, attention heatmaps."""

from __future__ import annotations

import html

import numpy as np

from .training import EvalResult, FAIL_THRESHOLD_PCT


def error_table(results: dict, title: str = "Test error") -> str:
    """Per-task error table with the mean-error and failed-task summary rows.

    ``results`` maps a section name (e.g. "Plain", "OOV") to an EvalResult;
    sections become columns.
    """
    sections = list(results)
    tasks = sorted({t for r in results.values() for t in r.per_task})
    name_w = max(24, len(title) + 2)
    col_w = max(12, *(len(s) + 2 for s in sections))
    lines = [title,
             "Task".ljust(name_w) + "".join(s.rjust(col_w) for s in sections)]
    lines.append("-" * (name_w + col_w * len(sections)))
    for t in tasks:
        cells = []
        for s in sections:
            r = results[s]
            cells.append(f"{r.error_pct(t):.1f}".rjust(col_w)
                         if t in r.per_task else "-".rjust(col_w))
        lines.append(str(t).ljust(name_w) + "".join(cells))
    lines.append("-" * (name_w + col_w * len(sections)))
    lines.append("Mean error (%)".ljust(name_w)
                 + "".join(f"{results[s].mean_error:.1f}".rjust(col_w)
                           for s in sections))
    lines.append(f"Failed tasks (err. > {FAIL_THRESHOLD_PCT:.0f}%)".ljust(name_w)
                 + "".join(str(results[s].failed_tasks).rjust(col_w)
                           for s in sections))
    return "\n".join(lines)


def eval_csv(results: dict, epoch: int = 0, manifest_digest: str = "") -> str:
    lines = []
    if manifest_digest:
        lines.append(f"# manifest {manifest_digest}")
    lines.append("epoch,split,task,error_pct,loss")
    for split, r in results.items():
        for t in sorted(r.per_task):
            lines.append(f"{epoch},{split},{t},{r.error_pct(t):.4f},")
        lines.append(f"{epoch},{split},mean,{r.mean_error:.4f},{r.loss:.6f}")
        lines.append(f"{epoch},{split},failed,{float(r.failed_tasks):.4f},")
    return "\n".join(lines) + "\n"


def read_csv(text: str):
    """Parse the tool's own CSV output: (header list, row lists)."""
    rows = [line for line in text.splitlines()
            if line.strip() and not line.startswith("#")]
    header = rows[0].split(",")
    return header, [r.split(",") for r in rows[1:]]


# -- attention traces ---------------------------------------------------------


def trace_csv(sentences, trace, manifest_digest: str = "") -> str:
    """Per-sentence attention weights, one column per hop."""
    hops = len(trace.hops)
    lines = []
    if manifest_digest:
        lines.append(f"# manifest {manifest_digest}")
    lines.append("position,sentence," +
                 ",".join(f"alpha_{t + 1}" for t in range(hops)))
    for i, sent in enumerate(sentences):
        alphas = ",".join(f"{trace.hops[t].alpha[i]:.4f}" for t in range(hops))
        lines.append(f"{i + 1},\"{sent}\",{alphas}")
    sums = ",".join(f"{trace.hops[t].alpha.sum():.4f}" for t in range(hops))
    lines.append(f",column_sum,{sums}")
    return "\n".join(lines) + "\n"


def _heat_color(value: float) -> str:
    # white -> red ramp, like the published visualizations
    v = float(np.clip(value, 0.0, 1.0))
    g = int(round(255 - 150 * v))
    b = int(round(255 - 148 * v))
    return f"#f8{g:02x}{b:02x}" if v > 0.5 else f"#fc{g:02x}{b:02x}"


def trace_html(sentences, trace, question: str, gold: str, predicted: str,
               manifest_digest: str = "") -> str:
    """Self-contained HTML heatmap: color intensity proportional to alpha."""
    hops = len(trace.hops)
    correct = predicted == gold
    rows = []
    for i, sent in enumerate(sentences):
        cells = "".join(
            f'<td style="background:{_heat_color(trace.hops[t].alpha[i])};'
            f'text-align:right">{trace.hops[t].alpha[i]:.2f}</td>'
            for t in range(hops))
        rows.append(f"<tr><td>{i + 1}</td><td>{html.escape(sent)}</td>{cells}</tr>")
    head_cols = "".join(f"<th>&alpha;<sup>{t + 1}</sup></th>" for t in range(hops))
    sums = "".join(f"<td style='text-align:right'>"
                   f"{trace.hops[t].alpha.sum():.2f}</td>" for t in range(hops))
    betas = ", ".join(f"&beta;<sup>{t + 1}</sup>={trace.hops[t].beta:.3f}"
                      for t in range(hops))
    verdict = "Correct" if correct else "Incorrect"
    return f"""<!DOCTYPE html>
<html><head><meta charset="utf-8">
<meta name="manifest" content="{manifest_digest}">
<title>attention trace</title>
<style>
body {{ font-family: sans-serif; margin: 2em; }}
table {{ border-collapse: collapse; }}
td, th {{ border: 1px solid #999; padding: 4px 8px; }}
</style></head><body>
<h2>Attention trace</h2>
<table>
<tr><th>Seq.</th><th>Sentence</th>{head_cols}</tr>
{''.join(rows)}
<tr><td></td><td><i>column sum</i></td>{sums}</tr>
</table>
<p>User input: <b>{html.escape(question)}</b></p>
<p>Answer: <b>{html.escape(gold)}</b></p>
<p>Model answer: <b>{html.escape(predicted)}</b> <b>[{verdict}]</b> ({betas})</p>
</body></html>
"""
