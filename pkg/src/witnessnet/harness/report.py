"""Deterministic report rendering: text summary, csv time series, json lines."""

from __future__ import annotations

import csv
import io
import json
from typing import Callable

from .sim import RunReport


class RenderError(ValueError):
    pass


def _fmt(x, digits: int = 2) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.{digits}f}"
    return str(x)


def render_text(r: RunReport) -> str:
    s = r.scenario
    out = io.StringIO()
    w = out.write
    w(f"run report: {s['name']}\n")
    w(f"seed {s['seed']}  duration {s['duration']:g} s  signatures {r.header['signature']}"
      f"  digests {r.header['digest']}\n")
    w(f"ledger height {r.ledger.get('height')}  tip {r.ledger.get('tip')}\n")

    w("\nanswers\n")
    by_key: dict[tuple[str, str], list[dict]] = {}
    for a in r.answers:
        by_key.setdefault((a["poi"], a["question"]), []).append(a)
    for row in r.poi_stats:
        answers = by_key.get((row["poi"], row["question"]), [])
        w(f"  {row['name']} [{row['poi']}] question {row['question']}\n")
        for a in sorted(answers, key=lambda a: (a["group"] or "", a["participant"])):
            group = f" ({a['group']})" if a["group"] else ""
            w(f"    {a['participant']}{group}  {a['answer']}\n")
        w(f"    mean {row['mean']:.2f}  median {_fmt(float(row['median']))}  n {row['n']}\n")

    if r.correlations:
        w("\nvalidation against baseline\n")
        first = r.correlations[0]
        w("  pois      " + "  ".join(f"{p:>6}" for p in first["pois"]) + "\n")
        w("  baseline  " + "  ".join(f"{v:6.2f}" for v in first["baseline"]) + "\n")
        for c in r.correlations:
            w(f"  {c['statistic']:<8}  " + "  ".join(f"{v:6.2f}" for v in c["values"]) + "\n")
        for c in r.correlations:
            w(f"  pearson({c['statistic']}) {c['pearson']:.4f}  spearman({c['statistic']}) {c['spearman']:.4f}\n")
        for c in r.correlations:
            if c.get("ties"):
                w(f"  note: {c['statistic']} values contain ties; spearman uses average ranks"
                  f" ({c['spearman']:.4f}); breaking ties by order gives {c['spearman_untied']:.4f}\n")

    if r.first_triggers:
        w("\nfirst localization\n")
        for t in r.first_triggers:
            radius = "poi fence" if t["radius"] is None else f"radius {t['radius']:g} m"
            w(f"  {t['poi']:<6} {t['participant']:<6} t={t['time']:.1f} s  ({radius})\n")

    if r.final:
        w("\ncollective estimates after quiescence\n")
        for f in r.final:
            w(f"  {f['map']:<14} {f['agent']:<6} {f['function']:<6} {_fmt(f['value'], 4):>10}"
              f"  oracle {_fmt(f['oracle'], 4)}\n")

    w("\nverdicts\n")
    for reason, n in sorted(r.verdicts.items()):
        w(f"  {reason:<34} {n}\n")
    if r.slashing:
        w("\nslashing\n")
        for e in r.slashing:
            extra = "  ".join(f"{k}={e[k]}" for k in sorted(e) if k not in ("type", "height", "time"))
            w(f"  height {e['height']}  {e['type']}  {extra}\n")
    w("\nbalance sheet\n")
    for k, v in sorted(r.balance_sheet.items()):
        w(f"  {k:<15} {v}\n")
    if r.notes:
        w("\nnotes\n")
        for n in r.notes:
            w(f"  {n}\n")
    return out.getvalue()


def render_csv(r: RunReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["time", "agent", "map", "function", "value"])
    for e in r.estimates:
        w.writerow([repr(float(e["time"])), e["agent"], e["map"], e["function"], repr(float(e["value"]))])
    return out.getvalue()


def _line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def render_jsonlines(r: RunReport) -> str:
    lines = [_line({"section": "meta", "scenario": r.scenario, "header": r.header, "ledger": r.ledger,
                    "verdicts": r.verdicts, "balance_sheet": r.balance_sheet, "notes": r.notes})]
    for section in RunReport.SECTIONS:
        for row in getattr(r, section):
            lines.append(_line({"section": section, **row}))
    return "".join(line + "\n" for line in lines)


def report_from_jsonlines(text: str) -> RunReport:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows or rows[0].get("section") != "meta":
        raise RenderError("report stream must start with a meta line")
    meta = rows[0]
    report = RunReport(meta["scenario"], meta["header"], verdicts=meta["verdicts"],
                       balance_sheet=meta["balance_sheet"], ledger=meta["ledger"], notes=meta["notes"])
    for row in rows[1:]:
        section = row.pop("section")
        if section not in RunReport.SECTIONS:
            raise RenderError(f"unknown report section {section!r}")
        getattr(report, section).append(row)
    return report


RENDERERS: dict[str, Callable[[RunReport], str]] = {
    "text": render_text,
    "csv": render_csv,
    "jsonlines": render_jsonlines,
}

EXTENSIONS = {"text": "txt", "csv": "csv", "jsonlines": "jsonl"}


def render(report: RunReport, fmt: str = "text") -> bytes:
    try:
        renderer = RENDERERS[fmt]
    except KeyError:
        raise RenderError(f"unknown format {fmt!r}; choose from {sorted(RENDERERS)}") from None
    return renderer(report).encode("utf-8")
