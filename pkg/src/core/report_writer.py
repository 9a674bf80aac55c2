# src/core/report_writer.py
"""
Text and JSON renderings of check results, plus delimited solution tables.

JSON payloads are built from plain dicts and dumped with sorted keys so the
same run always produces the same bytes.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Union

from .config import Settings
from .expr_core import dsl_str
from .invariance import INVARIANT, ITEMS, InvarianceReport

logger = logging.getLogger(__name__)

ITEM_TITLES = {
    "a": "governing equation",
    "b": "operator tangent to boundary loci",
    "c": "boundary relations on their loci",
    "d": "manifolds at infinity made finite",
    "e": "pushed operator tangent to image loci",
    "f": "image relations at the finite manifolds",
}

ICONS = {
    "satisfied": "✅",
    "not-applicable": "➖",
    "constraint": "⚠️",
    "violated": "❌",
    "unsupported": "❓",
    "indeterminate": "❓",
}


def settings_dict(settings: Settings) -> Dict[str, Any]:
    return {"seed": settings.seed, "tol": settings.tol, "epsilon": settings.epsilon, "samples": settings.samples}


def report_dict(report: InvarianceReport, settings: Settings) -> Dict[str, Any]:
    return {
        "operator": report.operator,
        "bvp": report.bvp,
        "transform": report.transform,
        "overall": report.overall,
        "items": [
            {
                "item": letter,
                "status": report.items[letter].status,
                "detail": report.items[letter].detail,
                "flags": list(report.items[letter].flags),
            }
            for letter in ITEMS if letter in report.items
        ],
        "settings": settings_dict(settings),
    }


def to_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False, default=str)


def header(settings: Settings, title: str = "") -> List[str]:
    lines = [title] if title else []
    lines.append(f"seed={settings.seed} tol={settings.tol:g} epsilon={settings.epsilon} samples={settings.samples}")
    return lines


def render_report(report: InvarianceReport, settings: Settings) -> str:
    lines = header(settings, f"📄 {report.operator} = {report.operator_text} on {report.bvp}")
    if report.restricted_operator:
        lines.append(f"   restricted by (b): {report.restricted_operator}")
    if report.transform:
        lines.append(f"   transform: {report.transform}")
    if report.pushed_operator:
        lines.append(f"   pushed operator: {report.pushed_operator}")
    for m in report.manifolds:
        lines.append(f"   manifold: {m}")
    for letter in ITEMS:
        if letter not in report.items:
            continue
        item = report.items[letter]
        icon = ICONS.get(item.status, "•")
        lines.append(f"  ({letter}) {ITEM_TITLES[letter]}: {icon} {item.status}")
        if item.detail:
            lines.append(f"      {item.detail}")
        for flag in item.flags:
            lines.append(f"      flag: {flag}")
    if len(report.constraints):
        lines.append("  constraints:")
        lines += [f"    - {text}" for text in report.constraints.texts()]
    verdict = "PASS" if report.overall == INVARIANT else ("PASS (constrained)" if report.passed else "FAIL")
    lines.append(f"  overall: {report.overall} -> {verdict}")
    return "\n".join(lines)


def verification_dict(result, settings: Settings) -> Dict[str, Any]:
    row = result.row
    return {
        "table": row.table,
        "case": row.case,
        "bvp": row.bvp.name,
        "passed": result.passed,
        "checks": [
            {
                "operator": c.operator,
                "expected": c.expected,
                "variant": c.variant,
                "epsilon": c.epsilon,
                "overall": c.report.overall,
                "ok": c.ok,
            }
            for c in result.checks
        ],
        "harmonic": [{"label": h.label, "expected": h.expected, "holds": h.check.holds, "ok": h.ok}
                     for h in result.harmonic],
        "errors": list(result.errors),
        "settings": settings_dict(settings),
    }


def render_verification(result) -> str:
    row = result.row
    mark = "✅" if result.passed else "❌"
    lines = [f"{mark} Table {row.table} case {row.case}: {row.bvp.name}"]
    for c in result.checks:
        role = "expect" if c.expected else "control"
        tag = "ok" if c.ok else "MISMATCH"
        lines.append(f"    {c.operator:<8} {role:<7} {c.variant:<8} eps={c.epsilon}  {c.report.overall}  [{tag}]")
    for h in result.harmonic:
        tag = "ok" if h.ok else "MISMATCH"
        lines.append(f"    {h.label:<24} harmonic {'holds' if h.check.holds else 'fails'}  [{tag}]")
    lines += [f"    error: {e}" for e in result.errors]
    return "\n".join(lines)


def reduced_dict(problem) -> Dict[str, Any]:
    return {
        "name": problem.name,
        "parent": problem.parent,
        "tag": problem.tag,
        "independents": list(problem.ctx.independents),
        "dependent": problem.ctx.dependent,
        "ansatz": problem.ansatz.text() if problem.ansatz else None,
        "equations": [dsl_str(e) for e in problem.equations],
        "bc": [bc.text() for bc in problem.finite_bcs],
        "bc_inf": [bc.text() for bc in problem.infinity_bcs],
        "notes": list(problem.notes),
    }


def write_table(target: Union[str, Path, TextIO, None], columns: Sequence[str], rows: Iterable[Sequence[Any]],
                delimiter: str = ",") -> str:
    """Delimited table with a header line; returns the text and writes it when a target is given"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter=delimiter, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    text = buffer.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_text(text, encoding="utf-8")
        logger.info(f"📄 table written to {target}")
    elif target is not None:
        target.write(text)
    return text


def emit(text: str, output: Optional[Union[str, Path]] = None, stream: Optional[TextIO] = None):
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
        logger.info(f"📄 written to {output}")
    elif stream is not None:
        stream.write(text + "\n")
