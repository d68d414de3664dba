"""Report assembly and rendering.

``build_report`` turns a corrected fit plus its interval set into a plain
nested dict with top-level keys {meta, uncorrected, corrected, intervals,
bootstrap (when run), warnings}; ``render_json`` serializes that dict
deterministically (sorted keys, native types, non-finite numbers as null, no
timestamps) and ``render_text`` formats it as aligned human-readable tables,
printing only numbers that also appear in the JSON. Coefficients are displayed
intercept first; the correction renames the error-prone variable to its
reference column (or ``cor_<substitute>`` when no reference exists).
"""

from __future__ import annotations

import json
import math

import numpy as np

from .correct import INTERCEPT
from .uncertainty import t_intervals

REPORT_SCHEMA = 1


def display_order(terms):
    """Indices putting the intercept first and keeping the rest in order."""
    order = [i for i, t in enumerate(terms) if t == INTERCEPT]
    order.extend(i for i, t in enumerate(terms) if t != INTERCEPT)
    return order


def corrected_term_names(spec, terms):
    """Display names for corrected coefficients (error-free quantities)."""
    fixed = spec.reference if spec.reference is not None else f"cor_{spec.substitute}"
    if spec.error_in == "covariate":
        return tuple(fixed if t == spec.substitute else t for t in terms)
    return tuple(terms)


def response_names(spec):
    """(uncorrected response, corrected response) display names."""
    if spec.error_in == "outcome":
        fixed = spec.reference if spec.reference is not None else f"cor_{spec.substitute}"
        return spec.substitute, fixed
    return spec.outcome, spec.outcome


def _interval_row(iv, term):
    row = {"term": term}
    if iv.se_delta is not None:
        row["delta"] = {"se": iv.se_delta, "ci": list(iv.ci_delta)}
    if iv.se_zerovar is not None:
        row["zerovar"] = {"se": iv.se_zerovar, "ci": list(iv.ci_zerovar)}
    if iv.fieller is not None:
        row["fieller"] = {"lower": iv.fieller.lower, "upper": iv.fieller.upper,
                          "unbounded": iv.fieller.unbounded}
    if iv.se_boot is not None or iv.ci_boot is not None:
        block = {}
        if iv.se_boot is not None:
            block["se"] = iv.se_boot
        if iv.ci_boot is not None:
            block["ci"] = list(iv.ci_boot)
        row["boot"] = block
    return row


def build_report(corrected, intervals, spec, meta=None):
    """Assemble the full result dict for one correction run."""
    naive = corrected.uncorrected
    alpha = intervals.alpha
    naive_ci = t_intervals(naive.coef, naive.se, naive.dof, alpha)
    naive_order = display_order(naive.terms)
    uncorrected_rows = [
        {"term": naive.terms[i], "estimate": float(naive.coef[i]),
         "se": float(naive.se[i]), "ci": [float(naive_ci[i, 0]), float(naive_ci[i, 1])]}
        for i in naive_order
    ]
    display_names = corrected_term_names(spec, corrected.terms)
    order = display_order(corrected.terms)
    corrected_rows = [
        {"term": display_names[i], "estimate": float(corrected.coef[i])} for i in order
    ]
    interval_rows = [_interval_row(intervals.rows[i], display_names[i]) for i in order]

    naive_response, corrected_response = response_names(spec)
    report = {
        "meta": {
            "schema": REPORT_SCHEMA,
            "method": corrected.method,
            "error_in": spec.error_in,
            "validation": spec.source,
            "alpha": alpha,
            **(meta or {}),
        },
        "uncorrected": {
            "response": naive_response,
            "rows": uncorrected_rows,
            "residual_se": float(math.sqrt(naive.sigma2)),
            "dof": int(naive.dof),
        },
        "corrected": {
            "response": corrected_response,
            "rows": corrected_rows,
        },
        "intervals": {
            "alpha": alpha,
            "rows": interval_rows,
        },
        "warnings": list(corrected.warnings),
    }
    if corrected.boot is not None:
        boot = corrected.boot
        report["bootstrap"] = {
            "n_boot": int(boot.n_boot),
            "seed": int(boot.seed),
            "failures": int(boot.failures),
            "insufficient_for_ci": bool(boot.insufficient),
        }
    return report


# ---- serialization ----

def _plain(obj):
    """Recursively convert to JSON-native types; non-finite numbers become None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def render_json(report):
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_plain(report), sort_keys=True, indent=2) + "\n"


# ---- text rendering ----

def _num(v):
    if v is None:
        return "."
    return format(float(v), ".6g")


def _ci(pair):
    if pair is None:
        return "."
    return f"[{_num(pair[0])}, {_num(pair[1])}]"


def _table(lines):
    widths = [max(len(row[j]) for row in lines) for j in range(len(lines[0]))]
    out = []
    for row in lines:
        cells = [row[0].ljust(widths[0])]
        cells.extend(row[j].rjust(widths[j]) for j in range(1, len(row)))
        out.append("  " + "  ".join(cells).rstrip())
    return out


def render_text(report):
    """Aligned plain-text report drawn entirely from the report dict."""
    meta = report["meta"]
    level = f"{100.0 * (1.0 - meta['alpha']):g}%"
    lines = [
        f"measurement error correction ({meta['method']})",
        f"error in {meta['error_in']}; correction from {meta['validation']} information",
    ]
    extras = []
    if "n_rows" in meta:
        extras.append(f"{meta['n_rows']} rows")
    if "n_validated" in meta:
        extras.append(f"{meta['n_validated']} validated")
    if extras:
        lines.append(", ".join(extras))
    lines.append("")

    corrected = report["corrected"]
    interval_rows = report["intervals"]["rows"]
    flavour = next((f for f in ("delta", "zerovar", "boot")
                    if any(f in r for r in interval_rows)), None)
    lines.append(f"corrected fit (response: {corrected['response']}):")
    header = ["term", "estimate"]
    if flavour is not None:
        header += [f"se ({flavour})", f"{level} CI"]
    body = [header]
    for est, iv in zip(corrected["rows"], interval_rows):
        cells = [est["term"], _num(est["estimate"])]
        if flavour is not None:
            block = iv.get(flavour, {})
            cells += [_num(block.get("se")), _ci(block.get("ci"))]
        body.append(cells)
    lines.extend(_table(body))

    for extra in ("zerovar", "boot"):
        if extra == flavour or not any(extra in r for r in interval_rows):
            continue
        lines.append("")
        label = "correction treated as known" if extra == "zerovar" else "bootstrap"
        lines.append(f"{extra} intervals ({label}):")
        body = [["term", f"se ({extra})", f"{level} CI"]]
        for iv in interval_rows:
            block = iv.get(extra, {})
            body.append([iv["term"], _num(block.get("se")), _ci(block.get("ci"))])
        lines.extend(_table(body))

    if any("fieller" in r for r in interval_rows):
        lines.append("")
        lines.append(f"Fieller {level} intervals (ratio-exact):")
        body = [["term", "interval"]]
        for iv in interval_rows:
            f = iv.get("fieller")
            if f is None:
                continue
            text = "unbounded" if f["unbounded"] else _ci((f["lower"], f["upper"]))
            body.append([iv["term"], text])
        lines.extend(_table(body))

    if "bootstrap" in report:
        b = report["bootstrap"]
        lines.append("")
        note = f"bootstrap: {b['n_boot']} replicates, seed {b['seed']}, {b['failures']} failed"
        if b["insufficient_for_ci"]:
            note += "; too few replicates for percentile intervals"
        lines.append(note)

    unc = report["uncorrected"]
    lines.append("")
    lines.append(f"uncorrected fit (response: {unc['response']}):")
    body = [["term", "estimate", "se", f"{level} CI"]]
    for r in unc["rows"]:
        body.append([r["term"], _num(r["estimate"]), _num(r["se"]), _ci(r["ci"])])
    lines.extend(_table(body))
    lines.append(f"  residual se {_num(unc['residual_se'])} on {unc['dof']} degrees of freedom")

    for w in report.get("warnings", ()):
        lines.append("")
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"
