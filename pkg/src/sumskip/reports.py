"""Report emission: CSV tables and a dependency-free SVG scatter plot."""

from __future__ import annotations

import numpy as np

from .engine import PruneConfig, RunReport
from .sweep import ConfirmRow, ParetoSlice, TrialResult


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def run_report_csv(report: RunReport, cfg: PruneConfig, path) -> None:
    """Per-layer `layer,kind,param,flops,prunes,mispredicts` rows plus a total row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,kind,param,flops,prunes,mispredicts\n")
        for name in sorted(report.ledger.layers):
            c = report.ledger.layers[name]
            lcfg = cfg.layers.get(name)
            if lcfg is not None and lcfg.kind != "none":
                kind, param = lcfg.kind, _fmt(lcfg.param)
            elif name == "head" and cfg.head.kind != "none":
                kind, param = cfg.head.kind, _fmt(cfg.head.alpha)
            else:
                kind, param = "none", ""
            fh.write(f"{name},{kind},{param},{c.flops},{c.prunes},{c.mispredictions}\n")
        fh.write(f"total,,,{report.ledger.total},{report.ledger.prunes},"
                 f"{report.ledger.mispredictions}\n")


def sweep_csv(results: list[TrialResult], slices: list[ParetoSlice], path) -> None:
    """`trial,<param columns>,val_fidelity,val_flops,slice` rows in trial order."""
    param_names = sorted({k for r in results for k in r.params})
    slice_of = {}
    for s in slices:
        for m in s.members:
            slice_of[m.index] = s.index
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial," + ",".join(param_names) + ",val_fidelity,val_flops,slice\n")
        for r in results:
            vals = ",".join(_fmt(r.params[k]) if k in r.params else "" for k in param_names)
            fh.write(f"{r.index},{vals},{_fmt(r.fidelity)},{r.flops},"
                     f"{slice_of.get(r.index, '')}\n")


def confirm_csv(rows: list[ConfirmRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial,val_fidelity,val_norm_flops,test_fidelity,test_norm_flops,fidelity_gap\n")
        for row in rows:
            t = row.trial
            fh.write(f"{t.index},{_fmt(t.fidelity)},{_fmt(t.normalized_flops)},"
                     f"{_fmt(row.test_fidelity)},{_fmt(row.test_normalized_flops)},"
                     f"{_fmt(row.fidelity_gap)}\n")


def lab_csv(d_stats, pvalues, rejection_rate: float, path) -> None:
    """Per-index KS statistic and p-value plus a summary row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,ks_d,pvalue\n")
        for i, (d, p) in enumerate(zip(np.asarray(d_stats), np.asarray(pvalues))):
            fh.write(f"{i},{_fmt(float(d))},{_fmt(float(p))}\n")
        fh.write(f"rejection_rate,{_fmt(rejection_rate)},\n")


def scatter_svg(points, path, baseline_fidelity: float | None = None,
                title: str = "") -> None:
    """800x600 fidelity vs normalized-FLOPs scatter with baseline reference lines.

    ``points`` is a list of (normalized_flops, fidelity[, label]) tuples; dashed
    lines mark the unoptimized baseline (x = 1, y = baseline fidelity) and a
    gray line marks baseline fidelity minus one point.
    """
    width, height = 800, 600
    ml, mr, mt, mb = 70, 20, 40, 50
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo = min(xs + [1.0]) if points else 0.0
    x_hi = max(xs + [1.0]) if points else 1.0
    y_lo = min(ys + ([baseline_fidelity - 0.02] if baseline_fidelity is not None else []))
    y_hi = max(ys + ([baseline_fidelity] if baseline_fidelity is not None else []))
    x_pad = 0.05 * (x_hi - x_lo or 1.0)
    y_pad = 0.05 * (y_hi - y_lo or 1.0)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def sy(y):
        return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" height="{height - mt - mb}" '
        'fill="none" stroke="black"/>',
    ]
    if title:
        lines.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="16">{title}</text>')
    lines.append(f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
                 'font-family="sans-serif" font-size="14">normalized FLOPs</text>')
    lines.append(f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="14" '
                 f'transform="rotate(-90 18 {height / 2:.1f})">fidelity</text>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        lines.append(f'<text x="{sx(xv):.1f}" y="{height - mb + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{xv:.3f}</text>')
        lines.append(f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{yv:.3f}</text>')
    if x_lo <= 1.0 <= x_hi:
        lines.append(f'<line x1="{sx(1.0):.1f}" y1="{mt}" x2="{sx(1.0):.1f}" '
                     f'y2="{height - mb}" stroke="black" stroke-dasharray="6,4"/>')
    if baseline_fidelity is not None and y_lo <= baseline_fidelity <= y_hi:
        yb = sy(baseline_fidelity)
        lines.append(f'<line x1="{ml}" y1="{yb:.1f}" x2="{width - mr}" y2="{yb:.1f}" '
                     'stroke="black" stroke-dasharray="6,4"/>')
        yd = sy(baseline_fidelity - 0.01)
        if y_lo <= baseline_fidelity - 0.01:
            lines.append(f'<line x1="{ml}" y1="{yd:.1f}" x2="{width - mr}" y2="{yd:.1f}" '
                         'stroke="gray" stroke-dasharray="4,4"/>')
    for p in points:
        label = p[2] if len(p) > 2 else ""
        lines.append(f'<circle cx="{sx(p[0]):.1f}" cy="{sy(p[1]):.1f}" r="4" '
                     'fill="#2c3e50" fill-opacity="0.75">'
                     f'<title>{label}</title></circle>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
