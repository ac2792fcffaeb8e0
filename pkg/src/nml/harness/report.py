"""Run outputs: the trajectories CSV, the JSON report and optional SVG charts."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..optim import TrajectoryLog
from ..predict import Method, predict_log, relative_error

CSV_COLUMNS = (
    "step",
    "time",
    "descriptor_label",
    "kind",
    "empirical",
    "pred_continuous",
    "pred_discrete",
    "pred_momentum",
    "pred_ito",
    "magnitude",
)


def _fmt(x: float) -> str:
    return "" if x is None or not math.isfinite(x) else repr(float(x))


def trajectories_csv(log: TrajectoryLog, preds: dict[Method, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    empty = np.full(log.conserved.shape, np.nan)
    cols = [preds.get(m, empty) for m in (Method.CONTINUOUS, Method.DISCRETE, Method.MOMENTUM, Method.ITO)]
    for i, (step, t) in enumerate(zip(log.steps, log.times)):
        for d, (label, kind) in enumerate(zip(log.labels, log.kinds)):
            w.writerow(
                [int(step), _fmt(t), label, kind, _fmt(log.conserved[i, d])]
                + [_fmt(c[i, d]) for c in cols]
                + [_fmt(log.magnitude[i, d])]
            )
    return buf.getvalue()


def read_trajectories(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def residual_summary(log: TrajectoryLog, preds: dict[Method, np.ndarray]) -> dict:
    """Max and mean relative error per method and symmetry kind."""
    kinds = np.array(log.kinds)
    out = {}
    for m, P in preds.items():
        err = relative_error(P, log.conserved, log.magnitude)
        entry = {}
        for k in ("translation", "scale", "rescale"):
            e = err[:, kinds == k]
            e = e[np.isfinite(e)]
            entry[k] = (
                {"max_rel_error": float(e.max()), "mean_rel_error": float(e.mean()), "n": int(e.size)}
                if e.size
                else {"max_rel_error": None, "mean_rel_error": None, "n": 0}
            )
        out[m.value] = entry
    return out


def compare(log: TrajectoryLog, methods, out_dir: str | Path, meta: dict | None = None, svg: bool = False) -> dict:
    """Write ``trajectories.csv`` and ``report.json`` (and charts) for a finished run."""
    steps_done = log.forcing.shape[0]
    if log.steps.size == 0 or log.steps[-1] > steps_done or log.integrals.shape != log.conserved.shape:
        raise ValueError("accumulator series do not match the logged steps")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preds = predict_log(log, methods)
    (out_dir / "trajectories.csv").write_text(trajectories_csv(log, preds))
    report = {
        "meta": meta or {},
        "hyper": log.hyper.to_dict(),
        "n_logged": int(log.steps.size),
        "n_steps": int(steps_done),
        "n_descriptors": len(log.labels),
        "residuals": residual_summary(log, preds),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if svg:
        plot_dir = out_dir / "plots"
        plot_dir.mkdir(exist_ok=True)
        for d, label in enumerate(log.labels):
            series = {"empirical": log.conserved[:, d]}
            series.update({m.value: P[:, d] for m, P in preds.items()})
            line_chart(plot_dir / f"{_slug(label)}.svg", log.times, series, title=label)
    return report


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


# ------------------------------------------------------------------- SVG

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def line_chart(path: str | Path, x, series: dict[str, np.ndarray], title: str = "", width: int = 640, height: int = 360):
    """Minimal SVG line chart; the first series is solid, the rest dashed. NaNs break lines."""
    x = np.asarray(x, dtype=np.float64)
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.zeros(0)])
    y0, y1 = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if y1 - y0 < 1e-300:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = (x.min(), x.max()) if x.size else (0.0, 1.0)
    if x1 - x0 < 1e-300:
        x1 = x0 + 1.0
    ml, mr, mt, mb = 70, 130, 30, 40
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{ml}" y="{mt - 10}" font-size="13">{escape(title)}</text>',
        f'<text x="{ml - 5}" y="{mt + 4}" text-anchor="end">{y1:.4g}</text>',
        f'<text x="{ml - 5}" y="{mt + ph}" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{ml}" y="{mt + ph + 15}">{x0:.4g}</text>',
        f'<text x="{ml + pw}" y="{mt + ph + 15}" text-anchor="end">{x1:.4g}</text>',
    ]
    for i, (name, y) in enumerate(ys.items()):
        color = _COLORS[i % len(_COLORS)]
        dash = "" if i == 0 else ' stroke-dasharray="6,4"'
        run: list[str] = []
        for xv, yv in zip(x, y):
            if np.isfinite(yv):
                run.append(f"{px(xv):.2f},{py(yv):.2f}")
            elif run:
                parts.append(f'<polyline fill="none" stroke="{color}"{dash} points="{" ".join(run)}"/>')
                run = []
        if run:
            parts.append(f'<polyline fill="none" stroke="{color}"{dash} points="{" ".join(run)}"/>')
        ly = mt + 15 * (i + 1)
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}"{dash}/>')
        parts.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(name)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
