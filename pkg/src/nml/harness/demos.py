"""Small deterministic comparisons of discrete steps against continuous models."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..flows import quadratic_exact, rotation_demo
from ..optim import HyperParams
from ..oscillator import OscillatorParams, homogeneous
from .report import line_chart

DEMO_MATRIX = np.array([[2.5, -1.5], [-1.5, 2.0]])
DEMO_W0 = np.array([1.0, 1.0])
DEMO_ETAS = (0.05, 0.1, 0.2)


def quadratic(etas=DEMO_ETAS, n: int = 20, w0=DEMO_W0):
    """GD iterates beside gradient flow and modified-loss flow; returns (rows, endpoint summary)."""
    rows, summary = [], []
    for eta in etas:
        hyper = HyperParams(eta)
        for k in range(n + 1):
            t = k * eta
            gd = quadratic_exact(DEMO_MATRIX, w0, hyper, t, "gd")
            fl = quadratic_exact(DEMO_MATRIX, w0, hyper, t, "gradient")
            mo = quadratic_exact(DEMO_MATRIX, w0, hyper, t, "modified-loss")
            rows.append([eta, k, t, *gd, *fl, *mo])
        summary.append(
            {
                "eta": eta,
                "steps": n,
                "flow_error": float(np.linalg.norm(gd - fl)),
                "modified_error": float(np.linalg.norm(gd - mo)),
            }
        )
    header = ["eta", "step", "time", "gd_0", "gd_1", "flow_0", "flow_1", "modified_0", "modified_1"]
    return header, rows, summary


def rotation(eta: float = 0.1, n: int = 100):
    header = ["step", "discrete_radius", "flow_radius", "modified_radius"]
    rows = [[k, *rotation_demo(eta, k)] for k in range(n + 1)]
    return header, rows, {"eta": eta, "steps": n, "radii": rows[-1][1:]}


def oscillator(t_end: float = 20.0, n: int = 400):
    regimes = {"underdamped": OscillatorParams(0.2, 1.0), "critical": OscillatorParams(1.0, 1.0), "overdamped": OscillatorParams(2.0, 1.0)}
    t = np.linspace(0.0, t_end, n + 1)
    cols = {name: homogeneous(p, 1.0, t) for name, p in regimes.items()}
    header = ["time", *cols]
    rows = [[tt, *(cols[c][i] for c in cols)] for i, tt in enumerate(t)]
    crossings = int(np.count_nonzero(np.diff(np.sign(cols["underdamped"])) != 0))
    return header, rows, {"underdamped_zero_crossings": crossings}


def write(kind: str, out_dir: str | Path, svg: bool = False) -> dict:
    fn = {"quadratic": quadratic, "rotation": rotation, "oscillator": oscillator}[kind]
    header, rows, summary = fn()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([[repr(float(v)) if isinstance(v, float) else v for v in r] for r in rows])
    (out_dir / f"demo-{kind}.csv").write_text(buf.getvalue())
    if svg:
        A = np.array(rows, dtype=np.float64)
        if kind == "quadratic":
            for eta in sorted(set(A[:, 0])):
                B = A[A[:, 0] == eta]
                line_chart(
                    out_dir / f"demo-quadratic-eta{eta:g}.svg",
                    B[:, 2],
                    {"gd": B[:, 3], "gradient flow": B[:, 5], "modified flow": B[:, 7]},
                    title=f"first coordinate, eta={eta:g}",
                )
        else:
            line_chart(out_dir / f"demo-{kind}.svg", A[:, 0], {h: A[:, i] for i, h in enumerate(header) if i}, title=kind)
    return summary
