"""Hand-rolled deterministic SVG plots.

No plotting library: output bytes depend only on the input data, so plots
can be regression-tested by hash.  Four kinds are supported, matching the
trace/analysis CSV schemas: trace (time series), gain_curve, phase_portrait,
and histogram.
"""

from __future__ import annotations

import math

from .errors import SchemaMismatch

W, H = 640, 420
ML, MR, MT, MB = 62, 16, 22, 46  # margins
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f"]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    return f"{v:.6g}"


def _nice_ticks(lo: float, hi: float, n: int = 6):
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    raw = span / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    t0 = math.ceil(lo / step) * step
    ticks = []
    t = t0
    while t <= hi + 1e-12 * abs(step):
        ticks.append(0.0 if abs(t) < 1e-12 * abs(step) else t)
        t += step
    return ticks


class Figure:
    """Minimal line/bar plot surface with fixed-format float output."""

    def __init__(self, xlabel: str, ylabel: str, title: str = ""):
        self.xlabel, self.ylabel, self.title = xlabel, ylabel, title
        self.series = []   # (xs, ys, color, label)
        self.bars = []     # (x0, x1, y, color)
        self.xlim = None
        self.ylim = None

    def line(self, xs, ys, color=None, label=""):
        xs, ys = list(map(float, xs)), list(map(float, ys))
        if color is None:
            color = PALETTE[len(self.series) % len(PALETTE)]
        self.series.append((xs, ys, color, label))

    def bar(self, x0, x1, y, color="#1f77b4"):
        self.bars.append((float(x0), float(x1), float(y), color))

    def _ranges(self):
        xs, ys = [], []
        for sx, sy, _, _ in self.series:
            xs += [v for v in sx if math.isfinite(v)]
            ys += [v for v in sy if math.isfinite(v)]
        for x0, x1, y, _ in self.bars:
            xs += [x0, x1]
            ys += [0.0, y]
        if not xs:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        xlo, xhi = (min(xs), max(xs)) if self.xlim is None else self.xlim
        ylo, yhi = (min(ys), max(ys)) if self.ylim is None else self.ylim
        if xlo == xhi:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if ylo == yhi:
            ylo, yhi = ylo - 0.5, yhi + 0.5
        padx = 0.03 * (xhi - xlo)
        pady = 0.05 * (yhi - ylo)
        return xlo - padx, xhi + padx, ylo - pady, yhi + pady

    def render(self) -> str:
        xlo, xhi, ylo, yhi = self._ranges()

        def X(v):
            return ML + (v - xlo) / (xhi - xlo) * (W - ML - MR)

        def Y(v):
            return H - MB - (v - ylo) / (yhi - ylo) * (H - MT - MB)

        out = []
        out.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" '
            f'height="{H}" viewBox="0 0 {W} {H}">'
        )
        out.append(f'<rect width="{W}" height="{H}" fill="#ffffff"/>')
        # axes frame
        out.append(
            f'<rect x="{ML}" y="{MT}" width="{W-ML-MR}" height="{H-MT-MB}" '
            'fill="none" stroke="#000000" stroke-width="1"/>'
        )
        font = 'font-family="Helvetica,Arial,sans-serif"'
        # ticks + grid
        for t in _nice_ticks(xlo, xhi):
            x = X(t)
            out.append(
                f'<line x1="{x:.2f}" y1="{MT}" x2="{x:.2f}" y2="{H-MB}" '
                'stroke="#dddddd" stroke-width="0.7"/>'
            )
            out.append(
                f'<text x="{x:.2f}" y="{H-MB+16}" font-size="11" {font} '
                f'text-anchor="middle">{_fmt(t)}</text>'
            )
        for t in _nice_ticks(ylo, yhi):
            y = Y(t)
            out.append(
                f'<line x1="{ML}" y1="{y:.2f}" x2="{W-MR}" y2="{y:.2f}" '
                'stroke="#dddddd" stroke-width="0.7"/>'
            )
            out.append(
                f'<text x="{ML-6}" y="{y+3.5:.2f}" font-size="11" {font} '
                f'text-anchor="end">{_fmt(t)}</text>'
            )
        # bars
        for x0, x1, yv, color in self.bars:
            xa, xb = X(x0), X(x1)
            ya, yb = Y(max(yv, 0.0)), Y(min(yv, 0.0))
            out.append(
                f'<rect x="{xa:.2f}" y="{ya:.2f}" width="{xb-xa:.2f}" '
                f'height="{abs(yb-ya):.2f}" fill="{color}" '
                'fill-opacity="0.75" stroke="#000000" stroke-width="0.5"/>'
            )
        # series
        for xs, ys, color, _ in self.series:
            pts = " ".join(
                f"{X(x):.2f},{Y(y):.2f}" for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y)
            )
            if pts:
                out.append(
                    f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    'stroke-width="1.4"/>'
                )
        # labels + legend
        out.append(
            f'<text x="{(ML+W-MR)/2:.1f}" y="{H-10}" font-size="13" {font} '
            f'text-anchor="middle">{self.xlabel}</text>'
        )
        out.append(
            f'<text x="14" y="{(MT+H-MB)/2:.1f}" font-size="13" {font} '
            f'text-anchor="middle" '
            f'transform="rotate(-90 14 {(MT+H-MB)/2:.1f})">'
            f'{self.ylabel}</text>'
        )
        if self.title:
            out.append(
                f'<text x="{(ML+W-MR)/2:.1f}" y="15" font-size="13" {font} '
                f'text-anchor="middle">{self.title}</text>'
            )
        ly = MT + 14
        for _, _, color, label in self.series:
            if not label:
                continue
            out.append(
                f'<line x1="{W-MR-120}" y1="{ly-4}" x2="{W-MR-96}" '
                f'y2="{ly-4}" stroke="{color}" stroke-width="2"/>'
            )
            out.append(
                f'<text x="{W-MR-90}" y="{ly}" font-size="11" {font}>'
                f'{label}</text>'
            )
            ly += 15
        out.append("</svg>")
        return "\n".join(out) + "\n"


# -- CSV-driven plot kinds ------------------------------------------------------


def _read_csv(text: str):
    import csv
    import io

    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def _need(header, cols, kind):
    missing = [c for c in cols if c not in header]
    if missing:
        raise SchemaMismatch(f"plot kind {kind!r} needs columns {missing}")
    return {c: header.index(c) for c in header}


def plot_csv(text: str, kind: str) -> str:
    """Render a CSV produced by this package into a standalone SVG."""
    header, rows = _read_csv(text)
    if kind == "trace":
        if not rows:
            return Figure("time (s)", "outputs").render()
        idx = _need(header, ["t"], kind)
        eta_cols = [c for c in header if c.startswith("eta")]
        fig = Figure("time (s)", "transverse outputs", "output errors")
        t = [float(r[idx["t"]]) for r in rows]
        for j, c in enumerate(eta_cols):
            ys = [float(r[idx[c]]) for r in rows]
            fig.line(t, ys, label=c)
        return fig.render()
    if kind == "gain_curve":
        fig = Figure("disturbance magnitude (N m)",
                     "ultimate guard-error bound", "disturbance gain curve")
        if not rows:
            return fig.render()
        idx = _need(header, ["delta", "mean", "ci_lo", "ci_hi"], kind)
        d = [float(r[idx["delta"]]) for r in rows]
        for col, lab in (("mean", "mean"), ("ci_lo", "95% CI lo"),
                         ("ci_hi", "95% CI hi")):
            fig.line(d, [float(r[idx[col]]) for r in rows], label=lab)
        return fig.render()
    if kind == "phase_portrait":
        fig = Figure("angle (rad)", "angular rate (rad/s)",
                     "periodic orbits of selected joints")
        if not rows:
            return fig.render()
        idx = _need(header, ["x2", "x9"], kind)
        n = sum(1 for c in header if c.startswith("x")) // 2
        # torso pitch and the two knee joints
        for qi, label in ((2, "torso"), (5, "knee_l"), (6, "knee_r")):
            xs = [float(r[idx[f"x{qi}"]]) for r in rows]
            ys = [float(r[idx[f"x{qi + n}"]]) for r in rows]
            fig.line(xs, ys, label=label)
        return fig.render()
    if kind == "histogram":
        fig = Figure("|d| (N m)", "count", "deviation-disturbance histogram")
        if not rows:
            return fig.render()
        d_cols = [c for c in header if c.startswith("d") and c != "domain"]
        if not d_cols:
            raise SchemaMismatch("histogram needs deviation columns d0..")
        hidx = {c: header.index(c) for c in header}
        vals = []
        for r in rows:
            for c in d_cols:
                vals.append(abs(float(r[hidx[c]])))
        vmax = max(vals) if vals else 1.0
        nb = 24
        width = vmax / nb if vmax > 0 else 1.0
        counts = [0] * nb
        for v in vals:
            k = min(int(v / width), nb - 1)
            counts[k] += 1
        for k, c in enumerate(counts):
            fig.bar(k * width, (k + 1) * width, c)
        return fig.render()
    raise SchemaMismatch(f"unknown plot kind {kind!r}")
