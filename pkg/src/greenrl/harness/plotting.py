"""Deterministic SVG plots from the experiment CSV files.

Each CSV starts with a ``# schema: <name>/<version>`` line naming its
layout. Plots embed the SHA-256 of the CSV bytes in a ``<metadata>``
element, so a figure can always be traced back to its data. Numbers are
written with fixed precision; the same CSV always yields the same bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from pathlib import Path

import numpy as np

SCHEMAS = {
    "curve": ("greenrl.curves", 1, ("method", "seed", "epoch", "return")),
    "heatmap": ("greenrl.heatmap", 1, ("temp", "co2", "seed", "train_mean_reward", "eval_mean_reward")),
    "box": ("greenrl.sweep", 1, ("p", "environment", "seed", "net_profit")),
    "exceptions": ("greenrl.exceptions", 1, ("condition", "p", "fresh_weight", "retention_rate",
                                              "paper_fresh_weight", "paper_retention_rate")),
}
NUMERIC = {"curve": ("epoch", "return"), "heatmap": ("temp", "co2"), "box": ("p", "net_profit"),
           "exceptions": ("p", "fresh_weight", "retention_rate")}
PLOT_KINDS = ("curve", "heatmap", "box")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)


class PlotError(ValueError):
    """Malformed or mismatched CSV input."""


def write_csv(path, kind: str, rows: list[dict]):
    """Write ``rows`` with the schema header of ``kind``."""
    name, version, columns = SCHEMAS[kind]
    buf = io.StringIO()
    buf.write(f"# schema: {name}/{version}\n")
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt_cell(row.get(k)) for k in columns})
    Path(path).write_text(buf.getvalue())


def _fmt_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path, kind: str) -> list[dict]:
    """Parse and validate a schema-tagged CSV; raises :class:`PlotError` with row/column details."""
    if kind not in SCHEMAS:
        raise PlotError(f"unknown plot kind {kind!r}; expected one of {sorted(SCHEMAS)}")
    name, version, columns = SCHEMAS[kind]
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema:"):
        raise PlotError(f"{path}: line 1: missing '# schema:' header")
    tag = lines[0].split(":", 1)[1].strip()
    if tag != f"{name}/{version}":
        raise PlotError(f"{path}: line 1: schema {tag!r} does not match {name}/{version} for kind {kind!r}")
    reader = csv.DictReader(lines[1:])
    missing = [c for c in columns if c not in (reader.fieldnames or [])]
    if missing:
        raise PlotError(f"{path}: line 2: missing column(s) {missing}")
    rows = []
    numeric = NUMERIC[kind]
    for lineno, row in enumerate(reader, start=3):
        for col in numeric:
            try:
                v = float(row[col])
            except (TypeError, ValueError):
                raise PlotError(f"{path}: line {lineno}, column {col!r}: not a number: {row[col]!r}") from None
            if not math.isfinite(v):
                raise PlotError(f"{path}: line {lineno}, column {col!r}: non-finite value")
        rows.append(row)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return rows


def _num(x) -> str:
    return f"{x:.2f}"


def _svg(body: list[str], title: str, digest: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f"<metadata>data-sha256:{digest}</metadata>",
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        f'<text x="{W / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{_esc(title)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Axes:
    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            pad = abs(ylo) * 0.1 or 1.0
            ylo, yhi = ylo - pad, yhi + pad
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi
        self.x0, self.x1 = MARGIN["left"], W - MARGIN["right"]
        self.y0, self.y1 = H - MARGIN["bottom"], MARGIN["top"]

    def x(self, v):
        return self.x0 + (v - self.xlo) / (self.xhi - self.xlo) * (self.x1 - self.x0)

    def y(self, v):
        return self.y0 + (v - self.ylo) / (self.yhi - self.ylo) * (self.y1 - self.y0)

    def frame(self, xlabel, ylabel) -> list[str]:
        out = [f'<rect x="{self.x0}" y="{self.y1}" width="{self.x1 - self.x0}" height="{self.y0 - self.y1}" '
               f'fill="none" stroke="#333333"/>']
        for k in range(5):
            vx = self.xlo + k / 4 * (self.xhi - self.xlo)
            vy = self.ylo + k / 4 * (self.yhi - self.ylo)
            out.append(f'<text x="{_num(self.x(vx))}" y="{self.y0 + 16}" text-anchor="middle" '
                       f'font-family="sans-serif" font-size="11">{vx:.4g}</text>')
            out.append(f'<text x="{self.x0 - 6}" y="{_num(self.y(vy) + 4)}" text-anchor="end" '
                       f'font-family="sans-serif" font-size="11">{vy:.4g}</text>')
        out.append(f'<text x="{(self.x0 + self.x1) / 2:.0f}" y="{H - 14}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12">{_esc(xlabel)}</text>')
        out.append(f'<text x="16" y="{(self.y0 + self.y1) / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12" transform="rotate(-90 16 {(self.y0 + self.y1) / 2:.0f})">{_esc(ylabel)}</text>')
        return out


def curve_svg(rows: list[dict], digest: str, title: str = "Training curves",
              reference: float | None = None) -> str:
    """Mean line and mean +/- std band per method across seeds."""
    methods = sorted({r["method"] for r in rows})
    series = {}
    for m in methods:
        by_epoch: dict = {}
        for r in rows:
            if r["method"] == m:
                by_epoch.setdefault(int(float(r["epoch"])), []).append(float(r["return"]))
        ep = np.array(sorted(by_epoch))
        vals = [np.array(by_epoch[e]) for e in ep]
        series[m] = (ep, np.array([v.mean() for v in vals]), np.array([v.std() for v in vals]))
    lo = min(float((s[1] - s[2]).min()) for s in series.values())
    hi = max(float((s[1] + s[2]).max()) for s in series.values())
    if reference is not None:
        lo, hi = min(lo, reference), max(hi, reference)
    xlo = min(float(s[0].min()) for s in series.values())
    xhi = max(float(s[0].max()) for s in series.values())
    ax = _Axes(xlo, xhi, lo, hi)
    body = ax.frame("epoch", "return (USD/m2)")
    for k, m in enumerate(methods):
        color = PALETTE[k % len(PALETTE)]
        ep, mean, std = series[m]
        upper = [f"{_num(ax.x(e))},{_num(ax.y(v))}" for e, v in zip(ep, mean + std)]
        lower = [f"{_num(ax.x(e))},{_num(ax.y(v))}" for e, v in zip(ep[::-1], (mean - std)[::-1])]
        body.append(f'<polygon class="band" data-method="{_esc(m)}" points="{" ".join(upper + lower)}" '
                    f'fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_num(ax.x(e))},{_num(ax.y(v))}" for e, v in zip(ep, mean))
        body.append(f'<polyline class="mean" data-method="{_esc(m)}" points="{pts}" fill="none" '
                    f'stroke="{color}" stroke-width="2"/>')
        ly = MARGIN["top"] + 18 * k + 10
        body.append(f'<line x1="{W - MARGIN["right"] + 12}" y1="{ly}" x2="{W - MARGIN["right"] + 32}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="3"/>')
        body.append(f'<text x="{W - MARGIN["right"] + 38}" y="{ly + 4}" font-family="sans-serif" '
                    f'font-size="12">{_esc(m)}</text>')
    if reference is not None:
        y = _num(ax.y(reference))
        body.append(f'<line class="reference" x1="{ax.x0}" y1="{y}" x2="{ax.x1}" y2="{y}" stroke="#555555" '
                    f'stroke-dasharray="6,4"/>')
    return _svg(body, title, digest)


def heat_color(t: float) -> str:
    """Blue (low) to red (high); red and blue channels are monotone in ``t``."""
    t = min(max(t, 0.0), 1.0)
    r = int(round(40 + 215 * t))
    g = int(round(90 + 80 * (1.0 - abs(2.0 * t - 1.0))))
    b = int(round(255 - 215 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(rows: list[dict], digest: str, title: str = "Mean reward per perturbation",
                value: str = "eval_mean_reward") -> str:
    """Cells coloured by ``value`` averaged over seeds; hotter colour means higher value."""
    cells: dict = {}
    for r in rows:
        if r.get(value, "") == "":
            continue
        try:
            cells.setdefault((float(r["temp"]), float(r["co2"])), []).append(float(r[value]))
        except ValueError:
            raise PlotError(f"column {value!r}: not a number: {r[value]!r}") from None
    if not cells:
        raise PlotError(f"no values in column {value!r}")
    temps = sorted({k[0] for k in cells})
    co2s = sorted({k[1] for k in cells})
    means = {k: float(np.mean(v)) for k, v in cells.items()}
    lo, hi = min(means.values()), max(means.values())
    x0, y0 = MARGIN["left"], MARGIN["top"]
    cw = (W - MARGIN["left"] - MARGIN["right"]) / len(co2s)
    ch = (H - MARGIN["top"] - MARGIN["bottom"]) / len(temps)
    body = []
    for i, t in enumerate(temps):
        for j, c in enumerate(co2s):
            if (t, c) not in means:
                continue
            v = means[(t, c)]
            frac = 0.5 if hi == lo else (v - lo) / (hi - lo)
            # highest temperature row at the top
            y = y0 + (len(temps) - 1 - i) * ch
            body.append(f'<rect class="cell" x="{_num(x0 + j * cw)}" y="{_num(y)}" width="{_num(cw)}" '
                        f'height="{_num(ch)}" fill="{heat_color(frac)}" data-value="{v:.6g}"/>')
    for i, t in enumerate(temps):
        y = y0 + (len(temps) - 1 - i + 0.5) * ch + 4
        body.append(f'<text x="{x0 - 6}" y="{_num(y)}" text-anchor="end" font-family="sans-serif" '
                    f'font-size="11">{t:g}</text>')
    for j, c in enumerate(co2s):
        body.append(f'<text x="{_num(x0 + (j + 0.5) * cw)}" y="{H - MARGIN["bottom"] + 16}" text-anchor="middle" '
                    f'font-family="sans-serif" font-size="11">{c:g}</text>')
    body.append(f'<text x="{(x0 + W - MARGIN["right"]) / 2:.0f}" y="{H - 14}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="12">CO2 setpoint bias (ppm)</text>')
    body.append(f'<text x="16" y="{H / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
                f'transform="rotate(-90 16 {H / 2:.0f})">temperature setpoint bias (degC)</text>')
    # colour bar
    bx = W - MARGIN["right"] + 30
    for k in range(20):
        frac = 1.0 - k / 19
        body.append(f'<rect x="{bx}" y="{_num(y0 + k * 12)}" width="18" height="12" fill="{heat_color(frac)}"/>')
    body.append(f'<text x="{bx + 24}" y="{y0 + 10}" font-family="sans-serif" font-size="11">{hi:.4g}</text>')
    body.append(f'<text x="{bx + 24}" y="{y0 + 20 * 12}" font-family="sans-serif" font-size="11">{lo:.4g}</text>')
    return _svg(body, title, digest)


def box_svg(rows: list[dict], digest: str, title: str = "Net profit by dropout level") -> str:
    """Box per (environment group, p): quartile box, median line, min/max whiskers."""
    groups: dict = {}
    for r in rows:
        env = "standard" if r["environment"] == "standard" else "disturbed"
        if r["environment"] == "disturbed_mean":
            continue
        groups.setdefault(env, {}).setdefault(float(r["p"]), []).append(float(r["net_profit"]))
    envs = [e for e in ("standard", "disturbed") if e in groups]
    ps = sorted({p for g in groups.values() for p in g}, reverse=True)
    allv = [v for g in groups.values() for vs in g.values() for v in vs]
    ax = _Axes(0, len(ps) * len(envs) + 1, min(allv), max(allv))
    body = ax.frame("", "net profit (USD/m2)")
    slot = 0
    for e_i, env in enumerate(envs):
        color = PALETTE[e_i]
        for p in ps:
            slot += 1
            vals = groups[env].get(p)
            if not vals:
                continue
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            cx = ax.x(slot)
            half = 0.3 * (ax.x(1) - ax.x(0))
            body.append(f'<line x1="{_num(cx)}" y1="{_num(ax.y(min(vals)))}" x2="{_num(cx)}" '
                        f'y2="{_num(ax.y(max(vals)))}" stroke="{color}"/>')
            body.append(f'<rect class="box" data-env="{env}" data-p="{p:g}" x="{_num(cx - half)}" '
                        f'y="{_num(ax.y(q3))}" width="{_num(2 * half)}" height="{_num(ax.y(q1) - ax.y(q3))}" '
                        f'fill="{color}" fill-opacity="0.3" stroke="{color}"/>')
            body.append(f'<line x1="{_num(cx - half)}" y1="{_num(ax.y(med))}" x2="{_num(cx + half)}" '
                        f'y2="{_num(ax.y(med))}" stroke="{color}" stroke-width="2"/>')
            body.append(f'<text x="{_num(cx)}" y="{H - MARGIN["bottom"] + 30}" text-anchor="middle" '
                        f'font-family="sans-serif" font-size="10">p={p:g}</text>')
        ly = MARGIN["top"] + 18 * e_i + 10
        body.append(f'<rect x="{W - MARGIN["right"] + 12}" y="{ly - 6}" width="20" height="12" fill="{color}" '
                    f'fill-opacity="0.3" stroke="{color}"/>')
        body.append(f'<text x="{W - MARGIN["right"] + 38}" y="{ly + 4}" font-family="sans-serif" '
                    f'font-size="12">{env}</text>')
    return _svg(body, title, digest)


def emit_plot(csv_path, kind: str, out_path=None, **options) -> Path:
    """Render ``csv_path`` as an SVG of the given kind; returns the output path."""
    if kind not in PLOT_KINDS:
        raise PlotError(f"no plot for kind {kind!r}; expected one of {PLOT_KINDS}")
    rows = read_csv(csv_path, kind)
    digest = hashlib.sha256(Path(csv_path).read_bytes()).hexdigest()
    render = {"curve": curve_svg, "heatmap": heatmap_svg, "box": box_svg}[kind]
    svg = render(rows, digest, **options)
    out = Path(out_path) if out_path else Path(csv_path).with_suffix(".svg")
    out.write_text(svg)
    return out
