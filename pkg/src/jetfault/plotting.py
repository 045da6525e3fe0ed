"""Minimal deterministic SVG line plots for telemetry run sets.

Three panels per run set: turbine thrusts, momentum error norm and joint
error norm. Error panels draw the per-tick mean as a thick line over a shaded
band reaching up to the per-tick maximum across repeats.
"""

from pathlib import Path

import numpy as np

from . import telemetry as tl

WIDTH, HEIGHT = 720, 300
MARGIN = dict(left=64, right=16, top=28, bottom=40)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + 1e-9 * step, step)]


class Axes:
    def __init__(self, x_range, y_range, title, ylabel):
        self.x0, self.x1 = x_range
        y0, y1 = y_range
        if y1 <= y0:
            y1 = y0 + 1.0
        self.y0, self.y1 = y0, y1
        self.title, self.ylabel = title, ylabel
        self.items = []

    def px(self, x):
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + w * (np.asarray(x) - self.x0) / (self.x1 - self.x0)

    def py(self, y):
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return MARGIN["top"] + h * (1.0 - (np.asarray(y) - self.y0) / (self.y1 - self.y0))

    @staticmethod
    def _points(xs, ys):
        ok = np.isfinite(xs) & np.isfinite(ys)
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs[ok], ys[ok]))

    def line(self, x, y, color, width=1.0, label=None):
        self.items.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{self._points(self.px(x), self.py(y))}"/>'
        )
        if label:
            self._legend(label, color)

    def band(self, x, lo, hi, color, opacity=0.25, label=None):
        xs = np.concatenate([x, x[::-1]])
        ys = np.concatenate([hi, lo[::-1]])
        self.items.append(
            f'<polygon fill="{color}" fill-opacity="{opacity}" stroke="none" points="{self._points(self.px(xs), self.py(ys))}"/>'
        )
        if label:
            self._legend(label, color, opacity)

    def _legend(self, label, color, opacity=1.0):
        k = sum(1 for it in self.items if it.startswith("<!--legend"))
        x = WIDTH - MARGIN["right"] - 150
        y = MARGIN["top"] + 14 + 16 * k
        self.items.append(
            f'<!--legend--><line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{color}" stroke-opacity="{opacity}" stroke-width="3"/>'
            f'<text x="{x + 24}" y="{y}" font-size="11">{label}</text>'
        )

    def render(self):
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
            'font-family="sans-serif">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.1f}" y="18" font-size="13" text-anchor="middle">{self.title}</text>',
        ]
        left, bottom = MARGIN["left"], HEIGHT - MARGIN["bottom"]
        for v in _nice_ticks(self.x0, self.x1, 8):
            x = float(self.px(v))
            out.append(f'<line x1="{x:.2f}" y1="{MARGIN["top"]}" x2="{x:.2f}" y2="{bottom}" stroke="#ddd"/>')
            out.append(f'<text x="{x:.2f}" y="{bottom + 14}" font-size="10" text-anchor="middle">{v:g}</text>')
        for v in _nice_ticks(self.y0, self.y1, 5):
            y = float(self.py(v))
            out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{WIDTH - MARGIN["right"]}" y2="{y:.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{left - 6}" y="{y + 3:.2f}" font-size="10" text-anchor="end">{v:g}</text>')
        out.append(f'<rect x="{left}" y="{MARGIN["top"]}" width="{WIDTH - left - MARGIN["right"]}" '
                   f'height="{bottom - MARGIN["top"]}" fill="none" stroke="black"/>')
        out.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 6}" font-size="11" text-anchor="middle">time [s]</text>')
        out.append(f'<text x="14" y="{HEIGHT / 2:.1f}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">{self.ylabel}</text>')
        out += self.items
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _y_range(*arrays):
    vals = np.concatenate([np.ravel(a) for a in arrays])
    vals = vals[np.isfinite(vals)]
    if not len(vals):
        return 0.0, 1.0
    lo, hi = min(0.0, vals.min()), vals.max()
    return lo, hi + 0.05 * (hi - lo + 1e-12)


def thrust_plot(logs):
    t, _ = tl.envelopes(logs, ())
    names = [c[len("thrust_"):] for c in logs[0].columns if c.startswith("thrust_") and not c.startswith("thrust_cmd_")]
    means = []
    for n in names:
        _, env = tl.envelopes(logs, (f"thrust_{n}",))
        means.append(env[f"thrust_{n}"][0])
    ax = Axes((t[0], t[-1]), _y_range(*means), "Turbine thrust (mean over runs)", "thrust [N]")
    for k, (n, m) in enumerate(zip(names, means)):
        ax.line(t, m, PALETTE[k % len(PALETTE)], 1.5, n)
    return ax.render()


def envelope_plot(logs, signal, title, ylabel, color="#1f77b4"):
    t, env = tl.envelopes(logs, (signal,))
    mean, mx = env[signal]
    ax = Axes((t[0], t[-1]), _y_range(mean, mx), title, ylabel)
    ax.band(t, mean, mx, color, label="max over runs")
    ax.line(t, mean, color, 2.5, "mean")
    return ax.render()


def plot_run_set(logs, out_dir, prefix=""):
    """Write the three panels; returns the written paths."""
    tl.check_compatible(logs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    panels = {
        "thrusts": thrust_plot(logs),
        "momentum_error": envelope_plot(logs, "momentum_error_norm", "Momentum error norm", "|L - L_d|"),
        "joint_error": envelope_plot(logs, "joint_error_norm", "Joint position error norm", "|s - s_d| [rad]", "#d62728"),
    }
    paths = []
    for name, svg in panels.items():
        p = out_dir / f"{prefix}{name}.svg"
        p.write_text(svg)
        paths.append(p)
    return paths
