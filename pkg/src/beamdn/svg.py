"""Tiny deterministic SVG plots (no fonts or timestamps embedded)."""
from __future__ import annotations

from xml.sax.saxutils import escape

W, H = 480, 360
PAD = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _num(x: float) -> str:
    return f"{x:.3f}"


def _frame(title, xlabel, ylabel, x0, x1, y0, y1) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
        f'<text x="{PAD}" y="{H - PAD + 14}" font-size="10" text-anchor="middle">{x0:g}</text>',
        f'<text x="{W - PAD}" y="{H - PAD + 14}" font-size="10" text-anchor="middle">{x1:g}</text>',
        f'<text x="{PAD - 4}" y="{H - PAD}" font-size="10" text-anchor="end">{y0:g}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 4}" font-size="10" text-anchor="end">{y1:g}</text>',
    ]
    return out


def line_plot(series, title="", xlabel="x", ylabel="y", xlim=(0.0, 1.0), ylim=(0.0, 1.0)) -> str:
    """``series`` is a list of (label, xs, ys)."""
    x0, x1 = xlim
    y0, y1 = ylim

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (W - 2 * PAD)

    def sy(y):
        return H - PAD - (y - y0) / (y1 - y0) * (H - 2 * PAD)

    out = _frame(title, xlabel, ylabel, x0, x1, y0, y1)
    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_num(sx(float(x)))},{_num(sy(float(y)))}" for x, y in zip(xs, ys))
        if pts:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = PAD + 14 + 14 * k
        out.append(f'<text x="{W - PAD - 6}" y="{ly}" font-size="10" text-anchor="end" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(bars, title="", ylabel="AP", ymax=1.0) -> str:
    """``bars`` is a list of (label, value)."""
    out = _frame(title, "", ylabel, 0, len(bars), 0.0, ymax)
    n = max(len(bars), 1)
    slot = (W - 2 * PAD) / n
    for k, (label, value) in enumerate(bars):
        h = max(0.0, min(float(value), ymax)) / ymax * (H - 2 * PAD)
        x = PAD + k * slot + 0.15 * slot
        out.append(
            f'<rect x="{_num(x)}" y="{_num(H - PAD - h)}" width="{_num(0.7 * slot)}" height="{_num(h)}" '
            f'fill="{PALETTE[k % len(PALETTE)]}"/>'
        )
        out.append(
            f'<text x="{_num(x + 0.35 * slot)}" y="{H - PAD + 26}" font-size="10" text-anchor="middle">'
            f"{escape(label)}</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
