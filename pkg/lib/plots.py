"""
Plain SVG figures: MSE against mesh size with a one-std band per model, and node
placement/connectivity overlays for optimized meshes.
"""
from xml.sax.saxutils import escape

import numpy as np

from lib import storage
from lib.reports import EvalReport

WIDTH = 640
HEIGHT = 400
MARGIN = 60
COLORS = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b', '#17becf']


def _fmt(v):
    return f"{v:.2f}"


class _Axes:
    def __init__(self, x_range, y_range):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 1, self.x1 + 1
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 1, self.y1 + 1

    def x(self, v):
        return MARGIN + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def y(self, v):
        return HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def mse_plot_svg(summary, title='Test MSE vs mesh size'):
    """`summary` is EvalReport.summary(); models reported only at mesh_k = 1 (the
    baseline) are drawn as a horizontal line with a band across the x range."""
    models = sorted(summary['model'].unique())
    mesh_rows = summary[summary['mesh_k'] > 1]
    ks = sorted(mesh_rows['mesh_k'].unique()) or [1]
    lows = (summary['mse_mean'] - summary['mse_std']).tolist()
    highs = (summary['mse_mean'] + summary['mse_std']).tolist()
    axes = _Axes((min(ks), max(ks)), (min(0.0, min(lows, default=0.0)), max(highs, default=1.0) * 1.05))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
             f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="16">{escape(title)}</text>']
    # axes and ticks
    parts.append(f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>')
    parts.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>')
    for k in ks:
        parts.append(f'<text x="{_fmt(axes.x(k))}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" font-size="12">{int(k)}</text>')
    for v in np.linspace(axes.y0, axes.y1, 5):
        parts.append(f'<text x="{MARGIN - 6}" y="{_fmt(axes.y(v) + 4)}" text-anchor="end" font-size="11">{v:.3g}</text>')
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">mesh size k</text>')
    parts.append(f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="13" '
                 f'transform="rotate(-90 15 {HEIGHT / 2})">MSE</text>')

    for i, model in enumerate(models):
        color = COLORS[i % len(COLORS)]
        rows = summary[summary['model'] == model].sort_values('mesh_k')
        if (rows['mesh_k'] <= 1).all():
            mean = float(rows['mse_mean'].iloc[0])
            std = float(rows['mse_std'].iloc[0])
            xs = [min(ks), max(ks)]
            means, stds = [mean, mean], [std, std]
            dash = ' stroke-dasharray="6 4"'
        else:
            rows = rows[rows['mesh_k'] > 1]
            xs = rows['mesh_k'].tolist()
            means, stds = rows['mse_mean'].tolist(), rows['mse_std'].tolist()
            dash = ''
        upper = [f"{_fmt(axes.x(x))},{_fmt(axes.y(m + s))}" for x, m, s in zip(xs, means, stds)]
        lower = [f"{_fmt(axes.x(x))},{_fmt(axes.y(m - s))}" for x, m, s in zip(xs, means, stds)]
        parts.append(f'<polygon points="{" ".join(upper + lower[::-1])}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = [f"{_fmt(axes.x(x))},{_fmt(axes.y(m))}" for x, m in zip(xs, means)]
        parts.append(f'<polyline points="{" ".join(line)}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        for x, m in zip(xs, means):
            parts.append(f'<circle cx="{_fmt(axes.x(x))}" cy="{_fmt(axes.y(m))}" r="3" fill="{color}"/>')
        # legend
        ly = MARGIN + 18 * i
        parts.append(f'<rect x="{WIDTH - MARGIN - 110}" y="{ly - 9}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN - 92}" y="{ly + 2}" font-size="12">{escape(str(model))}</text>')

    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def write_mse_plot(report_paths, out_path, title='Test MSE vs mesh size'):
    report = EvalReport()
    for path in report_paths:
        report.extend(EvalReport.read_csv(path))
    storage.atomic_write_text(out_path, mse_plot_svg(report.summary(), title))
    return out_path


def mesh_overlay_svg(meshes, title='Optimized node positions'):
    """Edges and nodes of one or more unit-square meshes; `meshes` is a list of
    (label, SpatialMesh). The first mesh is drawn faint (the starting placement)."""
    size = HEIGHT

    def scale(p):
        return MARGIN + p[0] * (size - 2 * MARGIN), size - MARGIN - p[1] * (size - 2 * MARGIN)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
             f'<text x="{size / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="15">{escape(title)}</text>',
             f'<rect x="{MARGIN}" y="{MARGIN}" width="{size - 2 * MARGIN}" height="{size - 2 * MARGIN}" '
             f'fill="none" stroke="black"/>']
    for i, (label, mesh) in enumerate(meshes):
        color = COLORS[i % len(COLORS)]
        opacity = '0.35' if i == 0 and len(meshes) > 1 else '1'
        for a, b in mesh.undirected_edges():
            (x1, y1), (x2, y2) = scale(mesh.positions[a]), scale(mesh.positions[b])
            parts.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                         f'stroke="{color}" stroke-opacity="{opacity}"/>')
        for p in mesh.positions:
            cx, cy = scale(p)
            parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="4" fill="{color}" fill-opacity="{opacity}"/>')
        parts.append(f'<text x="{MARGIN}" y="{_fmt(size - MARGIN / 2 + 14 * i - 8)}" font-size="12" '
                     f'fill="{color}">{escape(str(label))}</text>')
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'
