"""CSV to SVG line charts with fixed geometry and deterministic bytes."""

from __future__ import annotations

import math

from taskmix.errors import ConfigurationError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

WIDTH = 640
PANEL_H = 190
M_LEFT, M_RIGHT, M_TOP, M_BOT = 64, 16, 26, 34


def parse_csv(path):
    """Header plus float columns; malformed rows name their line number."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].strip():
        raise ConfigurationError(f"{path}: line 1: missing CSV header")
    header = [c.strip() for c in lines[0].split(",")]
    columns = {name: [] for name in header}
    if len(set(header)) != len(header):
        raise ConfigurationError(f"{path}: line 1: duplicate column names")
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise ConfigurationError(
                f"{path}: line {i}: expected {len(header)} cells, "
                f"got {len(cells)}")
        for name, cell in zip(header, cells):
            try:
                columns[name].append(float(cell))
            except ValueError:
                raise ConfigurationError(
                    f"{path}: line {i}: cannot parse '{cell.strip()}' as a "
                    f"number") from None
    return header, columns


def _finite(vals):
    return [v for v in vals if math.isfinite(v)]


def _span(vals):
    finite = _finite(vals)
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def _panel_groups(header):
    """Column groups rendered as separate panels, trace files special-cased."""
    if set(header) == {"step", "value", "target"}:
        return "step", [("tracking", [("value", False), ("target", True)])]
    x_name = header[0]
    rest = [c for c in header[1:]]
    returns = [c for c in rest
               if c == "meta_test_return" or c.startswith("return_")]
    losses = [c for c in rest if c.endswith("_loss")]
    other = [c for c in rest if c not in returns and c not in losses]
    panels = []
    for title, cols in (("returns", returns), ("losses", losses)):
        if cols:
            panels.append((title, [(c, False) for c in cols]))
    for c in other:
        panels.append((c, [(c, False)]))
    if not panels:
        raise ConfigurationError("CSV has no data columns to plot")
    return x_name, panels


def _polyline_runs(points):
    """Split a point list into finite runs so gaps break the line."""
    runs, current = [], []
    for x, y in points:
        if math.isfinite(x) and math.isfinite(y):
            current.append((x, y))
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    return runs


def render_svg(x_name: str, xs, panels, columns) -> str:
    height = len(panels) * PANEL_H
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
           f'height="{height}" font-family="monospace" font-size="11">',
           f'<rect width="{WIDTH}" height="{height}" fill="white"/>']
    x_lo, x_hi = _span(xs)
    plot_w = WIDTH - M_LEFT - M_RIGHT

    def px(x):
        return M_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    for p_idx, (title, series) in enumerate(panels):
        top = p_idx * PANEL_H + M_TOP
        bot = (p_idx + 1) * PANEL_H - M_BOT
        all_vals = []
        for name, _ in series:
            all_vals.extend(_finite(columns[name]))
        y_lo, y_hi = _span(all_vals)

        def py(y):
            return bot - (y - y_lo) / (y_hi - y_lo) * (bot - top)

        out.append(f'<rect x="{M_LEFT}" y="{top}" width="{plot_w}" '
                   f'height="{bot - top}" fill="none" stroke="#cccccc"/>')
        out.append(f'<text x="{M_LEFT}" y="{top - 8}" fill="#333333">'
                   f'{title}</text>')
        out.append(f'<text x="{M_LEFT - 6}" y="{top + 10}" text-anchor="end" '
                   f'fill="#666666">{y_hi:.4g}</text>')
        out.append(f'<text x="{M_LEFT - 6}" y="{bot}" text-anchor="end" '
                   f'fill="#666666">{y_lo:.4g}</text>')
        out.append(f'<text x="{M_LEFT}" y="{bot + 14}" fill="#666666">'
                   f'{x_lo:.4g}</text>')
        out.append(f'<text x="{M_LEFT + plot_w}" y="{bot + 14}" '
                   f'text-anchor="end" fill="#666666">{x_hi:.4g}</text>')
        for s_idx, (name, dashed) in enumerate(series):
            color = PALETTE[s_idx % len(PALETTE)]
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            pts = list(zip(xs, columns[name]))
            for run in _polyline_runs(pts):
                if len(run) == 1:
                    x, y = run[0]
                    out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" '
                               f'r="2" fill="{color}"/>')
                else:
                    coords = " ".join(f"{px(x):.2f},{py(y):.2f}"
                                      for x, y in run)
                    out.append(f'<polyline points="{coords}" fill="none" '
                               f'stroke="{color}" stroke-width="1.3"{dash}/>')
            lx = M_LEFT + plot_w - 8
            ly = top + 14 + 13 * s_idx
            out.append(f'<text x="{lx}" y="{ly}" text-anchor="end" '
                       f'fill="{color}">{name}</text>')
    out.append(f'<text x="{M_LEFT + plot_w // 2}" y="{height - 6}" '
               f'text-anchor="middle" fill="#666666">{x_name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_file(in_path, out_path) -> None:
    header, columns = parse_csv(in_path)
    x_name, panels = _panel_groups(header)
    svg = render_svg(x_name, columns[x_name], panels, columns)
    with open(out_path, "w") as f:
        f.write(svg)
