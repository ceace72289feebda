"""
Static plots
SVG envelope heatmaps and trajectory-versus-bound overlays, plus a PNG
preview of the heatmap rendered with Pillow
"""
import io
from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image, ImageDraw, ImageFont

# Plot palette
BORDER_COLOR = '#000000'
BG_COLOR = '#fffef7'
TEXT_COLOR = '#000000'
BOUND_COLOR = '#d32f2f'
TRACE_COLOR = '#1976d2'


def _ramp(level: float) -> Tuple[int, int, int]:
    """White-to-blue ramp for levels in [0, 1]"""
    level = float(np.clip(level, 0.0, 1.0))
    return (int(round(255 - 230 * level)), int(round(255 - 137 * level)), int(round(255 - 45 * level)))


def _hex(rgb: Tuple[int, int, int]) -> str:
    return '#%02x%02x%02x' % rgb


def _normalise(values: np.ndarray) -> np.ndarray:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.zeros_like(values)
    lo, hi = float(finite.min()), float(finite.max())
    span = hi - lo if hi > lo else 1.0
    return np.where(np.isfinite(values), (values - lo) / span, 1.0)


def _fmt(v: float) -> str:
    return f'{v:.4g}'


def envelope_svg(r_grid: Sequence[float], t_grid: Sequence[float], values: np.ndarray,
                 title: str = 'Reachability envelope') -> str:
    """Heatmap of mu_hat(r, t): rows are radii (bottom to top), columns are times"""
    values = np.asarray(values, dtype=float)
    levels = _normalise(values)
    cell = 40
    margin = 70
    width = margin * 2 + cell * len(t_grid)
    height = margin * 2 + cell * len(r_grid)

    parts: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="{BG_COLOR}"/>',
        f'<text x="{width // 2}" y="30" text-anchor="middle" font-size="16" fill="{TEXT_COLOR}">'
        f'{escape(title)}</text>',
    ]
    for i, r in enumerate(r_grid):
        y = margin + cell * (len(r_grid) - 1 - i)
        for j, _ in enumerate(t_grid):
            x = margin + cell * j
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{_hex(_ramp(levels[i, j]))}"><title>mu({_fmt(r)}, {_fmt(t_grid[j])}) = '
                         f'{_fmt(values[i, j])}</title></rect>')
        parts.append(f'<text x="{margin - 6}" y="{y + cell // 2 + 4}" text-anchor="end" font-size="10" '
                     f'fill="{TEXT_COLOR}">{_fmt(r)}</text>')
    for j, t in enumerate(t_grid):
        x = margin + cell * j + cell // 2
        parts.append(f'<text x="{x}" y="{height - margin + 14}" text-anchor="middle" font-size="10" '
                     f'fill="{TEXT_COLOR}">{_fmt(t)}</text>')
    parts.append(f'<rect x="{margin}" y="{margin}" width="{cell * len(t_grid)}" height="{cell * len(r_grid)}" '
                 f'fill="none" stroke="{BORDER_COLOR}" stroke-width="2"/>')
    parts.append(f'<text x="{width // 2}" y="{height - 20}" text-anchor="middle" font-size="12" '
                 f'fill="{TEXT_COLOR}">t</text>')
    parts.append(f'<text x="20" y="{height // 2}" font-size="12" fill="{TEXT_COLOR}">r</text>')
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def overlay_svg(times: Sequence[float], bound: Sequence[float], traces: Sequence[Sequence[float]],
                title: str = 'Trajectory norms against the bound') -> str:
    """Polylines of |phi(t)| for each trace, with the bound curve on top"""
    times = np.asarray(times, dtype=float)
    bound = np.asarray(bound, dtype=float)
    series = [np.asarray(tr, dtype=float) for tr in traces]
    finite = np.concatenate([bound[np.isfinite(bound)]] + [s[np.isfinite(s)] for s in series] + [np.zeros(1)])
    y_max = float(finite.max()) or 1.0
    t_max = float(times.max()) if times.size and times.max() > 0 else 1.0
    width, height, margin = 640, 400, 60

    def point(t, y):
        px = margin + (width - 2 * margin) * t / t_max
        py = height - margin - (height - 2 * margin) * min(y, y_max) / y_max
        return f'{px:.2f},{py:.2f}'

    def polyline(ys, color, dash=''):
        pts = ' '.join(point(t, y) for t, y in zip(times, ys) if np.isfinite(y))
        extra = f' stroke-dasharray="{dash}"' if dash else ''
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="{BG_COLOR}"/>',
        f'<text x="{width // 2}" y="30" text-anchor="middle" font-size="16" fill="{TEXT_COLOR}">'
        f'{escape(title)}</text>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" height="{height - 2 * margin}" '
        f'fill="none" stroke="{BORDER_COLOR}" stroke-width="2"/>',
    ]
    for ys in series:
        parts.append(polyline(ys, TRACE_COLOR))
    parts.append(polyline(bound, BOUND_COLOR, '6,3'))
    parts.append(f'<text x="{margin}" y="{height - margin + 16}" font-size="10" fill="{TEXT_COLOR}">0</text>')
    parts.append(f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end" font-size="10" '
                 f'fill="{TEXT_COLOR}">{_fmt(t_max)}</text>')
    parts.append(f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" font-size="10" '
                 f'fill="{TEXT_COLOR}">{_fmt(y_max)}</text>')
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def envelope_image(r_grid: Sequence[float], t_grid: Sequence[float], values: np.ndarray) -> Image.Image:
    """PNG preview of the envelope heatmap"""
    values = np.asarray(values, dtype=float)
    levels = _normalise(values)
    cell = 32
    margin = 60
    width = margin * 2 + cell * len(t_grid)
    height = margin * 2 + cell * len(r_grid)
    img = Image.new('RGB', (width, height), BG_COLOR)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()

    for i in range(len(r_grid)):
        y = margin + cell * (len(r_grid) - 1 - i)
        for j in range(len(t_grid)):
            x = margin + cell * j
            draw.rectangle([x, y, x + cell, y + cell], fill=_ramp(levels[i, j]))
    draw.rectangle([margin, margin, margin + cell * len(t_grid), margin + cell * len(r_grid)],
                   outline=BORDER_COLOR, width=2)
    draw.text((margin, 20), "mu(r, t)", fill=TEXT_COLOR, font=font)
    draw.text((margin, height - margin + 8), f"t: {_fmt(t_grid[0])} .. {_fmt(t_grid[-1])}", fill=TEXT_COLOR, font=font)
    draw.text((4, margin), f"r: {_fmt(r_grid[-1])}", fill=TEXT_COLOR, font=font)
    draw.text((4, height - margin - 12), f"r: {_fmt(r_grid[0])}", fill=TEXT_COLOR, font=font)
    return img


def envelope_to_bytes(r_grid: Sequence[float], t_grid: Sequence[float], values: np.ndarray) -> bytes:
    img = envelope_image(r_grid, t_grid, values)
    img_bytes = io.BytesIO()
    img.save(img_bytes, format='PNG')
    img_bytes.seek(0)
    return img_bytes.getvalue()
