"""SVG renderings of two-dimensional hierarchical meshes.

One rectangle per active cell, outlined with a stroke that thins with the
level; an optional overlay mark set is drawn shaded underneath.  The unit
square maps to a fixed pixel frame with the y axis pointing up.
"""

SIZE = 1024
_FILL = "#f4a743"


def _rect(x, y, w, h, style):
    return '<rect x="%.2f" y="%.2f" width="%.2f" height="%.2f" %s/>' % (
        x, y, w, h, style)


def _cell_box(cell, n0):
    n = n0 * (1 << cell.level)
    side = SIZE / n
    x = cell.k[0] * side
    # svg y grows downward; flip so k[1] = 0 sits at the bottom
    y = SIZE - (cell.k[1] + 1) * side
    return x, y, side


def render_mesh_svg(mesh, overlay=None):
    """SVG document for a d=2 mesh, optionally shading `overlay` cells.

    overlay may be a MarkSet or any iterable of cells; shaded boxes are
    drawn first so every active-cell outline stays visible.
    """
    if mesh.dim != 2:
        raise ValueError("can only render two-dimensional meshes")
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d" style="background:white">'
        % (SIZE, SIZE, SIZE, SIZE),
    ]
    if overlay is not None:
        cells = overlay.all_cells() if hasattr(overlay, "all_cells") else overlay
        for cell in cells:
            x, y, side = _cell_box(cell, mesh.n0)
            parts.append(_rect(x, y, side, side,
                               'fill="%s" fill-opacity="0.55"' % _FILL))
    for level in range(mesh.depth):
        width = max(2.4 / (1 << level), 0.4)
        style = ('fill="none" stroke="black" stroke-width="%.2f"' % width)
        for cell in mesh.active_cells(level):
            x, y, side = _cell_box(cell, mesh.n0)
            parts.append(_rect(x, y, side, side, style))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
