"""Value-plus-gradient helpers for box quantities.

Each function returns the quantity together with its partial derivatives with
respect to the four corner coordinates (x1, y1, x2, y2) of the *proposal*
box. Reference boxes are constants. At kinks (ties in min/max, clamp
boundaries) the derivative is the zero subgradient; callers detect proximity
separately.
"""

from __future__ import annotations

import math

from .geometry import BBox

Grad4 = tuple[float, float, float, float]

ZERO4: Grad4 = (0.0, 0.0, 0.0, 0.0)


def _sign(x: float) -> float:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


def iou_and_grad(g: BBox, p: BBox) -> tuple[float, Grad4]:
    """IoU(g, p) and its gradient with respect to p's coordinates."""
    ix1 = max(g.x1, p.x1)
    iy1 = max(g.y1, p.y1)
    ix2 = min(g.x2, p.x2)
    iy2 = min(g.y2, p.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0, ZERO4
    inter = iw * ih
    union = g.area + p.area - inter

    d_inter = (
        -ih if p.x1 > g.x1 else 0.0,
        -iw if p.y1 > g.y1 else 0.0,
        ih if p.x2 < g.x2 else 0.0,
        iw if p.y2 < g.y2 else 0.0,
    )
    w, h = p.width, p.height
    d_area = (-h, -w, h, w)
    inv_u2 = 1.0 / (union * union)
    grad = tuple(
        (d_inter[k] * union - inter * (d_area[k] - d_inter[k])) * inv_u2 for k in range(4)
    )
    return inter / union, grad  # type: ignore[return-value]


def border_distance_and_grad(g: BBox, p: BBox) -> tuple[float, Grad4]:
    """The border-distance factor s(g, center(p)) and its gradient wrt p.

    Inside a clamped region (a factor pinned at 0) the gradient is zero; at
    s == 0 the square root is non-differentiable and the zero subgradient is
    used.
    """
    cx = (p.x1 + p.x2) / 2.0
    cy = (p.y1 + p.y2) / 2.0
    fx, dfx_dc = _factor_and_grad(cx, g.x1, g.x2)
    fy, dfy_dc = _factor_and_grad(cy, g.y1, g.y2)
    s = math.sqrt(fx * fy)
    if s == 0.0:
        return 0.0, ZERO4
    ds_dcx = dfx_dc * fy / (2.0 * s)
    ds_dcy = fx * dfy_dc / (2.0 * s)
    return s, (0.5 * ds_dcx, 0.5 * ds_dcy, 0.5 * ds_dcx, 0.5 * ds_dcy)


def _factor_and_grad(c: float, lo: float, hi: float) -> tuple[float, float]:
    half = (hi - lo) / 2.0
    d_lo = abs(c - lo)
    d_hi = abs(c - hi)
    raw = 1.0 - min(d_lo, d_hi) / half
    if raw <= 0.0:
        return 0.0, 0.0
    if d_lo <= d_hi:
        dmin_dc = _sign(c - lo)
    else:
        dmin_dc = _sign(c - hi)
    return min(1.0, raw), -dmin_dc / half


def cos_angle_and_grad(
    vx_ref: float, vy_ref: float, vertex_x: float, vertex_y: float, p: BBox
) -> tuple[float, Grad4]:
    """cos of the angle at (vertex) between center(p) and a fixed reference.

    ``(vx_ref, vy_ref)`` is the fixed ray from the vertex toward the second
    point. Returns 1 with zero gradient for a degenerate (zero-length) ray.
    """
    ax = (p.x1 + p.x2) / 2.0
    ay = (p.y1 + p.y2) / 2.0
    ux = ax - vertex_x
    uy = ay - vertex_y
    nu = math.hypot(ux, uy)
    nv = math.hypot(vx_ref, vy_ref)
    if nu == 0.0 or nv == 0.0:
        return 1.0, ZERO4
    dot = ux * vx_ref + uy * vy_ref
    cos = dot / (nu * nv)
    dcos_dax = vx_ref / (nu * nv) - dot * ux / (nu**3 * nv)
    dcos_day = vy_ref / (nu * nv) - dot * uy / (nu**3 * nv)
    cos = max(-1.0, min(1.0, cos))
    return cos, (0.5 * dcos_dax, 0.5 * dcos_day, 0.5 * dcos_dax, 0.5 * dcos_day)
