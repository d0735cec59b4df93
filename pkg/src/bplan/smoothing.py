"""Cubic Bezier chains through the global path's knots."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFewWaypoints
from .occupancy import collides_spheres

TENSION = 1.0 / 3.0


@dataclass
class SmoothPath:
    control: np.ndarray  # (segments, 4, 3): P0..P3 per segment
    tension: float = TENSION

    @property
    def segments(self):
        return len(self.control)


def bezier(ctrl, t):
    """Evaluate one segment at parameters ``t`` via the Bernstein form."""
    t = np.asarray(t, dtype=float)[:, None]
    s = 1.0 - t
    return s**3 * ctrl[0] + 3 * s**2 * t * ctrl[1] + 3 * s * t**2 * ctrl[2] + t**3 * ctrl[3]


def de_casteljau(ctrl, t):
    pts = [np.asarray(c, dtype=float) for c in ctrl]
    while len(pts) > 1:
        pts = [(1 - t) * a + t * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


def fit_bezier_chain(path, tension=TENSION):
    """Catmull-Rom style tangents; one C1-continuous segment per knot pair."""
    if not 0 < tension <= 0.5:
        raise ValueError("tension must lie in (0, 0.5]")
    knots = np.asarray(path, dtype=float)
    if len(knots) < 2:
        raise TooFewWaypoints("need at least two waypoints")
    tangents = np.empty_like(knots)
    tangents[0] = knots[1] - knots[0]
    tangents[-1] = knots[-1] - knots[-2]
    tangents[1:-1] = (knots[2:] - knots[:-2]) / 2
    p0, p3 = knots[:-1], knots[1:]
    p1 = p0 + tension * tangents[:-1]
    p2 = p3 - tension * tangents[1:]
    return SmoothPath(np.stack([p0, p1, p2, p3], axis=1), tension)


def sample_curve(smooth, n_per_segment):
    """Uniform-in-t samples; joints appear once (end of one == start of next)."""
    if n_per_segment < 2:
        raise ValueError("n_per_segment must be >= 2")
    t = np.linspace(0.0, 1.0, n_per_segment)
    out = [bezier(smooth.control[0], t)]
    for ctrl in smooth.control[1:]:
        out.append(bezier(ctrl, t)[1:])
    return np.concatenate(out)


def max_speed(ctrl):
    """Upper bound on |dB/dt|: the derivative is a quadratic Bezier on 3*(P[i+1]-P[i])."""
    return 3.0 * float(np.linalg.norm(np.diff(ctrl, axis=0), axis=1).max())


def sample_at_spacing(smooth, delta):
    """Samples whose consecutive distance along the curve is at most ``delta``."""
    pts = []
    for ctrl in smooth.control:
        n = max(2, int(np.ceil(max_speed(ctrl) / delta)) + 1)
        pts.append(bezier(ctrl, np.linspace(0.0, 1.0, n)))
    return np.concatenate(pts)


def validate_smooth(smooth, omap, delta, ee_radius):
    return not collides_spheres(omap, sample_at_spacing(smooth, delta), ee_radius).any()


def smooth_or_fallback(path, omap, delta, ee_radius, tension=TENSION, n_per_segment=10):
    """Smoothed samples if collision-free, else the original polyline."""
    sm = fit_bezier_chain(path, tension)
    if validate_smooth(sm, omap, delta, ee_radius):
        return sample_curve(sm, n_per_segment), True
    return np.asarray(path, dtype=float), False


def save_smooth(path_pts, segments, tension, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# segments={segments} tension={tension:.9g}\n")
        for p in path_pts:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
