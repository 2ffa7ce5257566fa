"""Procedural side-view vehicle drawing.

Eight body archetypes with jittered proportions give exact ground-truth
masks by construction. The same geometry feeds the synthetic dataset
(appearance + mask), the silhouette pool (mask only), and the shape
classes used by the recognizability metric.
"""

import numpy as np

ARCHETYPES = ["sedan", "coupe", "hatchback", "suv", "pickup", "van", "bus", "semi"]
N_ARCHETYPES = len(ARCHETYPES)


def fill_polygon(h, w, pts):
    """Even-odd rasterization of a polygon given (row, col) vertices."""
    pts = np.asarray(pts, dtype=np.float64)
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    inside = np.zeros((h, w), dtype=bool)
    k = len(pts)
    for i in range(k):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % k]
        if y0 == y1:
            continue
        cond = (y0 <= yy) != (y1 <= yy)
        xint = x0 + (yy - y0) * (x1 - x0) / (y1 - y0)
        inside ^= cond & (xx < xint)
    return inside


def fill_ellipse(h, w, cy, cx, ry, rx, angle=0.0):
    yy = np.arange(h, dtype=np.float64)[:, None] - cy
    xx = np.arange(w, dtype=np.float64)[None, :] - cx
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        yy, xx = c * yy - s * xx, s * yy + c * xx
    return (yy / max(ry, 1e-6)) ** 2 + (xx / max(rx, 1e-6)) ** 2 <= 1.0


def _jit(rng, v, rel=0.06):
    return v * (1.0 + rng.uniform(-rel, rel))


def _geometry(archetype: int, rng):
    """Outline polygons, wheels, and window quads in normalized units.

    x runs 0..1 along the vehicle length, y is height above ground in the
    same unit. Wheels are (x_center, radius).
    """
    a = ARCHETYPES[archetype]
    j = lambda v, r=0.06: _jit(rng, v, r)
    ground = 0.035
    polys, windows = [], []

    if a == "bus":
        top = j(0.42)
        polys.append([(0.04, ground), (0.0, top - 0.07), (0.07, top), (0.93, top),
                      (1.0, top - 0.07), (0.96, ground)])
        for wx in np.linspace(0.12, 0.88, 5):
            windows.append([(wx - 0.055, top - 0.16), (wx - 0.055, top - 0.05),
                            (wx + 0.055, top - 0.05), (wx + 0.055, top - 0.16)])
        wheels = [(j(0.17), 0.065), (j(0.83), 0.065)]
    elif a == "van":
        body, top = j(0.16), j(0.38)
        polys.append([(0.02, ground), (0.0, body), (0.08, top - 0.04), (0.16, top),
                      (0.97, top), (1.0, body), (0.98, ground)])
        windows.append([(0.18, body + 0.04), (0.20, top - 0.045),
                        (0.34, top - 0.045), (0.34, body + 0.04)])
        windows.append([(0.38, body + 0.04), (0.38, top - 0.045),
                        (0.60, top - 0.045), (0.60, body + 0.04)])
        wheels = [(j(0.18), 0.062), (j(0.82), 0.062)]
    elif a == "semi":
        cab_top, chassis = j(0.46), j(0.14)
        polys.append([(0.03, ground), (0.02, cab_top - 0.05), (0.07, cab_top),
                      (0.33, cab_top), (0.36, j(0.24)), (0.40, chassis),
                      (0.98, chassis), (0.98, ground)])
        polys.append([(0.42, chassis), (0.42, j(0.30)), (0.97, j(0.30)),
                      (0.97, chassis)])
        windows.append([(0.09, 0.26), (0.10, cab_top - 0.04),
                        (0.26, cab_top - 0.04), (0.26, 0.26)])
        wheels = [(j(0.14), 0.065), (j(0.55), 0.06), (j(0.76), 0.06)]
    elif a == "pickup":
        body, cab_top = j(0.18), j(0.33)
        bed = j(0.22)
        polys.append([(0.02, ground), (0.0, body - 0.03), (0.06, body), (0.24, body),
                      (0.30, cab_top), (0.52, cab_top), (0.56, bed), (0.98, bed),
                      (1.0, body - 0.05), (0.98, ground)])
        windows.append([(0.32, body + 0.02), (0.35, cab_top - 0.035),
                        (0.48, cab_top - 0.035), (0.48, body + 0.02)])
        wheels = [(j(0.16), 0.07), (j(0.8), 0.07)]
    elif a == "suv":
        body, top = j(0.20), j(0.40)
        polys.append([(0.02, ground), (0.0, body - 0.04), (0.05, body), (0.22, body + 0.02),
                      (0.30, top), (0.88, top), (0.97, body + 0.02), (1.0, body - 0.04),
                      (0.98, ground)])
        windows.append([(0.33, body + 0.045), (0.36, top - 0.04),
                        (0.55, top - 0.04), (0.55, body + 0.045)])
        windows.append([(0.59, body + 0.045), (0.59, top - 0.04),
                        (0.82, top - 0.04), (0.84, body + 0.045)])
        wheels = [(j(0.17), 0.075), (j(0.83), 0.075)]
    elif a == "hatchback":
        body, top = j(0.17), j(0.35)
        polys.append([(0.02, ground), (0.0, body - 0.03), (0.07, body), (0.28, body),
                      (0.40, top), (0.80, top), (0.93, body + 0.03), (0.96, body - 0.03),
                      (0.94, ground)])
        windows.append([(0.42, body + 0.03), (0.46, top - 0.035),
                        (0.62, top - 0.035), (0.62, body + 0.03)])
        windows.append([(0.66, body + 0.03), (0.66, top - 0.035),
                        (0.78, top - 0.035), (0.82, body + 0.03)])
        wheels = [(j(0.18), 0.072), (j(0.80), 0.072)]
    elif a == "coupe":
        body, top = j(0.15), j(0.30)
        polys.append([(0.02, ground), (0.0, body - 0.03), (0.10, body - 0.01),
                      (0.34, body), (0.48, top), (0.70, top), (0.88, body + 0.01),
                      (1.0, body - 0.02), (0.98, ground)])
        windows.append([(0.50, body + 0.025), (0.54, top - 0.03),
                        (0.66, top - 0.03), (0.70, body + 0.025)])
        wheels = [(j(0.18), 0.068), (j(0.82), 0.068)]
    else:  # sedan
        body, top = j(0.17), j(0.33)
        polys.append([(0.02, ground), (0.0, body - 0.03), (0.08, body), (0.30, body + 0.01),
                      (0.40, top), (0.72, top), (0.84, body + 0.01), (1.0, body - 0.02),
                      (0.98, ground)])
        windows.append([(0.42, body + 0.035), (0.45, top - 0.035),
                        (0.55, top - 0.035), (0.55, body + 0.035)])
        windows.append([(0.58, body + 0.035), (0.58, top - 0.035),
                        (0.68, top - 0.035), (0.71, body + 0.035)])
        wheels = [(j(0.19), 0.07), (j(0.81), 0.07)]
    return polys, wheels, windows


def _rasterize(h, w, polys, wheels, windows, length_px, ground_row, x0, flip):
    def to_px(pts):
        out = []
        for x, y in pts:
            if flip:
                x = 1.0 - x
            out.append((ground_row - y * length_px, x0 + x * length_px))
        return out

    mask = np.zeros((h, w), dtype=bool)
    for poly in polys:
        mask |= fill_polygon(h, w, to_px(poly))
    wheel_mask = np.zeros((h, w), dtype=bool)
    for wx, r in wheels:
        cx = x0 + ((1.0 - wx) if flip else wx) * length_px
        wheel_mask |= fill_ellipse(h, w, ground_row - r * length_px, cx,
                                   r * length_px, r * length_px)
    window_mask = np.zeros((h, w), dtype=bool)
    for quad in windows:
        window_mask |= fill_polygon(h, w, to_px(quad))
    full = mask | wheel_mask
    return full, wheel_mask, window_mask & mask


def sample_pose(h, w, rng, max_len_frac=0.85, min_len_frac=0.5):
    length_px = rng.uniform(min_len_frac, max_len_frac) * w
    # archetype heights stay below ~0.6 * length
    ground_row = rng.uniform(0.62, 0.92) * h
    x0 = rng.uniform(0.02 * w, w - length_px - 0.02 * w)
    flip = bool(rng.random() < 0.5)
    return length_px, ground_row, x0, flip


def draw_vehicle(h, w, rng, archetype=None):
    """Render a vehicle; returns (rgb (H,W,3), mask (H,W,1), archetype)."""
    if archetype is None:
        archetype = int(rng.integers(N_ARCHETYPES))
    polys, wheels, windows = _geometry(archetype, rng)
    pose = sample_pose(h, w, rng)
    full, wheel_m, win_m = _rasterize(h, w, polys, wheels, windows, *pose)

    body_color = rng.uniform(0.15, 0.95, size=3)
    window_color = np.array([0.25, 0.32, 0.42]) * rng.uniform(0.7, 1.3)
    wheel_color = np.full(3, rng.uniform(0.05, 0.2))

    rgb = np.zeros((h, w, 3), dtype=np.float64)
    rgb[full] = body_color
    rgb[win_m] = np.clip(window_color, 0, 1)
    rgb[wheel_m] = wheel_color
    # vertical shading plus texture noise, confined to the vehicle
    shade = 1.0 - 0.25 * (np.arange(h) / max(h - 1, 1))[:, None, None]
    noise = rng.normal(0.0, 0.02, size=(h, w, 3))
    rgb = np.where(full[:, :, None], np.clip(rgb * shade + noise, 0, 1), rgb)
    return rgb.astype(np.float32), full.astype(np.float32)[:, :, None], archetype


def vehicle_silhouette(h, w, rng, archetype=None):
    """Mask-only rendering used to populate the silhouette pool."""
    if archetype is None:
        archetype = int(rng.integers(N_ARCHETYPES))
    polys, wheels, windows = _geometry(archetype, rng)
    pose = sample_pose(h, w, rng, max_len_frac=0.95, min_len_frac=0.6)
    full, _, _ = _rasterize(h, w, polys, wheels, windows, *pose)
    return full.astype(np.float32)[:, :, None]


def draw_background(h, w, rng):
    """Simple sky/ground scene with soft blobs; values on the 8-bit grid later."""
    horizon = rng.uniform(0.4, 0.7)
    sky_top = rng.uniform(0.55, 0.95, size=3)
    sky_bot = sky_top * rng.uniform(0.7, 1.0)
    ground_c = rng.uniform(0.25, 0.6, size=3)
    ty = np.arange(h)[:, None, None] / max(h - 1, 1)
    img = np.where(ty < horizon,
                   sky_top + (sky_bot - sky_top) * ty / max(horizon, 1e-6),
                   ground_c * (1.0 - 0.3 * (ty - horizon)))
    img = np.broadcast_to(img, (h, w, 3)).copy()
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.05, 0.25) * h, rng.uniform(0.05, 0.3) * w
        blob = fill_ellipse(h, w, cy, cx, ry, rx)
        img[blob] = np.clip(img[blob] * rng.uniform(0.8, 1.2)
                            + rng.uniform(-0.08, 0.08, size=3), 0, 1)
    img += rng.normal(0, 0.01, size=(h, w, 3))
    return np.clip(img, 0, 1).astype(np.float32)
