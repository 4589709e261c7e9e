"""Field builders and random-instance generators shared across the tests."""

import numpy as np

from qvalued import GridField, GridSpec, QPoint, sqrt_field


def random_qpoint(rng, q, n, scale=1.0):
    return QPoint(rng.normal(scale=scale, size=(q, n)))


def random_qpoint_pair(rng, q, n, scale=1.0):
    return random_qpoint(rng, q, n, scale), random_qpoint(rng, q, n, scale)


def unit_square_grid(nn, half=1.0):
    h = 2.0 * half / (nn - 1)
    return GridSpec(nn, nn, h, (-half, -half))


def sqrt_grid_field(nn, half=1.0):
    return sqrt_field(unit_square_grid(nn, half))


def meshgrid_for(spec):
    xs = spec.origin[0] + spec.spacing * np.arange(spec.nx)
    ys = spec.origin[1] + spec.spacing * np.arange(spec.ny)
    return np.meshgrid(xs, ys)


def harmonic_boundary_field(nn, half=1.0):
    """Single-valued field with Re z^3 boundary data, zero interior start."""
    spec = unit_square_grid(nn, half)
    x, y = meshgrid_for(spec)
    g = x**3 - 3 * x * y**2
    vals = np.zeros((nn, nn, 1, 1))
    mask = np.zeros((nn, nn), dtype=bool)
    mask[0] = mask[-1] = True
    mask[:, 0] = mask[:, -1] = True
    vals[..., 0, 0] = np.where(mask, g, 0.0)
    return GridField(vals, spec.spacing, spec.origin), g


def two_sheet_field(nn, seed, separation=7.0, amplitude=1.0, freq=1.0, half=1.0):
    """Two smooth sheets whose projections stay disjoint on both axes."""
    rng = np.random.default_rng(seed)
    spec = unit_square_grid(nn, half)
    x, y = meshgrid_for(spec)
    a1, a2 = rng.uniform(0.6, 1.0, 2) * amplitude
    p1, p2 = rng.uniform(0, 2 * np.pi, 2)
    off = separation / np.sqrt(2.0)
    s1 = np.stack(
        [a1 * np.cos(freq * x + p1) * np.sin(freq * y), a1 * np.sin(freq * (x + y) + p2)],
        axis=-1,
    )
    s2 = np.stack(
        [off + a2 * np.sin(freq * (x - y) + p1), off + a2 * np.cos(freq * y + p2)],
        axis=-1,
    )
    return GridField(np.stack([s1, s2], axis=2), spec.spacing, spec.origin)


def noisy_copy(f, scale=0.05, seed=99):
    """Interior-noise copy of a field (boundary untouched): a non-stationary witness."""
    rng = np.random.default_rng(seed)
    g = f.copy()
    free = ~g.boundary_mask
    g.values[free] += rng.normal(scale=scale, size=g.values[free].shape)
    return g
