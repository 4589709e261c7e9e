"""Discretised Q-tuple fields on rectangular 2-D grids.

The Dirichlet energy is cell-integrated from the four edge differences of
the embedded field (each axis difference averaged over the cell's two
parallel edges); the matched variant replaces the embedded edge difference
by the assignment distance on the same stencil, so the two agree exactly
whenever the per-axis sorted matchings realise the optimal matchings.

Minimisation alternates per-edge optimal matchings with damped Jacobi
sweeps on the resulting decoupled quadratic; each half step is a descent
step of the matched energy, so the iteration is monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .embedding import ProjectionFrame
from .qspace import EXHAUSTIVE_MAX_SHEETS, QPoint, _permutation_table, metric_g_many

#: default circle-slice constant (the classical Courant-Lebesgue shape)
DEFAULT_C_CL = math.sqrt(4.0 * math.pi / math.log(2.0))


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    spacing: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidInputError("grid needs at least 2 nodes per axis")
        if self.spacing <= 0:
            raise InvalidInputError("spacing must be positive")


@dataclass(eq=False)
class GridField:
    """Node values (ny, nx, Q, n) with spacing, origin and a Dirichlet mask.

    ``boundary_mask`` is True where node values are fixed; the grid rim must
    always be masked.  Node (iy, ix) sits at origin + (ix*h, iy*h).
    """

    values: np.ndarray
    spacing: float
    origin: tuple[float, float] = (0.0, 0.0)
    boundary_mask: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 4:
            raise InvalidInputError("values must have shape (ny, nx, Q, n)")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("field values must be finite")
        if self.spacing <= 0:
            raise InvalidInputError("spacing must be positive")
        self.values = vals
        ny, nx = vals.shape[:2]
        if self.boundary_mask is None:
            mask = np.zeros((ny, nx), dtype=bool)
            mask[0, :] = mask[-1, :] = True
            mask[:, 0] = mask[:, -1] = True
        else:
            mask = np.asarray(self.boundary_mask, dtype=bool)
            if mask.shape != (ny, nx):
                raise InvalidInputError("boundary_mask shape must match the grid")
            if not (mask[0].all() and mask[-1].all() and mask[:, 0].all() and mask[:, -1].all()):
                raise InvalidInputError("boundary_mask must be True on the grid rim")
        self.boundary_mask = mask
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def q_sheets(self) -> int:
        return self.values.shape[2]

    @property
    def n(self) -> int:
        return self.values.shape[3]

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.spacing * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.spacing * np.arange(self.ny)

    def node_position(self, node: tuple[int, int]) -> np.ndarray:
        iy, ix = node
        return np.array([self.origin[0] + ix * self.spacing, self.origin[1] + iy * self.spacing])

    def node_value(self, node: tuple[int, int]) -> QPoint:
        return QPoint(self.values[node[0], node[1]].copy())

    def copy(self) -> "GridField":
        return GridField(self.values.copy(), self.spacing, self.origin, self.boundary_mask.copy())

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "x0": self.origin[0],
            "y0": self.origin[1],
            "h": self.spacing,
            "Q": self.q_sheets,
            "n": self.n,
            "values": self.values.tolist(),
            "boundary_mask": self.boundary_mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridField":
        vals = np.asarray(d["values"], dtype=np.float64)
        expect = (int(d["ny"]), int(d["nx"]), int(d["Q"]), int(d["n"]))
        if vals.shape != expect:
            raise InvalidInputError(f"values shape {vals.shape} does not match header {expect}")
        mask = np.asarray(d["boundary_mask"], dtype=bool)
        return cls(vals, float(d["h"]), (float(d["x0"]), float(d["y0"])), mask)


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    per_cell: np.ndarray  # (ny-1, nx-1)


def _check_frame(f: GridField, frame: ProjectionFrame):
    if frame.n != f.n or frame.q_sheets != f.q_sheets:
        raise InvalidInputError("frame does not match the field's (Q, n)")


def embed_grid(f: GridField, frame: ProjectionFrame) -> np.ndarray:
    """Embedded field: per-axis sorted projections, shape (ny, nx, n*Q)."""
    _check_frame(f, frame)
    axes = frame.directions[: frame.n]
    proj = np.einsum("an,yxqn->yxaq", axes, f.values)
    return np.sort(proj, axis=-1).reshape(f.ny, f.nx, f.n * f.q_sheets)


def embedded_energy(farr: np.ndarray, spacing: float) -> EnergyBreakdown:
    """Cell-integrated squared-gradient energy of an (ny, nx, m) array."""
    ex = farr[:, 1:] - farr[:, :-1]
    ey = farr[1:, :] - farr[:-1, :]
    gx2 = np.einsum("...k,...k->...", ex, ex)  # (ny, nx-1)
    gy2 = np.einsum("...k,...k->...", ey, ey)  # (ny-1, nx)
    per_cell = 0.5 * (gx2[:-1] + gx2[1:]) + 0.5 * (gy2[:, :-1] + gy2[:, 1:])
    return EnergyBreakdown(float(per_cell.sum()), per_cell)


def dirichlet_energy(f: GridField, frame: ProjectionFrame) -> EnergyBreakdown:
    """Dirichlet energy of the embedded field."""
    return embedded_energy(embed_grid(f, frame), f.spacing)


def _edge_assignment_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared assignment distance between tuple arrays a, b of shape (..., Q, n)."""
    q = a.shape[-2]
    if q > EXHAUSTIVE_MAX_SHEETS:
        d = metric_g_many_pairwise(a, b)
        return d**2
    perms = _permutation_table(q)
    cand = b[..., perms, :]
    delta = a[..., None, :, :] - cand
    cost = np.einsum("...ijk,...ijk->...i", delta, delta)
    return cost.min(axis=-1)


def metric_g_many_pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise assignment distances for equal-shaped tuple batches."""
    from scipy.optimize import linear_sum_assignment

    flat_a = a.reshape(-1, *a.shape[-2:])
    flat_b = b.reshape(-1, *b.shape[-2:])
    out = np.empty(flat_a.shape[0])
    for k in range(flat_a.shape[0]):
        diff = flat_a[k][:, None, :] - flat_b[k][None, :, :]
        cost = np.einsum("ijk,ijk->ij", diff, diff)
        rows, cols = linear_sum_assignment(cost)
        out[k] = math.sqrt(cost[rows, cols].sum())
    return out.reshape(a.shape[:-2])


def dirichlet_energy_matched(f: GridField) -> EnergyBreakdown:
    """Edge-matched twin of `dirichlet_energy` on the identical stencil.

    Uses the assignment distance per grid edge in place of the embedded edge
    difference; equals `dirichlet_energy` exactly when sorted and optimal
    matchings coincide on every edge.
    """
    v = f.values
    gx2 = _edge_assignment_sq(v[:, :-1], v[:, 1:])
    gy2 = _edge_assignment_sq(v[:-1, :], v[1:, :])
    per_cell = 0.5 * (gx2[:-1] + gx2[1:]) + 0.5 * (gy2[:, :-1] + gy2[:, 1:])
    return EnergyBreakdown(float(per_cell.sum()), per_cell)


def _edge_perms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Optimal permutation per edge: b[perm] pairs with a sheet-by-sheet."""
    q = a.shape[-2]
    if q > EXHAUSTIVE_MAX_SHEETS:
        from scipy.optimize import linear_sum_assignment

        flat_a = a.reshape(-1, q, a.shape[-1])
        flat_b = b.reshape(-1, q, b.shape[-1])
        out = np.empty((flat_a.shape[0], q), dtype=np.intp)
        for k in range(flat_a.shape[0]):
            diff = flat_a[k][:, None, :] - flat_b[k][None, :, :]
            cost = np.einsum("ijk,ijk->ij", diff, diff)
            rows, cols = linear_sum_assignment(cost)
            out[k] = cols
        return out.reshape(*a.shape[:-2], q)
    perms = _permutation_table(q)
    cand = b[..., perms, :]
    delta = a[..., None, :, :] - cand
    cost = np.einsum("...ijk,...ijk->...i", delta, delta)
    return perms[np.argmin(cost, axis=-1)]


@dataclass
class MinimizeOptions:
    max_iters: int = 200
    tol_rel_energy: float = 1e-12
    seed: int = 0            # reserved; the scheme is deterministic
    inner_sweeps: int = 40
    damping: float = 0.8


@dataclass
class MinimizeResult:
    field: GridField
    energies: np.ndarray   # matched energy after each outer iteration (incl. start)
    iterations: int
    converged: bool


def minimize(f: GridField, opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Relax interior nodes toward a discrete Dirichlet minimiser.

    Outer loop: freeze per-edge optimal matchings (a majorising quadratic),
    run damped Jacobi sweeps on it, re-match.  The matched energy never
    increases across outer iterations.
    """
    opts = opts or MinimizeOptions()
    if not 0 < opts.damping <= 1:
        raise InvalidInputError("damping must lie in (0, 1]")
    g = f.copy()
    v = g.values
    ny, nx = g.ny, g.nx
    free = ~g.boundary_mask
    wx = np.ones((ny, nx - 1))
    wx[0] = 0.5
    wx[-1] = 0.5
    wy = np.ones((ny - 1, nx))
    wy[:, 0] = 0.5
    wy[:, -1] = 0.5
    wss = wx[..., None, None], wy[..., None, None]

    e_prev = dirichlet_energy_matched(g).total
    history = [e_prev]
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        px = _edge_perms(v[:, :-1], v[:, 1:])
        py = _edge_perms(v[:-1, :], v[1:, :])
        ipx = np.argsort(px, axis=-1)
        ipy = np.argsort(py, axis=-1)
        for _ in range(opts.inner_sweeps):
            num = np.zeros_like(v)
            den = np.zeros((ny, nx))
            num[:, :-1] += wss[0] * np.take_along_axis(v[:, 1:], px[..., None], -2)
            den[:, :-1] += wx
            num[:, 1:] += wss[0] * np.take_along_axis(v[:, :-1], ipx[..., None], -2)
            den[:, 1:] += wx
            num[:-1] += wss[1] * np.take_along_axis(v[1:, :], py[..., None], -2)
            den[:-1] += wy
            num[1:] += wss[1] * np.take_along_axis(v[:-1, :], ipy[..., None], -2)
            den[1:] += wy
            target = num / den[..., None, None]
            v[free] = (1 - opts.damping) * v[free] + opts.damping * target[free]
        e = dirichlet_energy_matched(g).total
        if not math.isfinite(e):
            raise NumericalFailureError("non-finite energy during minimisation")
        history.append(e)
        if e_prev - e <= opts.tol_rel_energy * max(e_prev, 1e-300):
            converged = True
            break
        e_prev = e
    return MinimizeResult(g, np.array(history), it, converged)


def sqrt_field(spec: GridSpec) -> GridField:
    """The two-valued square-root field: both complex square roots per node."""
    xs = spec.origin[0] + spec.spacing * np.arange(spec.nx)
    ys = spec.origin[1] + spec.spacing * np.arange(spec.ny)
    x, y = np.meshgrid(xs, ys)
    w = np.sqrt(x + 1j * y)
    v = np.empty((spec.ny, spec.nx, 2, 2))
    v[..., 0, 0] = w.real
    v[..., 0, 1] = w.imag
    v[..., 1, 0] = -w.real
    v[..., 1, 1] = -w.imag
    return GridField(v, spec.spacing, spec.origin)


def bilinear_embedded(f: GridField, frame: ProjectionFrame, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the embedded field at points (..., 2).

    Interpolating the sorted blocks keeps each block sorted, so the result is
    a valid embedded value wherever the field's sheets vary continuously.
    """
    farr = embed_grid(f, frame)
    return bilinear_array(farr, f, pts)


def bilinear_array(arr: np.ndarray, f: GridField, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a nodal array (ny, nx, m) at physical points."""
    pts = np.asarray(pts, dtype=np.float64)
    gx = (pts[..., 0] - f.origin[0]) / f.spacing
    gy = (pts[..., 1] - f.origin[1]) / f.spacing
    if np.any(gx < -1e-9) or np.any(gx > f.nx - 1 + 1e-9) or np.any(gy < -1e-9) or np.any(
        gy > f.ny - 1 + 1e-9
    ):
        raise InvalidInputError("interpolation point outside the grid")
    i0 = np.clip(np.floor(gx).astype(np.intp), 0, f.nx - 2)
    j0 = np.clip(np.floor(gy).astype(np.intp), 0, f.ny - 2)
    tx = (gx - i0)[..., None]
    ty = (gy - j0)[..., None]
    return (
        arr[j0, i0] * (1 - tx) * (1 - ty)
        + arr[j0, i0 + 1] * tx * (1 - ty)
        + arr[j0 + 1, i0] * (1 - tx) * ty
        + arr[j0 + 1, i0 + 1] * tx * ty
    )


def disc_energy(f: GridField, frame: ProjectionFrame, w0: tuple[float, float], r: float) -> float:
    """Energy restricted to cells whose centers lie in the disc U_r(w0)."""
    br = dirichlet_energy(f, frame)
    return _disc_cell_sum(br.per_cell, f, w0, r)


def _disc_cell_sum(per_cell: np.ndarray, f: GridField, w0: tuple[float, float], r: float) -> float:
    cx = f.origin[0] + f.spacing * (np.arange(f.nx - 1) + 0.5)
    cy = f.origin[1] + f.spacing * (np.arange(f.ny - 1) + 0.5)
    gx, gy = np.meshgrid(cx, cy)
    mask = (gx - w0[0]) ** 2 + (gy - w0[1]) ** 2 <= r**2
    return float(per_cell[mask].sum())


def _require_disc_inside(f: GridField, w0: tuple[float, float], r: float):
    x0, y0 = f.origin
    x1 = x0 + (f.nx - 1) * f.spacing
    y1 = y0 + (f.ny - 1) * f.spacing
    if (w0[0] - r < x0 - 1e-12 or w0[0] + r > x1 + 1e-12
            or w0[1] - r < y0 - 1e-12 or w0[1] + r > y1 + 1e-12):
        raise InvalidInputError(f"disc of radius {r} at {w0} exits the grid")


def circle_points(w0: tuple[float, float], r: float, spacing: float) -> np.ndarray:
    """Resolution-proportional circle sample: 4*ceil(2*pi*r/h) points."""
    m = max(8, 4 * int(math.ceil(2 * math.pi * r / spacing)))
    th = np.linspace(0.0, 2 * math.pi, m, endpoint=False)
    return np.stack([w0[0] + r * np.cos(th), w0[1] + r * np.sin(th)], axis=-1)


def courant_lebesgue_slice(
    f: GridField,
    frame: ProjectionFrame,
    w0: tuple[float, float],
    radius: float,
    c_cl: float = DEFAULT_C_CL,
) -> tuple[float, float]:
    """Scan radii in [R/2, R] and return (r, osc) minimising circle oscillation.

    Oscillation is the maximum pairwise distance of embedded circle values;
    the chosen slice obeys osc <= c_cl * sqrt(disc energy) for the classical
    constant shape, which callers may verify against `disc_energy`.
    """
    _require_disc_inside(f, w0, radius)
    if radius < 4 * f.spacing:
        raise InvalidInputError("slice radius too small for the grid resolution")
    farr = embed_grid(f, frame)
    radii = np.arange(radius / 2, radius + f.spacing / 4, f.spacing)
    radii[-1] = min(radii[-1], radius)
    best = (float("nan"), float("inf"))
    for r in radii:
        vals = bilinear_array(farr, f, circle_points(w0, r, f.spacing))
        osc = _max_pairwise(vals)
        if osc < best[1]:
            best = (float(r), osc)
    return best


def _max_pairwise(vals: np.ndarray) -> float:
    m = vals.shape[0]
    if m > 512:
        step = m // 512 + 1
        vals = vals[::step]
        m = vals.shape[0]
    d2 = ((vals[:, None, :] - vals[None, :, :]) ** 2).sum(-1)
    return float(math.sqrt(d2.max()))


def disc_oscillation(
    f: GridField,
    w0: tuple[float, float],
    r: float,
    max_nodes: int = 400,
    seed: int = 0,
) -> float:
    """Exact assignment-metric oscillation over grid nodes in U_r(w0).

    Subsamples deterministically when the disc holds more than ``max_nodes``
    nodes, so the result is a lower bound on the true oscillation.
    """
    gx, gy = np.meshgrid(f.xs, f.ys)
    mask = (gx - w0[0]) ** 2 + (gy - w0[1]) ** 2 <= r**2
    nodes = f.values[mask]
    if nodes.shape[0] < 2:
        return 0.0
    if nodes.shape[0] > max_nodes:
        rng = np.random.default_rng(seed)
        nodes = nodes[rng.choice(nodes.shape[0], size=max_nodes, replace=False)]
    best = 0.0
    for i in range(nodes.shape[0] - 1):
        d = metric_g_many(nodes[i], nodes[i + 1 :])
        best = max(best, float(d.max()))
    return best
