"""Conformality diagnostics for planar Q-tuple fields.

The Hopf density is assembled from per-sheet central differences whose
stencil neighbours are matched to the center tuple by optimal assignment.
Plain differences of the sorted embedding carry O(1) errors along sheet
projection fold lines; the matched form realises the almost-everywhere
derivative and converges at second order away from multiplicity points.

The harmonic companion is the primitive of -phi/4 plus the conjugate
coordinate.  Samples whose stencil matching is degenerate (sheets closer
than the stencil increments) are censored and refilled by a local
holomorphic fit before integration; the primitive itself is recovered by a
least-squares potential solve so that residual integrability defects spread
instead of accumulating along integration paths.  The maximal plaquette
circulation of the integrated data is reported as the loop residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .admissible import NestedBallChain, modification_constants, theta0
from .embedding import ProjectionFrame
from .errors import InvalidInputError, NumericalFailureError
from .field import (
    DEFAULT_C_CL,
    GridField,
    _disc_cell_sum,
    _require_disc_inside,
    bilinear_embedded,
    circle_points,
    courant_lebesgue_slice,
    disc_energy,
    embed_grid,
)
from .qspace import match_to, metric_g_many

#: dilation (in nodes) around degenerate-matching cores censored before integration
CENSOR_DILATION = 10
#: ring width (in nodes) of the holomorphic refit collar
REFIT_RING = 6


def _replicate_rim(interior: np.ndarray, ny: int, nx: int) -> np.ndarray:
    full = np.empty((ny, nx), dtype=interior.dtype)
    full[1:-1, 1:-1] = interior
    full[0, 1:-1] = interior[0]
    full[-1, 1:-1] = interior[-1]
    full[:, 0] = full[:, 1]
    full[:, -1] = full[:, -2]
    return full


def _matched_stencil(values: np.ndarray):
    """Neighbour tuples re-ordered to match the center tuple, per interior node."""
    c = values[1:-1, 1:-1]
    east, _ = match_to(c, values[1:-1, 2:])
    west, _ = match_to(c, values[1:-1, :-2])
    north, _ = match_to(c, values[2:, 1:-1])
    south, _ = match_to(c, values[:-2, 1:-1])
    return c, east, west, north, south


@dataclass(eq=False)
class HopfField:
    """Complex Hopf density per node (rim replicated from the interior)."""

    phi: np.ndarray            # (ny, nx) complex
    degenerate: np.ndarray     # (ny, nx) bool: stencil matching ill-conditioned
    spacing: float
    origin: tuple[float, float]

    @property
    def interior(self) -> np.ndarray:
        return self.phi[1:-1, 1:-1]

    def zgrid(self) -> np.ndarray:
        ny, nx = self.phi.shape
        xs = self.origin[0] + self.spacing * np.arange(nx)
        ys = self.origin[1] + self.spacing * np.arange(ny)
        return xs[None, :] + 1j * ys[:, None]


def hopf_differential(f: GridField, frame: ProjectionFrame) -> HopfField:
    """Hopf density of the embedded field from matched central differences."""
    if f.nx < 3 or f.ny < 3:
        raise InvalidInputError("need interior nodes to form central differences")
    axes = frame.directions[: frame.n]
    if frame.n != f.n or frame.q_sheets != f.q_sheets:
        raise InvalidInputError("frame does not match the field's (Q, n)")
    v = np.einsum("an,yxqn->yxqa", axes, f.values)  # rotate into frame coordinates
    c, east, west, north, south = _matched_stencil(v)
    du = (east - west) / (2 * f.spacing)
    dv = (north - south) / (2 * f.spacing)
    phi_int = (
        np.einsum("...qa,...qa->...", du, du)
        - np.einsum("...qa,...qa->...", dv, dv)
        - 2j * np.einsum("...qa,...qa->...", du, dv)
    )

    q = f.q_sheets
    if q >= 2:
        dmin = np.full(c.shape[:2], np.inf)
        for i in range(q):
            for j in range(i + 1, q):
                dmin = np.minimum(dmin, np.linalg.norm(c[:, :, i] - c[:, :, j], axis=-1))
        inc = np.zeros(c.shape[:2])
        for nb in (east, west, north, south):
            inc = np.maximum(inc, np.linalg.norm(nb - c, axis=-1).max(-1))
        core_int = dmin <= 8.0 * inc
    else:
        core_int = np.zeros(c.shape[:2], dtype=bool)

    phi = _replicate_rim(phi_int, f.ny, f.nx)
    core = np.zeros((f.ny, f.nx), dtype=bool)
    core[1:-1, 1:-1] = core_int
    return HopfField(phi, core, f.spacing, f.origin)


def holomorphy_residual(hopf: HopfField) -> float:
    """Discrete L2 norm of the conjugate-derivative of phi over interior nodes."""
    phi = hopf.phi
    h = hopf.spacing
    du = (phi[1:-1, 2:] - phi[1:-1, :-2]) / (2 * h)
    dv = (phi[2:, 1:-1] - phi[:-2, 1:-1]) / (2 * h)
    dzbar = 0.5 * (du + 1j * dv)
    return float(np.sqrt((np.abs(dzbar) ** 2).sum() * h * h))


def plaquette_defects(hopf: HopfField) -> np.ndarray:
    """Trapezoid circulation of phi around each grid plaquette."""
    phi = hopf.phi
    h = hopf.spacing
    a = phi[:-1, :-1]
    b = phi[:-1, 1:]
    c = phi[1:, 1:]
    d = phi[1:, :-1]
    return (h / 2) * ((a + b) + 1j * (b + c) - (d + c) - 1j * (a + d))


def _censor_refit(hopf: HopfField, degree: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Replace the censored zone by a local holomorphic polynomial fit."""
    phi = hopf.phi
    bad = ndimage.binary_dilation(hopf.degenerate, iterations=CENSOR_DILATION)
    if not bad.any():
        return phi.copy(), bad
    out = phi.copy()
    labels, count = ndimage.label(bad)
    z = hopf.zgrid()
    for lab in range(1, count + 1):
        blob = labels == lab
        ring = ndimage.binary_dilation(blob, iterations=REFIT_RING) & ~bad
        if ring.sum() < 3 * (degree + 1):
            ring = ~bad
        if not ring.any():
            continue  # no clean samples anywhere: leave the raw values in place
        zc = z[blob].mean()
        scale = max(float(np.abs(z[ring] - zc).max()), hopf.spacing)
        t = (z[ring] - zc) / scale
        vand = np.stack([t**p for p in range(degree + 1)], axis=1)
        coef, *_ = np.linalg.lstsq(vand, phi[ring], rcond=None)
        tin = (z[blob] - zc) / scale
        out[blob] = np.stack([tin**p for p in range(degree + 1)], axis=1) @ coef
    return out, bad


@dataclass(eq=False)
class HarmonicCompanion:
    """Companion field h = psi + conj(z) with its integration diagnostics."""

    values: np.ndarray        # (ny, nx) complex
    path_residual: float      # max plaquette circulation of the integrated data
    patched: np.ndarray       # (ny, nx) bool: censored-and-refilled samples
    spacing: float
    origin: tuple[float, float]

    def grad_sq(self) -> np.ndarray:
        """Nodal squared gradient |grad h|^2 (rim replicated)."""
        h = self.spacing
        hu = (self.values[1:-1, 2:] - self.values[1:-1, :-2]) / (2 * h)
        hv = (self.values[2:, 1:-1] - self.values[:-2, 1:-1]) / (2 * h)
        g = np.abs(hu) ** 2 + np.abs(hv) ** 2
        return _replicate_rim(g, *self.values.shape)

    def hopf_term(self) -> np.ndarray:
        """Hopf density of h alone, from central differences (rim replicated)."""
        h = self.spacing
        hu = (self.values[1:-1, 2:] - self.values[1:-1, :-2]) / (2 * h)
        hv = (self.values[2:, 1:-1] - self.values[:-2, 1:-1]) / (2 * h)
        term = (np.abs(hu) ** 2 - np.abs(hv) ** 2) - 2j * (
            hu.real * hv.real + hu.imag * hv.imag
        )
        return _replicate_rim(term, *self.values.shape)


def _lsq_potential(phi: np.ndarray, h: float) -> np.ndarray:
    """Least-squares primitive of -phi/4 over the grid graph (gauge: node 0)."""
    ny, nx = phi.shape
    total = ny * nx
    idx = np.arange(total).reshape(ny, nx)
    ex_a = idx[:, :-1].ravel()
    ex_b = idx[:, 1:].ravel()
    ey_a = idx[:-1, :].ravel()
    ey_b = idx[1:, :].ravel()
    heads = np.concatenate([ex_b, ey_b])
    tails = np.concatenate([ex_a, ey_a])
    edges = heads.shape[0]
    rows = np.repeat(np.arange(edges), 2)
    cols = np.stack([heads, tails], axis=1).ravel()
    data = np.tile([1.0, -1.0], edges)
    a_mat = sp.csr_matrix((data, (rows, cols)), shape=(edges, total))
    pf = phi.ravel()
    rhs = np.concatenate(
        [-(h / 8) * (pf[ex_a] + pf[ex_b]), -(1j * h / 8) * (pf[ey_a] + pf[ey_b])]
    )
    lap = (a_mat.T @ a_mat).tolil()
    lap[0, :] = 0.0
    lap[0, 0] = 1.0
    rb = a_mat.T @ rhs
    rb = np.asarray(rb).ravel()
    rb[0] = 0.0
    psi = spla.spsolve(lap.tocsc(), rb)
    return psi.reshape(ny, nx)


def _path_primitive(phi: np.ndarray, h: float) -> np.ndarray:
    """Axis-monotone L-path primitive from the grid center (trapezoid rule)."""
    ny, nx = phi.shape
    icy, icx = ny // 2, nx // 2
    row = phi[icy]
    inc = (row[:-1] + row[1:]) / 2 * h
    cumx = np.zeros(nx, dtype=complex)
    cumx[icx + 1 :] = np.cumsum(inc[icx:])
    cumx[:icx] = -np.cumsum(inc[:icx][::-1])[::-1]
    incv = (phi[:-1, :] + phi[1:, :]) / 2 * (1j * h)
    cumv = np.zeros((ny, nx), dtype=complex)
    cumv[icy + 1 :] = np.cumsum(incv[icy:], axis=0)
    cumv[:icy] = -np.cumsum(incv[:icy][::-1], axis=0)[::-1]
    return -0.25 * (cumx[None, :] + cumv)


def harmonic_companion(hopf: HopfField, method: str = "least_squares") -> HarmonicCompanion:
    """Companion h = psi + conj(z) with psi a primitive of -phi/4.

    ``least_squares`` (default) censors degenerate samples, refits them with
    a local holomorphic polynomial and recovers psi by a potential solve.
    ``path`` integrates the raw data along axis-monotone L-paths from the
    grid center; it is exact for holomorphic sample fields but accumulates
    any integrability defect of the data, so it is kept for diagnostics.
    """
    if method == "least_squares":
        phi_used, patched = _censor_refit(hopf)
        psi = _lsq_potential(phi_used, hopf.spacing)
    elif method == "path":
        phi_used = hopf.phi.copy()
        patched = np.zeros_like(hopf.degenerate)
        psi = _path_primitive(phi_used, hopf.spacing)
    else:
        raise InvalidInputError(f"unknown companion method {method!r}")
    used = HopfField(phi_used, hopf.degenerate, hopf.spacing, hopf.origin)
    residual = float(np.abs(plaquette_defects(used)).max())
    values = psi + np.conj(hopf.zgrid())
    if not np.all(np.isfinite(values)):
        raise NumericalFailureError("companion integration produced non-finite values")
    return HarmonicCompanion(values, residual, patched, hopf.spacing, hopf.origin)


def grad_sq_field(f: GridField, frame: ProjectionFrame) -> np.ndarray:
    """Nodal squared gradient of the embedded field via matched differences."""
    axes = frame.directions[: frame.n]
    v = np.einsum("an,yxqn->yxqa", axes, f.values)
    c, east, west, north, south = _matched_stencil(v)
    du = (east - west) / (2 * f.spacing)
    dv = (north - south) / (2 * f.spacing)
    g = np.einsum("...qa,...qa->...", du, du) + np.einsum("...qa,...qa->...", dv, dv)
    return _replicate_rim(g, f.ny, f.nx)


def conformality_defect(f: GridField, frame: ProjectionFrame, comp: HarmonicCompanion) -> float:
    """Discrete L2 norm of the Hopf density of the augmented map (field, h)."""
    if comp.values.shape != (f.ny, f.nx):
        raise InvalidInputError("companion grid does not match the field")
    hopf = hopf_differential(f, frame)
    phi_g = hopf.phi + comp.hopf_term()
    h = f.spacing
    return float(np.sqrt((np.abs(phi_g[1:-1, 1:-1]) ** 2).sum() * h * h))


@dataclass(frozen=True)
class InvarianceGap:
    stddev: float
    mean: float
    bound: float


def xi0_invariance_gap(
    f: GridField,
    frame_a: ProjectionFrame,
    frame_b: ProjectionFrame,
    radius: float | None = None,
    tol: float = 0.05,
) -> InvarianceGap:
    """Frame dependence of the Hopf density: a constant-modulus difference.

    Returns the standard deviation and mean of |phi - phi~| over interior
    nodes and the energy bound 4/(pi R0^2) * Dir(f; U_{R0}); raises when the
    mean exceeds the bound beyond ``tol`` (relative).  The matched-difference
    estimator pairs each sheet's derivative with itself, so both gap numbers
    vanish to roundoff; the call certifies that together with the bound.
    """
    pa = hopf_differential(f, frame_a)
    pb = hopf_differential(f, frame_b)
    good = ~(pa.degenerate | pb.degenerate)[1:-1, 1:-1]
    diff = np.abs(pa.interior - pb.interior)[good]
    center = (
        f.origin[0] + 0.5 * (f.nx - 1) * f.spacing,
        f.origin[1] + 0.5 * (f.ny - 1) * f.spacing,
    )
    if radius is None:
        radius = 0.5 * f.spacing * (min(f.nx, f.ny) - 1)
    bound = 4.0 / (math.pi * radius**2) * disc_energy(f, frame_a, center, radius)
    mean = float(diff.mean())
    if mean > bound * (1 + tol) + 1e-12:
        raise NumericalFailureError(
            f"mean frame gap {mean} exceeds the energy bound {bound}"
        )
    return InvarianceGap(float(diff.std()), mean, bound)


def _node_index(f: GridField, w_star: tuple[int, int]) -> tuple[int, int]:
    iy, ix = int(w_star[0]), int(w_star[1])
    if not (0 < iy < f.ny - 1 and 0 < ix < f.nx - 1):
        raise InvalidInputError("base node must be interior")
    return iy, ix


def d_star(
    f: GridField,
    comp: HarmonicCompanion,
    w_star: tuple[int, int],
    k: int,
    chain: NestedBallChain,
) -> np.ndarray:
    """Level-k augmented distance field sqrt(G(q_k, f)^2 + |h(w*) - h|^2)."""
    iy, ix = _node_index(f, w_star)
    if not 0 <= k < len(chain.levels):
        raise InvalidInputError(f"chain level {k} out of range")
    qk = chain.levels[k].decomposition.rebuild().points
    dist = metric_g_many(qk, f.values)
    dh = np.abs(comp.values - comp.values[iy, ix])
    return np.sqrt(dist**2 + dh**2)


def tau_star(
    f: GridField,
    frame: ProjectionFrame,
    w_star: tuple[int, int],
    w0: tuple[float, float],
    r: float,
) -> float:
    """Infimum of the embedded distance to f(w*) over the circle of radius r."""
    _require_disc_inside(f, w0, r)
    iy, ix = _node_index(f, w_star)
    farr = embed_grid(f, frame)
    vals = bilinear_embedded(f, frame, circle_points(w0, r, f.spacing))
    return float(np.linalg.norm(vals - farr[iy, ix], axis=-1).min())


def k_zero(chain: NestedBallChain, tau: float) -> int:
    """Largest level k with 10 Q rho_k strictly below tau."""
    q = chain.q_sheets
    k0 = 0
    for k, lv in enumerate(chain.levels):
        if 10 * q * lv.rho < tau:
            k0 = k
    return k0


def _default_disc(f: GridField, w_star: tuple[int, int]) -> tuple[tuple[float, float], float]:
    iy, ix = w_star
    w0 = (f.origin[0] + ix * f.spacing, f.origin[1] + iy * f.spacing)
    x1 = f.origin[0] + (f.nx - 1) * f.spacing
    y1 = f.origin[1] + (f.ny - 1) * f.spacing
    r = min(w0[0] - f.origin[0], x1 - w0[0], w0[1] - f.origin[1], y1 - w0[1])
    return w0, r


def _circle_d_star_min(
    f: GridField,
    comp: HarmonicCompanion,
    frame: ProjectionFrame,
    w_star: tuple[int, int],
    k: int,
    chain: NestedBallChain,
    w0: tuple[float, float],
    r: float,
) -> float:
    """Minimum of the level-k augmented distance over the circle (interpolated)."""
    iy, ix = _node_index(f, w_star)
    pts = circle_points(w0, r, f.spacing)
    from .embedding import xi0
    from .field import bilinear_array

    fvals = bilinear_embedded(f, frame, pts)
    target = xi0(frame, chain.levels[k].decomposition.rebuild()).flat
    hvals = bilinear_array(
        np.stack([comp.values.real, comp.values.imag], axis=-1), f, pts
    )
    hw = comp.values[iy, ix]
    dh2 = (hvals[..., 0] - hw.real) ** 2 + (hvals[..., 1] - hw.imag) ** 2
    return float(np.sqrt(np.linalg.norm(fvals - target, axis=-1) ** 2 + dh2).min())


def valid_rho_interval(
    f: GridField,
    comp: HarmonicCompanion,
    frame: ProjectionFrame,
    w_star: tuple[int, int],
    k: int,
    chain: NestedBallChain,
    w0: tuple[float, float] | None = None,
    r: float | None = None,
) -> tuple[float, float, int, float]:
    """(lo, hi, k0, tau*) for the level-k cutoff parameter.

    ``hi`` is sigma_k below the pivot level and (2/5) min(tau*, sigma_k0) at
    it; ``lo`` is rho_k, the inner radius where the monotonicity statement
    starts.  Levels beyond k0 have no valid range.  When the base value is
    not separated from the circle values (tau* = 0, e.g. a constant field)
    the augmented circle distance replaces tau* so cutoffs stay compactly
    supported in the disc.
    """
    if w0 is None or r is None:
        d0, dr = _default_disc(f, _node_index(f, w_star))
        w0 = w0 or d0
        r = r or dr
    tau = tau_star(f, frame, w_star, w0, r)
    k0 = k_zero(chain, tau) if tau > 0 else chain.depth
    if k > k0:
        raise InvalidInputError(f"level {k} beyond the pivot level k0 = {k0}")
    lv = chain.levels[k]
    if k < k0:
        hi = lv.sigma
    else:
        hi = 0.4 * min(tau, lv.sigma)
    if not hi > 0 or math.isinf(hi):
        hi = 0.4 * _circle_d_star_min(f, comp, frame, w_star, k, chain, w0, r)
    return lv.rho, hi, k0, tau


def monotone_rho_interval(
    f: GridField,
    comp: HarmonicCompanion,
    frame: ProjectionFrame,
    w_star: tuple[int, int],
    k: int,
    chain: NestedBallChain,
    w0: tuple[float, float] | None = None,
    r: float | None = None,
) -> tuple[float, float]:
    """(rho_k, 2/5 sigma_k) below the pivot, the pivot's full valid range at it.

    This is the interval on which the ratio psi_k(rho)/rho^2 is asserted to
    be nondecreasing; it is narrower than psi_k's validity below the pivot.
    """
    lo, hi, k0, tau = valid_rho_interval(f, comp, frame, w_star, k, chain, w0, r)
    if k < k0:
        hi = 0.4 * hi
    return lo, hi


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def psi_k(
    f: GridField,
    comp: HarmonicCompanion,
    frame: ProjectionFrame,
    w_star: tuple[int, int],
    k: int,
    chain: NestedBallChain,
    rho: float,
    eps: float,
    w0: tuple[float, float] | None = None,
    r: float | None = None,
    subsamples: int = 3,
    validate: bool = True,
) -> float:
    """Cutoff-weighted disc energy of the augmented map at level k.

    Integrates lambda(rho - d*_k) |grad G|^2 over the disc with a quintic
    ramp of width eps.  The ramp is evaluated on a subsampled bilinear
    reconstruction of d* inside each cell so that cutoff layers thinner than
    a cell are still integrated consistently.  ``validate=False`` skips the
    range checks (useful for saturated-cutoff diagnostics).
    """
    if w0 is None or r is None:
        d0, dr = _default_disc(f, _node_index(f, w_star))
        w0 = w0 or d0
        r = r or dr
    if validate:
        lo, hi, k0, tau = valid_rho_interval(f, comp, frame, w_star, k, chain, w0, r)
        if not 0.0 < rho < hi:
            raise InvalidInputError(
                f"rho = {rho} outside the valid interval (0, {hi}) for level {k} (k0 = {k0})"
            )
        eps_cap = min(chain.levels[0].sigma, tau) / 10 if tau > 0 else hi / 4
        if eps <= 0 or eps >= eps_cap:
            raise InvalidInputError(f"ramp width eps = {eps} outside (0, {eps_cap})")
    elif rho <= 0 or eps <= 0:
        raise InvalidInputError("rho and eps must be positive")
    dst = d_star(f, comp, w_star, k, chain)
    energy = grad_sq_field(f, frame) + comp.grad_sq()
    e_cell = (energy[:-1, :-1] + energy[:-1, 1:] + energy[1:, :-1] + energy[1:, 1:]) / 4
    lam_cell = np.zeros_like(e_cell)
    for a in range(subsamples):
        for b in range(subsamples):
            ta = (a + 0.5) / subsamples
            tb = (b + 0.5) / subsamples
            dsub = (
                dst[:-1, :-1] * (1 - ta) * (1 - tb)
                + dst[:-1, 1:] * ta * (1 - tb)
                + dst[1:, :-1] * (1 - ta) * tb
                + dst[1:, 1:] * ta * tb
            )
            lam_cell += _smoothstep((rho - dsub) / eps)
    lam_cell /= subsamples**2
    return _disc_cell_sum(lam_cell * e_cell * f.spacing**2, f, w0, r)


@dataclass(frozen=True)
class LadderRow:
    rho: float
    psi: float
    ratio: float


@dataclass(eq=False)
class MonotonicityReport:
    levels: dict[int, list[LadderRow]]
    k0: int
    tau_star: float
    violations: list[tuple[int, float, float]]  # (level, rho_s, rho_t) with ratio drop
    tolerance: float
    constants: dict

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "k0": self.k0,
            "tau_star": self.tau_star,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "constants": self.constants,
            "levels": {
                str(k): [{"rho": r.rho, "psi": r.psi, "ratio": r.ratio} for r in rows]
                for k, rows in self.levels.items()
            },
            "violations": [
                {"level": k, "rho_s": s, "rho_t": t} for (k, s, t) in self.violations
            ],
        }


def monotonicity_report(
    f: GridField,
    comp: HarmonicCompanion,
    frame: ProjectionFrame,
    w_star: tuple[int, int],
    chain: NestedBallChain,
    ladder: np.ndarray | None = None,
    w0: tuple[float, float] | None = None,
    r: float | None = None,
    tolerance: float = 0.05,
) -> MonotonicityReport:
    """Evaluate psi_k(rho)/rho^2 ladders for every level up to the pivot.

    ``ladder`` holds fractions of each level's valid interval (default ten
    points from 0.35 to 0.95).  A pair s < t with ratio(s) > ratio(t)(1+tol)
    is recorded as a violation.
    """
    if ladder is None:
        ladder = np.linspace(0.35, 0.95, 10)
    ladder = np.asarray(ladder, dtype=np.float64)
    if np.any(ladder <= 0) or np.any(ladder >= 1):
        raise InvalidInputError("ladder fractions must lie strictly inside (0, 1)")
    if w0 is None or r is None:
        d0, dr = _default_disc(f, _node_index(f, w_star))
        w0 = w0 or d0
        r = r or dr
    lo0, hi0, k0, tau = valid_rho_interval(f, comp, frame, w_star, 0, chain, w0, r)
    n, q = f.n, f.q_sheets
    k_const, c0 = modification_constants(n, q)
    constants = {
        "theta0": theta0(n, q),
        "K": k_const,
        "C0": c0,
        "delta": delta_constant(n, q),
    }
    eps_scale = min(chain.levels[0].sigma, tau) if tau > 0 else 2.5 * hi0
    eps = eps_scale / 20
    levels: dict[int, list[LadderRow]] = {}
    violations: list[tuple[int, float, float]] = []
    for k in range(k0 + 1):
        lo, hi = monotone_rho_interval(f, comp, frame, w_star, k, chain, w0, r)
        rhos = lo + (hi - lo) * ladder
        rows = []
        for rho in rhos:
            val = psi_k(f, comp, frame, w_star, k, chain, rho, eps, w0, r)
            rows.append(LadderRow(float(rho), float(val), float(val / rho**2)))
        levels[k] = rows
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                if rows[i].ratio > rows[j].ratio * (1 + tolerance) + 1e-15:
                    violations.append((k, rows[i].rho, rows[j].rho))
    return MonotonicityReport(levels, k0, tau, violations, tolerance, constants)


def delta_constant(n: int, q_sheets: int) -> float:
    """Oscillation-bound constant assembled from the worst chain level.

    The chain constants grow doubly exponentially in Q, so the bound is
    evaluated in log space; results smaller than the tiniest subnormal are
    clamped there to keep the constant strictly positive.
    """
    _, c0 = modification_constants(n, q_sheets)
    log_growth = max(q_sheets - 2, 0) * math.log(7.5 * c0)
    log_m = max(
        math.log(2.5 + 25 * q_sheets * c0),
        math.log(25 * q_sheets * c0) + log_growth,
        math.log(2.5) + log_growth,
    )
    return max(math.exp(-2.0 * log_m), 5e-324)


def key_lemma_check(
    f: GridField,
    comp: HarmonicCompanion,
    w_star: tuple[int, int],
    r: float,
    frame: ProjectionFrame,
    tolerance: float = 0.05,
) -> tuple[float, float, bool]:
    """Oscillation bound: circle distance to f(w*) vs augmented disc energy."""
    iy, ix = _node_index(f, w_star)
    w0 = (f.origin[0] + ix * f.spacing, f.origin[1] + iy * f.spacing)
    lhs = tau_star(f, frame, w_star, w0, r)
    e_f = disc_energy(f, frame, w0, r)
    e_h = _companion_disc_energy(comp, f, w0, r)
    delta = delta_constant(f.n, f.q_sheets)
    rhs = math.sqrt((e_f + e_h) / (2 * math.pi * delta))
    return lhs, rhs, lhs <= rhs * (1 + tolerance)


def _companion_disc_energy(
    comp: HarmonicCompanion, f: GridField, w0: tuple[float, float], r: float
) -> float:
    g = comp.grad_sq()
    cell = (g[:-1, :-1] + g[:-1, 1:] + g[1:, :-1] + g[1:, 1:]) / 4 * f.spacing**2
    return _disc_cell_sum(cell, f, w0, r)


@dataclass(frozen=True)
class ContinuityCertificate:
    alpha1: float
    alpha2: float
    beta: float
    modulus: float
    slice_radius: float
    slice_osc: float
    c_r0: float
    radius: float

    def to_dict(self) -> dict:
        return {
            "R": self.radius,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "beta": self.beta,
            "modulus": self.modulus,
            "slice_radius": self.slice_radius,
            "slice_osc": self.slice_osc,
            "C_R0": self.c_r0,
        }


def continuity_certificate(
    f: GridField,
    frame: ProjectionFrame,
    w: tuple[float, float],
    radius: float,
    c_cl: float = DEFAULT_C_CL,
    r0: float | None = None,
    comp: HarmonicCompanion | None = None,
) -> ContinuityCertificate:
    """Continuity modulus at w from the slice bound and the oscillation bound.

    alpha1 bounds the best circle oscillation by the disc energy; beta
    controls the companion energy independently of the frame choice; alpha2
    feeds both into the oscillation bound; the modulus is 4 max(a1, a2).
    """
    _require_disc_inside(f, w, radius)
    if r0 is None:
        x1 = f.origin[0] + (f.nx - 1) * f.spacing
        y1 = f.origin[1] + (f.ny - 1) * f.spacing
        r0 = min(w[0] - f.origin[0], x1 - w[0], w[1] - f.origin[1], y1 - w[1])
    slice_r, slice_osc = courant_lebesgue_slice(f, frame, w, radius, c_cl)
    e_r = disc_energy(f, frame, w, radius)
    alpha1 = c_cl * math.sqrt(e_r)
    c_r0 = disc_energy(f, frame, w, r0) / (math.pi * r0**2)
    if comp is None:
        comp = harmonic_companion(hopf_differential(f, frame))
    e_h = _companion_disc_energy(comp, f, w, radius)
    beta = e_h + 2 * math.pi * c_r0**2 * radius**2 + 2 * c_r0 * e_r
    delta = delta_constant(f.n, f.q_sheets)
    alpha2 = (math.sqrt(e_r) + math.sqrt(beta)) / math.sqrt(2 * math.pi * delta)
    return ContinuityCertificate(
        alpha1, alpha2, beta, 4 * max(alpha1, alpha2), slice_r, slice_osc, c_r0, radius
    )
