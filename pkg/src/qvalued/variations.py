"""Numerical first variations: domain reparametrisations and admissible
range perturbations, with stationarity residuals as the combined certificate.

Domain variations compose the field with x + t*phi(x) for a compactly
supported bump and differentiate the energy by central differences, with
the displaced field evaluated by bilinear interpolation of the embedded
coordinates.  Range variations push every sheet toward its chain site
through the two-radius retraction, weighted by the spatial cutoff built
from the level distance field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .admissible import NestedBallChain
from .analysis import (
    HarmonicCompanion,
    _smoothstep,
    d_star,
    harmonic_companion,
    hopf_differential,
    monotone_rho_interval,
    valid_rho_interval,
)
from .embedding import ProjectionFrame
from .errors import InvalidInputError, InvalidStepError, NotInBallError, NumericalFailureError
from .field import GridField, bilinear_array, dirichlet_energy, embed_grid, embedded_energy
from .qspace import QPoint, support
from .admissible import angle_separated_frame, nested_chain


@dataclass(frozen=True)
class DomainVariation:
    """A compactly supported bump vector field: direction * eta(|x - c| / r)."""

    center: tuple[float, float]
    radius: float
    direction: tuple[float, float]
    family: str = "bump"

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError("bump radius must be positive")
        if self.family != "bump":
            raise InvalidInputError(f"unknown variation family {self.family!r}")

    def displacement(self, pts: np.ndarray) -> np.ndarray:
        s2 = ((pts - np.asarray(self.center)) ** 2).sum(-1) / self.radius**2
        eta = np.zeros(s2.shape)
        inside = s2 < 1.0
        eta[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        return eta[..., None] * np.asarray(self.direction)

    def jacobian(self, pts: np.ndarray) -> np.ndarray:
        """d(displacement)/dx at each point, shape (..., 2, 2)."""
        rel = pts - np.asarray(self.center)
        s2 = (rel**2).sum(-1) / self.radius**2
        grad_eta = np.zeros(pts.shape)
        inside = s2 < 1.0
        eta = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        deta_ds2 = -eta / (1.0 - s2[inside]) ** 2
        grad_eta[inside] = (2.0 / self.radius**2) * deta_ds2[..., None] * rel[inside]
        return np.asarray(self.direction)[:, None] * grad_eta[..., None, :]


def _check_support_interior(f: GridField, v: DomainVariation):
    x_lo = f.origin[0] + f.spacing
    x_hi = f.origin[0] + (f.nx - 2) * f.spacing
    y_lo = f.origin[1] + f.spacing
    y_hi = f.origin[1] + (f.ny - 2) * f.spacing
    cx, cy = v.center
    if not (x_lo < cx - v.radius and cx + v.radius < x_hi
            and y_lo < cy - v.radius and cy + v.radius < y_hi):
        raise InvalidInputError("bump support must stay strictly inside the interior nodes")


def domain_variation_derivative(
    f: GridField,
    frame: ProjectionFrame,
    v: DomainVariation,
    step: float | None = None,
) -> float:
    """Central-difference energy derivative under x -> x + t * bump at t = 0."""
    _check_support_interior(f, v)
    t = f.spacing**2 if step is None else step
    xg, yg = np.meshgrid(f.xs, f.ys)
    pts = np.stack([xg, yg], axis=-1)
    disp = v.displacement(pts)
    jac = v.jacobian(pts)
    for sgn in (1.0, -1.0):
        m = np.eye(2) + sgn * t * jac
        det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
        if np.any(det <= 0):
            raise InvalidStepError(f"step {t} makes the domain map non-diffeomorphic")
    farr = embed_grid(f, frame)
    e_plus = embedded_energy(bilinear_array(farr, f, pts + t * disp), f.spacing).total
    e_minus = embedded_energy(bilinear_array(farr, f, pts - t * disp), f.spacing).total
    return (e_plus - e_minus) / (2 * t)


@dataclass(frozen=True, eq=False)
class RangeVariation:
    """Retraction toward the level-k sites gated by the level distance cutoff."""

    chain: NestedBallChain
    level: int
    rho: float
    eps: float
    w_star: tuple[int, int]

    @property
    def sites(self) -> np.ndarray:
        return self.chain.levels[self.level].decomposition.sites

    @property
    def sigma(self) -> float:
        return self.chain.levels[self.level].sigma

    def retraction(self, y: np.ndarray) -> np.ndarray:
        """Gamma: pull y toward its nearest site inside the two-radius collar."""
        sites = self.sites
        d = np.linalg.norm(y[..., None, :] - sites, axis=-1)
        j = np.argmin(d, axis=-1)
        s = np.take_along_axis(d, j[..., None], axis=-1)[..., 0]
        sigma = self.sigma
        if math.isinf(sigma):
            chi = np.ones_like(s)
        else:
            chi = 1.0 - _smoothstep((s - 0.4 * sigma) / (0.2 * sigma))
        return chi[..., None] * (sites[j] - y)


def build_admissible_variation(
    chain: NestedBallChain,
    k: int,
    rho: float,
    eps: float,
    w_star: tuple[int, int],
    lip_samples: int = 400,
    seed: int = 0,
) -> RangeVariation:
    """Assemble the level-k range variation and certify the retraction numerically.

    Checks the structural parameter ranges (the tau*-dependent part of the
    cutoff validity is re-checked against the field by the derivative) and
    samples two-point ratios of the retraction around every site against the
    chain's Lipschitz budget 5/sigma_k.
    """
    if not 0 <= k < len(chain.levels):
        raise InvalidInputError(f"chain level {k} out of range")
    sigma = chain.levels[k].sigma
    sigma0 = chain.levels[0].sigma
    if not math.isinf(sigma) and not 0.0 < rho <= sigma:
        raise InvalidInputError(f"rho = {rho} outside (0, sigma_k = {sigma}]")
    if rho <= 0:
        raise InvalidInputError("rho must be positive")
    if eps <= 0 or (not math.isinf(sigma0) and eps >= sigma0 / 10):
        raise InvalidInputError(f"eps = {eps} outside (0, sigma_0/10 = {sigma0 / 10})")
    rv = RangeVariation(chain, k, rho, eps, (int(w_star[0]), int(w_star[1])))
    if not math.isinf(sigma):
        rng = np.random.default_rng(seed)
        sites = rv.sites
        n = sites.shape[1]
        budget = 5.0 / sigma + 1e-6
        for site in sites:
            y1 = site + rng.normal(size=(lip_samples, n)) * (0.4 * sigma)
            y2 = y1 + rng.normal(size=(lip_samples, n)) * (0.05 * sigma)
            num = np.linalg.norm(rv.retraction(y1) - rv.retraction(y2), axis=-1)
            den = np.linalg.norm(y1 - y2, axis=-1)
            ok = den > 1e-12
            ratio = num[ok] / den[ok]
            if ratio.size and ratio.max() > budget:
                raise NumericalFailureError(
                    f"sampled retraction Lipschitz ratio {ratio.max()} exceeds 5/sigma_k"
                )
    return rv


def cutoff_weights(
    f: GridField, comp: HarmonicCompanion, rv: RangeVariation
) -> np.ndarray:
    """Nodal spatial-cutoff weights of the variation (zero on masked nodes)."""
    dst = d_star(f, comp, rv.w_star, rv.level, rv.chain)
    lam = _smoothstep((rv.rho - dst) / rv.eps)
    lam[f.boundary_mask] = 0.0
    return lam


def range_variation_derivative(
    f: GridField,
    frame: ProjectionFrame,
    rv: RangeVariation,
    comp: HarmonicCompanion | None = None,
    step: float | None = None,
) -> float:
    """Central-difference energy derivative of the admissible range variation."""
    if comp is None:
        comp = harmonic_companion(hopf_differential(f, frame))
    lam = cutoff_weights(f, comp, rv)

    sigma = rv.sigma
    if not math.isinf(sigma):
        active = lam > 0
        if active.any():
            sheets = f.values[active]
            d = np.linalg.norm(sheets[..., None, :] - rv.sites, axis=-1).min(-1)
            if d.max() > 0.4 * sigma + 1e-9:
                raise NotInBallError(
                    "a sheet under the cutoff leaves its 2/5-sigma site ball; "
                    "shrink rho or use a finer level"
                )
    t = f.spacing**2 if step is None else step
    gam = rv.retraction(f.values)
    bump = lam[..., None, None] * gam
    for sgn in (1.0, -1.0):
        g = GridField(f.values + sgn * t * bump, f.spacing, f.origin, f.boundary_mask)
        if sgn > 0:
            e_plus = dirichlet_energy(g, frame).total
        else:
            e_minus = dirichlet_energy(g, frame).total
    return (e_plus - e_minus) / (2 * t)


@dataclass(frozen=True)
class StationarityResidual:
    domain_max: float
    range_max: float
    energy: float
    domain_derivatives: tuple[float, ...]
    range_derivatives: tuple[float, ...]

    @property
    def domain_trials(self) -> int:
        return len(self.domain_derivatives)

    @property
    def range_trials(self) -> int:
        return len(self.range_derivatives)

    def to_dict(self) -> dict:
        return {
            "domain_max": self.domain_max,
            "range_max": self.range_max,
            "energy": self.energy,
            "domain_derivatives": list(self.domain_derivatives),
            "range_derivatives": list(self.range_derivatives),
            "domain_trials": self.domain_trials,
            "range_trials": self.range_trials,
        }


def stationarity_residual(
    f: GridField,
    frame: ProjectionFrame,
    trials: int,
    seed: int = 0,
) -> StationarityResidual:
    """Max |energy derivative| over random domain bumps and admissible range
    variations at sampled interior base nodes."""
    rng = np.random.default_rng(seed)
    energy = dirichlet_energy(f, frame).total
    x_lo = f.origin[0] + f.spacing
    x_hi = f.origin[0] + (f.nx - 2) * f.spacing
    y_lo = f.origin[1] + f.spacing
    y_hi = f.origin[1] + (f.ny - 2) * f.spacing
    span = min(x_hi - x_lo, y_hi - y_lo)

    domain_derivs: list[float] = []
    while len(domain_derivs) < trials:
        rad = rng.uniform(0.1, 0.2) * span
        cx = rng.uniform(x_lo + rad * 1.05, x_hi - rad * 1.05)
        cy = rng.uniform(y_lo + rad * 1.05, y_hi - rad * 1.05)
        th = rng.uniform(0, 2 * math.pi)
        v = DomainVariation((cx, cy), rad, (math.cos(th), math.sin(th)))
        domain_derivs.append(domain_variation_derivative(f, frame, v))

    comp = harmonic_companion(hopf_differential(f, frame))
    range_derivs: list[float] = []
    attempts = 0
    margin = max(3, f.nx // 8)
    while len(range_derivs) < trials and attempts < 10 * trials:
        attempts += 1
        iy = int(rng.integers(margin, f.ny - margin))
        ix = int(rng.integers(margin, f.nx - margin))
        base = QPoint(f.values[iy, ix].copy())
        try:
            chain = nested_chain(base, angle_separated_frame(support(base)))
            lo, hi, k0, tau = valid_rho_interval(f, comp, frame, (iy, ix), 0, chain)
        except InvalidInputError:
            continue
        if tau <= 0:
            continue
        eps = min(chain.levels[0].sigma, tau) / 20
        for k in range(k0 + 1):
            lo, hi = monotone_rho_interval(f, comp, frame, (iy, ix), k, chain)
            rho = lo + 0.6 * (hi - lo)
            if rho <= 0 or not math.isfinite(rho):
                continue
            try:
                rv = build_admissible_variation(chain, k, rho, eps, (iy, ix), seed=seed)
                if not np.any(cutoff_weights(f, comp, rv) > 0):
                    continue  # cutoff support below grid resolution: nothing varied
                d = range_variation_derivative(f, frame, rv, comp)
            except (InvalidInputError, NotInBallError):
                continue
            range_derivs.append(d)
    domain_max = max((abs(d) for d in domain_derivs), default=0.0)
    range_max = max((abs(d) for d in range_derivs), default=0.0)
    return StationarityResidual(
        domain_max, range_max, energy, tuple(domain_derivs), tuple(range_derivs)
    )
