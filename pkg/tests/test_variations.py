import math

import numpy as np
import pytest

from qvalued import (
    DomainVariation,
    GridField,
    InvalidInputError,
    InvalidStepError,
    MinimizeOptions,
    NotInBallError,
    QPoint,
    angle_separated_frame,
    build_admissible_variation,
    dirichlet_energy,
    domain_variation_derivative,
    harmonic_companion,
    hopf_differential,
    minimize,
    monotone_rho_interval,
    nested_chain,
    range_variation_derivative,
    standard_frame,
    stationarity_residual,
    support,
    xi0,
)
from qvalued.variations import cutoff_weights

from helpers import (
    harmonic_boundary_field,
    meshgrid_for,
    noisy_copy,
    two_sheet_field,
    unit_square_grid,
)


@pytest.fixture(scope="module")
def minimized_harmonic():
    f, _ = harmonic_boundary_field(33)
    return minimize(f, MinimizeOptions(max_iters=150, inner_sweeps=60, tol_rel_energy=0.0))


def _range_setup(result, w=(48, 44)):
    g = result.field
    fr = standard_frame(2, 2)
    comp = harmonic_companion(hopf_differential(g, fr))
    base = QPoint(g.values[w[0], w[1]].copy())
    chain = nested_chain(base, angle_separated_frame(support(base)))
    lo, hi = monotone_rho_interval(g, comp, fr, w, 0, chain)
    eps = hi / 8
    rho = lo + 0.6 * (hi - lo)
    rv = build_admissible_variation(chain, 0, rho, eps, w)
    return g, fr, comp, chain, rv


def test_domain_variation_support_validation():
    f = two_sheet_field(17, seed=0)
    v = DomainVariation((0.9, 0.0), 0.3, (1.0, 0.0))
    with pytest.raises(InvalidInputError):
        domain_variation_derivative(f, standard_frame(2, 2), v)


def test_domain_variation_invalid_step():
    f = two_sheet_field(33, seed=0)
    v = DomainVariation((0.0, 0.0), 0.4, (1.0, 0.0))
    with pytest.raises(InvalidStepError):
        domain_variation_derivative(f, standard_frame(2, 2), v, step=5.0)


def test_domain_variation_linear_field_near_zero():
    # affine tuples are stationary under compactly supported reparametrisation
    nn = 33
    spec = unit_square_grid(nn)
    x, y = meshgrid_for(spec)
    a = np.array([[1.0, 0.5], [-0.25, 0.75]])
    vals = np.einsum("ij,yxj->yxi", a, np.stack([x, y], -1))[:, :, None, :]
    f = GridField(vals, spec.spacing, spec.origin)
    fr = standard_frame(2, 1)
    e = dirichlet_energy(f, fr).total
    v = DomainVariation((0.1, -0.2), 0.35, (0.8, 0.6))
    d = domain_variation_derivative(f, fr, v)
    assert abs(d) <= 1e-3 * e


def test_domain_variation_harmonic_small_vs_noisy(minimized_harmonic):
    g = minimized_harmonic.field
    fr = standard_frame(1, 1)
    e = dirichlet_energy(g, fr).total
    rng = np.random.default_rng(0)
    base = 0.0
    for _ in range(6):
        c = rng.uniform(-0.35, 0.35, 2)
        rad = rng.uniform(0.2, 0.4)
        th = rng.uniform(0, 2 * math.pi)
        v = DomainVariation(tuple(c), rad, (math.cos(th), math.sin(th)))
        base = max(base, abs(domain_variation_derivative(g, fr, v)))
    assert base <= 1e-3 * e
    noisy = noisy_copy(g, scale=0.05, seed=7)
    worst = 0.0
    rng = np.random.default_rng(0)
    for _ in range(6):
        c = rng.uniform(-0.35, 0.35, 2)
        rad = rng.uniform(0.2, 0.4)
        th = rng.uniform(0, 2 * math.pi)
        v = DomainVariation(tuple(c), rad, (math.cos(th), math.sin(th)))
        worst = max(worst, abs(domain_variation_derivative(noisy, fr, v)))
    assert worst > 10 * base


def test_range_variation_quadratic_exactness(minimized_strong_97):
    # the perturbed energy is a polynomial in t of degree 2: the central
    # difference must match the slope of a fitted parabola to roundoff
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    lam = cutoff_weights(g, comp, rv)
    gam = rv.retraction(g.values)
    t0 = g.spacing**2
    ts = np.array([-2, -1, 0, 1, 2]) * t0
    es = []
    for t in ts:
        gt = GridField(
            g.values + t * lam[..., None, None] * gam, g.spacing, g.origin, g.boundary_mask
        )
        es.append(dirichlet_energy(gt, fr).total)
    coeffs = np.polyfit(ts, es, 2)
    d = range_variation_derivative(g, fr, rv, comp)
    assert d == pytest.approx(coeffs[1], abs=1e-8 * max(1.0, abs(coeffs[1])) + 1e-8)


def test_range_variation_residual_small_on_minimized(minimized_strong_97):
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    assert np.any(cutoff_weights(g, comp, rv) > 0)
    d = range_variation_derivative(g, fr, rv, comp)
    e = dirichlet_energy(g, fr).total
    assert abs(d) <= 1e-3 * e


def test_range_variation_residual_large_on_perturbed(minimized_strong_97):
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    base = max(abs(range_variation_derivative(g, fr, rv, comp)), 1e-12)
    noisy = noisy_copy(g, scale=0.05, seed=3)
    comp_n = harmonic_companion(hopf_differential(noisy, standard_frame(2, 2)))
    d = range_variation_derivative(noisy, standard_frame(2, 2), rv, comp_n)
    assert abs(d) > 10 * base


def test_range_variation_perturbation_linearity(minimized_strong_97):
    # embedded image of the varied field moves linearly toward the level target
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    lam = cutoff_weights(g, comp, rv)
    gam = rv.retraction(g.values)
    t = 0.25
    gt = g.values + t * lam[..., None, None] * gam
    target = xi0(fr, chain.levels[0].decomposition.rebuild()).flat
    active = lam > 0
    from qvalued import embed_grid

    f_emb = embed_grid(g, fr)
    t_emb = embed_grid(GridField(gt, g.spacing, g.origin, g.boundary_mask), fr)
    want = f_emb + t * lam[..., None] * (target - f_emb)
    np.testing.assert_allclose(t_emb[active], want[active], atol=1e-10)


def test_range_variation_stays_inside_site_balls(minimized_strong_97):
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    lam = cutoff_weights(g, comp, rv)
    gam = rv.retraction(g.values)
    sigma = chain.levels[0].sigma
    sites = chain.levels[0].decomposition.sites
    for t in (-0.5, -0.1, 0.1, 0.5):
        gt = g.values + t * lam[..., None, None] * gam
        active = lam > 0
        sheets = gt[active]
        d = np.linalg.norm(sheets[..., None, :] - sites, axis=-1).min(-1)
        assert d.max() <= 0.4 * sigma + 1e-9


def test_range_variation_boundary_pinned(minimized_strong_97):
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    lam = cutoff_weights(g, comp, rv)
    assert np.all(lam[g.boundary_mask] == 0.0)


def test_retraction_vanishes_at_sites_and_far(minimized_strong_97):
    _, _, _, chain, rv = _range_setup(minimized_strong_97)
    sites = rv.sites
    np.testing.assert_allclose(rv.retraction(sites.copy()), 0.0, atol=1e-14)
    sigma = rv.sigma
    far = sites[0] + np.array([0.6 * sigma, 0.0])
    np.testing.assert_allclose(rv.retraction(far[None]), 0.0, atol=1e-14)
    rng = np.random.default_rng(1)
    y1 = sites[0] + rng.normal(size=(200, 2)) * 0.4 * sigma
    y2 = y1 + rng.normal(size=(200, 2)) * 0.05 * sigma
    num = np.linalg.norm(rv.retraction(y1) - rv.retraction(y2), axis=-1)
    den = np.linalg.norm(y1 - y2, axis=-1)
    assert (num / den).max() <= 5.0 / sigma + 1e-6


def test_build_admissible_variation_validation(minimized_strong_97):
    g, fr, comp, chain, rv = _range_setup(minimized_strong_97)
    sigma0 = chain.levels[0].sigma
    with pytest.raises(InvalidInputError):
        build_admissible_variation(chain, 0, -0.1, sigma0 / 20, rv.w_star)
    with pytest.raises(InvalidInputError):
        build_admissible_variation(chain, 0, 0.1 * sigma0, sigma0 / 5, rv.w_star)
    with pytest.raises(InvalidInputError):
        build_admissible_variation(chain, 99, 0.1 * sigma0, sigma0 / 20, rv.w_star)


def test_range_variation_not_in_ball_guard(minimized_strong_97):
    # an oversized rho lets sheets under the cutoff escape their site balls
    g, fr, comp, chain, _ = _range_setup(minimized_strong_97)
    sigma0 = chain.levels[0].sigma
    rv_big = build_admissible_variation(chain, 0, 0.99 * sigma0, sigma0 / 20, (48, 44))
    with pytest.raises(NotInBallError):
        range_variation_derivative(g, fr, rv_big, comp)


def test_stationarity_residual_minimized_vs_noisy(minimized_strong_97):
    g = minimized_strong_97.field
    fr = standard_frame(2, 2)
    res = stationarity_residual(g, fr, trials=4, seed=1)
    assert res.range_trials > 0
    assert res.domain_max <= 1e-3 * res.energy
    assert res.range_max <= 1e-3 * res.energy
    noisy = noisy_copy(g, scale=0.05, seed=5)
    res_n = stationarity_residual(noisy, fr, trials=4, seed=1)
    assert res_n.domain_max > 10 * max(res.domain_max, 1e-12)


def test_domain_variation_jacobian_consistency():
    v = DomainVariation((0.1, -0.05), 0.3, (0.6, -0.8))
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.15, 0.25, size=(50, 2))
    jac = v.jacobian(pts)
    step = 1e-6
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = step
        fd = (v.displacement(pts + shift) - v.displacement(pts - shift)) / (2 * step)
        np.testing.assert_allclose(jac[..., axis], fd, atol=1e-8)


def test_domain_variation_unknown_family():
    with pytest.raises(InvalidInputError):
        DomainVariation((0.0, 0.0), 0.2, (1.0, 0.0), family="vortex")
