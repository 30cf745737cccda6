"""Gaussian free field, Green function and multiplicative chaos on (S^2, g).

The field is X_N = sqrt(2 pi) sum_n a_n e_n / sqrt(lambda_n) with (lambda_n, e_n) the
nonzero Laplace eigenpairs. With this normalization the covariance kernel is
G = 2 pi sum_n e_n(x) e_n(y) / lambda_n, which on the unit round sphere equals
-1/2 - 1/2 ln((1 - cos theta) / 2) = ln 1/|x - y| + h(x, y).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate, special
from scipy.linalg import eigh

from . import geometry as geo
from .errors import (
    CoincidentPoints,
    EigensolverFailure,
    QuadratureFailure,
    SupercriticalGamma,
    UnsupportedMetric,
    ValidationError,
)

# --------------------------------------------------------------------------- spherical harmonics


def stereo_angles(z):
    """Polar and azimuthal angle of the unit-sphere point over z (north pole at z = 0)."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    theta = 2 * np.arctan(r)
    return theta, np.angle(z)


def stereo_point(z):
    z = np.asarray(z, dtype=complex)
    d = 1 + np.abs(z) ** 2
    return np.stack([2 * z.real / d, 2 * z.imag / d, (1 - np.abs(z) ** 2) / d], axis=-1)


def shell_indices(lmax, lmin=1):
    ells = np.concatenate([np.full(2 * l + 1, l) for l in range(lmin, lmax + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(lmin, lmax + 1)])
    return ells, ms


def real_sph_harm(ells, ms, z):
    """Orthonormal real spherical harmonics at the sphere points over z; shape (..., K)."""
    theta, phi = stereo_angles(z)
    th = theta[..., None]
    ph = phi[..., None]
    ma = np.abs(ms)
    y = special.sph_harm_y(ells, ma, th, ph)
    sign = np.where(ma % 2 == 0, 1.0, -1.0)
    return np.where(
        ms > 0,
        np.sqrt(2) * sign * y.real,
        np.where(ms < 0, np.sqrt(2) * sign * y.imag, y.real),
    )


# --------------------------------------------------------------------------- basis


@dataclass
class SpectralBasis:
    """Nonzero Laplace eigenpairs, sorted by eigenvalue, truncated at N_max."""

    metric: object
    lam: np.ndarray
    ells: np.ndarray
    ms: np.ndarray
    coef: np.ndarray | None = None  # Ritz vectors in the round harmonic basis
    radius2: float = 1.0  # squared radius of the round sphere, for scaling

    @property
    def N_max(self):
        return len(self.lam)

    def values(self, z):
        if self.coef is None:
            return real_sph_harm(self.ells, self.ms, z) / np.sqrt(self.radius2)
        return real_sph_harm(self.ells, self.ms, z) @ self.coef

    def variance(self, z):
        """E X_N(z)^2 = 2 pi sum e_n(z)^2 / lambda_n."""
        return 2 * np.pi * np.sum(self.values(z) ** 2 / self.lam, axis=-1)

    def gram(self, quad_n=None):
        """Matrix of integrals e_n e_m dv_g by Gauss quadrature on the sphere."""
        pts, w = sphere_quadrature(self.metric, quad_n or (int(np.max(self.ells)) + 2) * 2)
        E = self.values(pts)
        return (E * w[:, None]).T @ E

    def means(self, quad_n=None):
        pts, w = sphere_quadrature(self.metric, quad_n or (int(np.max(self.ells)) + 2) * 2)
        return w @ self.values(pts)


def sphere_quadrature(m, n):
    """Nodes z and weights for integrals against dv_g: Gauss-Legendre in cos(theta), trapezoid in phi.

    Exact for band-limited integrands on the round sphere of degree < n.
    """
    x, wx = np.polynomial.legendre.leggauss(n)
    theta = np.arccos(x)
    phi = 2 * np.pi * (np.arange(2 * n) + 0.5) / (2 * n)
    r = np.tan(theta / 2)
    z = (r[:, None] * np.exp(1j * phi)[None, :]).ravel()
    w_round = (wx[:, None] * np.full(2 * n, np.pi / n)[None, :]).ravel()
    if getattr(m, "kind", None) == "round":
        return z, w_round * 2.0 / m.curvature
    return z, w_round * weyl_ratio(m, z)


def weyl_ratio(m, z):
    """exp(sigma - sigma_round): the density of dv_g against the unit round sphere measure."""
    rnd = geo.round_sphere()
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape)
    inner = np.abs(z) <= 1
    out[inner] = np.exp(m.sigma(z[inner]) - rnd.sigma(z[inner]))
    zeta = 1 / z[~inner]
    out[~inner] = np.exp(m.sigma(zeta, 1) - rnd.sigma(zeta, 1))
    return out


def build_basis(m, N_max, galerkin_lmax=None):
    """Eigenpairs of -Laplace_g, zero mode excluded, in nondecreasing order.

    Round spheres use spherical harmonics in closed form. Other sphere metrics use a
    Rayleigh-Ritz solve in the round harmonic basis up to degree galerkin_lmax.
    """
    if N_max < 1:
        raise ValidationError("N_max must be positive")
    if getattr(m, "kind", None) == "round":
        lmax = 1
        while (lmax + 1) ** 2 - 1 < N_max:
            lmax += 1
        ells, ms = shell_indices(lmax)
        ells, ms = ells[:N_max], ms[:N_max]
        K = m.curvature
        return SpectralBasis(m, ells * (ells + 1) * K / 2.0, ells, ms, radius2=2.0 / K)
    if not getattr(m, "is_sphere", False) or isinstance(m, geo.EquatorMetric):
        raise UnsupportedMetric(f"no eigensolver branch for {getattr(m, 'kind', m)!r} metrics")
    L = galerkin_lmax or max(8, int(np.ceil(np.sqrt(N_max + 1))) + 6)
    if (L + 1) ** 2 - 1 < N_max:
        raise ValidationError("galerkin_lmax too small for N_max")
    ells, ms = shell_indices(L, lmin=0)
    pts, w = sphere_quadrature(m, 2 * L + 8)
    Y = real_sph_harm(ells, ms, pts)
    M = (Y * w[:, None]).T @ Y
    Kmat = np.diag((ells * (ells + 1)).astype(float))
    try:
        lam, vec = eigh(Kmat, M)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    if abs(lam[0]) > 1e-8 or lam[1] <= 1e-8:
        raise EigensolverFailure("unexpected zero-mode structure")
    lam, vec = lam[1 : N_max + 1], vec[:, 1 : N_max + 1]
    return SpectralBasis(m, lam, ells, ms, coef=vec)


# --------------------------------------------------------------------------- Green function


def green_round(x, y):
    """Closed-form Green function of the unit round sphere."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if np.any(x == y):
        raise CoincidentPoints("Green function evaluated on the diagonal")
    return -np.log(np.abs(x - y)) + h_round(x, y)


def h_round(x, y):
    return 0.5 * np.log((1 + np.abs(x) ** 2) * (1 + np.abs(y) ** 2)) - 0.5


def green_eigen_round(x, y, lmax):
    """Truncated eigen-sum via the addition theorem: 1/2 sum (2l+1)/(l(l+1)) P_l(cos angle)."""
    t = np.clip(np.sum(stereo_point(x) * stereo_point(y), axis=-1), -1.0, 1.0)
    t = np.asarray(t, dtype=float)
    p_prev, p = np.ones_like(t), t.copy()
    total = np.zeros_like(t)
    for l in range(1, lmax + 1):
        total += (2 * l + 1) / (l * (l + 1)) * p
        p_prev, p = p, ((2 * l + 1) * t * p - l * p_prev) / (l + 1)
    return 0.5 * total


def green_eigen_basis(basis: SpectralBasis, x, y):
    ex = basis.values(x)
    ey = basis.values(y)
    return 2 * np.pi * np.sum(ex * ey / basis.lam, axis=-1)


def _is_radial(m):
    r = np.array([0.3, 0.9, 1.7, 4.0])
    a = m.sigma(r.astype(complex))
    b = m.sigma(r * np.exp(0.7j))
    return np.allclose(a, b, atol=1e-12)


class RadialLogPotential:
    """L(z) = (1/v) integral ln|z - u| dv(u) and its mean C, for rotation-invariant metrics.

    The angular average of ln|z - u| over |u| = r is ln max(|z|, r), so both reduce to
    one-dimensional integrals.
    """

    def __init__(self, m):
        if not _is_radial(m):
            raise UnsupportedMetric("double-integral route needs a rotation-invariant metric")
        self.m = m
        self.vol_density = lambda r: 2 * np.pi * r * self._dens(r)
        self.v = self._quad(self.vol_density, 0, np.inf)
        self.C = self._quad(lambda r: self.L(r) * self.vol_density(r), 0, np.inf) / self.v

    def _dens(self, r):
        r = float(r)
        if r <= 1:
            return float(np.exp(self.m.sigma(complex(r))))
        return float(np.exp(self.m.sigma(complex(1 / r), 1))) / r**4

    @staticmethod
    def _quad(f, a, b):
        pts = [1.0] if a < 1 < b else None
        if np.isinf(b):
            v1, e1 = integrate.quad(f, a, max(a, 1.0), epsabs=1e-13, epsrel=1e-12, limit=200)
            v2, e2 = integrate.quad(f, max(a, 1.0), np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
            return v1 + v2
        return integrate.quad(f, a, b, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)[0]

    def L(self, z):
        a = abs(complex(z))
        inside = self._quad(self.vol_density, 0, a) if a > 0 else 0.0
        outside = self._quad(lambda r: np.log(r) * self.vol_density(r), a, np.inf)
        return (np.log(a) * inside if a > 0 else 0.0) / self.v + outside / self.v

    def h(self, x, y):
        return self.L(x) + self.L(y) - self.C


def green_function(m, x, y, method=None, n_terms=None, basis=None):
    """G_g(x, y).

    method: "closed" (round sphere), "double_integral" (rotation-invariant metrics,
    log kernel plus the double-integral h), or "eigen" (truncated eigen-sum with
    n_terms eigenfunctions; on the round sphere complete shells are summed with the
    addition theorem).
    """
    x, y = complex(x), complex(y)
    if x == y:
        raise CoincidentPoints("x and y coincide")
    kind = getattr(m, "kind", None)
    method = method or ("closed" if kind == "round" else "eigen")
    if method == "closed":
        if kind != "round":
            raise UnsupportedMetric("closed form is available for round spheres only")
        return float(green_round(x, y))
    if method == "double_integral":
        pot = RadialLogPotential(m)
        return float(-np.log(abs(x - y)) + pot.h(x, y))
    if method == "eigen":
        if kind == "round" and basis is None:
            n = n_terms or 400
            lmax = int(np.floor(np.sqrt(n + 1))) - 1
            if (lmax + 1) ** 2 - 1 == n:
                return float(green_eigen_round(x, y, lmax))
            basis = build_basis(m, n)
        basis = basis or build_basis(m, n_terms or 400)
        return float(green_eigen_basis(basis, x, y))
    raise ValidationError(f"unknown Green function method {method!r}")


def h_diagonal(m, z, basis=None):
    """h_g(z, z): exact for the round sphere, double integral for radial metrics,
    otherwise the eigen-sum minus the log singularity at offset eps_h."""
    kind = getattr(m, "kind", None)
    if kind == "round" and m.curvature == 2.0:
        return h_round(z, z)
    if _is_radial(m):
        pot = RadialLogPotential(m)
        return np.vectorize(lambda w: pot.h(w, w))(z)
    basis = basis or build_basis(m, 399)
    eps_h = np.pi / (np.max(basis.ells) + 1)
    z = np.asarray(z, dtype=complex)
    return green_eigen_basis(basis, z, z + eps_h) + np.log(eps_h)


def rho_factor(m, z, alpha, h_diag=None):
    """rho_alpha(z) = exp(alpha^2 sigma / 4 + alpha^2 h(z, z) / 2), chart-independent scalar."""
    z = np.asarray(z, dtype=complex)
    hd = h_diagonal(m, z) if h_diag is None else h_diag
    if getattr(m, "kind", None) == "round" and m.curvature == 2.0:
        # sigma/4 + h(z,z)/2 = (ln 2 - 1/2)/2 everywhere
        return np.exp(alpha**2 * (np.log(2) - 0.5) / 2) * np.ones(z.shape)
    return np.exp(alpha**2 * m.sigma(z) / 4 + alpha**2 * hd / 2)


# --------------------------------------------------------------------------- quadrature helpers


def centered_plane_integral(f, center=0.0, scale=1.0, tol=1e-10, n0=32, nmax=1024):
    """Integral of f(u) d^2u over the plane in polar coordinates around center.

    The radius is mapped as rho = scale * t^2 / (1 - t^2) so that log singularities at
    the center and |u|^-4 tails are both integrated to high order.
    """
    prev = None
    n = n0
    while n <= nmax:
        s, w = np.polynomial.legendre.leggauss(n)
        t = 0.5 * (s + 1)
        wt = 0.5 * w
        rho = scale * t**2 / (1 - t**2)
        drho = scale * 2 * t / (1 - t**2) ** 2
        th = 2 * np.pi * np.arange(2 * n) / (2 * n)
        u = center + rho[:, None] * np.exp(1j * th)[None, :]
        vals = f(u)
        est = np.sum((wt * rho * drho)[:, None] * vals) * (np.pi / n)
        if prev is not None and abs(est - prev) < tol * max(1.0, abs(est)):
            return est
        prev = est
        n *= 2
    raise QuadratureFailure("centered plane quadrature did not converge")


# --------------------------------------------------------------------------- sampling


def coefficient_stream(seed, index):
    """Counter-based generator keyed by (master seed, sample index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def sample_coefficients(seed, start, count, N):
    out = np.empty((count, N))
    for k in range(count):
        out[k] = coefficient_stream(seed, start + k).standard_normal(N)
    return out


@dataclass
class GFFSample:
    basis: SpectralBasis
    coeffs: np.ndarray
    seed: int
    index: int = 0

    def __call__(self, z):
        return np.sqrt(2 * np.pi) * self.basis.values(z) @ (self.coeffs / np.sqrt(self.basis.lam))

    def pair(self, f_values, points, weights):
        """X_N(f) = integral of X_N f dv for f sampled at quadrature nodes with weights."""
        return float(np.sum(f_values * weights * self(points)))


def sample_gff(basis: SpectralBasis, seed, index=0):
    return GFFSample(basis, coefficient_stream(seed, index).standard_normal(basis.N_max), int(seed), int(index))


def circle_average(sample, z, eps, n_theta=64):
    """Trapezoid average of the field over the circle of radius eps around z."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    pts = complex(z) + eps * np.exp(1j * th)
    return float(np.mean(sample(pts)))


# --------------------------------------------------------------------------- chaos


@dataclass
class ChaosGrid:
    """Polar cells on the unit disc of each chart; centers given in the z chart."""

    centers: np.ndarray
    volumes: np.ndarray  # integral of dv_g over the cell
    areas: np.ndarray  # chart Lebesgue area of the cell
    chart: np.ndarray
    local: np.ndarray  # cell centers in their own chart coordinate
    edges_r: np.ndarray
    n_theta: int

    @property
    def size(self):
        return len(self.centers)


def _cell_volume_table(m, chart, r_edges, n_theta, ng=6):
    """Exact-to-quadrature volumes of polar cells by Gauss rules inside each cell."""
    s, w = np.polynomial.legendre.leggauss(ng)
    dth = 2 * np.pi / n_theta
    vols = np.empty((len(r_edges) - 1, n_theta))
    for i in range(len(r_edges) - 1):
        a, b = r_edges[i], r_edges[i + 1]
        r = 0.5 * (b - a) * (s + 1) + a
        wr = 0.5 * (b - a) * w * r
        for j in range(n_theta):
            th = j * dth + 0.5 * dth * (s + 1)
            wt = 0.5 * dth * w
            pts = r[:, None] * np.exp(1j * th)[None, :]
            dens = np.exp(m.sigma(pts, chart))
            vols[i, j] = np.sum(wr[:, None] * wt[None, :] * dens)
    return vols


def build_chaos_grid(m, n_r=64, n_theta=128):
    """Cells uniform in the polar angle of each hemisphere and in azimuth."""
    psi = np.linspace(0, np.pi / 2, n_r + 1)
    r_edges = np.tan(psi / 2)
    r_edges[-1] = 1.0
    rc = np.tan(0.5 * (psi[:-1] + psi[1:]) / 2)
    dth = 2 * np.pi / n_theta
    thc = (np.arange(n_theta) + 0.5) * dth
    local = (rc[:, None] * np.exp(1j * thc)[None, :]).ravel()
    areas = np.repeat(0.5 * (r_edges[1:] ** 2 - r_edges[:-1] ** 2) * dth, n_theta)
    centers, vols, charts, locs = [], [], [], []
    for chart in (0, 1):
        if getattr(m, "kind", None) == "round":
            c = 8 / m.curvature
            rv = c / 2 * (r_edges[1:] ** 2 / (1 + r_edges[1:] ** 2) - r_edges[:-1] ** 2 / (1 + r_edges[:-1] ** 2))
            v = np.repeat(rv * dth, n_theta)
        else:
            v = _cell_volume_table(m, chart, r_edges, n_theta).ravel()
        vols.append(v)
        centers.append(local if chart == 0 else 1 / local)
        charts.append(np.full(local.shape, chart))
        locs.append(local)
    return ChaosGrid(
        np.concatenate(centers),
        np.concatenate(vols),
        np.concatenate([areas, areas]),
        np.concatenate(charts),
        np.concatenate(locs),
        r_edges,
        n_theta,
    )


@dataclass(frozen=True)
class SpectralTruncation:
    N: int | None = None


@dataclass(frozen=True)
class CircleAverage:
    eps: float
    n_theta: int = 64


@dataclass
class ChaosMeasure:
    gamma: float
    grid: ChaosGrid
    weights: np.ndarray
    regularization: object

    @property
    def total_mass(self):
        return float(np.sum(self.weights))


def _check_gamma(gamma):
    if not 0 <= gamma < 2:
        raise SupercriticalGamma(f"gamma = {gamma} is outside the subcritical range [0, 2)")


def chaos_measure(sample: GFFSample, gamma, reg=None, grid=None, include_rho=True):
    """Cell weights of M_gamma (or of m_gamma when include_rho is False)."""
    _check_gamma(gamma)
    reg = reg or SpectralTruncation()
    m = sample.basis.metric
    grid = grid or build_chaos_grid(m, 32, 64)
    if isinstance(reg, SpectralTruncation):
        X = sample(grid.centers)
        var = sample.basis.variance(grid.centers)
        w = np.exp(gamma * X - 0.5 * gamma**2 * var) * grid.volumes
        if include_rho:
            w = w * rho_factor(m, grid.centers, gamma)
        return ChaosMeasure(gamma, grid, w, reg)
    if isinstance(reg, CircleAverage):
        Q = 2 / gamma + gamma / 2 if gamma > 0 else 0.0
        th = 2 * np.pi * np.arange(reg.n_theta) / reg.n_theta
        ring = grid.local[:, None] + reg.eps * np.exp(1j * th)[None, :]
        pts = np.where(grid.chart[:, None] == 0, ring, 1 / ring)
        Xe = np.mean(sample(pts), axis=1)
        sig = np.where(grid.chart == 0, m.sigma(np.where(grid.chart == 0, grid.local, 0)), m.sigma(np.where(grid.chart == 1, grid.local, 0), 1))
        w = np.exp(gamma * Q * sig / 2) * reg.eps ** (gamma**2 / 2) * np.exp(gamma * Xe) * grid.areas
        return ChaosMeasure(gamma, grid, w, reg)
    raise ValidationError(f"unknown regularization {reg!r}")


class ChaosSampler:
    """Batched chaos integrals: many weight functions against many field samples.

    The basis is evaluated once on the cell centers; each batch of coefficients is
    turned into cell values by one matrix product.
    """

    def __init__(self, basis: SpectralBasis, grid: ChaosGrid):
        self.basis = basis
        self.grid = grid
        E = basis.values(grid.centers)
        self.E = E * (np.sqrt(2 * np.pi) / np.sqrt(basis.lam))[None, :]
        self.var = np.sum(self.E**2, axis=1)

    def field(self, coeffs):
        """Cell values, shape (cells, batch)."""
        return self.E @ coeffs.T

    def integrals(self, gamma, weights, seed, start, count, batch=512, log_shift=None):
        """Integrals sum_c weights[k, c] exp(gamma X - gamma^2 E X^2 / 2) for samples start..start+count.

        weights has shape (K, cells); returns an array (K, count).
        """
        _check_gamma(gamma)
        W = np.atleast_2d(weights)
        out = np.empty((W.shape[0], count))
        base = -0.5 * gamma**2 * self.var
        for s in range(0, count, batch):
            n = min(batch, count - s)
            A = sample_coefficients(seed, start + s, n, self.basis.N_max)
            F = np.exp(gamma * self.field(A) + base[:, None])
            out[:, s : s + n] = W @ F
        return out
